#include <gtest/gtest.h>

#include <random>

#include "knobgen/image_io.hpp"
#include "knobgen/sketch.hpp"

using namespace knobgen;

TEST(Sketchify, Boundary) {
    auto e = torch::tensor({{0.f, 49.f, 50.f, 255.f}});
    auto s = sketchify(e);
    EXPECT_TRUE(torch::equal(s.pixels(), torch::tensor({{0, 0, 1, 1}}, torch::kUInt8)));
    EXPECT_EQ(sketchify(torch::full({5, 7}, 50.f)).nonzero_count(), 35);
    EXPECT_EQ(sketchify(torch::full({5, 7}, 49.f)).nonzero_count(), 0);
    EXPECT_EQ(sketchify(torch::full({2, 2}, 49.f), 49).nonzero_count(), 4);
}

TEST(Sketchify, RejectsOutOfRange) {
    EXPECT_THROW(sketchify(torch::tensor({{256.f}})), std::invalid_argument);
    EXPECT_THROW(sketchify(torch::tensor({{-1.f}})), std::invalid_argument);
    EXPECT_THROW(sketchify(torch::zeros({2, 2, 2})), std::invalid_argument);
    EXPECT_THROW(SketchImage(torch::full({2, 2}, 2)), std::invalid_argument);
}

TEST(Sketchify, IdempotentOnScaledOutput) {
    std::mt19937 rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        auto e = torch::randint(0, 256, {9, 11}, torch::kFloat32);
        const int thr = std::uniform_int_distribution<int>(1, 255)(rng);
        auto once = sketchify(e, thr);
        auto twice = sketchify(once.pixels().to(torch::kFloat32) * 255.0, thr);
        EXPECT_EQ(once, twice);
    }
}

TEST(Edges, BlackImageHasNone) {
    EXPECT_EQ(sketchify(edge_map_from_image(torch::full({3, 16, 16}, -1.f))).nonzero_count(), 0);
}

TEST(Edges, StepEdgeIsDetected) {
    auto img = torch::full({3, 16, 16}, -1.f);
    img.index_put_({torch::indexing::Slice(), torch::indexing::Slice(), torch::indexing::Slice(8)}, 1.f);
    auto g = gradient_magnitude(to_uint8_image(img).to(torch::kFloat32));
    // unit Sobel gain: full-range step gives 255 on both sides of the edge
    EXPECT_FLOAT_EQ(g[4][7].item<float>(), 255.f);
    EXPECT_FLOAT_EQ(g[4][8].item<float>(), 255.f);
    EXPECT_FLOAT_EQ(g[4][3].item<float>(), 0.f);
    auto s = sketchify(edge_map_from_image(img));
    EXPECT_EQ(s.nonzero_count(), 32);
}

TEST(Masks, DilateAndIou) {
    SketchImage a(torch::zeros({5, 5}, torch::kUInt8));
    SketchImage empty(5, 5);
    EXPECT_DOUBLE_EQ(mask_iou(a, empty), 1.0);
    auto p = torch::zeros({5, 5}, torch::kUInt8);
    p[2][2] = 1;
    SketchImage dot(p);
    EXPECT_EQ(dilate(dot).nonzero_count(), 9);
    EXPECT_DOUBLE_EQ(mask_iou(dot, dilate(dot)), 1.0 / 9.0);
    EXPECT_DOUBLE_EQ(mask_iou(dot, empty), 0.0);
    EXPECT_THROW(mask_iou(dot, SketchImage(4, 4)), std::invalid_argument);
}

TEST(ImageIo, PngRoundTrips) {
    torch::manual_seed(0);
    auto img = torch::rand({3, 12, 12}) * 2 - 1;
    auto back = decode_rgb_png(encode_rgb_png(img));
    EXPECT_LE((back - img).abs().max().item<double>(), 1.0 / 255.0 + 1e-6);
    EXPECT_TRUE(torch::equal(to_uint8_image(back), to_uint8_image(img)));
    SketchImage s(torch::rand({12, 12}).gt(0.5).to(torch::kUInt8));
    EXPECT_EQ(decode_sketch_png(encode_sketch_png(s), 12), s);
    EXPECT_THROW(decode_rgb_png({1, 2, 3}), std::runtime_error);
    EXPECT_THROW(decode_sketch_png({1, 2, 3}, 12), std::runtime_error);
}

TEST(ImageIo, Base64) {
    std::mt19937 rng(2);
    for (int n = 0; n < 40; ++n) {
        std::vector<uint8_t> bytes(static_cast<size_t>(n));
        for (auto& b : bytes) b = static_cast<uint8_t>(rng());
        EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes);
    }
    EXPECT_EQ(base64_encode({'f', 'o', 'o', 'b'}), "Zm9vYg==");
    EXPECT_THROW(base64_decode("Zm9v*"), std::invalid_argument);
}
