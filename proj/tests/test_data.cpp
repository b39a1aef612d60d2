#include <gtest/gtest.h>

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include "knobgen/data.hpp"
#include "knobgen/image_io.hpp"
#include "knobgen/metrics.hpp"
#include "test_util.hpp"

using namespace knobgen;

TEST(ToyData, Deterministic) {
    ToyDatasetConfig cfg;
    cfg.seed = 5;
    auto a = generate_toy_record(cfg, 0);
    auto b = generate_toy_record(cfg, 0);
    EXPECT_TRUE(torch::equal(a.image, b.image));
    EXPECT_EQ(a.sketch, b.sketch);
    EXPECT_EQ(a.prompt, b.prompt);
    auto set = generate_toy_dataset(4, cfg);
    EXPECT_TRUE(torch::equal(set[3].image, generate_toy_record(cfg, 3).image));
    cfg.seed = 6;
    EXPECT_FALSE(torch::equal(generate_toy_record(cfg, 0).image, a.image));
}

TEST(ToyData, RecordInvariants) {
    ToyDatasetConfig cfg;
    cfg.distortion = 0.3;
    for (const auto& r : generate_toy_dataset(60, cfg)) {
        EXPECT_EQ(r.image.sizes(), (std::vector<int64_t>{3, 32, 32}));
        EXPECT_LE(r.image.abs().max().item<float>(), 1.0f);
        EXPECT_EQ(r.complexity, r.sketch.nonzero_count());
        EXPECT_GT(r.complexity, 0);
        EXPECT_EQ(r.prompt.rfind("a", 0), 0u);
        for (auto id : Vocabulary::toy().tokenize(r.prompt)) EXPECT_NE(id, Vocabulary::kUnk) << r.prompt;
    }
}

TEST(ToyData, DistortionLowersOutlineIou) {
    ToyDatasetConfig clean, noisy;
    noisy.distortion = 0.5;
    double total = 0.0;
    for (uint64_t i = 0; i < 100; ++i) {
        auto r = generate_toy_record(clean, i);
        EXPECT_DOUBLE_EQ(mask_iou(r.sketch, r.outline), 1.0);
        auto n = generate_toy_record(noisy, i);
        total += mask_iou(n.sketch, n.outline);
    }
    EXPECT_LT(total / 100.0, 1.0);
}

TEST(Stratify, Examples) {
    EXPECT_EQ(stratify_by_pixel_count(std::vector<int64_t>{10, 500, 1000}, 2), (std::vector<int>{0, 1, 1}));
    EXPECT_EQ(stratify_by_pixel_count(std::vector<int64_t>{7, 3, 9, 1}, 1), (std::vector<int>{0, 0, 0, 0}));
    EXPECT_EQ(stratify_by_pixel_count(std::vector<int64_t>{4, 1, 3, 2}, 4), (std::vector<int>{3, 0, 2, 1}));
    EXPECT_THROW(stratify_by_pixel_count(std::vector<int64_t>{}, 2), std::invalid_argument);
    EXPECT_THROW(stratify_by_pixel_count(std::vector<int64_t>{1}, 0), std::invalid_argument);
}

TEST(Stratify, BalancedAndPermutationStable) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = std::uniform_int_distribution<int>(1, 60)(rng);
        const int k = std::uniform_int_distribution<int>(1, 7)(rng);
        std::vector<int64_t> c(static_cast<size_t>(n));
        std::iota(c.begin(), c.end(), 0);
        std::shuffle(c.begin(), c.end(), rng);
        const auto strata = stratify_by_pixel_count(c, k);
        std::vector<int> sizes(static_cast<size_t>(k));
        for (int s : strata) ++sizes[static_cast<size_t>(s)];
        for (int sz : sizes) EXPECT_LE(std::abs(sz * k - n), k) << "n=" << n << " k=" << k;
        // larger complexity never lands in a lower stratum
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (c[i] < c[j]) EXPECT_LE(strata[i], strata[j]);
        std::vector<size_t> perm(static_cast<size_t>(n));
        std::iota(perm.begin(), perm.end(), size_t{0});
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<int64_t> shuffled;
        for (auto p : perm) shuffled.push_back(c[p]);
        const auto again = stratify_by_pixel_count(shuffled, k);
        for (size_t i = 0; i < perm.size(); ++i) EXPECT_EQ(again[i], strata[perm[i]]);
    }
}

TEST(Dataset, SaveLoadRoundTrip) {
    auto dir = fixtures::temp_dir("dataset");
    ToyDatasetConfig cfg;
    cfg.image_size = 16;
    auto records = generate_toy_dataset(5, cfg);
    save_dataset(dir, records, nlohmann::json(cfg));
    EXPECT_TRUE(std::filesystem::exists(dir / "000000.img.png"));
    EXPECT_TRUE(std::filesystem::exists(dir / "000004.sketch.png"));
    EXPECT_TRUE(std::filesystem::exists(dir / "000002.txt"));
    auto manifest = load_manifest(dir);
    EXPECT_EQ(manifest.at("records").size(), 5u);
    auto back = load_dataset(dir);
    ASSERT_EQ(back.size(), 5u);
    for (size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(back[i].sketch, records[i].sketch);
        EXPECT_EQ(back[i].prompt, records[i].prompt);
        EXPECT_EQ(back[i].complexity, records[i].complexity);
        EXPECT_TRUE(torch::equal(to_uint8_image(back[i].image), to_uint8_image(records[i].image)));
    }
}

TEST(Ingest, DirectoryOfImages) {
    auto dir = fixtures::temp_dir("ingest");
    EXPECT_TRUE(ingest_images(dir, 16).records.empty());
    cv::imwrite((dir / "a_black.png").string(), cv::Mat::zeros(20, 20, CV_8UC3));
    cv::Mat box = cv::Mat::zeros(40, 40, CV_8UC3);
    box(cv::Rect(10, 10, 20, 20)).setTo(cv::Scalar(255, 255, 255));
    cv::imwrite((dir / "b_box.png").string(), box);
    std::ofstream(dir / "b_box.txt") << "a white square\n";
    std::ofstream(dir / "c_broken.png") << "not an image";
    auto res = ingest_images(dir, 16);
    ASSERT_EQ(res.records.size(), 2u);
    ASSERT_EQ(res.skipped.size(), 1u);
    EXPECT_NE(res.skipped[0].find("c_broken.png"), std::string::npos);
    EXPECT_EQ(res.records[0].sketch.nonzero_count(), 0);
    EXPECT_EQ(res.records[0].prompt, "");
    EXPECT_EQ(res.records[1].prompt, "a white square");
    for (const auto& r : res.records) {
        EXPECT_EQ(r.complexity, r.sketch.nonzero_count());
        EXPECT_EQ(r.sketch.height(), 16);
        EXPECT_EQ(r.image.sizes(), (std::vector<int64_t>{3, 16, 16}));
    }
    EXPECT_GT(res.records[1].complexity, 0);
}
