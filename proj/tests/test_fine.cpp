#include <gtest/gtest.h>

#include "knobgen/fine.hpp"
#include "knobgen/unet.hpp"
#include "test_util.hpp"

using namespace knobgen;

TEST(Fgc, ResidualShapesMatchDenoiser) {
    for (int64_t size : {8, 16, 32}) {
        auto mc = fixtures::tiny_model(size);
        UNet net(mc.denoiser);
        FineController fgc(mc.fgc);
        EXPECT_NO_THROW(fgc->check_compatible(*net));
        auto res = fgc->forward(torch::zeros({2, 1, size, size}));
        auto shapes = net->residual_shapes();
        ASSERT_EQ(res.size(), shapes.size());
        for (size_t l = 0; l < res.size(); ++l) {
            auto want = shapes[l];
            want.insert(want.begin(), 2);
            EXPECT_EQ(res[l].sizes().vec(), want);
        }
    }
    auto mc = fixtures::tiny_model();
    auto wrong = mc.fgc;
    wrong.level_channels[1] = 12;
    UNet net(mc.denoiser);
    FineController bad(wrong);
    EXPECT_THROW(bad->check_compatible(*net), std::exception);
}

TEST(Fgc, ZeroInitLeavesDenoiserBitIdentical) {
    auto mc = fixtures::tiny_model();
    torch::manual_seed(0);
    UNet net(mc.denoiser);
    FineController fgc(mc.fgc);
    auto sketch = (torch::rand({3, 1, 8, 8}) > 0.6).to(torch::kFloat32);
    auto res = fgc->forward(sketch);
    for (const auto& r : res) EXPECT_EQ(r.abs().max().item<float>(), 0.0f);
    auto x = torch::randn({3, 3, 8, 8});
    auto t = torch::tensor({1, 20, 50});
    auto ctx = torch::randn({3, 8, 16});
    auto plain = net->forward(x, t, ConditioningBundle::coarse_only(ctx));
    for (double scale : {0.2, 0.6, 1.0}) {
        EXPECT_TRUE(torch::equal(plain, net->forward(x, t, {ctx, res, scale})));
    }
}

TEST(Fgc, GradientCheckDouble) {
    auto mc = fixtures::tiny_model();
    torch::manual_seed(0);
    FineController fgc(mc.fgc);
    fgc->to(torch::kFloat64);
    fixtures::scramble(*fgc, 0.1, 6);
    auto sketch = torch::rand({2, 1, 8, 8}, torch::kFloat64).requires_grad_();
    auto probe = fgc->forward(sketch.detach());
    std::vector<torch::Tensor> weights;
    for (const auto& r : probe) weights.push_back(torch::randn_like(r));
    auto loss = [&] {
        auto res = fgc->forward(sketch);
        auto total = torch::zeros({}, torch::kFloat64);
        for (size_t l = 0; l < res.size(); ++l) total = total + (res[l] * weights[l]).sum();
        return total;
    };
    std::vector<torch::Tensor> leaves{sketch};
    for (auto& p : fgc->parameters()) leaves.push_back(p);
    EXPECT_LT(fixtures::gradcheck(loss, leaves), 1e-4);
}
