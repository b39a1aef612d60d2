#include <gtest/gtest.h>

#include "knobgen/coarse.hpp"
#include "test_util.hpp"

using namespace knobgen;

TEST(Vocabulary, EncodePadsAndTruncates) {
    auto v = Vocabulary::toy();
    auto ids = v.encode("A Red circle zebra", 6);
    ASSERT_EQ(ids.size(), 6u);
    EXPECT_GE(ids[0], 2);
    EXPECT_GE(ids[1], 2);
    EXPECT_GE(ids[2], 2);
    EXPECT_EQ(ids[3], Vocabulary::kUnk);
    EXPECT_EQ(ids[4], Vocabulary::kPad);
    EXPECT_EQ(v.encode("a a a a", 2).size(), 2u);
    EXPECT_TRUE(v.tokenize("").empty());
    EXPECT_EQ(v.size(), static_cast<int64_t>(v.tokens().size()) + 2);
}

TEST(Vocabulary, SaveLoad) {
    auto dir = fixtures::temp_dir("vocab");
    auto v = Vocabulary::toy();
    v.save(dir / "v.txt");
    EXPECT_EQ(Vocabulary::load(dir / "v.txt").tokens(), v.tokens());
}

TEST(TextEncoder, OutOfRangeIdsFallBackToUnknown) {
    torch::manual_seed(0);
    TextEncoder enc(TextEncoderConfig{10, 4, 8});
    auto a = enc(torch::tensor({{2, 99, -3, 0}}));
    auto b = enc(torch::tensor({{2, 1, 1, 0}}));
    EXPECT_TRUE(torch::equal(a, b));
    EXPECT_THROW(enc(torch::tensor({{1, 2}})), std::invalid_argument);
}

TEST(Cfc, ToyShapes) {
    auto cfg = fixtures::tiny_model().cfc;
    torch::manual_seed(0);
    Cfc cfc(cfg);
    auto out = cfc(torch::randn({3, cfg.L_img, cfg.d_img}), torch::randn({3, cfg.L_text, cfg.d_text}));
    EXPECT_EQ(out.sizes(), (std::vector<int64_t>{3, cfg.L_text, cfg.d_text}));
    EXPECT_THROW(cfc(torch::randn({3, cfg.L_img + 1, cfg.d_img}), torch::randn({3, cfg.L_text, cfg.d_text})),
                 std::invalid_argument);
    EXPECT_THROW(cfc(torch::randn({2, cfg.L_img, cfg.d_img}), torch::randn({3, cfg.L_text, cfg.d_text})),
                 std::invalid_argument);
}

TEST(Cfc, FreshBlockPassesTextThrough) {
    auto cfg = fixtures::tiny_model().cfc;
    torch::manual_seed(0);
    Cfc cfc(cfg);
    auto text = torch::randn({2, cfg.L_text, cfg.d_text});
    EXPECT_TRUE(torch::equal(cfc(torch::randn({2, cfg.L_img, cfg.d_img}), text), text));
}

TEST(Cfc, MemoryPermutationInvariance) {
    auto cfg = fixtures::tiny_model().cfc;
    torch::manual_seed(0);
    Cfc cfc(cfg);
    fixtures::scramble(*cfc, 0.1, 3);
    auto img = torch::randn({2, cfg.L_img, cfg.d_img});
    auto text = torch::randn({2, cfg.L_text, cfg.d_text});
    auto base = cfc(img, text);
    for (int trial = 0; trial < 5; ++trial) {
        auto perm = torch::randperm(cfg.L_img);
        auto out = cfc(img.index_select(1, perm), text);
        EXPECT_LT((out - base).abs().max().item<double>(), 1e-6);
    }
    // and the image actually matters
    EXPECT_GT((cfc(torch::randn_like(img), text) - base).abs().max().item<double>(), 1e-4);
}

TEST(Cfc, GradientCheckDouble) {
    auto cfg = fixtures::tiny_model().cfc;
    torch::manual_seed(0);
    Cfc cfc(cfg);
    cfc->to(torch::kFloat64);
    fixtures::scramble(*cfc, 0.1, 4);
    auto img = torch::randn({2, cfg.L_img, cfg.d_img}, torch::kFloat64).requires_grad_();
    auto text = torch::randn({2, cfg.L_text, cfg.d_text}, torch::kFloat64).requires_grad_();
    auto w = torch::randn({2, cfg.L_text, cfg.d_text}, torch::kFloat64);
    std::vector<torch::Tensor> leaves{img, text};
    for (auto& p : cfc->parameters()) leaves.push_back(p);
    EXPECT_LT(fixtures::gradcheck([&] { return (cfc(img, text) * w).sum(); }, leaves, 8), 1e-4);
}

TEST(Cfc, ParameterCountMatchesModule) {
    for (auto cfg : {fixtures::tiny_model().cfc, ModelConfig::desk(32).cfc}) {
        Cfc cfc(cfg);
        EXPECT_EQ(count_parameters(cfg), count_parameters(*cfc));
    }
}

TEST(Cfc, FullScaleCountInBudget) {
    const auto cfg = CfcConfig::full_scale();
    const auto n = count_parameters(cfg);
    EXPECT_GE(n, 80'000'000);
    EXPECT_LE(n, 130'000'000);
    auto over = cfg;
    over.param_budget = n - 1;
    EXPECT_THROW(over.validate(), std::invalid_argument);
    over.param_budget = n;
    EXPECT_NO_THROW(over.validate());
}

TEST(Cfc, JsonRoundTrip) {
    auto cfg = CfcConfig::full_scale();
    nlohmann::json j = cfg;
    auto back = j.get<CfcConfig>();
    EXPECT_EQ(count_parameters(back), count_parameters(cfg));
    EXPECT_EQ(back.L_img, 256);
}
