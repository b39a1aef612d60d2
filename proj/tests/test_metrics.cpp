#include <gtest/gtest.h>

#include <random>

#include "knobgen/metrics.hpp"
#include "test_util.hpp"

using namespace knobgen;

namespace {

FeatureSet random_features(int64_t n, int64_t d, uint64_t seed, double shift = 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    FeatureSet f;
    f.features.resize(n, d);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) f.features(i, j) = g(rng) * (1.0 + 0.3 * j) + shift;
    return f;
}

}  // namespace

TEST(Fid, IdenticalSetsScoreZero) {
    auto a = random_features(200, 6, 1);
    EXPECT_NEAR(fid(a, a), 0.0, 1e-8);
}

TEST(Fid, AnalyticGaussians) {
    GaussianMoments a{Eigen::VectorXd::Zero(4), Eigen::MatrixXd::Identity(4, 4)};
    GaussianMoments b{Eigen::VectorXd::Unit(4, 0), Eigen::MatrixXd::Identity(4, 4)};
    EXPECT_NEAR(frechet_distance(a, b), 1.0, 1e-6);

    Eigen::MatrixXd cov = Eigen::Vector2d(1.0, 4.0).asDiagonal();
    GaussianMoments c{Eigen::Vector2d(0, 0), cov};
    GaussianMoments d{Eigen::Vector2d(1, 1), cov};
    EXPECT_NEAR(frechet_distance(c, d), 2.0, 1e-6);

    // Different covariances: tr(I + 4I - 2*2I) = d for the scalar case sigma 1 vs 2.
    GaussianMoments e{Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3)};
    GaussianMoments f{Eigen::VectorXd::Zero(3), 4.0 * Eigen::MatrixXd::Identity(3, 3)};
    EXPECT_NEAR(frechet_distance(e, f), 3.0, 1e-9);
}

TEST(Fid, SymmetricAndRotationInvariant) {
    auto a = random_features(300, 5, 2);
    auto b = random_features(250, 5, 3, 0.4);
    EXPECT_NEAR(fid(a, b), fid(b, a), 1e-8);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_features(5, 5, 4).features);
    Eigen::MatrixXd q = qr.householderQ();
    FeatureSet ra{a.features * q, "a"}, rb{b.features * q, "b"};
    EXPECT_NEAR(fid(ra, rb), fid(a, b), 1e-6);
    EXPECT_GT(fid(a, b), 0.1);
}

TEST(Fid, Errors) {
    auto a = random_features(10, 4, 1);
    EXPECT_THROW(fid(a, random_features(10, 3, 1)), std::invalid_argument);
    EXPECT_THROW(fid(a, random_features(4, 4, 1)), std::invalid_argument);
    EXPECT_NO_THROW(fid(a, random_features(5, 4, 1)));
    GaussianMoments bad{Eigen::VectorXd::Zero(2), Eigen::Vector2d(1.0, -1.0).asDiagonal()};
    GaussianMoments ok{Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2)};
    EXPECT_THROW(frechet_distance(bad, ok), std::domain_error);
}

TEST(Alignment, CosineCases) {
    auto x = torch::randn({5, 8});
    EXPECT_NEAR(prompt_alignment(x, x), 1.0, 1e-6);
    EXPECT_NEAR(prompt_alignment(x, x * 3.5), 1.0, 1e-6);
    EXPECT_NEAR(prompt_alignment(x, -x), -1.0, 1e-6);
    auto e0 = torch::tensor({{1.0, 0.0}});
    auto e1 = torch::tensor({{0.0, 2.0}});
    EXPECT_NEAR(prompt_alignment(e0, e1), 0.0, 1e-12);
    auto y = torch::randn({5, 8});
    double sum = 0;
    for (int i = 0; i < 5; ++i) sum += prompt_alignment(x.slice(0, i, i + 1), y.slice(0, i, i + 1));
    EXPECT_NEAR(prompt_alignment(x, y), sum / 5, 1e-9);
    EXPECT_THROW(prompt_alignment(torch::zeros({1, 2}), e0), std::domain_error);
    EXPECT_THROW(prompt_alignment(x, y.slice(0, 0, 4)), std::invalid_argument);
}

namespace {

SketchImage square_outline(int64_t size, int64_t lo, int64_t hi, int64_t shift = 0) {
    auto p = torch::zeros({size, size}, torch::kUInt8);
    for (int64_t i = lo; i <= hi; ++i) {
        p[lo + shift][i + shift] = 1;
        p[hi + shift][i + shift] = 1;
        p[i + shift][lo + shift] = 1;
        p[i + shift][hi + shift] = 1;
    }
    return SketchImage(p);
}

}  // namespace

TEST(Conformity, Cases) {
    auto sketch = square_outline(32, 8, 20);
    EXPECT_DOUBLE_EQ(conformity_from_edges(dilate(sketch), sketch), 1.0);
    EXPECT_DOUBLE_EQ(sketch_conformity(torch::full({3, 32, 32}, -1.f), sketch), 0.0);
    EXPECT_DOUBLE_EQ(sketch_conformity(torch::full({3, 32, 32}, -1.f), SketchImage(32, 32)), 1.0);
    const double near = conformity_from_edges(square_outline(32, 8, 20, 1), sketch);
    const double far = conformity_from_edges(square_outline(32, 8, 20, 5), sketch);
    EXPECT_GT(near, far);
    EXPECT_THROW(sketch_conformity(torch::zeros({3, 16, 16}), sketch), std::invalid_argument);
}

TEST(Conformity, FilledSquareMatchesOutline) {
    auto img = torch::full({3, 32, 32}, -1.f);
    img.index_put_({torch::indexing::Slice(), torch::indexing::Slice(8, 21), torch::indexing::Slice(8, 21)}, 1.f);
    EXPECT_GT(sketch_conformity(img, square_outline(32, 8, 20)), 0.5);
}

TEST(JointEncoder, TrainsAndRoundTrips) {
    ToyDatasetConfig toy;
    toy.image_size = 16;
    auto records = generate_toy_dataset(64, toy);
    JointEncoderConfig cfg;
    cfg.image_size = 16;
    cfg.width = 8;
    cfg.d_embed = 8;
    JointTrainConfig train;
    train.epochs = 3;
    train.batch_size = 16;
    auto enc = train_joint_encoder(records, cfg, train);
    std::vector<size_t> idx{0, 1, 2, 3};
    auto images = stack_images(records, idx);
    auto feats = image_features(enc, images, "x");
    EXPECT_EQ(feats.features.rows(), 4);
    EXPECT_EQ(feats.features.cols(), 8);
    auto path = fixtures::temp_dir("joint") / "enc.pt";
    save_joint_encoder(enc, path);
    auto back = load_joint_encoder(path);
    auto again = image_features(back, images, "y");
    EXPECT_TRUE(feats.features.isApprox(again.features, 1e-12));
    torch::NoGradGuard g;
    auto t1 = enc->embed_prompts({records[0].prompt});
    auto t2 = back->embed_prompts({records[0].prompt});
    EXPECT_TRUE(torch::equal(t1, t2));
}

// Reference values from scipy.stats.spearmanr.
TEST(Spearman, MatchesReferenceWithTies) {
    const auto r = spearman({0, 0, 10, 10, 20, 20, 30, 30}, {0.1, 0.3, 0.2, 0.35, 0.3, 0.5, 0.45, 0.4});
    EXPECT_NEAR(r.rho, 0.7363210405107239, 1e-12);
    EXPECT_NEAR(r.p_value, 0.03724607745676498, 1e-10);
    EXPECT_EQ(r.n, 8u);
    const auto s = spearman({1, 2, 3, 4, 5}, {5, 6, 7, 8, 7});
    EXPECT_NEAR(s.rho, 0.8207826816681233, 1e-12);
    EXPECT_NEAR(s.p_value, 0.08858700531354381, 1e-10);
}

TEST(Spearman, PropertiesAndErrors) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-3, 3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> x(12), y(12), fx(12);
        for (size_t i = 0; i < x.size(); ++i) {
            x[i] = u(rng);
            y[i] = u(rng);
            fx[i] = std::exp(x[i]);  // strictly increasing transform
        }
        EXPECT_NEAR(spearman(x, fx).rho, 1.0, 1e-12);
        EXPECT_NEAR(spearman(x, y).rho, spearman(y, x).rho, 1e-12);
        std::vector<double> neg(12);
        for (size_t i = 0; i < y.size(); ++i) neg[i] = -y[i];
        EXPECT_NEAR(spearman(x, neg).rho, -spearman(x, y).rho, 1e-12);
        const auto r = spearman(x, y);
        EXPECT_GE(r.p_value, 0.0);
        EXPECT_LE(r.p_value, 1.0);
    }
    EXPECT_THROW(spearman({1, 2}, {1, 2}), std::invalid_argument);
    EXPECT_THROW(spearman({1, 2, 3}, {1, 2}), std::invalid_argument);
    EXPECT_THROW(spearman({1, 1, 1}, {1, 2, 3}), std::domain_error);
}
