#pragma once

// Evaluation metrics: Frechet distance over pluggable features, prompt
// alignment over a small contrastively trained joint encoder, and sketch
// conformity (edge IoU against the input sketch).
//
// FID values here come from the toy joint encoder, not InceptionV3, and are
// only comparable with other numbers produced by the same encoder.

#include <Eigen/Dense>
#include <torch/torch.h>

#include <string>
#include <vector>

#include "knobgen/coarse.hpp"
#include "knobgen/data.hpp"
#include "knobgen/sketch.hpp"

namespace knobgen {

struct FeatureSet {
    Eigen::MatrixXd features;  ///< (N, D), one row per sample
    std::string source;
};

struct GaussianMoments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
};

/// Sample mean and unbiased covariance. Requires N >= D + 1.
GaussianMoments estimate_moments(const FeatureSet& set);

/// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
double frechet_distance(const GaussianMoments& a, const GaussianMoments& b);
double fid(const FeatureSet& a, const FeatureSet& b);

/// Mean cosine similarity between row-paired embeddings. Throws on a
/// zero-norm row.
double prompt_alignment(const torch::Tensor& image_embeddings, const torch::Tensor& text_embeddings);

/// IoU of an edge mask against the 1-pixel-dilated sketch.
double conformity_from_edges(const SketchImage& edges, const SketchImage& sketch);

/// IoU between sketchify(gradient-magnitude edges of `generated`) and the
/// 1-pixel-dilated sketch. `generated` is (3, H, W) in [-1, 1].
double sketch_conformity(const torch::Tensor& generated, const SketchImage& sketch);

struct RankCorrelation {
    double rho = 0.0;
    double p_value = 1.0;  ///< two-sided, t approximation with n - 2 dof
    size_t n = 0;
};

/// Spearman rank correlation; ties get average ranks. Needs n >= 3 and
/// non-constant inputs.
RankCorrelation spearman(const std::vector<double>& x, const std::vector<double>& y);

struct JointEncoderConfig {
    int64_t image_size = 32;
    int64_t width = 32;
    int64_t d_embed = 32;
    int64_t d_token = 64;
    int64_t L_text = 16;
    std::vector<std::string> vocabulary = Vocabulary::toy().tokens();
};

/// CLIP-style pair of towers: a small CNN over RGB images and a bag of
/// token embeddings over prompts, both projected to d_embed.
struct JointEncoderImpl : torch::nn::Module {
    explicit JointEncoderImpl(JointEncoderConfig cfg);

    /// (B, 3, H, W) in [-1, 1] -> (B, d_embed).
    torch::Tensor embed_images(const torch::Tensor& images);
    torch::Tensor embed_prompts(const std::vector<std::string>& prompts);

    JointEncoderConfig cfg;
    Vocabulary vocab;
    torch::nn::Sequential image_tower{nullptr};
    torch::nn::Linear image_head{nullptr};
    torch::nn::Embedding token_embed{nullptr};
    torch::nn::Sequential text_head{nullptr};
};
TORCH_MODULE(JointEncoder);

struct JointTrainConfig {
    int epochs = 20;
    int batch_size = 64;
    double lr = 2e-3;
    uint64_t seed = 0;
};

/// Symmetric InfoNCE on (image, prompt) pairs.
JointEncoder train_joint_encoder(const std::vector<DatasetRecord>& records, const JointEncoderConfig& cfg,
                                 const JointTrainConfig& train);

void save_joint_encoder(const JointEncoder& encoder, const std::filesystem::path& path);
JointEncoder load_joint_encoder(const std::filesystem::path& path);

/// Image-tower embeddings as an FID feature set.
FeatureSet image_features(JointEncoder& encoder, const torch::Tensor& images, std::string source);

}  // namespace knobgen
