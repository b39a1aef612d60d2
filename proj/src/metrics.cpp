#include "knobgen/metrics.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace knobgen {

namespace {

constexpr double kEigenTolerance = 1e-6;

Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
    if (eig.info() != Eigen::Success) {
        throw std::runtime_error("eigendecomposition failed");
    }
    Eigen::VectorXd values = eig.eigenvalues();
    const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < values.size(); ++i) {
        if (values[i] < -kEigenTolerance * scale) {
            throw std::domain_error("matrix is not positive semi-definite");
        }
        values[i] = std::sqrt(std::max(values[i], 0.0));
    }
    return eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
}

std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<size_t> order(v.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (size_t i = 0; i < order.size();) {
        size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

RankCorrelation spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 3) {
        throw std::invalid_argument("spearman needs two equally long samples of size >= 3");
    }
    const auto n = static_cast<Eigen::Index>(x.size());
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(rx.data(), n);
    Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(ry.data(), n);
    a.array() -= a.mean();
    b.array() -= b.mean();
    const double denom = a.norm() * b.norm();
    if (denom == 0.0) {
        throw std::domain_error("spearman is undefined for a constant sample");
    }
    RankCorrelation out;
    out.n = x.size();
    out.rho = std::clamp(a.dot(b) / denom, -1.0, 1.0);
    const double dof = static_cast<double>(n - 2);
    if (std::abs(out.rho) >= 1.0) {
        out.p_value = 0.0;
    } else {
        const double t = out.rho * std::sqrt(dof / (1.0 - out.rho * out.rho));
        boost::math::students_t dist(dof);
        out.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
    }
    return out;
}

GaussianMoments estimate_moments(const FeatureSet& set) {
    const auto n = set.features.rows();
    const auto d = set.features.cols();
    if (n < d + 1) {
        throw std::invalid_argument("need at least D + 1 = " + std::to_string(d + 1) + " samples, got " +
                                    std::to_string(n));
    }
    GaussianMoments m;
    m.mean = set.features.colwise().mean().transpose();
    const Eigen::MatrixXd centered = set.features.rowwise() - m.mean.transpose();
    m.covariance = centered.transpose() * centered / static_cast<double>(n - 1);
    return m;
}

double frechet_distance(const GaussianMoments& a, const GaussianMoments& b) {
    if (a.mean.size() != b.mean.size() || a.covariance.rows() != b.covariance.rows()) {
        throw std::invalid_argument("feature dimensions differ");
    }
    const double mean_term = (a.mean - b.mean).squaredNorm();
    // tr((S_a S_b)^{1/2}) = tr((S_a^{1/2} S_b S_a^{1/2})^{1/2}), the inner matrix is symmetric PSD.
    const Eigen::MatrixXd root_a = symmetric_sqrt(a.covariance);
    Eigen::MatrixXd inner = root_a * b.covariance * root_a;
    inner = 0.5 * (inner + inner.transpose());
    const double cross = symmetric_sqrt(inner).trace();
    const double value = mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
    return std::max(value, 0.0);
}

double fid(const FeatureSet& a, const FeatureSet& b) {
    if (a.features.cols() != b.features.cols()) {
        throw std::invalid_argument("feature dimensions differ");
    }
    return frechet_distance(estimate_moments(a), estimate_moments(b));
}

double prompt_alignment(const torch::Tensor& image_embeddings, const torch::Tensor& text_embeddings) {
    if (image_embeddings.dim() != 2 || image_embeddings.sizes() != text_embeddings.sizes()) {
        throw std::invalid_argument("prompt_alignment needs equally shaped (N, D) embeddings");
    }
    if (image_embeddings.size(0) == 0) {
        throw std::invalid_argument("prompt_alignment needs at least one pair");
    }
    auto a = image_embeddings.to(torch::kFloat64);
    auto b = text_embeddings.to(torch::kFloat64);
    auto na = a.norm(2, 1);
    auto nb = b.norm(2, 1);
    if (na.eq(0).any().item<bool>() || nb.eq(0).any().item<bool>()) {
        throw std::domain_error("zero-norm embedding");
    }
    return ((a * b).sum(1) / (na * nb)).mean().item<double>();
}

double conformity_from_edges(const SketchImage& edges, const SketchImage& sketch) {
    return mask_iou(edges, dilate(sketch));
}

double sketch_conformity(const torch::Tensor& generated, const SketchImage& sketch) {
    if (generated.dim() != 3 || generated.size(1) != sketch.height() || generated.size(2) != sketch.width()) {
        throw std::invalid_argument("generated image and sketch resolutions differ");
    }
    return conformity_from_edges(sketchify(edge_map_from_image(generated)), sketch);
}

JointEncoderImpl::JointEncoderImpl(JointEncoderConfig c) : cfg(std::move(c)), vocab(cfg.vocabulary) {
    const auto w = cfg.width;
    image_tower = register_module(
        "image_tower",
        torch::nn::Sequential(torch::nn::Conv2d(torch::nn::Conv2dOptions(3, w, 3).padding(1)), torch::nn::SiLU(),
                              torch::nn::Conv2d(torch::nn::Conv2dOptions(w, 2 * w, 3).stride(2).padding(1)),
                              torch::nn::SiLU(),
                              torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * w, 2 * w, 3).stride(2).padding(1)),
                              torch::nn::SiLU(), torch::nn::AdaptiveAvgPool2d(1), torch::nn::Flatten()));
    image_head = register_module("image_head", torch::nn::Linear(2 * w, cfg.d_embed));
    token_embed = register_module("token_embed", torch::nn::Embedding(vocab.size(), cfg.d_token));
    text_head = register_module("text_head", torch::nn::Sequential(torch::nn::Linear(cfg.d_token, cfg.d_token),
                                                                   torch::nn::SiLU(),
                                                                   torch::nn::Linear(cfg.d_token, cfg.d_embed)));
}

torch::Tensor JointEncoderImpl::embed_images(const torch::Tensor& images) {
    return image_head(image_tower->forward(images));
}

torch::Tensor JointEncoderImpl::embed_prompts(const std::vector<std::string>& prompts) {
    auto ids = torch::empty({static_cast<int64_t>(prompts.size()), cfg.L_text}, torch::kLong);
    auto acc = ids.accessor<int64_t, 2>();
    for (size_t i = 0; i < prompts.size(); ++i) {
        const auto row = vocab.encode(prompts[i], cfg.L_text);
        for (int64_t k = 0; k < cfg.L_text; ++k) acc[static_cast<int64_t>(i)][k] = row[static_cast<size_t>(k)];
    }
    auto mask = ids.ne(Vocabulary::kPad).to(torch::kFloat32).unsqueeze(-1);
    auto pooled = (token_embed(ids) * mask).sum(1) / mask.sum(1).clamp_min(1.0);
    return text_head->forward(pooled);
}

JointEncoder train_joint_encoder(const std::vector<DatasetRecord>& records, const JointEncoderConfig& cfg,
                                 const JointTrainConfig& train) {
    if (records.size() < 2) {
        throw std::invalid_argument("joint encoder training needs at least two records");
    }
    torch::manual_seed(train.seed);
    JointEncoder enc(cfg);
    std::vector<size_t> all(records.size());
    std::iota(all.begin(), all.end(), size_t{0});
    auto images = stack_images(records, all);
    std::vector<std::string> prompts;
    for (const auto& r : records) prompts.push_back(r.prompt);

    torch::optim::AdamW opt(enc->parameters(), torch::optim::AdamWOptions(train.lr));
    auto log_temp = enc->register_parameter("log_inv_temperature", torch::full({}, std::log(10.0)));
    opt.add_param_group(torch::optim::OptimizerParamGroup({log_temp}));
    std::mt19937_64 rng(train.seed);
    for (int epoch = 0; epoch < train.epochs; ++epoch) {
        std::vector<size_t> order = all;
        std::shuffle(order.begin(), order.end(), rng);
        for (size_t i = 0; i + 1 < order.size(); i += static_cast<size_t>(train.batch_size)) {
            const size_t end = std::min(order.size(), i + static_cast<size_t>(train.batch_size));
            std::vector<int64_t> idx(order.begin() + static_cast<std::ptrdiff_t>(i),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
            if (idx.size() < 2) break;
            std::vector<std::string> batch_prompts;
            for (auto k : idx) batch_prompts.push_back(prompts[static_cast<size_t>(k)]);
            auto img = torch::nn::functional::normalize(
                enc->embed_images(images.index_select(0, torch::tensor(idx))),
                torch::nn::functional::NormalizeFuncOptions().dim(1));
            auto txt = torch::nn::functional::normalize(enc->embed_prompts(batch_prompts),
                                                        torch::nn::functional::NormalizeFuncOptions().dim(1));
            auto logits = torch::matmul(img, txt.t()) * log_temp.clamp(0.0, std::log(100.0)).exp();
            // Identical prompts in a batch are all positives.
            auto targets = torch::zeros_like(logits);
            for (size_t a = 0; a < batch_prompts.size(); ++a)
                for (size_t b = 0; b < batch_prompts.size(); ++b)
                    if (batch_prompts[a] == batch_prompts[b])
                        targets[static_cast<int64_t>(a)][static_cast<int64_t>(b)] = 1.0;
            targets = targets / targets.sum(1, true);
            auto loss = 0.5 * (-(targets * torch::log_softmax(logits, 1)).sum(1).mean() -
                               (targets.t() * torch::log_softmax(logits.t(), 1)).sum(1).mean());
            opt.zero_grad();
            loss.backward();
            opt.step();
        }
    }
    enc->eval();
    return enc;
}

void save_joint_encoder(const JointEncoder& encoder, const std::filesystem::path& path) {
    torch::serialize::OutputArchive archive;
    nlohmann::json j{{"image_size", encoder->cfg.image_size}, {"width", encoder->cfg.width},
                     {"d_embed", encoder->cfg.d_embed},       {"d_token", encoder->cfg.d_token},
                     {"L_text", encoder->cfg.L_text},         {"vocabulary", encoder->cfg.vocabulary}};
    archive.write("config", c10::IValue(j.dump()));
    encoder->save(archive);
    archive.save_to(path.string());
}

JointEncoder load_joint_encoder(const std::filesystem::path& path) {
    torch::serialize::InputArchive archive;
    archive.load_from(path.string());
    c10::IValue config;
    archive.read("config", config);
    const auto j = nlohmann::json::parse(config.toStringRef());
    JointEncoderConfig cfg;
    j.at("image_size").get_to(cfg.image_size);
    j.at("width").get_to(cfg.width);
    j.at("d_embed").get_to(cfg.d_embed);
    j.at("d_token").get_to(cfg.d_token);
    j.at("L_text").get_to(cfg.L_text);
    j.at("vocabulary").get_to(cfg.vocabulary);
    JointEncoder enc(cfg);
    enc->register_parameter("log_inv_temperature", torch::zeros({}));
    enc->load(archive);
    enc->eval();
    return enc;
}

FeatureSet image_features(JointEncoder& encoder, const torch::Tensor& images, std::string source) {
    torch::NoGradGuard no_grad;
    auto emb = encoder->embed_images(images).to(torch::kFloat64).contiguous();
    FeatureSet set;
    set.source = std::move(source);
    set.features = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        emb.data_ptr<double>(), emb.size(0), emb.size(1));
    return set;
}

}  // namespace knobgen
