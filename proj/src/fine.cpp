#include "knobgen/fine.hpp"

#include <stdexcept>
#include <string>

namespace knobgen {

FgcConfig FgcConfig::for_denoiser(const DenoiserConfig& denoiser) {
    FgcConfig c;
    c.image_size = denoiser.image_size;
    c.level_channels.clear();
    c.downsample_factors.clear();
    for (int64_t l = 0; l < denoiser.levels(); ++l) {
        c.level_channels.push_back(denoiser.level_channels(l));
        c.downsample_factors.push_back(l == 0 ? 1 : 2);
    }
    return c;
}

void FgcConfig::validate() const {
    if (level_channels.empty() || level_channels.size() != downsample_factors.size()) {
        throw std::invalid_argument("FGC level_channels and downsample_factors must be non-empty and equally long");
    }
    int64_t res = image_size;
    for (size_t i = 0; i < level_channels.size(); ++i) {
        if (level_channels[i] < 1 || downsample_factors[i] < 1) {
            throw std::invalid_argument("FGC channels and factors must be positive");
        }
        if (res % downsample_factors[i] != 0) {
            throw std::invalid_argument("FGC downsampling does not divide the resolution at level " + std::to_string(i));
        }
        res /= downsample_factors[i];
    }
}

std::vector<std::vector<int64_t>> FgcConfig::residual_shapes() const {
    std::vector<std::vector<int64_t>> shapes;
    int64_t res = image_size;
    for (size_t i = 0; i < level_channels.size(); ++i) {
        res /= downsample_factors[i];
        shapes.push_back({level_channels[i], res, res});
    }
    return shapes;
}

void to_json(nlohmann::json& j, const FgcConfig& c) {
    j = nlohmann::json{{"image_size", c.image_size},
                       {"level_channels", c.level_channels},
                       {"downsample_factors", c.downsample_factors},
                       {"zero_init_outputs", c.zero_init_outputs}};
}

void from_json(const nlohmann::json& j, FgcConfig& c) {
    j.at("image_size").get_to(c.image_size);
    j.at("level_channels").get_to(c.level_channels);
    j.at("downsample_factors").get_to(c.downsample_factors);
    j.at("zero_init_outputs").get_to(c.zero_init_outputs);
}

FineControllerImpl::FineControllerImpl(FgcConfig c) : cfg(std::move(c)) {
    cfg.validate();
    int64_t in = 1;
    for (size_t i = 0; i < cfg.level_channels.size(); ++i) {
        const int64_t ch = cfg.level_channels[i];
        const auto tag = std::to_string(i);
        stages.push_back(register_module(
            "stage" + tag,
            torch::nn::Sequential(
                torch::nn::Conv2d(torch::nn::Conv2dOptions(in, ch, 3).stride(cfg.downsample_factors[i]).padding(1)),
                torch::nn::SiLU(), torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, ch, 3).padding(1)), torch::nn::SiLU())));
        auto out = register_module("out" + tag, torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, ch, 1)));
        if (cfg.zero_init_outputs) {
            torch::NoGradGuard no_grad;
            out->weight.zero_();
            out->bias.zero_();
        }
        outputs.push_back(out);
        in = ch;
    }
}

std::vector<torch::Tensor> FineControllerImpl::forward(const torch::Tensor& sketch) {
    if (sketch.dim() != 4 || sketch.size(1) != 1 || sketch.size(2) != cfg.image_size || sketch.size(3) != cfg.image_size) {
        throw std::invalid_argument("FGC expects (B, 1, " + std::to_string(cfg.image_size) + ", " +
                                    std::to_string(cfg.image_size) + ") sketches");
    }
    std::vector<torch::Tensor> residuals;
    residuals.reserve(stages.size());
    auto h = sketch;
    for (size_t i = 0; i < stages.size(); ++i) {
        h = stages[i]->forward(h);
        residuals.push_back(outputs[i](h));
    }
    return residuals;
}

void FineControllerImpl::check_compatible(const UNetImpl& denoiser) const {
    if (cfg.residual_shapes() != denoiser.residual_shapes()) {
        throw std::invalid_argument("FGC residual shapes do not match the denoiser's encoder levels");
    }
}

}  // namespace knobgen
