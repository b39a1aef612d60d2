#pragma once

// Micro pathway: an adapter branch mapping the raw sketch to one residual
// feature map per denoiser encoder level.

#include <json.hpp>
#include <torch/torch.h>

#include <vector>

#include "knobgen/unet.hpp"

namespace knobgen {

struct FgcConfig {
    int64_t image_size = 32;
    std::vector<int64_t> level_channels{32, 64, 64};
    /// Stride applied when entering each level, relative to the previous one.
    std::vector<int64_t> downsample_factors{1, 2, 2};
    bool zero_init_outputs = true;

    /// Matches the encoder levels of a denoiser.
    static FgcConfig for_denoiser(const DenoiserConfig& denoiser);
    void validate() const;
    /// (C, H, W) of every residual.
    std::vector<std::vector<int64_t>> residual_shapes() const;
};

void to_json(nlohmann::json& j, const FgcConfig& c);
void from_json(const nlohmann::json& j, FgcConfig& c);

/// Strided convolutional pyramid. Each level: strided 3x3 conv, SiLU, 3x3
/// conv, SiLU, then a 1x1 output projection that starts at zero when
/// zero_init_outputs is set.
struct FineControllerImpl : torch::nn::Module {
    explicit FineControllerImpl(FgcConfig cfg);

    /// sketch: (B, 1, H, W) with values in {0, 1}.
    std::vector<torch::Tensor> forward(const torch::Tensor& sketch);

    /// Throws unless every residual shape equals the denoiser's level shape.
    void check_compatible(const UNetImpl& denoiser) const;

    FgcConfig cfg;
    std::vector<torch::nn::Sequential> stages;
    std::vector<torch::nn::Conv2d> outputs;
};
TORCH_MODULE(FineController);

}  // namespace knobgen
