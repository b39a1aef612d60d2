#pragma once

// The full dual-pathway generator: toy encoders, CFC, FGC and denoiser.

#include <json.hpp>
#include <torch/torch.h>

#include <string>
#include <vector>

#include "knobgen/coarse.hpp"
#include "knobgen/diffusion.hpp"
#include "knobgen/fine.hpp"
#include "knobgen/schedule.hpp"
#include "knobgen/sketch.hpp"
#include "knobgen/unet.hpp"

namespace knobgen {

struct ModelConfig {
    DenoiserConfig denoiser;
    ImageEncoderConfig sketch_encoder;
    CfcConfig cfc;
    FgcConfig fgc;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    std::vector<std::string> vocabulary = Vocabulary::toy().tokens();

    /// Consistent desk-scale defaults for a given resolution.
    static ModelConfig desk(int64_t image_size = 32);

    TextEncoderConfig text_encoder() const;
    NoiseSchedule schedule() const { return make_noise_schedule(denoiser.T_steps, beta_start, beta_end); }
    Vocabulary vocab() const { return Vocabulary(vocabulary); }
    /// Cross-module shape agreement (text dims == context dims, FGC levels == U-Net levels, ...).
    void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Where the denoiser's cross-attention context comes from.
enum class CoarseMode {
    Cfc,   ///< CFC fusion of sketch and text (the full model)
    Text,  ///< raw text tokens (base model / FGC-only configuration)
};

struct GenerateOptions {
    KnobConfig knob;
    uint64_t seed = 0;
    CoarseMode mode = CoarseMode::Cfc;
    /// false gives the coarse-only pipeline: the FGC is never built or run.
    bool use_fine = true;
    /// Clamp the predicted clean image at every step (see sample()).
    bool clip_denoised = true;
    SampleObserver observer;
};

struct KnobGenModelImpl : torch::nn::Module {
    explicit KnobGenModelImpl(ModelConfig cfg);

    /// (B, L_ctx) token ids.
    torch::Tensor tokenize(const std::vector<std::string>& prompts) const;
    /// (B, L_ctx, d_ctx) cross-attention context.
    torch::Tensor coarse_context(const torch::Tensor& sketches, const torch::Tensor& ids, CoarseMode mode);
    std::vector<torch::Tensor> fine_residuals(const torch::Tensor& sketches);

    /// Generates one image per (sketch, prompt) pair: (B, 3, H, W) in [-1, 1].
    torch::Tensor generate(const std::vector<SketchImage>& sketches, const std::vector<std::string>& prompts,
                           const GenerateOptions& options);

    const ModelConfig& config() const { return cfg_; }
    const NoiseSchedule& schedule() const { return schedule_; }

    TextEncoder text_encoder{nullptr};
    ImageEncoder sketch_encoder{nullptr};
    /// Projects pooled sketch tokens into the text space for the auxiliary
    /// contrastive loss that trains the encoders during the base phase.
    torch::nn::Linear sketch_text_head{nullptr};
    Cfc cfc{nullptr};
    FineController fgc{nullptr};
    UNet unet{nullptr};

private:
    ModelConfig cfg_;
    Vocabulary vocab_;
    NoiseSchedule schedule_;
};
TORCH_MODULE(KnobGenModel);

/// Stacks sketches into (B, 1, H, W) float32.
torch::Tensor stack_sketches(const std::vector<SketchImage>& sketches);

}  // namespace knobgen
