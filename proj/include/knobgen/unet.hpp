#pragma once

#include <json.hpp>
#include <torch/torch.h>

#include <vector>

#include "knobgen/layers.hpp"

namespace knobgen {

struct DenoiserConfig {
    int64_t base_channels = 32;
    std::vector<int64_t> channel_multipliers{1, 2, 2};
    std::vector<int64_t> attention_levels{1, 2};
    int64_t d_ctx = 64;
    int64_t L_ctx = 16;
    int64_t image_size = 32;
    int64_t image_channels = 3;
    int T_steps = 1000;
    int64_t heads = 4;

    int64_t levels() const { return static_cast<int64_t>(channel_multipliers.size()); }
    int64_t level_channels(int64_t level) const { return base_channels * channel_multipliers.at(level); }
    int64_t level_resolution(int64_t level) const { return image_size >> level; }
    void validate() const;
};

void to_json(nlohmann::json& j, const DenoiserConfig& c);
void from_json(const nlohmann::json& j, DenoiserConfig& c);

/// Everything the denoiser is conditioned on besides z_t and t.
///
/// `coarse_context` is a (B, L_ctx, d_ctx) token matrix consumed by every
/// cross-attention site. `fine_residuals` holds one (B, C_l, H_l, W_l) map per
/// encoder level, added to that level's features after scaling by
/// `fine_scale`. An absent fine branch is either an empty residual list or
/// fine_scale == 0; both skip the addition entirely.
struct ConditioningBundle {
    torch::Tensor coarse_context;
    std::vector<torch::Tensor> fine_residuals;
    double fine_scale = 0.0;

    static ConditioningBundle coarse_only(torch::Tensor context) {
        return ConditioningBundle{std::move(context), {}, 0.0};
    }
    bool has_fine() const { return !fine_residuals.empty() && fine_scale != 0.0; }
};

/// Small U-Net predicting the noise in z_t.
struct UNetImpl : torch::nn::Module {
    explicit UNetImpl(DenoiserConfig cfg);

    /// x: (B, C, H, W); timesteps: (B) integer timesteps in [1, T].
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& timesteps,
                          const ConditioningBundle& cond);

    /// Feature-map shapes (without batch) the fine residuals must match.
    std::vector<std::vector<int64_t>> residual_shapes() const;

    const DenoiserConfig& config() const { return cfg_; }

private:
    void check_inputs(const torch::Tensor& x, const torch::Tensor& timesteps,
                      const ConditioningBundle& cond) const;
    bool has_attention(int64_t level) const;

    DenoiserConfig cfg_;
    torch::nn::Sequential time_mlp{nullptr};
    torch::nn::Conv2d conv_in{nullptr};
    // Per-level entries; attention slots are null at levels without cross-attention.
    std::vector<ResBlock> down_blocks_;
    std::vector<SpatialCrossAttention> down_attn_;
    std::vector<torch::nn::Conv2d> downsamplers_;
    ResBlock mid1{nullptr}, mid2{nullptr};
    SpatialCrossAttention mid_attn{nullptr};
    std::vector<ResBlock> up_blocks_;
    std::vector<SpatialCrossAttention> up_attn_;
    std::vector<torch::nn::Conv2d> upsamplers_;
    torch::nn::GroupNorm norm_out{nullptr};
    torch::nn::Conv2d conv_out{nullptr};
};
TORCH_MODULE(UNet);

}  // namespace knobgen
