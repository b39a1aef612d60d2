#pragma once

// Building blocks shared by the denoiser, the controllers and the joint encoder.

#include <torch/torch.h>

namespace knobgen {

/// Group count for GroupNorm: 8 when it divides the channel count, else 1.
int64_t norm_groups(int64_t channels);

/// Multi-head attention with queries from one stream and keys/values from another.
/// Inputs are (B, N, query_dim) and (B, M, context_dim); output is (B, N, query_dim).
struct CrossAttentionImpl : torch::nn::Module {
    CrossAttentionImpl(int64_t query_dim, int64_t context_dim, int64_t heads);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context);

    int64_t heads;
    torch::nn::Linear to_q{nullptr}, to_k{nullptr}, to_v{nullptr}, to_out{nullptr};
};
TORCH_MODULE(CrossAttention);

/// Pre-norm residual cross-attention over a (B, C, H, W) feature map.
struct SpatialCrossAttentionImpl : torch::nn::Module {
    SpatialCrossAttentionImpl(int64_t channels, int64_t context_dim, int64_t heads);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& context);

    torch::nn::GroupNorm norm{nullptr};
    CrossAttention attn{nullptr};
};
TORCH_MODULE(SpatialCrossAttention);

/// Two 3x3 convolutions with a timestep-embedding shift in between.
struct ResBlockImpl : torch::nn::Module {
    ResBlockImpl(int64_t in_channels, int64_t out_channels, int64_t time_dim);
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& time_emb);

    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::Linear time_proj{nullptr};
    torch::nn::Conv2d skip{nullptr};
};
TORCH_MODULE(ResBlock);

/// Sinusoidal embedding of integer timesteps: (B) -> (B, dim).
torch::Tensor timestep_embedding(const torch::Tensor& timesteps, int64_t dim,
                                 torch::ScalarType dtype = torch::kFloat32);

}  // namespace knobgen
