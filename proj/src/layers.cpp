#include "knobgen/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace knobgen {

int64_t norm_groups(int64_t channels) { return channels % 8 == 0 ? 8 : 1; }

CrossAttentionImpl::CrossAttentionImpl(int64_t query_dim, int64_t context_dim, int64_t heads_)
    : heads(heads_) {
    if (heads <= 0 || query_dim % heads != 0) {
        throw std::invalid_argument("attention width must be divisible by the head count");
    }
    to_q = register_module("to_q", torch::nn::Linear(torch::nn::LinearOptions(query_dim, query_dim).bias(false)));
    to_k = register_module("to_k", torch::nn::Linear(torch::nn::LinearOptions(context_dim, query_dim).bias(false)));
    to_v = register_module("to_v", torch::nn::Linear(torch::nn::LinearOptions(context_dim, query_dim).bias(false)));
    to_out = register_module("to_out", torch::nn::Linear(query_dim, query_dim));
}

torch::Tensor CrossAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& context) {
    const auto b = x.size(0);
    const auto n = x.size(1);
    const auto m = context.size(1);
    const auto width = to_q->options.out_features();
    const auto head_dim = width / heads;

    auto q = to_q(x).view({b, n, heads, head_dim}).transpose(1, 2);
    auto k = to_k(context).view({b, m, heads, head_dim}).transpose(1, 2);
    auto v = to_v(context).view({b, m, heads, head_dim}).transpose(1, 2);

    auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim));
    auto out = torch::matmul(torch::softmax(scores, -1), v);
    out = out.transpose(1, 2).reshape({b, n, width});
    return to_out(out);
}

SpatialCrossAttentionImpl::SpatialCrossAttentionImpl(int64_t channels, int64_t context_dim, int64_t heads) {
    norm = register_module("norm", torch::nn::GroupNorm(norm_groups(channels), channels));
    attn = register_module("attn", CrossAttention(channels, context_dim, heads));
}

torch::Tensor SpatialCrossAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& context) {
    const auto b = x.size(0);
    const auto c = x.size(1);
    const auto h = x.size(2);
    const auto w = x.size(3);
    auto tokens = norm(x).flatten(2).transpose(1, 2);  // (B, HW, C)
    auto out = attn(tokens, context).transpose(1, 2).reshape({b, c, h, w});
    return x + out;
}

ResBlockImpl::ResBlockImpl(int64_t in_channels, int64_t out_channels, int64_t time_dim) {
    norm1 = register_module("norm1", torch::nn::GroupNorm(norm_groups(in_channels), in_channels));
    conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 3).padding(1)));
    time_proj = register_module("time_proj", torch::nn::Linear(time_dim, out_channels));
    norm2 = register_module("norm2", torch::nn::GroupNorm(norm_groups(out_channels), out_channels));
    conv2 = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(out_channels, out_channels, 3).padding(1)));
    if (in_channels != out_channels) {
        skip = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, 1)));
    }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& time_emb) {
    auto h = conv1(torch::silu(norm1(x)));
    h = h + time_proj(time_emb).unsqueeze(-1).unsqueeze(-1);
    h = conv2(torch::silu(norm2(h)));
    return (skip ? skip(x) : x) + h;
}

torch::Tensor timestep_embedding(const torch::Tensor& timesteps, int64_t dim, torch::ScalarType dtype) {
    const int64_t half = dim / 2;
    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, opts) / static_cast<double>(half));
    auto args = timesteps.to(torch::kFloat64).unsqueeze(1) * freqs.unsqueeze(0);
    auto emb = torch::cat({torch::sin(args), torch::cos(args)}, 1);
    if (dim % 2 == 1) {
        emb = torch::cat({emb, torch::zeros({emb.size(0), 1}, opts)}, 1);
    }
    return emb.to(dtype);
}

}  // namespace knobgen
