#include "knobgen/unet.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace knobgen {

void DenoiserConfig::validate() const {
    if (base_channels < 1 || channel_multipliers.empty() || d_ctx < 1 || L_ctx < 1 ||
        image_channels < 1 || T_steps < 1 || heads < 1) {
        throw std::invalid_argument("denoiser config has non-positive dimensions");
    }
    for (auto m : channel_multipliers) {
        if (m < 1) {
            throw std::invalid_argument("channel multipliers must be positive");
        }
    }
    for (auto level : attention_levels) {
        if (level < 0 || level >= levels()) {
            throw std::invalid_argument("attention level " + std::to_string(level) + " does not exist");
        }
    }
    const int64_t factor = int64_t{1} << (levels() - 1);
    if (image_size < 1 || image_size % factor != 0) {
        throw std::invalid_argument("image_size must be divisible by 2^(levels-1)");
    }
    for (int64_t l = 0; l < levels(); ++l) {
        if (level_channels(l) % heads != 0) {
            throw std::invalid_argument("level channels must be divisible by the head count");
        }
    }
}

void to_json(nlohmann::json& j, const DenoiserConfig& c) {
    j = nlohmann::json{{"base_channels", c.base_channels},
                       {"channel_multipliers", c.channel_multipliers},
                       {"attention_levels", c.attention_levels},
                       {"d_ctx", c.d_ctx},
                       {"L_ctx", c.L_ctx},
                       {"image_size", c.image_size},
                       {"image_channels", c.image_channels},
                       {"T_steps", c.T_steps},
                       {"heads", c.heads}};
}

void from_json(const nlohmann::json& j, DenoiserConfig& c) {
    j.at("base_channels").get_to(c.base_channels);
    j.at("channel_multipliers").get_to(c.channel_multipliers);
    j.at("attention_levels").get_to(c.attention_levels);
    j.at("d_ctx").get_to(c.d_ctx);
    j.at("L_ctx").get_to(c.L_ctx);
    j.at("image_size").get_to(c.image_size);
    j.at("image_channels").get_to(c.image_channels);
    j.at("T_steps").get_to(c.T_steps);
    j.at("heads").get_to(c.heads);
}

UNetImpl::UNetImpl(DenoiserConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int64_t base = cfg_.base_channels;
    const int64_t time_dim = 4 * base;

    time_mlp = register_module("time_mlp", torch::nn::Sequential(torch::nn::Linear(base, time_dim), torch::nn::SiLU(),
                                                                 torch::nn::Linear(time_dim, time_dim)));
    conv_in = register_module("conv_in", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg_.image_channels, base, 3).padding(1)));

    const int64_t levels = cfg_.levels();
    int64_t ch = base;
    for (int64_t l = 0; l < levels; ++l) {
        const int64_t out = cfg_.level_channels(l);
        const auto tag = std::to_string(l);
        down_blocks_.push_back(register_module("down_block" + tag, ResBlock(ch, out, time_dim)));
        down_attn_.push_back(has_attention(l)
                                 ? register_module("down_attn" + tag, SpatialCrossAttention(out, cfg_.d_ctx, cfg_.heads))
                                 : SpatialCrossAttention(nullptr));
        if (l + 1 < levels) {
            downsamplers_.push_back(register_module(
                "down_sample" + tag, torch::nn::Conv2d(torch::nn::Conv2dOptions(out, out, 3).stride(2).padding(1))));
        }
        ch = out;
    }

    mid1 = register_module("mid1", ResBlock(ch, ch, time_dim));
    mid_attn = register_module("mid_attn", SpatialCrossAttention(ch, cfg_.d_ctx, cfg_.heads));
    mid2 = register_module("mid2", ResBlock(ch, ch, time_dim));

    up_blocks_.resize(static_cast<size_t>(levels), ResBlock(nullptr));
    up_attn_.resize(static_cast<size_t>(levels), SpatialCrossAttention(nullptr));
    upsamplers_.resize(static_cast<size_t>(levels), torch::nn::Conv2d(nullptr));
    for (int64_t l = levels - 1; l >= 0; --l) {
        const int64_t out = cfg_.level_channels(l);
        const auto tag = std::to_string(l);
        const auto idx = static_cast<size_t>(l);
        up_blocks_[idx] = register_module("up_block" + tag, ResBlock(ch + out, out, time_dim));
        if (has_attention(l)) {
            up_attn_[idx] = register_module("up_attn" + tag, SpatialCrossAttention(out, cfg_.d_ctx, cfg_.heads));
        }
        if (l > 0) {
            upsamplers_[idx] = register_module(
                "up_sample" + tag, torch::nn::Conv2d(torch::nn::Conv2dOptions(out, out, 3).padding(1)));
        }
        ch = out;
    }

    norm_out = register_module("norm_out", torch::nn::GroupNorm(norm_groups(ch), ch));
    conv_out = register_module("conv_out", torch::nn::Conv2d(torch::nn::Conv2dOptions(ch, cfg_.image_channels, 3).padding(1)));
}

bool UNetImpl::has_attention(int64_t level) const {
    return std::find(cfg_.attention_levels.begin(), cfg_.attention_levels.end(), level) != cfg_.attention_levels.end();
}

std::vector<std::vector<int64_t>> UNetImpl::residual_shapes() const {
    std::vector<std::vector<int64_t>> shapes;
    for (int64_t l = 0; l < cfg_.levels(); ++l) {
        const auto res = cfg_.level_resolution(l);
        shapes.push_back({cfg_.level_channels(l), res, res});
    }
    return shapes;
}

void UNetImpl::check_inputs(const torch::Tensor& x, const torch::Tensor& timesteps,
                            const ConditioningBundle& cond) const {
    const auto s = cfg_.image_size;
    if (x.dim() != 4 || x.size(1) != cfg_.image_channels || x.size(2) != s || x.size(3) != s) {
        throw std::invalid_argument("denoiser input must be (B, " + std::to_string(cfg_.image_channels) + ", " +
                                    std::to_string(s) + ", " + std::to_string(s) + ")");
    }
    const auto b = x.size(0);
    if (timesteps.dim() != 1 || timesteps.size(0) != b) {
        throw std::invalid_argument("timesteps must be a (B) vector");
    }
    if (b > 0 && (timesteps.min().item<int64_t>() < 1 || timesteps.max().item<int64_t>() > cfg_.T_steps)) {
        throw std::out_of_range("timesteps must lie in [1, " + std::to_string(cfg_.T_steps) + "]");
    }
    const auto& ctx = cond.coarse_context;
    if (!ctx.defined() || ctx.dim() != 3 || ctx.size(0) != b || ctx.size(1) != cfg_.L_ctx || ctx.size(2) != cfg_.d_ctx) {
        throw std::invalid_argument("coarse context must be (B, " + std::to_string(cfg_.L_ctx) + ", " +
                                    std::to_string(cfg_.d_ctx) + ")");
    }
    if (cond.fine_scale < 0.0 || cond.fine_scale > 1.0) {
        throw std::invalid_argument("fine_scale must lie in [0, 1]");
    }
    if (!cond.fine_residuals.empty()) {
        const auto shapes = residual_shapes();
        if (cond.fine_residuals.size() != shapes.size()) {
            throw std::invalid_argument("expected " + std::to_string(shapes.size()) + " fine residuals, got " +
                                        std::to_string(cond.fine_residuals.size()));
        }
        for (size_t l = 0; l < shapes.size(); ++l) {
            const auto& r = cond.fine_residuals[l];
            if (r.dim() != 4 || r.size(0) != b || r.size(1) != shapes[l][0] || r.size(2) != shapes[l][1] ||
                r.size(3) != shapes[l][2]) {
                throw std::invalid_argument("fine residual " + std::to_string(l) + " has the wrong shape");
            }
        }
    }
    if (!torch::isfinite(x).all().item<bool>() || !torch::isfinite(ctx).all().item<bool>()) {
        throw std::invalid_argument("denoiser inputs must be finite");
    }
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x, const torch::Tensor& timesteps, const ConditioningBundle& cond) {
    check_inputs(x, timesteps, cond);
    const auto& ctx = cond.coarse_context;
    auto temb = time_mlp->forward(timestep_embedding(timesteps, cfg_.base_channels, x.scalar_type()));

    const auto levels = static_cast<size_t>(cfg_.levels());
    std::vector<torch::Tensor> skips;
    skips.reserve(levels);
    auto h = conv_in(x);
    for (size_t l = 0; l < levels; ++l) {
        h = down_blocks_[l](h, temb);
        if (down_attn_[l]) {
            h = down_attn_[l](h, ctx);
        }
        if (cond.has_fine()) {
            h = h + cond.fine_residuals[l] * cond.fine_scale;
        }
        skips.push_back(h);
        if (l + 1 < levels) {
            h = downsamplers_[l](h);
        }
    }

    h = mid1(h, temb);
    h = mid_attn(h, ctx);
    h = mid2(h, temb);

    for (size_t i = levels; i-- > 0;) {
        h = up_blocks_[i](torch::cat({h, skips[i]}, 1), temb);
        if (up_attn_[i]) {
            h = up_attn_[i](h, ctx);
        }
        if (i > 0) {
            h = torch::upsample_nearest2d(h, std::vector<int64_t>{h.size(2) * 2, h.size(3) * 2});
            h = upsamplers_[i](h);
        }
    }
    return conv_out(torch::silu(norm_out(h)));
}

}  // namespace knobgen
