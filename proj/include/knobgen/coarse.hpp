#pragma once

// Macro pathway: small stand-ins for the CLIP image/text encoders and the
// cross-feature conditioning (CFC) block that fuses them into the coarse
// context consumed by the denoiser.

#include <json.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "knobgen/layers.hpp"

namespace knobgen {

/// Token list for the toy text encoder. Ids 0 and 1 are reserved for the
/// pad and unknown tokens; listed tokens start at id 2.
class Vocabulary {
public:
    static constexpr int64_t kPad = 0;
    static constexpr int64_t kUnk = 1;

    Vocabulary() = default;
    explicit Vocabulary(std::vector<std::string> tokens);

    /// Newline-delimited token list; blank lines are skipped.
    static Vocabulary load(const std::filesystem::path& path);
    /// Words used by the procedural dataset's prompt templates.
    static Vocabulary toy();

    void save(const std::filesystem::path& path) const;

    int64_t size() const { return static_cast<int64_t>(tokens_.size()) + 2; }
    const std::vector<std::string>& tokens() const { return tokens_; }

    /// Lowercase whitespace split; unknown words map to kUnk.
    std::vector<int64_t> tokenize(std::string_view prompt) const;
    /// tokenize() padded with kPad or truncated to exactly `length` ids.
    std::vector<int64_t> encode(std::string_view prompt, int64_t length) const;

private:
    std::vector<std::string> tokens_;
};

struct ImageEncoderConfig {
    int64_t in_channels = 1;
    int64_t image_size = 32;
    int64_t patch = 4;
    int64_t d_img = 64;

    int64_t tokens() const { return (image_size / patch) * (image_size / patch); }
    void validate() const;
};

/// Non-overlapping patches projected to d_img plus learned positions.
/// (B, C, H, W) -> (B, L_img, d_img).
struct ImageEncoderImpl : torch::nn::Module {
    explicit ImageEncoderImpl(ImageEncoderConfig cfg);
    torch::Tensor forward(const torch::Tensor& images);

    ImageEncoderConfig cfg;
    torch::nn::Conv2d patch_proj{nullptr};
    torch::Tensor positions;
};
TORCH_MODULE(ImageEncoder);

struct TextEncoderConfig {
    int64_t vocab_size = 64;
    int64_t L_text = 16;
    int64_t d_text = 64;
    void validate() const;
};

/// Token embedding plus learned positions. (B, L_text) ids -> (B, L_text, d_text).
struct TextEncoderImpl : torch::nn::Module {
    explicit TextEncoderImpl(TextEncoderConfig cfg);
    torch::Tensor forward(const torch::Tensor& ids);

    TextEncoderConfig cfg;
    torch::nn::Embedding embed{nullptr};
    torch::Tensor positions;
};
TORCH_MODULE(TextEncoder);

struct CfcConfig {
    int64_t d_hidden = 128;
    int64_t n_layers = 8;
    int64_t n_heads = 8;
    int64_t L_text = 16;
    int64_t d_text = 64;
    int64_t L_img = 64;
    int64_t d_img = 64;
    int64_t ffn_mult = 4;
    std::optional<int64_t> param_budget;

    /// Full-size dimensions: (256, 1024) image tokens,
    /// (77, 768) text tokens, 1024 hidden, eight layers.
    static CfcConfig full_scale();
    void validate() const;
};

void to_json(nlohmann::json& j, const CfcConfig& c);
void from_json(const nlohmann::json& j, CfcConfig& c);

/// One fusion layer: text queries cross-attend to image memory, then a
/// feed-forward layer; both pre-norm with residuals.
struct CfcLayerImpl : torch::nn::Module {
    CfcLayerImpl(int64_t width, int64_t heads, int64_t ffn_mult);
    torch::Tensor forward(const torch::Tensor& text, const torch::Tensor& memory);

    torch::nn::LayerNorm norm_q{nullptr}, norm_mem{nullptr}, norm_ff{nullptr};
    CrossAttention attn{nullptr};
    torch::nn::Linear ff1{nullptr}, ff2{nullptr};
};
TORCH_MODULE(CfcLayer);

/// Cross-feature conditioning block.
///
/// 1. Pointwise 1D convolutions lift image tokens (d_img) and text tokens
///    (d_text) to d_hidden.
/// 2. n_layers fusion layers; text is the query stream, image tokens are the
///    attention memory. Image tokens get no positional signal here, so the
///    output is invariant to their order.
/// 3. A learned map over the token axis back to L_text (initialised to the
///    identity).
/// 4. Two fully connected layers to d_text. The second one starts at zero and
///    its output is added to the incoming text tokens, so a fresh block passes
///    the text context through unchanged.
struct CfcImpl : torch::nn::Module {
    explicit CfcImpl(CfcConfig cfg);

    /// image_tokens: (B, L_img, d_img); text_tokens: (B, L_text, d_text).
    torch::Tensor forward(const torch::Tensor& image_tokens, const torch::Tensor& text_tokens);

    CfcConfig cfg;
    torch::nn::Conv1d image_proj{nullptr}, text_proj{nullptr};
    std::vector<CfcLayer> layers;
    torch::nn::LayerNorm final_norm{nullptr};
    torch::nn::Linear length_map{nullptr}, fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(Cfc);

/// Exact trainable parameter count of a CfcImpl built from `cfg`, without
/// allocating it.
int64_t count_parameters(const CfcConfig& cfg);

/// Sum of element counts over a module's parameters.
int64_t count_parameters(const torch::nn::Module& module);

}  // namespace knobgen
