#include "knobgen/coarse.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace knobgen {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open vocabulary file " + path.string());
    }
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) {
            line.pop_back();
        }
        if (!line.empty()) {
            tokens.push_back(line);
        }
    }
    return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::toy() {
    return Vocabulary({"a",      "an",    "and",  "the",    "with",   "circle", "square", "triangle",
                       "star",   "red",   "green", "blue",  "yellow", "cyan",   "magenta", "white",
                       "orange", "small", "large", "big",   "shape",  "shapes", "on",     "black",
                       "background"});
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write vocabulary file " + path.string());
    }
    for (const auto& t : tokens_) {
        out << t << '\n';
    }
}

std::vector<int64_t> Vocabulary::tokenize(std::string_view prompt) const {
    std::string lowered(prompt);
    std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    std::istringstream words(lowered);
    std::vector<int64_t> ids;
    std::string word;
    while (words >> word) {
        const auto it = std::find(tokens_.begin(), tokens_.end(), word);
        ids.push_back(it == tokens_.end() ? kUnk : static_cast<int64_t>(it - tokens_.begin()) + 2);
    }
    return ids;
}

std::vector<int64_t> Vocabulary::encode(std::string_view prompt, int64_t length) const {
    auto ids = tokenize(prompt);
    ids.resize(static_cast<size_t>(length), kPad);
    return ids;
}

void ImageEncoderConfig::validate() const {
    if (in_channels < 1 || patch < 1 || d_img < 1 || image_size < 1) {
        throw std::invalid_argument("image encoder config has non-positive dimensions");
    }
    if (image_size % patch != 0) {
        throw std::invalid_argument("image size " + std::to_string(image_size) + " is not divisible by patch " +
                                    std::to_string(patch));
    }
}

ImageEncoderImpl::ImageEncoderImpl(ImageEncoderConfig c) : cfg(c) {
    cfg.validate();
    patch_proj = register_module(
        "patch_proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(cfg.in_channels, cfg.d_img, cfg.patch).stride(cfg.patch)));
    positions = register_parameter("positions", torch::randn({cfg.tokens(), cfg.d_img}) * 0.02);
}

torch::Tensor ImageEncoderImpl::forward(const torch::Tensor& images) {
    if (images.dim() != 4 || images.size(1) != cfg.in_channels || images.size(2) != cfg.image_size ||
        images.size(3) != cfg.image_size) {
        throw std::invalid_argument("image encoder expects (B, " + std::to_string(cfg.in_channels) + ", " +
                                    std::to_string(cfg.image_size) + ", " + std::to_string(cfg.image_size) + ")");
    }
    auto tokens = patch_proj(images).flatten(2).transpose(1, 2);  // (B, L_img, d_img)
    return tokens + positions.unsqueeze(0);
}

void TextEncoderConfig::validate() const {
    if (vocab_size < 2 || L_text < 1 || d_text < 1) {
        throw std::invalid_argument("text encoder config has invalid dimensions");
    }
}

TextEncoderImpl::TextEncoderImpl(TextEncoderConfig c) : cfg(c) {
    cfg.validate();
    embed = register_module("embed", torch::nn::Embedding(cfg.vocab_size, cfg.d_text));
    positions = register_parameter("positions", torch::randn({cfg.L_text, cfg.d_text}) * 0.02);
}

torch::Tensor TextEncoderImpl::forward(const torch::Tensor& ids) {
    if (ids.dim() != 2 || ids.size(1) != cfg.L_text) {
        throw std::invalid_argument("text encoder expects (B, " + std::to_string(cfg.L_text) + ") token ids");
    }
    auto clamped = torch::where(ids.ge(0) & ids.lt(cfg.vocab_size), ids, torch::full_like(ids, Vocabulary::kUnk));
    return embed(clamped) + positions.unsqueeze(0);
}

CfcConfig CfcConfig::full_scale() {
    CfcConfig c;
    c.d_hidden = 1024;
    c.n_layers = 8;
    c.n_heads = 8;
    c.L_text = 77;
    c.d_text = 768;
    c.L_img = 256;
    c.d_img = 1024;
    return c;
}

void CfcConfig::validate() const {
    if (d_hidden < 1 || n_layers < 1 || n_heads < 1 || L_text < 1 || d_text < 1 || L_img < 1 || d_img < 1 ||
        ffn_mult < 1) {
        throw std::invalid_argument("CFC config has non-positive dimensions");
    }
    if (d_hidden % n_heads != 0) {
        throw std::invalid_argument("CFC d_hidden must be divisible by n_heads");
    }
    if (param_budget && count_parameters(*this) > *param_budget) {
        throw std::invalid_argument("CFC parameter count " + std::to_string(count_parameters(*this)) +
                                    " exceeds the budget " + std::to_string(*param_budget));
    }
}

void to_json(nlohmann::json& j, const CfcConfig& c) {
    j = nlohmann::json{{"d_hidden", c.d_hidden}, {"n_layers", c.n_layers}, {"n_heads", c.n_heads},
                       {"L_text", c.L_text},     {"d_text", c.d_text},     {"L_img", c.L_img},
                       {"d_img", c.d_img},       {"ffn_mult", c.ffn_mult}};
    if (c.param_budget) {
        j["param_budget"] = *c.param_budget;
    }
}

void from_json(const nlohmann::json& j, CfcConfig& c) {
    j.at("d_hidden").get_to(c.d_hidden);
    j.at("n_layers").get_to(c.n_layers);
    j.at("n_heads").get_to(c.n_heads);
    j.at("L_text").get_to(c.L_text);
    j.at("d_text").get_to(c.d_text);
    j.at("L_img").get_to(c.L_img);
    j.at("d_img").get_to(c.d_img);
    j.at("ffn_mult").get_to(c.ffn_mult);
    if (j.contains("param_budget")) {
        c.param_budget = j.at("param_budget").get<int64_t>();
    }
}

CfcLayerImpl::CfcLayerImpl(int64_t width, int64_t heads, int64_t ffn_mult) {
    norm_q = register_module("norm_q", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    norm_mem = register_module("norm_mem", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    attn = register_module("attn", CrossAttention(width, width, heads));
    norm_ff = register_module("norm_ff", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
    ff1 = register_module("ff1", torch::nn::Linear(width, width * ffn_mult));
    ff2 = register_module("ff2", torch::nn::Linear(width * ffn_mult, width));
}

torch::Tensor CfcLayerImpl::forward(const torch::Tensor& text, const torch::Tensor& memory) {
    auto h = text + attn(norm_q(text), norm_mem(memory));
    return h + ff2(torch::gelu(ff1(norm_ff(h))));
}

CfcImpl::CfcImpl(CfcConfig c) : cfg(std::move(c)) {
    cfg.validate();
    image_proj = register_module("image_proj", torch::nn::Conv1d(torch::nn::Conv1dOptions(cfg.d_img, cfg.d_hidden, 1)));
    text_proj = register_module("text_proj", torch::nn::Conv1d(torch::nn::Conv1dOptions(cfg.d_text, cfg.d_hidden, 1)));
    for (int64_t i = 0; i < cfg.n_layers; ++i) {
        layers.push_back(register_module("layer" + std::to_string(i), CfcLayer(cfg.d_hidden, cfg.n_heads, cfg.ffn_mult)));
    }
    final_norm = register_module("final_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({cfg.d_hidden})));
    length_map = register_module("length_map", torch::nn::Linear(cfg.L_text, cfg.L_text));
    fc1 = register_module("fc1", torch::nn::Linear(cfg.d_hidden, cfg.d_hidden));
    fc2 = register_module("fc2", torch::nn::Linear(cfg.d_hidden, cfg.d_text));

    torch::NoGradGuard no_grad;
    length_map->weight.copy_(torch::eye(cfg.L_text));
    length_map->bias.zero_();
    fc2->weight.zero_();
    fc2->bias.zero_();
}

torch::Tensor CfcImpl::forward(const torch::Tensor& image_tokens, const torch::Tensor& text_tokens) {
    if (image_tokens.dim() != 3 || image_tokens.size(1) != cfg.L_img || image_tokens.size(2) != cfg.d_img) {
        throw std::invalid_argument("CFC image tokens must be (B, " + std::to_string(cfg.L_img) + ", " +
                                    std::to_string(cfg.d_img) + ")");
    }
    if (text_tokens.dim() != 3 || text_tokens.size(1) != cfg.L_text || text_tokens.size(2) != cfg.d_text) {
        throw std::invalid_argument("CFC text tokens must be (B, " + std::to_string(cfg.L_text) + ", " +
                                    std::to_string(cfg.d_text) + ")");
    }
    if (image_tokens.size(0) != text_tokens.size(0)) {
        throw std::invalid_argument("CFC batch sizes differ");
    }
    // Conv1d works on (B, channels, length).
    auto memory = image_proj(image_tokens.transpose(1, 2)).transpose(1, 2);
    auto h = text_proj(text_tokens.transpose(1, 2)).transpose(1, 2);
    for (auto& layer : layers) {
        h = layer(h, memory);
    }
    h = final_norm(h);
    h = length_map(h.transpose(1, 2)).transpose(1, 2);
    return text_tokens + fc2(torch::gelu(fc1(h)));
}

int64_t count_parameters(const CfcConfig& c) {
    const int64_t d = c.d_hidden;
    const int64_t proj = (c.d_img * d + d) + (c.d_text * d + d);
    const int64_t attention = 3 * d * d + (d * d + d);
    const int64_t ffn = (d * d * c.ffn_mult + d * c.ffn_mult) + (d * c.ffn_mult * d + d);
    const int64_t norms = 3 * 2 * d;
    const int64_t per_layer = attention + ffn + norms;
    const int64_t head = 2 * d + (c.L_text * c.L_text + c.L_text) + (d * d + d) + (d * c.d_text + c.d_text);
    return proj + c.n_layers * per_layer + head;
}

int64_t count_parameters(const torch::nn::Module& module) {
    int64_t total = 0;
    for (const auto& p : module.parameters()) {
        total += p.numel();
    }
    return total;
}

}  // namespace knobgen
