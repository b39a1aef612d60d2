#include "knobgen/model.hpp"

#include <stdexcept>

namespace knobgen {

ModelConfig ModelConfig::desk(int64_t image_size) {
    ModelConfig c;
    c.denoiser.image_size = image_size;
    c.sketch_encoder.image_size = image_size;
    c.sketch_encoder.in_channels = 1;
    c.sketch_encoder.patch = 4;
    c.sketch_encoder.d_img = 64;
    c.cfc.L_text = c.denoiser.L_ctx;
    c.cfc.d_text = c.denoiser.d_ctx;
    c.cfc.L_img = c.sketch_encoder.tokens();
    c.cfc.d_img = c.sketch_encoder.d_img;
    c.fgc = FgcConfig::for_denoiser(c.denoiser);
    return c;
}

TextEncoderConfig ModelConfig::text_encoder() const {
    TextEncoderConfig t;
    t.vocab_size = static_cast<int64_t>(vocabulary.size()) + 2;
    t.L_text = denoiser.L_ctx;
    t.d_text = denoiser.d_ctx;
    return t;
}

void ModelConfig::validate() const {
    denoiser.validate();
    sketch_encoder.validate();
    cfc.validate();
    fgc.validate();
    if (sketch_encoder.in_channels != 1 || sketch_encoder.image_size != denoiser.image_size) {
        throw std::invalid_argument("sketch encoder must read 1-channel sketches at the denoiser resolution");
    }
    if (cfc.L_text != denoiser.L_ctx || cfc.d_text != denoiser.d_ctx) {
        throw std::invalid_argument("CFC text dims must equal the denoiser context dims");
    }
    if (cfc.L_img != sketch_encoder.tokens() || cfc.d_img != sketch_encoder.d_img) {
        throw std::invalid_argument("CFC image dims must equal the sketch encoder output");
    }
    if (fgc.image_size != denoiser.image_size) {
        throw std::invalid_argument("FGC resolution must equal the denoiser resolution");
    }
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw std::invalid_argument("invalid beta range");
    }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"denoiser", c.denoiser},
                       {"sketch_encoder",
                        {{"in_channels", c.sketch_encoder.in_channels},
                         {"image_size", c.sketch_encoder.image_size},
                         {"patch", c.sketch_encoder.patch},
                         {"d_img", c.sketch_encoder.d_img}}},
                       {"cfc", c.cfc},
                       {"fgc", c.fgc},
                       {"beta_start", c.beta_start},
                       {"beta_end", c.beta_end},
                       {"vocabulary", c.vocabulary}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("denoiser").get_to(c.denoiser);
    const auto& se = j.at("sketch_encoder");
    se.at("in_channels").get_to(c.sketch_encoder.in_channels);
    se.at("image_size").get_to(c.sketch_encoder.image_size);
    se.at("patch").get_to(c.sketch_encoder.patch);
    se.at("d_img").get_to(c.sketch_encoder.d_img);
    j.at("cfc").get_to(c.cfc);
    j.at("fgc").get_to(c.fgc);
    j.at("beta_start").get_to(c.beta_start);
    j.at("beta_end").get_to(c.beta_end);
    j.at("vocabulary").get_to(c.vocabulary);
}

KnobGenModelImpl::KnobGenModelImpl(ModelConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))), vocab_(cfg_.vocabulary), schedule_(cfg_.schedule()) {
    text_encoder = register_module("text_encoder", TextEncoder(cfg_.text_encoder()));
    sketch_encoder = register_module("sketch_encoder", ImageEncoder(cfg_.sketch_encoder));
    sketch_text_head = register_module("sketch_text_head", torch::nn::Linear(cfg_.sketch_encoder.d_img, cfg_.denoiser.d_ctx));
    cfc = register_module("cfc", Cfc(cfg_.cfc));
    fgc = register_module("fgc", FineController(cfg_.fgc));
    unet = register_module("unet", UNet(cfg_.denoiser));
    fgc->check_compatible(*unet);
}

torch::Tensor KnobGenModelImpl::tokenize(const std::vector<std::string>& prompts) const {
    const auto length = cfg_.denoiser.L_ctx;
    auto ids = torch::empty({static_cast<int64_t>(prompts.size()), length}, torch::kLong);
    auto acc = ids.accessor<int64_t, 2>();
    for (size_t i = 0; i < prompts.size(); ++i) {
        const auto row = vocab_.encode(prompts[i], length);
        for (int64_t k = 0; k < length; ++k) acc[static_cast<int64_t>(i)][k] = row[static_cast<size_t>(k)];
    }
    return ids;
}

torch::Tensor KnobGenModelImpl::coarse_context(const torch::Tensor& sketches, const torch::Tensor& ids, CoarseMode mode) {
    auto text = text_encoder(ids);
    if (mode == CoarseMode::Text) {
        return text;
    }
    return cfc(sketch_encoder(sketches), text);
}

std::vector<torch::Tensor> KnobGenModelImpl::fine_residuals(const torch::Tensor& sketches) { return fgc->forward(sketches); }

torch::Tensor stack_sketches(const std::vector<SketchImage>& sketches) {
    std::vector<torch::Tensor> parts;
    parts.reserve(sketches.size());
    for (const auto& s : sketches) parts.push_back(s.to_tensor());
    return torch::stack(parts);
}

torch::Tensor KnobGenModelImpl::generate(const std::vector<SketchImage>& sketches, const std::vector<std::string>& prompts,
                                         const GenerateOptions& options) {
    if (sketches.empty() || sketches.size() != prompts.size()) {
        throw std::invalid_argument("generate needs one prompt per sketch");
    }
    for (const auto& s : sketches) {
        if (s.height() != cfg_.denoiser.image_size || s.width() != cfg_.denoiser.image_size) {
            throw std::invalid_argument("sketch resolution must equal the model resolution");
        }
    }
    torch::NoGradGuard no_grad;
    auto sk = stack_sketches(sketches);
    auto ctx = coarse_context(sk, tokenize(prompts), options.mode);
    FineProvider fine;
    if (options.use_fine) {
        fine = [this, sk] { return fgc->forward(sk); };
    }
    return sample(unet, ctx, fine, options.knob, schedule_, options.seed, options.observer, options.clip_denoised);
}

}  // namespace knobgen
