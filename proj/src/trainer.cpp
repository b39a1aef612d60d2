#include "knobgen/trainer.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace knobgen {

void TrainConfig::validate() const {
    if (phase != "base" && phase != "cgc" && phase != "cgc-finetune") {
        throw std::invalid_argument("unknown training phase '" + phase + "'");
    }
    if (epochs < 1) throw std::invalid_argument("epochs must be at least 1");
    if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
    if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be non-negative");
    if (fine_dropout < 0.0 || fine_dropout >= 1.0) throw std::invalid_argument("fine_dropout must lie in [0, 1)");
    modulator.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"phase", c.phase},
                       {"epochs", c.epochs},
                       {"lr", c.lr},
                       {"batch_size", c.batch_size},
                       {"modulator",
                        {{"horizon_epochs", c.modulator.horizon_epochs},
                         {"k", c.modulator.k},
                         {"m_min", c.modulator.m_min},
                         {"m_max", c.modulator.m_max}}},
                       {"seed", c.seed},
                       {"ablate_modulator", c.ablate_modulator},
                       {"weight_decay", c.weight_decay},
                       {"grad_clip", c.grad_clip},
                       {"fine_dropout", c.fine_dropout},
                       {"contrastive_weight", c.contrastive_weight}};
}

void to_json(nlohmann::json& j, const EpochLog& e) {
    j = nlohmann::json{{"phase", e.phase}, {"epoch", e.epoch}, {"loss", e.loss}, {"fine_scale", e.fine_scale},
                       {"lr", e.lr}};
    if (e.frozen_hash_before != 0 || e.frozen_hash_after != 0) {
        j["frozen_hash_before"] = e.frozen_hash_before;
        j["frozen_hash_after"] = e.frozen_hash_after;
    }
}

double cgc_fine_scale(const TrainConfig& cfg, int epoch) {
    if (cfg.ablate_modulator) {
        return 1.0;
    }
    if (cfg.phase == "cgc-finetune") {
        return cfg.modulator.m_max;
    }
    return modulator_scale_for_epoch(cfg.modulator, epoch);
}

namespace {

struct DatasetTensors {
    torch::Tensor images;
    torch::Tensor sketches;
    torch::Tensor ids;
};

DatasetTensors tensorize(KnobGenModel& model, const std::vector<DatasetRecord>& dataset) {
    if (dataset.empty()) {
        throw std::invalid_argument("training dataset is empty");
    }
    std::vector<size_t> all(dataset.size());
    std::iota(all.begin(), all.end(), size_t{0});
    std::vector<std::string> prompts;
    prompts.reserve(dataset.size());
    for (const auto& r : dataset) prompts.push_back(r.prompt);
    const auto size = model->config().denoiser.image_size;
    auto images = stack_images(dataset, all);
    if (!torch::isfinite(images).all().item<bool>()) {
        throw std::invalid_argument("dataset contains non-finite image values");
    }
    if (images.size(2) != size || images.size(3) != size) {
        throw std::invalid_argument("dataset resolution does not match the model");
    }
    return {images, stack_sketches(dataset, all), model->tokenize(prompts)};
}

std::vector<std::vector<int64_t>> epoch_batches(size_t n, int batch_size, uint64_t seed, int epoch) {
    std::vector<int64_t> order(n);
    std::iota(order.begin(), order.end(), int64_t{0});
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<int64_t>> batches;
    for (size_t i = 0; i < n; i += static_cast<size_t>(batch_size)) {
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + static_cast<size_t>(batch_size))));
    }
    return batches;
}

using ParamList = std::vector<std::pair<std::string, torch::Tensor>>;

ParamList select_params(KnobGenModel& model, bool cfc_only) {
    ParamList out;
    for (const auto& item : model->named_parameters()) {
        const bool is_cfc = item.key().rfind("cfc.", 0) == 0;
        if (!cfc_only || is_cfc) out.emplace_back(item.key(), item.value());
    }
    return out;
}

std::vector<torch::Tensor> frozen_params(KnobGenModel& model) {
    std::vector<torch::Tensor> out;
    for (const auto& item : model->named_parameters()) {
        if (item.key().rfind("cfc.", 0) != 0) out.push_back(item.value());
    }
    return out;
}

NamedTensors export_moments(torch::optim::AdamW& opt, const ParamList& params, int64_t& step) {
    NamedTensors out;
    step = 0;
    auto& state = opt.state();
    for (const auto& [name, p] : params) {
        auto it = state.find(p.unsafeGetTensorImpl());
        if (it == state.end()) continue;
        auto& s = static_cast<torch::optim::AdamWParamState&>(*it->second);
        step = s.step();
        out.emplace_back(name + "/exp_avg", s.exp_avg().clone());
        out.emplace_back(name + "/exp_avg_sq", s.exp_avg_sq().clone());
    }
    return out;
}

void import_moments(torch::optim::AdamW& opt, const ParamList& params, const NamedTensors& moments, int64_t step) {
    if (moments.empty()) return;
    auto find = [&](const std::string& key) -> const torch::Tensor* {
        for (const auto& [name, t] : moments)
            if (name == key) return &t;
        return nullptr;
    };
    for (const auto& [name, p] : params) {
        const auto* m = find(name + "/exp_avg");
        const auto* v = find(name + "/exp_avg_sq");
        if (m == nullptr || v == nullptr) continue;
        auto s = std::make_unique<torch::optim::AdamWParamState>();
        s->step(step);
        s->exp_avg(m->clone());
        s->exp_avg_sq(v->clone());
        opt.state()[p.unsafeGetTensorImpl()] = std::move(s);
    }
}

std::vector<uint8_t> generator_state(at::Generator& gen) {
    auto st = gen.get_state().contiguous();
    const auto* p = st.data_ptr<uint8_t>();
    return {p, p + st.numel()};
}

void check_finite(double loss, const std::string& phase, int epoch, size_t batch) {
    if (!std::isfinite(loss)) {
        throw std::runtime_error("non-finite loss in phase " + phase + " at epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batch));
    }
}

torch::Tensor contrastive_loss(KnobGenModel& model, const torch::Tensor& sketches, const torch::Tensor& ids,
                               const torch::Tensor& text_tokens) {
    auto img = torch::nn::functional::normalize(
        model->sketch_text_head(model->sketch_encoder(sketches).mean(1)),
        torch::nn::functional::NormalizeFuncOptions().dim(1));
    auto mask = ids.ne(Vocabulary::kPad).to(text_tokens.scalar_type()).unsqueeze(-1);
    auto pooled = (text_tokens * mask).sum(1) / mask.sum(1).clamp_min(1.0);
    auto txt = torch::nn::functional::normalize(pooled, torch::nn::functional::NormalizeFuncOptions().dim(1));
    auto logits = torch::matmul(img, txt.t()) / 0.1;
    auto labels = torch::arange(logits.size(0), torch::kLong);
    return 0.5 * (torch::nn::functional::cross_entropy(logits, labels) +
                  torch::nn::functional::cross_entropy(logits.t(), labels));
}

void maybe_checkpoint(const TrainConfig& cfg, KnobGenModel& model, int epoch) {
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() && (epoch + 1) % cfg.checkpoint_every == 0) {
        capture(model, cfg.phase, epoch + 1)
            .save(cfg.checkpoint_dir / (cfg.phase + "_epoch" + std::to_string(epoch + 1) + ".ckpt"));
    }
}

}  // namespace

TrainResult train_base(const TrainConfig& cfg, const ModelConfig& model_cfg, const std::vector<DatasetRecord>& dataset,
                       const EpochSink& sink) {
    cfg.validate();
    if (cfg.phase != "base") {
        throw std::invalid_argument("train_base needs phase \"base\"");
    }
    torch::manual_seed(cfg.seed);  // parameter initialisation
    KnobGenModel model(model_cfg);
    model->train();
    const auto data = tensorize(model, dataset);
    const auto& schedule = model->schedule();
    const int T = schedule.steps();

    auto params = select_params(model, false);
    std::vector<torch::Tensor> trainable;
    for (const auto& [name, p] : params) trainable.push_back(p);
    torch::optim::AdamW opt(trainable,
                            torch::optim::AdamWOptions(cfg.lr).betas({0.9, 0.999}).weight_decay(cfg.weight_decay));
    auto gen = at::make_generator<at::CPUGeneratorImpl>(cfg.seed);

    TrainResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double total = 0.0;
        int64_t seen = 0;
        const auto batches = epoch_batches(dataset.size(), cfg.batch_size, cfg.seed, epoch);
        for (size_t bi = 0; bi < batches.size(); ++bi) {
            auto idx = torch::tensor(batches[bi], torch::kLong);
            auto images = data.images.index_select(0, idx);
            auto sketches = data.sketches.index_select(0, idx);
            auto ids = data.ids.index_select(0, idx);
            const auto b = images.size(0);

            auto t = torch::randint(1, T + 1, {b}, gen, torch::kLong);
            auto eps = torch::randn(images.sizes(), gen, torch::kFloat32);
            auto keep = torch::rand({b}, gen, torch::kFloat32).ge(cfg.fine_dropout).to(torch::kFloat32);

            auto text = model->text_encoder(ids);
            auto residuals = model->fgc->forward(sketches);
            for (auto& r : residuals) r = r * keep.view({b, 1, 1, 1});
            ConditioningBundle cond{text, residuals, 1.0};

            auto loss = training_loss(model->unet, images, cond, t, eps, schedule);
            if (cfg.contrastive_weight > 0.0 && b > 1) {
                loss = loss + cfg.contrastive_weight * contrastive_loss(model, sketches, ids, text);
            }
            const double value = loss.item<double>();
            check_finite(value, cfg.phase, epoch, bi);

            opt.zero_grad();
            loss.backward();
            if (cfg.grad_clip > 0.0) torch::nn::utils::clip_grad_norm_(trainable, cfg.grad_clip);
            opt.step();
            total += value * static_cast<double>(b);
            seen += b;
        }
        EpochLog entry{cfg.phase, epoch, total / static_cast<double>(seen), 1.0, cfg.lr, 0, 0};
        result.log.push_back(entry);
        if (sink) sink(entry);
        maybe_checkpoint(cfg, model, epoch);
    }

    result.checkpoint = capture(model, cfg.phase, cfg.epochs);
    result.checkpoint.optimizer_moments = export_moments(opt, params, result.checkpoint.optimizer_step);
    result.checkpoint.rng_state = generator_state(gen);
    result.checkpoint.extra["train_config"] = cfg;
    return result;
}

TrainResult train_cgc(const TrainConfig& cfg, const Checkpoint& start, const std::vector<DatasetRecord>& dataset,
                      const EpochSink& sink) {
    cfg.validate();
    if (cfg.phase != "cgc" && cfg.phase != "cgc-finetune") {
        throw std::invalid_argument("train_cgc needs phase \"cgc\" or \"cgc-finetune\"");
    }
    if (cfg.phase == "cgc" && start.phase != "base") {
        throw std::invalid_argument("phase cgc must start from a base checkpoint, got '" + start.phase + "'");
    }
    if (cfg.phase == "cgc-finetune" && start.phase != "cgc") {
        throw std::invalid_argument("phase cgc-finetune must start from a cgc checkpoint, got '" + start.phase + "'");
    }
    KnobGenModel model = instantiate(start);
    model->train();
    const auto data = tensorize(model, dataset);
    const auto& schedule = model->schedule();
    const int T = schedule.steps();

    for (const auto& item : model->named_parameters()) {
        item.value().set_requires_grad(item.key().rfind("cfc.", 0) == 0);
    }
    auto params = select_params(model, true);
    std::vector<torch::Tensor> trainable;
    for (const auto& [name, p] : params) trainable.push_back(p);
    torch::optim::AdamW opt(trainable,
                            torch::optim::AdamWOptions(cfg.lr).betas({0.9, 0.999}).weight_decay(cfg.weight_decay));
    if (cfg.phase == "cgc-finetune") {
        import_moments(opt, params, start.optimizer_moments, start.optimizer_step);
    }
    const auto frozen = frozen_params(model);
    auto gen = at::make_generator<at::CPUGeneratorImpl>(cfg.seed);

    TrainResult result;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double fine_scale = cgc_fine_scale(cfg, epoch);
        const uint64_t before = hash_tensors(frozen);
        double total = 0.0;
        int64_t seen = 0;
        const auto batches = epoch_batches(dataset.size(), cfg.batch_size, cfg.seed, epoch);
        for (size_t bi = 0; bi < batches.size(); ++bi) {
            auto idx = torch::tensor(batches[bi], torch::kLong);
            auto images = data.images.index_select(0, idx);
            auto sketches = data.sketches.index_select(0, idx);
            auto ids = data.ids.index_select(0, idx);
            const auto b = images.size(0);

            auto t = torch::randint(1, T + 1, {b}, gen, torch::kLong);
            auto eps = torch::randn(images.sizes(), gen, torch::kFloat32);

            torch::Tensor text, image_tokens;
            std::vector<torch::Tensor> residuals;
            {
                torch::NoGradGuard no_grad;
                text = model->text_encoder(ids);
                image_tokens = model->sketch_encoder(sketches);
                residuals = model->fgc->forward(sketches);
            }
            ConditioningBundle cond{model->cfc(image_tokens, text), residuals, fine_scale};
            auto loss = training_loss(model->unet, images, cond, t, eps, schedule);
            const double value = loss.item<double>();
            check_finite(value, cfg.phase, epoch, bi);

            opt.zero_grad();
            loss.backward();
            if (cfg.grad_clip > 0.0) torch::nn::utils::clip_grad_norm_(trainable, cfg.grad_clip);
            opt.step();
            total += value * static_cast<double>(b);
            seen += b;
        }
        const uint64_t after = hash_tensors(frozen);
        if (before != after) {
            throw std::logic_error("frozen parameters changed during " + cfg.phase + " epoch " + std::to_string(epoch));
        }
        EpochLog entry{cfg.phase, epoch, total / static_cast<double>(seen), fine_scale, cfg.lr, before, after};
        result.log.push_back(entry);
        if (sink) sink(entry);
        maybe_checkpoint(cfg, model, epoch);
    }

    for (const auto& item : model->named_parameters()) item.value().set_requires_grad(true);
    result.checkpoint = capture(model, cfg.phase, cfg.epochs);
    result.checkpoint.optimizer_moments = export_moments(opt, params, result.checkpoint.optimizer_step);
    result.checkpoint.rng_state = generator_state(gen);
    result.checkpoint.extra = start.extra;
    result.checkpoint.extra[cfg.phase + "_train_config"] = cfg;
    return result;
}

}  // namespace knobgen
