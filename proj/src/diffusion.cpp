#include "knobgen/diffusion.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <stdexcept>

namespace knobgen {

namespace {

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.sizes() != b.sizes()) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch");
    }
}

}  // namespace

torch::Tensor add_noise(const torch::Tensor& z0, const torch::Tensor& eps, int t, const NoiseSchedule& schedule) {
    check_same_shape(z0, eps, "add_noise");
    schedule.check_timestep(t);
    const double abar = schedule.alpha_bar(t);
    return z0 * std::sqrt(abar) + eps * std::sqrt(1.0 - abar);
}

torch::Tensor add_noise(const torch::Tensor& z0, const torch::Tensor& eps, const torch::Tensor& t,
                        const NoiseSchedule& schedule) {
    check_same_shape(z0, eps, "add_noise");
    if (t.dim() != 1 || t.size(0) != z0.size(0)) {
        throw std::invalid_argument("add_noise: timesteps must be a (B) vector");
    }
    auto ts = t.to(torch::kLong).contiguous();
    const auto* tp = ts.data_ptr<int64_t>();
    std::vector<double> signal(static_cast<size_t>(ts.size(0)));
    std::vector<double> noise(signal.size());
    for (size_t i = 0; i < signal.size(); ++i) {
        schedule.check_timestep(static_cast<int>(tp[i]));
        const double abar = schedule.alpha_bar(static_cast<int>(tp[i]));
        signal[i] = std::sqrt(abar);
        noise[i] = std::sqrt(1.0 - abar);
    }
    std::vector<int64_t> shape(static_cast<size_t>(z0.dim()), 1);
    shape[0] = z0.size(0);
    auto opts = torch::TensorOptions().dtype(torch::kFloat64);
    auto a = torch::tensor(signal, opts).to(z0.scalar_type()).view(shape);
    auto b = torch::tensor(noise, opts).to(z0.scalar_type()).view(shape);
    return z0 * a + eps * b;
}

torch::Tensor epsilon_mse(const torch::Tensor& prediction, const torch::Tensor& eps) {
    check_same_shape(prediction, eps, "epsilon_mse");
    return (prediction - eps).pow(2).mean();
}

torch::Tensor training_loss(UNet denoiser, const torch::Tensor& z0, const ConditioningBundle& cond,
                            const torch::Tensor& t, const torch::Tensor& eps, const NoiseSchedule& schedule) {
    auto z_t = add_noise(z0, eps, t, schedule);
    return epsilon_mse(denoiser->forward(z_t, t, cond), eps);
}

torch::Tensor sample_step(const torch::Tensor& z_t, int t, const torch::Tensor& eps_hat,
                          const NoiseSchedule& schedule, const torch::Tensor& noise) {
    check_same_shape(z_t, eps_hat, "sample_step");
    const double alpha = schedule.alpha(t);
    const double abar = schedule.alpha_bar(t);
    auto mean = (z_t - eps_hat * ((1.0 - alpha) / std::sqrt(1.0 - abar))) / std::sqrt(alpha);
    if (t == 1) {
        return mean;
    }
    check_same_shape(z_t, noise, "sample_step");
    return mean + noise * posterior_sigma(schedule, t);
}

torch::Tensor sample_step_clipped(const torch::Tensor& z_t, int t, const torch::Tensor& eps_hat,
                                  const NoiseSchedule& schedule, const torch::Tensor& noise) {
    check_same_shape(z_t, eps_hat, "sample_step_clipped");
    const double beta = schedule.beta(t);
    const double abar = schedule.alpha_bar(t);
    const double abar_prev = schedule.alpha_bar(t - 1);
    auto x0 = ((z_t - eps_hat * std::sqrt(1.0 - abar)) / std::sqrt(abar)).clamp(-1.0, 1.0);
    auto mean = x0 * (std::sqrt(abar_prev) * beta / (1.0 - abar)) +
                z_t * (std::sqrt(1.0 - beta) * (1.0 - abar_prev) / (1.0 - abar));
    if (t == 1) {
        return mean;
    }
    check_same_shape(z_t, noise, "sample_step_clipped");
    return mean + noise * posterior_sigma(schedule, t);
}

torch::Tensor sample(UNet denoiser, const torch::Tensor& coarse_context, const FineProvider& fine,
                     const KnobConfig& knob, const NoiseSchedule& schedule, uint64_t seed,
                     const SampleObserver& observer, bool clip_denoised) {
    knob.validate();
    const auto respaced = respace(schedule, knob.steps);
    const auto& cfg = denoiser->config();
    if (coarse_context.dim() != 3) {
        throw std::invalid_argument("sample: coarse context must be (B, L_ctx, d_ctx)");
    }
    const auto batch = coarse_context.size(0);
    const auto dtype = coarse_context.scalar_type();
    auto opts = torch::TensorOptions().dtype(dtype);

    torch::NoGradGuard no_grad;
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    auto z = torch::randn({batch, cfg.image_channels, cfg.image_size, cfg.image_size}, gen, opts);

    std::vector<torch::Tensor> residuals;
    bool residuals_ready = false;
    for (int step = 1; step <= knob.steps; ++step) {
        const int sub_t = knob.steps - step + 1;
        const int train_t = respaced.timesteps[static_cast<size_t>(sub_t - 1)];
        const bool inject = fine && knob_gate(knob, step);

        ConditioningBundle cond = ConditioningBundle::coarse_only(coarse_context);
        if (inject) {
            if (!residuals_ready) {
                residuals = fine();
                residuals_ready = true;
            }
            cond.fine_residuals = residuals;
            cond.fine_scale = 1.0;
        }
        auto tvec = torch::full({batch}, train_t, torch::TensorOptions().dtype(torch::kLong));
        auto eps_hat = denoiser->forward(z, tvec, cond);
        torch::Tensor noise;
        if (sub_t > 1) {
            noise = torch::randn(z.sizes(), gen, opts);
        }
        z = clip_denoised ? sample_step_clipped(z, sub_t, eps_hat, respaced.schedule, noise)
                          : sample_step(z, sub_t, eps_hat, respaced.schedule, noise);
        if (observer) {
            observer(step, train_t, inject, z);
        }
    }
    return z.clamp(-1.0, 1.0);
}

}  // namespace knobgen
