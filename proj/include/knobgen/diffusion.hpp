#pragma once

// Forward noising, the conditional denoising loss and the knob-gated
// ancestral sampler.

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <vector>

#include "knobgen/schedule.hpp"
#include "knobgen/unet.hpp"

namespace knobgen {

/// sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps, one timestep for the whole batch.
torch::Tensor add_noise(const torch::Tensor& z0, const torch::Tensor& eps, int t, const NoiseSchedule& schedule);

/// Per-sample timesteps; `t` is a (B) integer tensor and z0/eps are (B, ...).
torch::Tensor add_noise(const torch::Tensor& z0, const torch::Tensor& eps, const torch::Tensor& t,
                        const NoiseSchedule& schedule);

/// Mean over batch and elements of (prediction - eps)^2.
torch::Tensor epsilon_mse(const torch::Tensor& prediction, const torch::Tensor& eps);

/// Conditional denoising loss: noise z0 with eps at t, predict, compare.
torch::Tensor training_loss(UNet denoiser, const torch::Tensor& z0, const ConditioningBundle& cond,
                            const torch::Tensor& t, const torch::Tensor& eps, const NoiseSchedule& schedule);

/// One ancestral update z_t -> z_{t-1}. `noise` is ignored at t = 1.
torch::Tensor sample_step(const torch::Tensor& z_t, int t, const torch::Tensor& eps_hat,
                          const NoiseSchedule& schedule, const torch::Tensor& noise);

/// The same update written through the predicted clean sample
/// x0 = (z_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t), clamped to [-1, 1]
/// before the posterior mean is formed. Equals sample_step whenever x0 is
/// already in range; at t = 1 it returns the clamped x0.
torch::Tensor sample_step_clipped(const torch::Tensor& z_t, int t, const torch::Tensor& eps_hat,
                                  const NoiseSchedule& schedule, const torch::Tensor& noise);

/// Lazily computes the fine residuals for a sample; called at most once.
using FineProvider = std::function<std::vector<torch::Tensor>()>;

/// Called after every sampling step with the 1-based step index, the
/// training timestep the denoiser saw, whether fine features were injected,
/// and the state after the update.
using SampleObserver = std::function<void(int step, int timestep, bool fine_injected, const torch::Tensor& z)>;

/// Runs knob.steps strided ancestral steps from seeded Gaussian noise and
/// returns the result clipped to [-1, 1]. An empty `fine` provider gives the
/// coarse-only pipeline; with gamma == 0 the provider is never called, so
/// both paths consume the same random stream and agree bit for bit.
/// `clip_denoised` selects sample_step_clipped over sample_step. Without it
/// an undertrained denoiser drifts past the data range and many samples
/// come out as flat background.
torch::Tensor sample(UNet denoiser, const torch::Tensor& coarse_context, const FineProvider& fine,
                     const KnobConfig& knob, const NoiseSchedule& schedule, uint64_t seed,
                     const SampleObserver& observer = {}, bool clip_denoised = true);

}  // namespace knobgen
