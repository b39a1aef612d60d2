#pragma once

// Noise schedule, training-time modulator and inference-time knob gate.
// Everything in this header is pure: no tensors, no RNG, no hidden state.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace knobgen {

/// Per-timestep diffusion coefficients. Timesteps are 1-based, t in [1, T].
/// alpha_bar(0) is the empty product and equals 1.
class NoiseSchedule {
public:
    /// Builds a schedule from an explicit beta sequence (beta[0] is timestep 1).
    static NoiseSchedule from_betas(std::vector<double> betas) {
        if (betas.empty()) {
            throw std::invalid_argument("noise schedule needs at least one timestep");
        }
        NoiseSchedule s;
        s.betas_ = std::move(betas);
        s.alphas_.reserve(s.betas_.size());
        s.alpha_bars_.reserve(s.betas_.size());
        double prod = 1.0;
        for (double b : s.betas_) {
            if (!(b > 0.0 && b < 1.0)) {
                throw std::invalid_argument("beta must lie in (0, 1), got " + std::to_string(b));
            }
            s.alphas_.push_back(1.0 - b);
            prod *= 1.0 - b;
            s.alpha_bars_.push_back(prod);
        }
        return s;
    }

    int steps() const noexcept { return static_cast<int>(betas_.size()); }

    double beta(int t) const { return betas_[index(t)]; }
    double alpha(int t) const { return alphas_[index(t)]; }
    double alpha_bar(int t) const {
        if (t == 0) {
            return 1.0;
        }
        return alpha_bars_[index(t)];
    }

    const std::vector<double>& betas() const noexcept { return betas_; }
    const std::vector<double>& alphas() const noexcept { return alphas_; }
    const std::vector<double>& alpha_bars() const noexcept { return alpha_bars_; }

    void check_timestep(int t) const {
        if (t < 1 || t > steps()) {
            throw std::out_of_range("timestep " + std::to_string(t) + " outside [1, " +
                                    std::to_string(steps()) + "]");
        }
    }

private:
    NoiseSchedule() = default;

    std::size_t index(int t) const {
        check_timestep(t);
        return static_cast<std::size_t>(t - 1);
    }

    std::vector<double> betas_;
    std::vector<double> alphas_;
    std::vector<double> alpha_bars_;
};

/// Linear beta ramp from beta_start to beta_end, both endpoints included.
inline NoiseSchedule make_noise_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 1) {
        throw std::invalid_argument("T_steps must be positive");
    }
    if (!(beta_start > 0.0 && beta_start < 1.0 && beta_end > 0.0 && beta_end < 1.0)) {
        throw std::invalid_argument("beta endpoints must lie in (0, 1)");
    }
    if (beta_start > beta_end) {
        throw std::invalid_argument("beta_start must not exceed beta_end");
    }
    std::vector<double> betas(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
        betas[static_cast<std::size_t>(i)] = beta_start + frac * (beta_end - beta_start);
    }
    return NoiseSchedule::from_betas(std::move(betas));
}

/// Standard deviation of the reverse-process posterior at timestep t:
/// sqrt((1 - abar[t-1]) / (1 - abar[t]) * beta[t]). Zero at t = 1.
inline double posterior_sigma(const NoiseSchedule& schedule, int t) {
    schedule.check_timestep(t);
    const double prev = schedule.alpha_bar(t - 1);
    const double cur = schedule.alpha_bar(t);
    return std::sqrt((1.0 - prev) / (1.0 - cur) * schedule.beta(t));
}

/// A strided subsequence of a training schedule used for S-step sampling.
/// `schedule` is re-derived so that its alpha_bar(i) equals the parent's
/// alpha_bar(timesteps[i-1]); `timesteps` holds the parent timestep that
/// the denoiser sees at each sub-step.
struct RespacedSchedule {
    NoiseSchedule schedule;
    std::vector<int> timesteps;
};

/// Evenly spaced timesteps from 1 to T (inclusive) with `sampling_steps`
/// entries. A single step maps to T.
inline RespacedSchedule respace(const NoiseSchedule& parent, int sampling_steps) {
    const int total = parent.steps();
    if (sampling_steps < 1 || sampling_steps > total) {
        throw std::invalid_argument("sampling steps must lie in [1, " + std::to_string(total) + "]");
    }
    std::vector<int> ts(static_cast<std::size_t>(sampling_steps));
    if (sampling_steps == 1) {
        ts[0] = total;
    } else {
        for (int i = 0; i < sampling_steps; ++i) {
            const double pos = 1.0 + static_cast<double>(i) * (total - 1) / (sampling_steps - 1);
            ts[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(pos));
        }
    }
    std::vector<double> betas;
    betas.reserve(ts.size());
    double prev = 1.0;
    for (int t : ts) {
        const double cur = parent.alpha_bar(t);
        betas.push_back(1.0 - cur / prev);
        prev = cur;
    }
    return {NoiseSchedule::from_betas(std::move(betas)), std::move(ts)};
}

/// tanh ramp for the fine-pathway weight during training.
struct ModulatorConfig {
    int horizon_epochs = 150;  ///< T: epochs over which the ramp runs
    double k = 6.0;
    double m_min = 0.2;
    double m_max = 1.0;

    void validate() const {
        if (horizon_epochs < 1) {
            throw std::invalid_argument("modulator horizon must be positive");
        }
        if (!(k > 0.0)) {
            throw std::invalid_argument("modulator k must be positive");
        }
        if (!(m_min >= 0.0 && m_min < m_max && m_max <= 1.0)) {
            throw std::invalid_argument("modulator needs 0 <= m_min < m_max <= 1");
        }
    }
};

/// m_t = m_min + (1 + tanh(k t / T - 3)) / 2 * (m_max - m_min), for t in [0, T].
inline double modulator_value(const ModulatorConfig& cfg, int epoch) {
    cfg.validate();
    if (epoch < 0 || epoch > cfg.horizon_epochs) {
        throw std::out_of_range("modulator epoch " + std::to_string(epoch) + " outside [0, " +
                                std::to_string(cfg.horizon_epochs) + "]");
    }
    const double psi = cfg.k * static_cast<double>(epoch) / cfg.horizon_epochs - 3.0;
    return cfg.m_min + 0.5 * (1.0 + std::tanh(psi)) * (cfg.m_max - cfg.m_min);
}

/// Modulator value with the post-horizon clamp to m_max applied.
inline double modulator_scale_for_epoch(const ModulatorConfig& cfg, int epoch) {
    if (epoch >= cfg.horizon_epochs) {
        cfg.validate();
        return cfg.m_max;
    }
    return modulator_value(cfg, epoch);
}

struct KnobConfig {
    int steps = 50;  ///< S
    int gamma = 20;  ///< last step (1-based, noisiest first) receiving fine features

    void validate() const {
        if (steps < 1) {
            throw std::invalid_argument("knob needs at least one denoising step");
        }
        if (gamma < 0 || gamma > steps) {
            throw std::invalid_argument("knob gamma " + std::to_string(gamma) + " outside [0, " +
                                        std::to_string(steps) + "]");
        }
    }
};

/// True when the fine pathway is injected at sampling step `step` (1 = first, noisiest).
inline bool knob_gate(const KnobConfig& cfg, int step) {
    cfg.validate();
    if (step < 1 || step > cfg.steps) {
        throw std::out_of_range("sampling step " + std::to_string(step) + " outside [1, " +
                                std::to_string(cfg.steps) + "]");
    }
    return step <= cfg.gamma;
}

}  // namespace knobgen
