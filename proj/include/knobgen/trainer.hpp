#pragma once

// Two-phase training. Phase "base" trains the denoiser, encoders and FGC on
// raw text context. Phases "cgc" and "cgc-finetune" freeze everything except
// the CFC; during "cgc" the FGC residuals are scaled by the modulator ramp.

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "knobgen/checkpoint.hpp"
#include "knobgen/data.hpp"
#include "knobgen/model.hpp"
#include "knobgen/schedule.hpp"

namespace knobgen {

struct TrainConfig {
    std::string phase = "base";
    int epochs = 50;
    double lr = 1e-3;
    int batch_size = 32;
    ModulatorConfig modulator;
    uint64_t seed = 0;
    int checkpoint_every = 0;  ///< 0 disables periodic checkpoints
    std::filesystem::path checkpoint_dir;
    bool ablate_modulator = false;  ///< fine_scale fixed at 1 in the cgc phases
    double weight_decay = 0.01;
    double grad_clip = 1.0;
    /// Base phase only: probability of dropping a sample's fine residuals so
    /// the denoiser also learns the text-only case the knob falls back to.
    double fine_dropout = 0.5;
    /// Base phase only: weight of the sketch/text contrastive loss that trains
    /// the sketch encoder.
    double contrastive_weight = 0.1;

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);

struct EpochLog {
    std::string phase;
    int epoch = 0;
    double loss = 0.0;
    double fine_scale = 0.0;
    double lr = 0.0;
    /// cgc phases: FNV-1a of all frozen parameters before and after the epoch.
    uint64_t frozen_hash_before = 0;
    uint64_t frozen_hash_after = 0;
};

void to_json(nlohmann::json& j, const EpochLog& e);

using EpochSink = std::function<void(const EpochLog&)>;

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochLog> log;
};

/// fine_scale used at `epoch` of a cgc-family phase.
double cgc_fine_scale(const TrainConfig& cfg, int epoch);

TrainResult train_base(const TrainConfig& cfg, const ModelConfig& model_cfg, const std::vector<DatasetRecord>& dataset,
                       const EpochSink& sink = {});

/// Starts from `start` (a base checkpoint for phase "cgc", a cgc checkpoint
/// for "cgc-finetune"). Throws std::logic_error if any frozen parameter
/// changes during an epoch.
TrainResult train_cgc(const TrainConfig& cfg, const Checkpoint& start, const std::vector<DatasetRecord>& dataset,
                      const EpochSink& sink = {});

}  // namespace knobgen
