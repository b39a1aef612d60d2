#pragma once

// Checkpoint archive:
//
//   magic "KNOBGEN\0" | u32 version | u64 header length | header JSON (UTF-8)
//   | u64 blob count | blobs...
//   blob: u32 name length | name | u64 element count | float32 little-endian data
//
// The header carries the model config, training phase, epoch, optimizer step
// and the base64 RNG state. Parameter blobs are named "param/<module path>",
// optimizer moments "optim/<module path>/exp_avg[_sq]".

#include <json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "knobgen/model.hpp"

namespace knobgen {

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

struct Checkpoint {
    static constexpr uint32_t kFormatVersion = 1;

    ModelConfig config;
    std::string phase;  ///< "init", "base", "cgc" or "cgc-finetune"
    int epoch = 0;
    NamedTensors parameters;
    NamedTensors optimizer_moments;
    int64_t optimizer_step = 0;
    std::vector<uint8_t> rng_state;
    nlohmann::json extra = nlohmann::json::object();

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);

    /// Concatenated little-endian float32 bytes of all parameter blobs, in order.
    std::vector<uint8_t> parameter_payload() const;
    /// 16 hex digits of FNV-1a over the parameter payload.
    std::string model_id() const;
};

/// Snapshot of a model's parameters (float32 copies).
Checkpoint capture(KnobGenModel& model, std::string phase, int epoch);
/// Copies checkpoint parameters into a model built from the same config.
void restore(KnobGenModel& model, const Checkpoint& ckpt);
/// Builds a model from the checkpoint config and restores its parameters.
KnobGenModel instantiate(const Checkpoint& ckpt);

/// FNV-1a 64 over the raw bytes of the given tensors.
uint64_t hash_tensors(const std::vector<torch::Tensor>& tensors);

}  // namespace knobgen
