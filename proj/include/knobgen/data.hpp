#pragma once

// Procedural (image, sketch, prompt) triples, local image ingestion,
// pixel-count stratification and the on-disk dataset layout.

#include <json.hpp>
#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "knobgen/sketch.hpp"

namespace knobgen {

struct DatasetRecord {
    torch::Tensor image;  ///< (3, H, W) float32 in [-1, 1]
    SketchImage sketch;
    std::string prompt;
    int64_t complexity = 0;  ///< sketch.nonzero_count()
    /// Undistorted outline for procedural records; equals `sketch` otherwise.
    SketchImage outline;
};

struct ToyDatasetConfig {
    int64_t image_size = 32;
    uint64_t seed = 0;
    /// 0 = exact outlines. Larger values jitter polygon vertices and drop
    /// strokes to imitate novice drawings.
    double distortion = 0.0;
    int max_shapes = 3;
};

void to_json(nlohmann::json& j, const ToyDatasetConfig& c);
void from_json(const nlohmann::json& j, ToyDatasetConfig& c);

/// Record i depends only on (seed, i), so any subset can be regenerated alone.
DatasetRecord generate_toy_record(const ToyDatasetConfig& cfg, uint64_t index);
std::vector<DatasetRecord> generate_toy_dataset(int64_t n, const ToyDatasetConfig& cfg);

struct IngestResult {
    std::vector<DatasetRecord> records;
    std::vector<std::string> skipped;  ///< "<path>: <reason>" for unreadable files
};

/// Reads every image file in `dir` (sorted by name), resizes to image_size,
/// takes gradient-magnitude edges and thresholds them. A sidecar
/// "<stem>.txt" supplies the prompt; missing prompts are empty.
IngestResult ingest_images(const std::filesystem::path& dir, int64_t image_size,
                           int threshold = kDefaultSketchThreshold);

/// Quantile strata on record complexity. Records are ranked by
/// (complexity, original index); rank r of N lands in stratum
/// ceil(n (r + 1) / N) - 1, so stratum sizes differ by at most one.
std::vector<int> stratify_by_pixel_count(const std::vector<int64_t>& complexities, int n_strata);
std::vector<int> stratify_by_pixel_count(const std::vector<DatasetRecord>& records, int n_strata);

/// One directory per split: NNNNNN.img.png, NNNNNN.sketch.png, NNNNNN.txt
/// and manifest.json.
void save_dataset(const std::filesystem::path& dir, const std::vector<DatasetRecord>& records,
                  const nlohmann::json& generation = nlohmann::json::object());
std::vector<DatasetRecord> load_dataset(const std::filesystem::path& dir);
nlohmann::json load_manifest(const std::filesystem::path& dir);

std::string record_stem(size_t index);

/// Stacks records into batched tensors: images (B, 3, H, W), sketches (B, 1, H, W).
torch::Tensor stack_images(const std::vector<DatasetRecord>& records, const std::vector<size_t>& indices);
torch::Tensor stack_sketches(const std::vector<DatasetRecord>& records, const std::vector<size_t>& indices);

}  // namespace knobgen
