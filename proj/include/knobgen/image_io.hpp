#pragma once

// PNG encoding/decoding and base64 for the wire format.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "knobgen/sketch.hpp"

namespace knobgen {

/// (3, H, W) image in [-1, 1] -> 8-bit RGB PNG bytes.
std::vector<uint8_t> encode_rgb_png(const torch::Tensor& image_pm1);
/// PNG bytes -> (3, H, W) in [-1, 1]. Throws std::runtime_error if undecodable.
torch::Tensor decode_rgb_png(const std::vector<uint8_t>& bytes);

/// 1-bit PNG, stroke pixels white.
std::vector<uint8_t> encode_sketch_png(const SketchImage& sketch);

/// Decodes a grayscale or 1-bit PNG, resizes it to size x size with area
/// averaging when needed, and thresholds with sketchify(). Nonzero (bright)
/// pixels are strokes.
SketchImage decode_sketch_png(const std::vector<uint8_t>& bytes, int64_t size,
                              int threshold = kDefaultSketchThreshold);

void write_file(const std::filesystem::path& path, const std::vector<uint8_t>& bytes);
std::vector<uint8_t> read_file(const std::filesystem::path& path);

std::string base64_encode(const std::vector<uint8_t>& bytes);
/// Rejects characters outside the standard alphabet (whitespace is skipped).
std::vector<uint8_t> base64_decode(std::string_view text);

}  // namespace knobgen
