#pragma once

// Binary sketches, edge maps and mask comparison.

#include <torch/torch.h>

#include <cstdint>

namespace knobgen {

/// Single-channel raster with values in {0, 1}; 1 marks a stroke pixel.
class SketchImage {
public:
    SketchImage() : SketchImage(0, 0) {}
    SketchImage(int64_t height, int64_t width);
    /// Takes any (H, W) tensor whose entries are exactly 0 or 1.
    explicit SketchImage(const torch::Tensor& pixels);

    int64_t height() const { return pixels_.size(0); }
    int64_t width() const { return pixels_.size(1); }
    /// (H, W) uint8.
    const torch::Tensor& pixels() const { return pixels_; }
    int64_t nonzero_count() const;
    /// (1, H, W) float32 in {0, 1}, the layout the encoders consume.
    torch::Tensor to_tensor() const;

    friend bool operator==(const SketchImage& a, const SketchImage& b);

private:
    torch::Tensor pixels_;
};

inline constexpr int kDefaultSketchThreshold = 50;

/// Thresholds an (H, W) edge map with values in [0, 255]: value >= threshold
/// becomes 1, everything below becomes 0.
SketchImage sketchify(const torch::Tensor& edge_map, int threshold = kDefaultSketchThreshold);

/// Sobel gradient magnitude of a (C, H, W) image with values in [0, 255],
/// divided by 4 (the Sobel gain on a unit step), maximised over channels and
/// clamped to [0, 255]. Borders replicate. Returns (H, W) float32.
torch::Tensor gradient_magnitude(const torch::Tensor& image_255);

/// Quantizes a (3, H, W) image in [-1, 1] to 8 bits, then gradient_magnitude.
/// Quantizing first makes in-memory and PNG round-tripped images agree.
torch::Tensor edge_map_from_image(const torch::Tensor& image_pm1);

/// 3x3 (8-neighbour) binary dilation of a sketch.
SketchImage dilate(const SketchImage& sketch);

/// Intersection over union of two same-sized masks; two empty masks give 1.
double mask_iou(const SketchImage& a, const SketchImage& b);

/// Converts an image in [-1, 1] to uint8 [0, 255] with rounding.
torch::Tensor to_uint8_image(const torch::Tensor& image_pm1);

}  // namespace knobgen
