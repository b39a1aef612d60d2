#include "knobgen/sketch.hpp"

#include <stdexcept>
#include <string>

namespace knobgen {

SketchImage::SketchImage(int64_t height, int64_t width)
    : pixels_(torch::zeros({height, width}, torch::TensorOptions().dtype(torch::kUInt8))) {}

SketchImage::SketchImage(const torch::Tensor& pixels) {
    if (pixels.dim() != 2) {
        throw std::invalid_argument("sketch must be a 2-D (H, W) array");
    }
    auto as_double = pixels.to(torch::kFloat64);
    if (!(as_double.eq(0.0) | as_double.eq(1.0)).all().item<bool>()) {
        throw std::invalid_argument("sketch pixels must be exactly 0 or 1");
    }
    pixels_ = pixels.to(torch::kUInt8).contiguous().clone();
}

int64_t SketchImage::nonzero_count() const { return pixels_.count_nonzero().item<int64_t>(); }

torch::Tensor SketchImage::to_tensor() const { return pixels_.to(torch::kFloat32).unsqueeze(0); }

bool operator==(const SketchImage& a, const SketchImage& b) {
    return a.pixels_.sizes() == b.pixels_.sizes() && a.pixels_.equal(b.pixels_);
}

SketchImage sketchify(const torch::Tensor& edge_map, int threshold) {
    if (edge_map.dim() != 2) {
        throw std::invalid_argument("edge map must be a 2-D (H, W) array");
    }
    auto values = edge_map.to(torch::kFloat64);
    if (values.numel() > 0 && (values.min().item<double>() < 0.0 || values.max().item<double>() > 255.0)) {
        throw std::invalid_argument("edge map values must lie in [0, 255]");
    }
    return SketchImage(values.ge(static_cast<double>(threshold)).to(torch::kUInt8));
}

torch::Tensor gradient_magnitude(const torch::Tensor& image_255) {
    if (image_255.dim() != 3) {
        throw std::invalid_argument("gradient_magnitude expects a (C, H, W) image");
    }
    auto x = image_255.to(torch::kFloat32).unsqueeze(1);  // (C, 1, H, W)
    x = torch::replication_pad2d(x, {1, 1, 1, 1});
    auto kx = torch::tensor({-1.f, 0.f, 1.f, -2.f, 0.f, 2.f, -1.f, 0.f, 1.f}).view({1, 1, 3, 3});
    auto ky = kx.transpose(2, 3).contiguous();
    auto gx = torch::conv2d(x, kx);
    auto gy = torch::conv2d(x, ky);
    auto mag = torch::sqrt(gx * gx + gy * gy) / 4.0;
    return std::get<0>(mag.squeeze(1).max(0)).clamp(0.0, 255.0);
}

torch::Tensor to_uint8_image(const torch::Tensor& image_pm1) {
    return ((image_pm1.to(torch::kFloat32).clamp(-1.0, 1.0) + 1.0) * 127.5).round().to(torch::kUInt8);
}

torch::Tensor edge_map_from_image(const torch::Tensor& image_pm1) {
    if (image_pm1.dim() != 3) {
        throw std::invalid_argument("expected a (C, H, W) image");
    }
    return gradient_magnitude(to_uint8_image(image_pm1).to(torch::kFloat32));
}

SketchImage dilate(const SketchImage& sketch) {
    auto x = sketch.pixels().to(torch::kFloat32).unsqueeze(0).unsqueeze(0);
    auto d = torch::max_pool2d(x, {3, 3}, {1, 1}, {1, 1});
    return SketchImage(d.squeeze(0).squeeze(0).to(torch::kUInt8));
}

double mask_iou(const SketchImage& a, const SketchImage& b) {
    if (a.pixels().sizes() != b.pixels().sizes()) {
        throw std::invalid_argument("mask_iou: masks differ in size");
    }
    auto pa = a.pixels().to(torch::kBool);
    auto pb = b.pixels().to(torch::kBool);
    const auto inter = (pa & pb).sum().item<int64_t>();
    const auto uni = (pa | pb).sum().item<int64_t>();
    if (uni == 0) {
        return 1.0;
    }
    return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace knobgen
