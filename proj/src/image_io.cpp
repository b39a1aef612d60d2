#include "knobgen/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <array>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace knobgen {

namespace {

cv::Mat decode_mat(const std::vector<uint8_t>& bytes, int flags) {
    if (bytes.empty()) {
        throw std::runtime_error("empty image payload");
    }
    cv::Mat mat;
    try {
        mat = cv::imdecode(bytes, flags);
    } catch (const cv::Exception& e) {
        throw std::runtime_error(std::string("image decode failed: ") + e.what());
    }
    if (mat.empty()) {
        throw std::runtime_error("image payload is not a decodable image");
    }
    return mat;
}

std::vector<uint8_t> encode_mat(const cv::Mat& mat, const std::vector<int>& params = {}) {
    std::vector<uint8_t> out;
    if (!cv::imencode(".png", mat, out, params)) {
        throw std::runtime_error("PNG encoding failed");
    }
    return out;
}

}  // namespace

std::vector<uint8_t> encode_rgb_png(const torch::Tensor& image_pm1) {
    if (image_pm1.dim() != 3 || image_pm1.size(0) != 3) {
        throw std::invalid_argument("expected a (3, H, W) image");
    }
    auto hwc = to_uint8_image(image_pm1).permute({1, 2, 0}).contiguous();
    cv::Mat rgb(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3, hwc.data_ptr<uint8_t>());
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    return encode_mat(bgr);
}

torch::Tensor decode_rgb_png(const std::vector<uint8_t>& bytes) {
    auto bgr = decode_mat(bytes, cv::IMREAD_COLOR);
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
    return t.permute({2, 0, 1}).to(torch::kFloat32) / 127.5 - 1.0;
}

std::vector<uint8_t> encode_sketch_png(const SketchImage& sketch) {
    auto px = (sketch.pixels() * 255).to(torch::kUInt8).contiguous();
    cv::Mat gray(static_cast<int>(px.size(0)), static_cast<int>(px.size(1)), CV_8UC1, px.data_ptr<uint8_t>());
    return encode_mat(gray, {cv::IMWRITE_PNG_BILEVEL, 1});
}

SketchImage decode_sketch_png(const std::vector<uint8_t>& bytes, int64_t size, int threshold) {
    auto gray = decode_mat(bytes, cv::IMREAD_GRAYSCALE);
    if (gray.rows != size || gray.cols != size) {
        cv::Mat resized;
        cv::resize(gray, resized, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, cv::INTER_AREA);
        gray = resized;
    }
    if (!gray.isContinuous()) {
        gray = gray.clone();
    }
    auto t = torch::from_blob(gray.data, {gray.rows, gray.cols}, torch::kUInt8).clone();
    return sketchify(t, threshold);
}

void write_file(const std::filesystem::path& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

namespace {
constexpr std::string_view kAlphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const std::vector<uint8_t>& bytes) {
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 2 < bytes.size(); i += 3) {
        const uint32_t v = (uint32_t{bytes[i]} << 16) | (uint32_t{bytes[i + 1]} << 8) | bytes[i + 2];
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += kAlphabet[v & 63];
    }
    const size_t rest = bytes.size() - i;
    if (rest == 1) {
        const uint32_t v = uint32_t{bytes[i]} << 16;
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += "==";
    } else if (rest == 2) {
        const uint32_t v = (uint32_t{bytes[i]} << 16) | (uint32_t{bytes[i + 1]} << 8);
        out += kAlphabet[(v >> 18) & 63];
        out += kAlphabet[(v >> 12) & 63];
        out += kAlphabet[(v >> 6) & 63];
        out += '=';
    }
    return out;
}

std::vector<uint8_t> base64_decode(std::string_view text) {
    std::array<int, 256> lookup{};
    lookup.fill(-1);
    for (size_t i = 0; i < kAlphabet.size(); ++i) {
        lookup[static_cast<unsigned char>(kAlphabet[i])] = static_cast<int>(i);
    }
    std::vector<uint8_t> out;
    uint32_t acc = 0;
    int bits = 0;
    bool padding = false;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (c == ' ' || c == '\n' || c == '\r' || c == '\t') {
            continue;
        }
        if (c == '=') {
            padding = true;
            continue;
        }
        if (padding || lookup[c] < 0) {
            throw std::invalid_argument("invalid base64 payload");
        }
        acc = (acc << 6) | static_cast<uint32_t>(lookup[c]);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<uint8_t>((acc >> bits) & 0xFF));
        }
    }
    return out;
}

}  // namespace knobgen
