#include "knobgen/data.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "knobgen/image_io.hpp"

namespace knobgen {

namespace {

struct Color {
    const char* name;
    std::array<float, 3> rgb;  // in [-1, 1]
};

constexpr std::array<Color, 8> kPalette{{
    {"red", {1.f, -1.f, -1.f}},
    {"green", {-1.f, 1.f, -1.f}},
    {"blue", {-1.f, -1.f, 1.f}},
    {"yellow", {1.f, 1.f, -1.f}},
    {"cyan", {-1.f, 1.f, 1.f}},
    {"magenta", {1.f, -1.f, 1.f}},
    {"white", {1.f, 1.f, 1.f}},
    {"orange", {1.f, 0.3f, -1.f}},
}};

constexpr std::array<const char*, 4> kShapes{"circle", "square", "triangle", "star"};

struct Point {
    double x;
    double y;
};

std::vector<Point> shape_polygon(int kind, Point center, double radius, double rotation) {
    std::vector<Point> poly;
    auto push = [&](double r, double angle) {
        poly.push_back({center.x + r * std::cos(angle), center.y + r * std::sin(angle)});
    };
    constexpr double two_pi = 2.0 * std::numbers::pi;
    switch (kind) {
        case 0:  // circle
            for (int i = 0; i < 20; ++i) push(radius, rotation + two_pi * i / 20.0);
            break;
        case 1:  // square
            for (int i = 0; i < 4; ++i) push(radius * 1.2, rotation + two_pi * i / 4.0 + std::numbers::pi / 4.0);
            break;
        case 2:  // triangle
            for (int i = 0; i < 3; ++i) push(radius * 1.25, rotation + two_pi * i / 3.0 - std::numbers::pi / 2.0);
            break;
        default:  // five-pointed star
            for (int i = 0; i < 10; ++i) push(i % 2 == 0 ? radius * 1.25 : radius * 0.5, rotation + two_pi * i / 10.0);
            break;
    }
    return poly;
}

double bounding_radius(int kind, double radius) { return kind == 0 ? radius : radius * 1.25; }

bool inside(const std::vector<Point>& poly, double x, double y) {
    bool in = false;
    for (size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const auto& a = poly[i];
        const auto& b = poly[j];
        if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) {
            in = !in;
        }
    }
    return in;
}

void draw_line(torch::TensorAccessor<uint8_t, 2>& px, int64_t size, Point p0, Point p1) {
    int x0 = static_cast<int>(std::floor(p0.x));
    int y0 = static_cast<int>(std::floor(p0.y));
    const int x1 = static_cast<int>(std::floor(p1.x));
    const int y1 = static_cast<int>(std::floor(p1.y));
    const int dx = std::abs(x1 - x0);
    const int dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1;
    const int sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
        if (x0 >= 0 && y0 >= 0 && x0 < size && y0 < size) {
            px[y0][x0] = 1;
        }
        if (x0 == x1 && y0 == y1) {
            break;
        }
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

}  // namespace

void to_json(nlohmann::json& j, const ToyDatasetConfig& c) {
    j = nlohmann::json{{"image_size", c.image_size}, {"seed", c.seed}, {"distortion", c.distortion},
                       {"max_shapes", c.max_shapes}};
}

void from_json(const nlohmann::json& j, ToyDatasetConfig& c) {
    j.at("image_size").get_to(c.image_size);
    j.at("seed").get_to(c.seed);
    j.at("distortion").get_to(c.distortion);
    j.at("max_shapes").get_to(c.max_shapes);
}

DatasetRecord generate_toy_record(const ToyDatasetConfig& cfg, uint64_t index) {
    if (cfg.image_size < 8) {
        throw std::invalid_argument("toy images must be at least 8 pixels wide");
    }
    if (cfg.distortion < 0.0) {
        throw std::invalid_argument("distortion must be non-negative");
    }
    std::seed_seq seq{static_cast<uint32_t>(cfg.seed), static_cast<uint32_t>(cfg.seed >> 32),
                      static_cast<uint32_t>(index), static_cast<uint32_t>(index >> 32)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double size = static_cast<double>(cfg.image_size);

    const int wanted = 1 + static_cast<int>(rng() % static_cast<uint64_t>(std::max(1, cfg.max_shapes)));
    struct Placed {
        int kind;
        int color;
        Point center;
        double radius;
        double rotation;
    };
    std::vector<Placed> shapes;
    for (int attempt = 0; attempt < 64 && static_cast<int>(shapes.size()) < wanted; ++attempt) {
        Placed s;
        s.kind = static_cast<int>(rng() % kShapes.size());
        s.color = static_cast<int>(rng() % kPalette.size());
        s.radius = size * (0.13 + 0.12 * unit(rng));
        s.rotation = 2.0 * std::numbers::pi * unit(rng);
        const double reach = bounding_radius(s.kind, s.radius);
        const double lo = reach + 1.0;
        const double hi = size - reach - 2.0;
        if (hi <= lo) {
            continue;
        }
        s.center = {lo + (hi - lo) * unit(rng), lo + (hi - lo) * unit(rng)};
        const bool clear = std::all_of(shapes.begin(), shapes.end(), [&](const Placed& o) {
            const double dist = std::hypot(o.center.x - s.center.x, o.center.y - s.center.y);
            return dist > reach + bounding_radius(o.kind, o.radius) + 2.0;
        });
        if (clear) {
            shapes.push_back(s);
        }
    }

    const auto n = cfg.image_size;
    auto image = torch::full({3, n, n}, -1.0f);
    auto img = image.accessor<float, 3>();
    auto outline_px = torch::zeros({n, n}, torch::kUInt8);
    auto sketch_px = torch::zeros({n, n}, torch::kUInt8);
    auto outline_acc = outline_px.accessor<uint8_t, 2>();
    auto sketch_acc = sketch_px.accessor<uint8_t, 2>();
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::string prompt;
    for (const auto& s : shapes) {
        const auto poly = shape_polygon(s.kind, s.center, s.radius, s.rotation);
        const auto& rgb = kPalette[static_cast<size_t>(s.color)].rgb;
        for (int64_t y = 0; y < n; ++y) {
            for (int64_t x = 0; x < n; ++x) {
                if (inside(poly, x + 0.5, y + 0.5)) {
                    for (int c = 0; c < 3; ++c) img[c][y][x] = rgb[static_cast<size_t>(c)];
                }
            }
        }
        for (size_t i = 0; i < poly.size(); ++i) {
            draw_line(outline_acc, n, poly[i], poly[(i + 1) % poly.size()]);
        }

        // Novice strokes: jittered vertices and dropped edges. The draws are
        // made even at distortion 0 so the random stream does not depend on it.
        std::vector<Point> jittered = poly;
        const double sigma = cfg.distortion * 0.25 * s.radius;
        for (auto& p : jittered) {
            p.x += sigma * gauss(rng);
            p.y += sigma * gauss(rng);
        }
        for (size_t i = 0; i < jittered.size(); ++i) {
            const bool drop = unit(rng) < 0.3 * cfg.distortion;
            if (!drop) {
                draw_line(sketch_acc, n, jittered[i], jittered[(i + 1) % jittered.size()]);
            }
        }

        if (!prompt.empty()) prompt += " and ";
        prompt += std::string("a ") + kPalette[static_cast<size_t>(s.color)].name + " " + kShapes[static_cast<size_t>(s.kind)];
    }

    DatasetRecord r;
    r.image = image;
    r.sketch = SketchImage(sketch_px);
    r.outline = SketchImage(outline_px);
    r.prompt = prompt;
    r.complexity = r.sketch.nonzero_count();
    return r;
}

std::vector<DatasetRecord> generate_toy_dataset(int64_t n, const ToyDatasetConfig& cfg) {
    if (n < 1) {
        throw std::invalid_argument("dataset size must be at least 1");
    }
    std::vector<DatasetRecord> records;
    records.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        records.push_back(generate_toy_record(cfg, static_cast<uint64_t>(i)));
    }
    return records;
}

IngestResult ingest_images(const std::filesystem::path& dir, int64_t image_size, int threshold) {
    IngestResult result;
    if (!std::filesystem::is_directory(dir)) {
        throw std::invalid_argument("not a directory: " + dir.string());
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        auto ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());

    for (const auto& path : files) {
        cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
        if (bgr.empty()) {
            result.skipped.push_back(path.string() + ": unreadable image");
            continue;
        }
        cv::Mat rgb;
        cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
        if (rgb.rows != image_size || rgb.cols != image_size) {
            cv::Mat resized;
            cv::resize(rgb, resized, cv::Size(static_cast<int>(image_size), static_cast<int>(image_size)), 0, 0,
                       cv::INTER_AREA);
            rgb = resized;
        }
        auto u8 = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone().permute({2, 0, 1});
        DatasetRecord r;
        r.image = u8.to(torch::kFloat32) / 127.5 - 1.0;
        r.sketch = sketchify(gradient_magnitude(u8.to(torch::kFloat32)), threshold);
        r.outline = r.sketch;
        r.complexity = r.sketch.nonzero_count();
        auto sidecar = path;
        sidecar.replace_extension(".txt");
        if (std::filesystem::exists(sidecar)) {
            std::ifstream in(sidecar);
            std::getline(in, r.prompt);
        }
        result.records.push_back(std::move(r));
    }
    return result;
}

std::vector<int> stratify_by_pixel_count(const std::vector<int64_t>& complexities, int n_strata) {
    if (n_strata < 1) {
        throw std::invalid_argument("n_strata must be at least 1");
    }
    if (complexities.empty()) {
        throw std::invalid_argument("cannot stratify an empty record set");
    }
    const auto n = static_cast<int64_t>(complexities.size());
    std::vector<size_t> order(complexities.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return complexities[a] < complexities[b]; });

    // Empirical CDF at rank r is (r + 1) / n; stratum = ceil(n_strata * (r + 1) / n) - 1.
    std::vector<int> strata(complexities.size(), 0);
    for (int64_t rank = 0; rank < n; ++rank) {
        const int64_t stratum = (n_strata * (rank + 1) + n - 1) / n - 1;
        strata[order[static_cast<size_t>(rank)]] = static_cast<int>(stratum);
    }
    return strata;
}

std::vector<int> stratify_by_pixel_count(const std::vector<DatasetRecord>& records, int n_strata) {
    std::vector<int64_t> c;
    c.reserve(records.size());
    for (const auto& r : records) c.push_back(r.complexity);
    return stratify_by_pixel_count(c, n_strata);
}

std::string record_stem(size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06zu", index);
    return buf;
}

void save_dataset(const std::filesystem::path& dir, const std::vector<DatasetRecord>& records,
                  const nlohmann::json& generation) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["format"] = "knobgen-dataset-1";
    manifest["generation"] = generation;
    manifest["records"] = nlohmann::json::array();
    for (size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        const auto stem = record_stem(i);
        write_file(dir / (stem + ".img.png"), encode_rgb_png(r.image));
        write_file(dir / (stem + ".sketch.png"), encode_sketch_png(r.sketch));
        std::ofstream(dir / (stem + ".txt")) << r.prompt << '\n';
        manifest["records"].push_back({{"id", stem}, {"complexity", r.complexity}, {"prompt", r.prompt}});
    }
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

nlohmann::json load_manifest(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) {
        throw std::runtime_error("missing manifest.json in " + dir.string());
    }
    return nlohmann::json::parse(in);
}

std::vector<DatasetRecord> load_dataset(const std::filesystem::path& dir) {
    const auto manifest = load_manifest(dir);
    std::vector<DatasetRecord> records;
    for (const auto& entry : manifest.at("records")) {
        const auto stem = entry.at("id").get<std::string>();
        DatasetRecord r;
        r.image = decode_rgb_png(read_file(dir / (stem + ".img.png")));
        r.sketch = decode_sketch_png(read_file(dir / (stem + ".sketch.png")), r.image.size(1));
        r.outline = r.sketch;
        r.prompt = entry.value("prompt", std::string{});
        r.complexity = r.sketch.nonzero_count();
        records.push_back(std::move(r));
    }
    return records;
}

torch::Tensor stack_images(const std::vector<DatasetRecord>& records, const std::vector<size_t>& indices) {
    std::vector<torch::Tensor> parts;
    parts.reserve(indices.size());
    for (auto i : indices) parts.push_back(records.at(i).image);
    return torch::stack(parts);
}

torch::Tensor stack_sketches(const std::vector<DatasetRecord>& records, const std::vector<size_t>& indices) {
    std::vector<torch::Tensor> parts;
    parts.reserve(indices.size());
    for (auto i : indices) parts.push_back(records.at(i).sketch.to_tensor());
    return torch::stack(parts);
}

}  // namespace knobgen
