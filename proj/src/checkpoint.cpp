#include "knobgen/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "knobgen/image_io.hpp"

namespace knobgen {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'K', 'N', 'O', 'B', 'G', 'E', 'N', '\0'};

template <typename T>
void put(std::ostream& out, T value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    T value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) {
        throw std::runtime_error("truncated checkpoint");
    }
    return value;
}

void put_blob(std::ostream& out, const std::string& name, const torch::Tensor& t) {
    auto data = t.detach().to(torch::kFloat32).contiguous();
    put<uint32_t>(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<uint64_t>(out, static_cast<uint64_t>(data.numel()));
    out.write(reinterpret_cast<const char*>(data.data_ptr<float>()), static_cast<std::streamsize>(data.numel() * 4));
}

nlohmann::json shapes_of(const NamedTensors& tensors) {
    auto j = nlohmann::json::object();
    for (const auto& [name, t] : tensors) {
        j[name] = t.sizes().vec();
    }
    return j;
}

constexpr uint64_t kFnvOffset = 1469598103934665603ull;
constexpr uint64_t kFnvPrime = 1099511628211ull;

uint64_t fnv1a(uint64_t h, const uint8_t* data, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= kFnvPrime;
    }
    return h;
}

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
    nlohmann::json header;
    header["format_version"] = kFormatVersion;
    header["config"] = config;
    header["phase"] = phase;
    header["epoch"] = epoch;
    header["optimizer_step"] = optimizer_step;
    header["rng_state"] = base64_encode(rng_state);
    header["parameter_shapes"] = shapes_of(parameters);
    header["optimizer_shapes"] = shapes_of(optimizer_moments);
    header["extra"] = extra;
    const auto text = header.dump();

    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            throw std::runtime_error("cannot write checkpoint " + path.string());
        }
        out.write(kMagic, sizeof(kMagic));
        put<uint32_t>(out, kFormatVersion);
        put<uint64_t>(out, text.size());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        put<uint64_t>(out, parameters.size() + optimizer_moments.size());
        for (const auto& [name, t] : parameters) put_blob(out, "param/" + name, t);
        for (const auto& [name, t] : optimizer_moments) put_blob(out, "optim/" + name, t);
        if (!out) {
            throw std::runtime_error("failed writing checkpoint " + path.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open checkpoint " + path.string());
    }
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error(path.string() + " is not a knobgen checkpoint");
    }
    const auto version = get<uint32_t>(in);
    if (version != kFormatVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }
    const auto header_len = get<uint64_t>(in);
    std::string text(header_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(header_len));
    const auto header = nlohmann::json::parse(text);

    Checkpoint ckpt;
    ckpt.config = header.at("config").get<ModelConfig>();
    ckpt.phase = header.at("phase").get<std::string>();
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.optimizer_step = header.at("optimizer_step").get<int64_t>();
    ckpt.rng_state = base64_decode(header.at("rng_state").get<std::string>());
    ckpt.extra = header.value("extra", nlohmann::json::object());
    const auto& pshapes = header.at("parameter_shapes");
    const auto& oshapes = header.at("optimizer_shapes");

    const auto count = get<uint64_t>(in);
    for (uint64_t i = 0; i < count; ++i) {
        const auto name_len = get<uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto n = get<uint64_t>(in);
        auto t = torch::empty({static_cast<int64_t>(n)}, torch::kFloat32);
        in.read(reinterpret_cast<char*>(t.data_ptr<float>()), static_cast<std::streamsize>(n * 4));
        if (!in) {
            throw std::runtime_error("truncated checkpoint blob " + name);
        }
        if (name.rfind("param/", 0) == 0) {
            const auto key = name.substr(6);
            ckpt.parameters.emplace_back(key, t.view(pshapes.at(key).get<std::vector<int64_t>>()));
        } else if (name.rfind("optim/", 0) == 0) {
            const auto key = name.substr(6);
            ckpt.optimizer_moments.emplace_back(key, t.view(oshapes.at(key).get<std::vector<int64_t>>()));
        } else {
            throw std::runtime_error("unknown checkpoint blob " + name);
        }
    }
    return ckpt;
}

std::vector<uint8_t> Checkpoint::parameter_payload() const {
    std::vector<uint8_t> bytes;
    for (const auto& [name, t] : parameters) {
        auto data = t.detach().to(torch::kFloat32).contiguous();
        const auto* p = reinterpret_cast<const uint8_t*>(data.data_ptr<float>());
        bytes.insert(bytes.end(), p, p + data.numel() * 4);
    }
    return bytes;
}

std::string Checkpoint::model_id() const {
    const auto payload = parameter_payload();
    const auto h = fnv1a(kFnvOffset, payload.data(), payload.size());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Checkpoint capture(KnobGenModel& model, std::string phase, int epoch) {
    Checkpoint ckpt;
    ckpt.config = model->config();
    ckpt.phase = std::move(phase);
    ckpt.epoch = epoch;
    for (const auto& item : model->named_parameters()) {
        ckpt.parameters.emplace_back(item.key(), item.value().detach().to(torch::kFloat32).clone());
    }
    return ckpt;
}

void restore(KnobGenModel& model, const Checkpoint& ckpt) {
    auto params = model->named_parameters();
    if (params.size() != ckpt.parameters.size()) {
        throw std::runtime_error("checkpoint parameter count does not match the model");
    }
    torch::NoGradGuard no_grad;
    for (const auto& [name, t] : ckpt.parameters) {
        auto* target = params.find(name);
        if (target == nullptr) {
            throw std::runtime_error("checkpoint parameter " + name + " not found in model");
        }
        if (target->sizes() != t.sizes()) {
            throw std::runtime_error("checkpoint parameter " + name + " has the wrong shape");
        }
        target->copy_(t);
    }
}

KnobGenModel instantiate(const Checkpoint& ckpt) {
    KnobGenModel model(ckpt.config);
    restore(model, ckpt);
    return model;
}

uint64_t hash_tensors(const std::vector<torch::Tensor>& tensors) {
    uint64_t h = kFnvOffset;
    for (const auto& t : tensors) {
        auto c = t.detach().contiguous();
        h = fnv1a(h, reinterpret_cast<const uint8_t*>(c.data_ptr()), static_cast<size_t>(c.nbytes()));
    }
    return h;
}

}  // namespace knobgen
