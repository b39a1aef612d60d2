#include "knobgen/service.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iostream>
#include <random>
#include <stdexcept>

#include "knobgen/image_io.hpp"

namespace knobgen {

namespace {

// Raised for requests that are well-formed JSON but violate the contract.
struct BadRequest : std::runtime_error {
    using std::runtime_error::runtime_error;
};

int64_t int_field(const nlohmann::json& body, const char* key, int64_t fallback) {
    if (!body.contains(key)) return fallback;
    const auto& v = body.at(key);
    if (!v.is_number_integer()) throw BadRequest(std::string(key) + " must be an integer");
    return v.get<int64_t>();
}

std::string error_id() {
    thread_local std::mt19937_64 rng{std::random_device{}()};
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(rng()));
    return buf;
}

HttpReply error(int status, const std::string& message) {
    return {status, {{"error", message}}};
}

}  // namespace

GenerationService::GenerationService(const Checkpoint& ckpt) : model_(instantiate(ckpt)), model_id_(ckpt.model_id()) {
    model_->eval();
}

HttpReply GenerationService::generate(const std::string& request_body) const {
    const auto& cfg = model_->config();
    try {
        const auto body = nlohmann::json::parse(request_body, nullptr, false);
        if (body.is_discarded() || !body.is_object()) return error(400, "body must be a JSON object");
        if (!body.contains("sketch_png_b64") || !body.at("sketch_png_b64").is_string()) {
            return error(400, "sketch_png_b64 must be a string");
        }
        if (!body.contains("prompt") || !body.at("prompt").is_string()) return error(400, "prompt must be a string");

        KnobConfig knob;
        knob.steps = static_cast<int>(int_field(body, "steps", KnobConfig{}.steps));
        knob.gamma = static_cast<int>(int_field(body, "gamma", KnobConfig{}.gamma));
        const auto seed = int_field(body, "seed", 0);
        if (seed < 0) throw BadRequest("seed must be non-negative");
        if (knob.steps < 1 || knob.steps > cfg.denoiser.T_steps) {
            throw BadRequest("steps must be in [1, " + std::to_string(cfg.denoiser.T_steps) + "]");
        }
        std::vector<int> gammas;
        if (body.contains("return_spectrum") && !body.at("return_spectrum").is_null()) {
            const auto& spec = body.at("return_spectrum");
            if (!spec.is_array() || spec.empty()) throw BadRequest("return_spectrum must be a non-empty integer list");
            for (const auto& g : spec) {
                if (!g.is_number_integer()) throw BadRequest("return_spectrum must be a non-empty integer list");
                gammas.push_back(g.get<int>());
            }
        } else {
            gammas.push_back(knob.gamma);
        }
        for (int g : gammas) {
            if (g < 0 || g > knob.steps) throw BadRequest("gamma must be in [0, steps]");
        }
        std::sort(gammas.begin(), gammas.end());
        gammas.erase(std::unique(gammas.begin(), gammas.end()), gammas.end());

        std::vector<uint8_t> png;
        try {
            png = base64_decode(body.at("sketch_png_b64").get<std::string>());
        } catch (const std::invalid_argument&) {
            throw BadRequest("sketch_png_b64 is not valid base64");
        }
        SketchImage sketch;
        try {
            sketch = decode_sketch_png(png, cfg.denoiser.image_size);
        } catch (const std::exception& e) {
            return error(422, std::string("undecodable sketch PNG: ") + e.what());
        }

        const std::string prompt = body.at("prompt").get<std::string>();
        nlohmann::json images = nlohmann::json::array();
        nlohmann::json timings = nlohmann::json::array();
        for (int g : gammas) {
            const auto start = std::chrono::steady_clock::now();
            GenerateOptions opts;
            opts.knob = {knob.steps, g};
            opts.seed = static_cast<uint64_t>(seed);
            // Every gamma starts from the same seed, so the whole spectrum
            // shares one initial noise draw.
            const auto out = model_->generate({sketch}, {prompt}, opts);
            images.push_back({{"gamma", g}, {"png_b64", base64_encode(encode_rgb_png(out[0]))}});
            timings.push_back(
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
        }
        return {200, {{"images", images}, {"model_id", model_id_}, {"timings_ms", timings}}};
    } catch (const BadRequest& e) {
        return error(400, e.what());
    } catch (const std::exception& e) {
        const auto id = error_id();
        std::cerr << "knobgen: internal error " << id << ": " << e.what() << "\n";
        return {500, {{"error", "internal error"}, {"error_id", id}}};
    }
}

nlohmann::json GenerationService::health() const {
    return {{"status", "ok"},
            {"model_id", model_id_},
            {"image_size", model_->config().denoiser.image_size},
            {"S_default", KnobConfig{}.steps},
            {"gamma_default", KnobConfig{}.gamma}};
}

nlohmann::json GenerationService::config() const {
    nlohmann::json j = model_->config();
    j.erase("vocabulary");
    return j;
}

void GenerationService::mount(httplib::Server& server) const {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
        res.set_content(health().dump(), "application/json");
    });
    server.Get("/config", [this](const httplib::Request&, httplib::Response& res) {
        res.set_content(config().dump(), "application/json");
    });
    server.Post("/generate", [this](const httplib::Request& req, httplib::Response& res) {
        const auto reply = generate(req.body);
        res.status = reply.status;
        res.set_content(reply.body.dump(), "application/json");
    });
}

bool serve(const GenerationService& service, const std::string& host, int port) {
    httplib::Server server;
    service.mount(server);
    return server.listen(host, port);
}

}  // namespace knobgen
