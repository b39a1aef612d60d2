#pragma once

// JSON-over-HTTP generation service.
//
//   POST /generate  {sketch_png_b64, prompt, gamma, steps, seed, return_spectrum?}
//                   -> {images: [{gamma, png_b64}], model_id, timings_ms}
//   GET  /health    -> {status, model_id, image_size, S_default, gamma_default}
//   GET  /config    -> model config without the vocabulary
//
// The model is loaded once and only read afterwards, so handlers can run
// concurrently.

#include <httplib.h>
#include <json.hpp>

#include <string>

#include "knobgen/checkpoint.hpp"
#include "knobgen/model.hpp"

namespace knobgen {

struct HttpReply {
    int status = 200;
    nlohmann::json body;
};

class GenerationService {
public:
    explicit GenerationService(const Checkpoint& ckpt);

    HttpReply generate(const std::string& request_body) const;
    nlohmann::json health() const;
    nlohmann::json config() const;

    /// Registers the routes (plus permissive CORS) on `server`.
    void mount(httplib::Server& server) const;

    const std::string& model_id() const { return model_id_; }

private:
    // generate() runs under NoGradGuard and leaves the parameters untouched.
    mutable KnobGenModel model_;
    std::string model_id_;
};

/// Blocks until the server stops. Returns false if the port could not be bound.
bool serve(const GenerationService& service, const std::string& host, int port);

}  // namespace knobgen
