#include "knobgen/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

#include "knobgen/checkpoint.hpp"
#include "knobgen/data.hpp"
#include "knobgen/image_io.hpp"
#include "knobgen/metrics.hpp"
#include "knobgen/service.hpp"
#include "knobgen/trainer.hpp"

namespace knobgen {

namespace {

struct ModelFlags {
    int64_t image_size = 32;
    int64_t base_channels = 32;
    int64_t d_ctx = 64;
    int64_t cfc_hidden = 128;
    int64_t cfc_layers = 8;
    int64_t cfc_heads = 8;
    int64_t T_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    void add(CLI::App* app) {
        app->add_option("--image-size", image_size, "Image resolution");
        app->add_option("--base-channels", base_channels, "Denoiser base channel width");
        app->add_option("--d-ctx", d_ctx, "Context token width");
        app->add_option("--cfc-hidden", cfc_hidden, "CFC hidden width");
        app->add_option("--cfc-layers", cfc_layers, "CFC cross-attention layers");
        app->add_option("--cfc-heads", cfc_heads, "CFC attention heads");
        app->add_option("--T-steps", T_steps, "Diffusion timesteps");
        app->add_option("--beta-start", beta_start, "First beta of the linear schedule");
        app->add_option("--beta-end", beta_end, "Last beta of the linear schedule");
    }

    ModelConfig build() const {
        auto c = ModelConfig::desk(image_size);
        c.denoiser.base_channels = base_channels;
        c.denoiser.d_ctx = d_ctx;
        c.denoiser.T_steps = T_steps;
        c.cfc.d_text = d_ctx;
        c.cfc.d_hidden = cfc_hidden;
        c.cfc.n_layers = cfc_layers;
        c.cfc.n_heads = cfc_heads;
        c.fgc = FgcConfig::for_denoiser(c.denoiser);
        c.beta_start = beta_start;
        c.beta_end = beta_end;
        c.validate();
        return c;
    }
};

CoarseMode parse_mode(const std::string& mode) {
    return mode == "text" ? CoarseMode::Text : CoarseMode::Cfc;
}

// Resolved option values of a subcommand, for --dump-config and config hashes.
nlohmann::json resolved_options(const CLI::App* app) {
    auto typed = [](const std::string& v) {
        auto parsed = nlohmann::json::parse(v, nullptr, false);
        return parsed.is_number() || parsed.is_boolean() ? parsed : nlohmann::json(v);
    };
    nlohmann::json j = nlohmann::json::object();
    for (const auto* opt : app->get_options()) {
        const auto name = opt->get_single_name();
        if (name.empty() || name == "help" || name == "config" || name == "dump-config") continue;
        if (opt->get_items_expected_max() == 0) {
            j[name] = opt->count() > 0 && opt->as<bool>();
        } else if (opt->count() > 0) {
            j[name] = typed(opt->as<std::string>());
        } else {
            j[name] = typed(opt->get_default_str());
        }
    }
    return j;
}

std::string fnv_hex(const std::string& text) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Checkpoint load_checkpoint(const std::string& path) {
    if (path.empty()) throw std::runtime_error("no checkpoint given (--ckpt)");
    if (!std::filesystem::exists(path)) throw std::runtime_error("checkpoint not found: " + path);
    return Checkpoint::load(path);
}

class JsonLog {
public:
    JsonLog(const std::string& path, std::ostream& echo) : echo_(echo) {
        if (!path.empty()) file_.open(path);
        if (!path.empty() && !file_) throw std::runtime_error("cannot open log " + path);
    }
    void operator()(const EpochLog& e) {
        const auto line = nlohmann::json(e).dump();
        echo_ << line << "\n";
        echo_.flush();
        if (file_) file_ << line << std::endl;
    }

private:
    std::ostream& echo_;
    std::ofstream file_;
};

struct EvalGroup {
    double conformity_sum = 0.0;
    std::vector<size_t> indices;
};

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"knobgen: sketch-conditioned diffusion with a fine-detail knob", "knobgen"};
    app.option_defaults()->always_capture_default();
    app.set_config("--config", "", "TOML config file, one [section] per subcommand");
    app.require_subcommand(1);
    app.fallthrough();
    bool dump = false;
    app.add_flag("--dump-config", dump, "Print the resolved options as JSON and exit");

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Render a procedural dataset directory");
    std::string gen_out;
    int64_t gen_count = 2000;
    ToyDatasetConfig toy;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--count", gen_count, "Number of records")->check(CLI::PositiveNumber);
    gen->add_option("--image-size", toy.image_size, "Resolution");
    gen->add_option("--seed", toy.seed, "Generation seed");
    gen->add_option("--distortion", toy.distortion, "Novice-stroke distortion level")->check(CLI::Range(0.0, 1.0));
    gen->add_option("--max-shapes", toy.max_shapes, "Shapes per scene")->check(CLI::Range(1, 3));

    // sketchify
    auto* sk = app.add_subcommand("sketchify", "Threshold an edge map (or an image's edges) into a 1-bit sketch");
    std::string sk_in, sk_out;
    int sk_threshold = kDefaultSketchThreshold;
    bool sk_from_image = false;
    sk->add_option("--in", sk_in, "Input PNG")->required();
    sk->add_option("--out", sk_out, "Output sketch PNG")->required();
    sk->add_option("--threshold", sk_threshold, "Edge threshold")->check(CLI::Range(0, 256));
    sk->add_flag("--from-image", sk_from_image, "Compute gradient-magnitude edges from an RGB image first");

    // train-base
    auto* tb = app.add_subcommand("train-base", "Train the denoiser, encoders and FGC");
    ModelFlags model_flags;
    TrainConfig base_cfg;
    base_cfg.phase = "base";
    std::string tb_data, tb_out, tb_log, tb_ckdir;
    tb->add_option("--data", tb_data, "Dataset directory")->required();
    tb->add_option("--out", tb_out, "Output checkpoint")->required();
    tb->add_option("--log", tb_log, "JSON-lines training log");
    tb->add_option("--epochs", base_cfg.epochs, "Epochs");
    tb->add_option("--lr", base_cfg.lr, "Learning rate");
    tb->add_option("--batch-size", base_cfg.batch_size, "Batch size");
    tb->add_option("--seed", base_cfg.seed, "Seed");
    tb->add_option("--fine-dropout", base_cfg.fine_dropout, "Probability of training a sample without fine residuals");
    tb->add_option("--checkpoint-every", base_cfg.checkpoint_every, "Epochs between periodic checkpoints (0 = off)");
    tb->add_option("--checkpoint-dir", tb_ckdir, "Directory for periodic checkpoints");
    model_flags.add(tb);

    // train-cgc
    auto* tc = app.add_subcommand("train-cgc", "Train the CFC with everything else frozen");
    TrainConfig cgc_cfg;
    cgc_cfg.phase = "cgc";
    cgc_cfg.epochs = 150;
    cgc_cfg.lr = 1e-3;
    std::string tc_data, tc_init, tc_out, tc_log, tc_ckdir;
    tc->add_option("--data", tc_data, "Dataset directory")->required();
    tc->add_option("--init", tc_init, "Starting checkpoint (base for cgc, cgc for cgc-finetune)")->required();
    tc->add_option("--out", tc_out, "Output checkpoint")->required();
    tc->add_option("--log", tc_log, "JSON-lines training log");
    tc->add_option("--phase", cgc_cfg.phase, "cgc or cgc-finetune")->check(CLI::IsMember({"cgc", "cgc-finetune"}));
    tc->add_option("--epochs", cgc_cfg.epochs, "Epochs");
    tc->add_option("--lr", cgc_cfg.lr, "Learning rate");
    tc->add_option("--batch-size", cgc_cfg.batch_size, "Batch size");
    tc->add_option("--seed", cgc_cfg.seed, "Seed");
    tc->add_option("--horizon", cgc_cfg.modulator.horizon_epochs, "Modulator ramp length in epochs");
    tc->add_option("--k", cgc_cfg.modulator.k, "Modulator steepness");
    tc->add_option("--m-min", cgc_cfg.modulator.m_min, "Modulator floor");
    tc->add_option("--m-max", cgc_cfg.modulator.m_max, "Modulator ceiling");
    tc->add_flag("--ablate-modulator", cgc_cfg.ablate_modulator, "Hold the fine scale at 1");
    tc->add_option("--checkpoint-every", cgc_cfg.checkpoint_every, "Epochs between periodic checkpoints (0 = off)");
    tc->add_option("--checkpoint-dir", tc_ckdir, "Directory for periodic checkpoints");

    // sample
    auto* sa = app.add_subcommand("sample", "Generate images from a sketch and prompt");
    std::string sa_ckpt, sa_sketch, sa_prompt, sa_out, sa_dataset, sa_mode = "cfc";
    KnobConfig sa_knob;
    uint64_t sa_seed = 0;
    bool sa_coarse_only = false;
    sa->add_option("--ckpt", sa_ckpt, "Checkpoint")->required();
    sa->add_option("--sketch", sa_sketch, "Sketch PNG");
    sa->add_option("--prompt", sa_prompt, "Prompt");
    sa->add_option("--gamma", sa_knob.gamma, "Last step with fine features");
    sa->add_option("--steps", sa_knob.steps, "Sampling steps");
    sa->add_option("--seed", sa_seed, "Seed (record i of --dataset uses seed + i)");
    sa->add_option("--out", sa_out, "Output PNG, or directory with --dataset")->required();
    sa->add_option("--dataset", sa_dataset, "Generate one image per record of this dataset directory");
    sa->add_option("--mode", sa_mode, "Coarse context: cfc or text")->check(CLI::IsMember({"cfc", "text"}));
    sa->add_flag("--coarse-only", sa_coarse_only, "Skip the FGC entirely");
    bool sa_no_clip = false;
    sa->add_flag("--no-clip-denoised", sa_no_clip, "Plain ancestral steps without clamping the predicted clean image");

    // eval
    auto* ev = app.add_subcommand("eval", "Score generated images against a reference dataset");
    std::string ev_ref, ev_gen, ev_encoder, ev_out;
    int ev_strata = 3;
    JointTrainConfig ev_train;
    ev->add_option("--reference", ev_ref, "Reference dataset directory")->required();
    ev->add_option("--generated", ev_gen, "Directory of NNNNNN.png images")->required();
    ev->add_option("--encoder", ev_encoder, "Joint encoder file; trained on the reference set and saved if missing");
    ev->add_option("--encoder-epochs", ev_train.epochs, "Joint encoder training epochs");
    ev->add_option("--strata", ev_strata, "Pixel-count strata")->check(CLI::PositiveNumber);
    ev->add_option("--seed", ev_train.seed, "Seed");
    ev->add_option("--out", ev_out, "Report path (stdout if omitted)");

    // serve
    auto* sv = app.add_subcommand("serve", "Run the HTTP generation service");
    std::string sv_ckpt, sv_host = "127.0.0.1";
    int sv_port = 8080;
    sv->add_option("--ckpt", sv_ckpt, "Checkpoint")->required();
    sv->add_option("--host", sv_host, "Bind address");
    sv->add_option("--port", sv_port, "Port")->check(CLI::Range(0, 65535));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }

    CLI::App* active = app.get_subcommands().front();
    if (dump) {
        out << resolved_options(active).dump(2) << "\n";
        return kExitOk;
    }

    try {
        if (active == gen) {
            const auto records = generate_toy_dataset(gen_count, toy);
            nlohmann::json meta = toy;
            meta["count"] = gen_count;
            save_dataset(gen_out, records, meta);
            out << "wrote " << records.size() << " records to " << gen_out << "\n";
        } else if (active == sk) {
            SketchImage sketch;
            if (sk_from_image) {
                sketch = sketchify(edge_map_from_image(decode_rgb_png(read_file(sk_in))), sk_threshold);
            } else {
                cv::Mat gray = cv::imread(sk_in, cv::IMREAD_GRAYSCALE);
                if (gray.empty()) throw std::runtime_error("cannot read image " + sk_in);
                auto edges = torch::from_blob(gray.data, {gray.rows, gray.cols}, torch::kUInt8).to(torch::kFloat32);
                sketch = sketchify(edges, sk_threshold);
            }
            write_file(sk_out, encode_sketch_png(sketch));
            out << "sketch with " << sketch.nonzero_count() << " stroke pixels written to " << sk_out << "\n";
        } else if (active == tb) {
            base_cfg.checkpoint_dir = tb_ckdir;
            const auto data = load_dataset(tb_data);
            JsonLog log(tb_log, out);
            auto result = train_base(base_cfg, model_flags.build(), data, [&](const EpochLog& e) { log(e); });
            result.checkpoint.save(tb_out);
            out << "saved " << tb_out << " (model " << result.checkpoint.model_id() << ")\n";
        } else if (active == tc) {
            cgc_cfg.checkpoint_dir = tc_ckdir;
            const auto start = load_checkpoint(tc_init);
            const auto data = load_dataset(tc_data);
            JsonLog log(tc_log, out);
            auto result = train_cgc(cgc_cfg, start, data, [&](const EpochLog& e) { log(e); });
            result.checkpoint.save(tc_out);
            out << "saved " << tc_out << " (model " << result.checkpoint.model_id() << ")\n";
        } else if (active == sa) {
            // The knob is meaningless without the fine pathway.
            if (sa_coarse_only) sa_knob.gamma = 0;
            sa_knob.validate();
            const auto ckpt = load_checkpoint(sa_ckpt);
            auto model = instantiate(ckpt);
            model->eval();
            GenerateOptions opts;
            opts.knob = sa_knob;
            opts.seed = sa_seed;
            opts.mode = parse_mode(sa_mode);
            opts.use_fine = !sa_coarse_only;
            opts.clip_denoised = !sa_no_clip;
            const auto size = model->config().denoiser.image_size;
            if (!sa_dataset.empty()) {
                const auto data = load_dataset(sa_dataset);
                std::filesystem::create_directories(sa_out);
                // One seed per record so the records do not share an initial noise draw.
                for (size_t i = 0; i < data.size(); ++i) {
                    opts.seed = sa_seed + i;
                    const auto img = model->generate({data[i].sketch}, {data[i].prompt}, opts);
                    write_file(std::filesystem::path(sa_out) / (record_stem(i) + ".png"), encode_rgb_png(img[0]));
                }
                out << "wrote " << data.size() << " images to " << sa_out << "\n";
            } else {
                if (sa_sketch.empty()) {
                    err << "sample: --sketch is required without --dataset\n";
                    return kExitUsage;
                }
                if (!std::filesystem::exists(sa_sketch)) throw std::runtime_error("sketch not found: " + sa_sketch);
                const auto sketch = decode_sketch_png(read_file(sa_sketch), size);
                const auto img = model->generate({sketch}, {sa_prompt}, opts);
                write_file(sa_out, encode_rgb_png(img[0]));
                out << "wrote " << sa_out << "\n";
            }
        } else if (active == ev) {
            const auto reference = load_dataset(ev_ref);
            if (reference.empty()) throw std::runtime_error("reference dataset is empty");
            std::vector<torch::Tensor> generated;
            for (size_t i = 0; i < reference.size(); ++i) {
                const auto path = std::filesystem::path(ev_gen) / (record_stem(i) + ".png");
                if (!std::filesystem::exists(path)) throw std::runtime_error("missing generated image " + path.string());
                generated.push_back(decode_rgb_png(read_file(path)));
            }
            JointEncoderConfig enc_cfg;
            enc_cfg.image_size = reference.front().image.size(1);
            JointEncoder encoder{nullptr};
            if (!ev_encoder.empty() && std::filesystem::exists(ev_encoder)) {
                encoder = load_joint_encoder(ev_encoder);
            } else {
                encoder = train_joint_encoder(reference, enc_cfg, ev_train);
                if (!ev_encoder.empty()) save_joint_encoder(encoder, ev_encoder);
            }
            std::vector<size_t> all(reference.size());
            std::iota(all.begin(), all.end(), size_t{0});
            const auto ref_images = stack_images(reference, all);
            const auto gen_images = torch::stack(generated);
            std::vector<std::string> prompts;
            for (const auto& r : reference) prompts.push_back(r.prompt);
            const auto strata = stratify_by_pixel_count(reference, ev_strata);

            auto score = [&](const std::vector<size_t>& idx) {
                nlohmann::json s;
                auto sel = torch::tensor(std::vector<int64_t>(idx.begin(), idx.end()));
                const auto fr = image_features(encoder, ref_images.index_select(0, sel), "reference");
                const auto fg = image_features(encoder, gen_images.index_select(0, sel), "generated");
                s["n"] = idx.size();
                if (static_cast<int64_t>(idx.size()) >= fr.features.cols() + 1) {
                    s["fid"] = fid(fr, fg);
                } else {
                    s["fid"] = nullptr;
                }
                std::vector<std::string> p;
                double conformity = 0.0;
                for (auto i : idx) {
                    p.push_back(prompts[i]);
                    conformity += sketch_conformity(generated[i], reference[i].sketch);
                }
                torch::NoGradGuard no_grad;
                s["alignment"] =
                    prompt_alignment(encoder->embed_images(gen_images.index_select(0, sel)), encoder->embed_prompts(p));
                s["conformity"] = conformity / static_cast<double>(idx.size());
                return s;
            };
            nlohmann::json report = score(all);
            report["per_stratum"] = nlohmann::json::array();
            for (int k = 0; k < ev_strata; ++k) {
                std::vector<size_t> idx;
                for (size_t i = 0; i < strata.size(); ++i)
                    if (strata[i] == k) idx.push_back(i);
                if (idx.empty()) continue;
                auto s = score(idx);
                s["stratum"] = k;
                report["per_stratum"].push_back(s);
            }
            report["feature_extractor"] = "joint-encoder image tower (values comparable only within this tool)";
            report["config_hash"] = fnv_hex(resolved_options(ev).dump());
            report["seed"] = ev_train.seed;
            if (ev_out.empty()) {
                out << report.dump(2) << "\n";
            } else {
                std::ofstream f(ev_out);
                if (!f) throw std::runtime_error("cannot write report " + ev_out);
                f << report.dump(2) << "\n";
                out << "wrote " << ev_out << "\n";
            }
        } else if (active == sv) {
            GenerationService service(load_checkpoint(sv_ckpt));
            out << "serving model " << service.model_id() << " on http://" << sv_host << ":" << sv_port << "\n";
            out.flush();
            if (!serve(service, sv_host, sv_port)) throw std::runtime_error("cannot bind " + sv_host + ":" + std::to_string(sv_port));
        }
    } catch (const std::exception& e) {
        err << "knobgen " << active->get_name() << ": " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace knobgen
