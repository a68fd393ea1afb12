// stip: command-line front end (gen-data, train, eval, predict, analyze).
//
// Exit codes: 0 success, 2 invalid arguments/configuration/data, 3 runtime or
// numeric failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "png_writer.hpp"
#include "stip/stip.hpp"

namespace fs = std::filesystem;
using namespace stip;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot read " + p.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(p.string() + ": invalid JSON: " + e.what());
    }
}

void write_json(const fs::path& p, const nlohmann::json& j) {
    std::ofstream out(p);
    if (!out) throw IoError("cannot write " + p.string());
    out << j.dump(2) << '\n';
}

void check_frames_match(const std::vector<VideoSequence>& data, const ModelConfig& m) {
    for (const auto& s : data)
        if (s.channels() != m.channels || s.height() != m.height || s.width() != m.width)
            throw ValidationError("sequence " + s.sequence_id + " is " + std::to_string(s.channels()) + "x" +
                                  std::to_string(s.height()) + "x" + std::to_string(s.width()) +
                                  " but model.channels/height/width are " + std::to_string(m.channels) + "x" +
                                  std::to_string(m.height) + "x" + std::to_string(m.width));
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::string out;
    GeneratorArgs gen;
};

int run_gen_data(const GenDataArgs& a) {
    const auto m = generate_moving_shapes(a.out, a.gen);
    std::cout << "wrote " << m.sequences.size() << " sequences to " << a.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string config, data, out;
};

int run_train(const TrainArgs& a) {
    const RunConfig cfg = run_config_from_json(read_json(a.config));
    const auto data = load_dataset(load_manifest(a.data));
    require(!data.empty(), "dataset " + a.data + " has no sequences");
    check_frames_match(data, cfg.model);

    const fs::path out = a.out;
    fs::create_directories(out);
    write_json(out / "config.json", to_json(cfg));

    Trainer<float> trainer(cfg);
    std::ofstream csv(out / "metrics.csv");
    if (!csv) throw IoError("cannot write " + (out / "metrics.csv").string());
    csv << "step,mse,gan_P,gan_D,lp,total\n";
    csv.precision(10);

    const auto t0 = std::chrono::steady_clock::now();
    auto save = [&](std::uint64_t step) {
        fs::create_directories(out / "checkpoints");
        const fs::path p = out / "checkpoints" / ("step_" + std::to_string(step) + ".ckpt");
        save_checkpoint(p, trainer.to_checkpoint());
        std::cout << "checkpoint " << p.string() << "\n";
    };
    for (int s = 1; s <= cfg.train.steps; ++s) {
        const LossBundle b = trainer.train_step(trainer.sample_batch(data));
        csv << s << ',' << b.mse << ',' << b.gan_P << ',' << b.gan_D << ',' << b.lp << ',' << b.total << '\n';
        if (cfg.train.log_every > 0 && (s % cfg.train.log_every == 0 || s == cfg.train.steps)) {
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::printf("step %d  mse %.6f  gan_P %.4f  gan_D %.4f  lp %.5f  total %.6f  (%.1fs)\n", s, b.mse, b.gan_P,
                        b.gan_D, b.lp, b.total, secs);
            std::fflush(stdout);
        }
        if (cfg.train.checkpoint_every > 0 && s % cfg.train.checkpoint_every == 0 && s != cfg.train.steps) save(s);
    }
    if (cfg.train.steps > 0) save(static_cast<std::uint64_t>(cfg.train.steps));
    return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint, data, out, stub;
    int horizon = 0;
    int input_horizon = 0;
};

int run_eval(const EvalArgs& a) {
    require(!a.checkpoint.empty() || !a.stub.empty(), "eval needs --checkpoint (or a --stub predictor)");
    const auto data = load_dataset(load_manifest(a.data));
    require(!data.empty(), "dataset " + a.data + " has no sequences");

    std::optional<Trainer<float>> trained;
    RunConfig cfg;
    if (!a.checkpoint.empty()) {
        trained.emplace(Trainer<float>::from_checkpoint(load_checkpoint(a.checkpoint)));
        cfg = trained->config();
        check_frames_match(data, cfg.model);
    }
    const int input_horizon = a.input_horizon > 0 ? a.input_horizon : cfg.train.input_horizon;
    const int horizon = a.horizon > 0 ? a.horizon : (cfg.eval.horizon > 0 ? cfg.eval.horizon : cfg.train.predict_horizon_test);

    FramePredictor predict;
    if (a.stub == "perfect") {
        predict = [](const VideoSequence& s, int in, int h) { return s.frames.slice0(in, in + h); };
    } else if (a.stub == "zero") {
        predict = [](const VideoSequence& s, int, int h) {
            Shape sh = s.frames.shape();
            sh[0] = h;
            return Tensor<float>(sh);
        };
    } else if (a.stub.empty()) {
        predict = rollout_predictor(trained->model());
    } else {
        throw ValidationError("--stub must be \"perfect\" or \"zero\", got \"" + a.stub + "\"");
    }

    const MetricsReport report =
        evaluate<float>(data, input_horizon, horizon, predict, trained ? &trained->discriminator() : nullptr);
    fs::create_directories(a.out);
    write_metrics_csv(fs::path(a.out) / "metrics.csv", report);

    std::printf("%4s %12s %10s %8s %12s\n", "t", "mse", "psnr", "ssim", "feat_dist");
    for (const auto& r : report.per_t())
        std::printf("%4d %12.6f %10s %8.4f %12s\n", r.t, r.mse, format_metric(r.psnr).c_str(), r.ssim,
                    format_metric(r.feat_dist).c_str());
    const auto all = report.overall();
    std::printf("%4s %12.6f %10s %8.4f %12s\n", "all", all.mse, format_metric(all.psnr).c_str(), all.ssim,
                format_metric(all.feat_dist).c_str());
    return 0;
}

// ---------------------------------------------------------------------------

struct PredictArgs {
    std::string checkpoint, input, out;
    int horizon = 0;
    bool png = false;
};

int run_predict(const PredictArgs& a) {
    const auto trainer = Trainer<float>::from_checkpoint(load_checkpoint(a.checkpoint));
    const RunConfig& cfg = trainer.config();
    const VideoSequence seq = load_sequence(a.input);
    check_frames_match({seq}, cfg.model);
    const int N = cfg.train.input_horizon;
    const int horizon = a.horizon > 0 ? a.horizon : cfg.train.predict_horizon_test;
    if (seq.length() < N)
        throw ValidationError("--input has " + std::to_string(seq.length()) + " frames, the model conditions on " +
                              std::to_string(N));

    const Tensor<float> frames = rollout_predictor(trainer.model())(seq, N, horizon);
    VideoSequence pred;
    pred.sequence_id = seq.sequence_id + "_pred";
    pred.frames = frames;
    for (float& v : pred.frames.vec()) v = std::clamp(v, 0.0f, 1.0f);

    const fs::path out = a.out;
    fs::create_directories(out);
    save_sequence(out / "prediction.stipds", pred);
    std::cout << "wrote " << horizon << " frames to " << (out / "prediction.stipds").string() << "\n";
    if (a.png) {
        fs::create_directories(out / "samples");
        for (int k = 0; k < horizon; ++k) {
            char name[32];
            std::snprintf(name, sizeof name, "t%03d.png", N + k + 1);
            write_png(out / "samples" / name, pred.frames.index0(k));
        }
        std::cout << "wrote PNG frames to " << (out / "samples").string() << "\n";
    }
    return 0;
}

// ---------------------------------------------------------------------------

struct AnalyzeArgs {
    int hidden = 128, kernel = 5, map_size = 16;
    bool layer_norm = false, bias = false;
    std::string out = ".";
};

int run_analyze(const AnalyzeArgs& a) {
    const ComplexityReport r = stgru_complexity(a.hidden, a.kernel, a.map_size, a.map_size, a.layer_norm, a.bias);
    std::printf("unit            %s (hidden %d, kernel %d, map %dx%d)\n", r.unit.c_str(), r.hidden, r.kernel, r.map_h,
                r.map_w);
    std::printf("parameters      %zu (closed form %zu, %.2fM)\n", r.params, r.closed_form_params, r.params / 1e6);
    std::printf("MACs            %.0f (%.3fG)\n", r.macs, r.macs / 1e9);
    std::printf("elementwise     %.0f\n", r.elementwise_total());
    std::printf("assumptions:\n");
    for (const auto& s : r.assumptions) std::printf("  - %s\n", s.c_str());
    fs::create_directories(a.out);
    write_json(fs::path(a.out) / "complexity.json", r.to_json());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spatiotemporal video prediction toolkit"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* g = app.add_subcommand("gen-data", "generate a synthetic moving-shapes dataset");
    g->add_option("--out", gen.out, "output directory")->required();
    g->add_option("--sequences", gen.gen.num_sequences, "number of sequences")->capture_default_str();
    g->add_option("--frames", gen.gen.frames, "frames per sequence")->capture_default_str();
    g->add_option("--size", gen.gen.height, "frame height and width")->capture_default_str();
    g->add_option("--seed", gen.gen.seed, "generator seed")->capture_default_str();
    g->add_option("--shapes", gen.gen.num_shapes, "shapes per sequence")->capture_default_str();
    g->add_option("--channels", gen.gen.channels, "channels per frame (1 or 3)")->capture_default_str();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "train a predictor");
    t->add_option("--config", tr.config, "run configuration (JSON)")->required();
    t->add_option("--data", tr.data, "dataset directory")->required();
    t->add_option("--out", tr.out, "run directory")->required();

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "score autoregressive rollouts");
    e->add_option("--checkpoint", ev.checkpoint, "checkpoint file");
    e->add_option("--data", ev.data, "dataset directory")->required();
    e->add_option("--horizon", ev.horizon, "frames to predict (default: from the config)");
    e->add_option("--input-horizon", ev.input_horizon, "context frames (default: from the config)");
    e->add_option("--out", ev.out, "output directory")->required();
    e->add_option("--stub", ev.stub, "score a reference predictor instead: perfect or zero");

    PredictArgs pr;
    auto* p = app.add_subcommand("predict", "roll a checkpoint forward from one sequence");
    p->add_option("--checkpoint", pr.checkpoint, "checkpoint file")->required();
    p->add_option("--input", pr.input, "sequence file (.stipds)")->required();
    p->add_option("--horizon", pr.horizon, "frames to predict (default: from the config)");
    p->add_option("--out", pr.out, "output directory")->required();
    p->add_flag("--png", pr.png, "also write PNG frames");

    AnalyzeArgs an;
    auto* a = app.add_subcommand("analyze", "parameter and MAC count of one STGRU unit");
    a->add_option("--hidden", an.hidden, "hidden channels")->capture_default_str();
    a->add_option("--kernel", an.kernel, "kernel size")->capture_default_str();
    a->add_option("--map-size", an.map_size, "feature map height and width")->capture_default_str();
    a->add_flag("--layer-norm", an.layer_norm, "include layer-norm gain and shift");
    a->add_flag("--bias", an.bias, "include gate biases");
    a->add_option("--out", an.out, "directory for complexity.json")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : kExitValidation;
    }

    try {
        if (*g) {
            gen.gen.width = gen.gen.height;
            return run_gen_data(gen);
        }
        if (*t) return run_train(tr);
        if (*e) return run_eval(ev);
        if (*p) return run_predict(pr);
        if (*a) return run_analyze(an);
    } catch (const ValidationError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitValidation;
    } catch (const IndexError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitRuntime;
    }
    return kExitValidation;
}
