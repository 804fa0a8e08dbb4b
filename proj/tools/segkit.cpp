// segkit command line: train, eval, bench, gradcheck, params, synth.
// Exit codes: 0 success, 1 configuration error, 2 numerical divergence,
// 3 artifact mismatch (checkpoint does not match the requested model).

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "segkit/bench.hpp"
#include "segkit/config.hpp"
#include "segkit/data.hpp"
#include "segkit/gradsuite.hpp"
#include "segkit/metrics.hpp"
#include "segkit/trainer.hpp"

namespace fs = std::filesystem;
using namespace segkit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitDiverged = 2;
constexpr int kExitMismatch = 3;

class ArtifactError : public Error {
public:
    explicit ArtifactError(const std::string& msg) : Error(msg) {}
};

struct DecoderOverrides {
    std::string variant;  // empty keeps config value
    bool no_zir = false;
    int64_t c = 0;  // 0 keeps config value

    void apply(ModelConfig& m) const {
        if (!variant.empty()) m.decoder.variant = variant;
        if (no_zir) m.decoder.zir_enabled = false;
        if (c > 0) m.decoder.C = c;
    }
};

std::vector<SegmentationSample> load_dataset(const DataConfig& dc) {
    std::vector<SegmentationSample> data;
    if (dc.source == "synthetic") {
        SyntheticSpec spec;
        spec.seed = dc.seed;
        spec.n_images = static_cast<int>(dc.n_images);
        spec.height = dc.height;
        spec.width = dc.width;
        spec.n_cls = dc.n_cls;
        spec.ignore_index = static_cast<int32_t>(dc.ignore_index);
        data = generate_synthetic(spec);
    } else {
        data = load_folder(dc.images_dir, dc.masks_dir, static_cast<int32_t>(dc.ignore_index));
    }
    for (auto& s : data)
        s.image = normalize_image(s.image, dc.normalize_mean, dc.normalize_std);
    return data;
}

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    os << content;
}

void write_resolved(const RunConfig& cfg) {
    write_text(fs::path(cfg.output_dir) / "resolved.toml", render_resolved_toml(cfg));
}

int cmd_train(const std::string& config_path, const std::string& output_dir, int64_t iters,
              int64_t seed, const DecoderOverrides& dec) {
    RunConfig cfg = load_run_config(config_path);
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    if (iters >= 0) {
        cfg.train.iters = iters;
        cfg.train.schedule.total_iters =
            std::max(cfg.train.iters, cfg.train.schedule.warmup_iters + 1);
    }
    if (seed >= 0) {
        cfg.seed = static_cast<uint64_t>(seed);
        cfg.train.seed = cfg.seed;
    }
    dec.apply(cfg.model);
    try {
        cfg.validate();
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }

    fs::create_directories(cfg.output_dir);
    write_resolved(cfg);

    const auto data = load_dataset(cfg.data);
    SegModel<double> model;
    model.cfg = cfg.model;
    Rng init_rng(cfg.seed);
    model.init(init_rng);

    TrainState<double> st;
    st.rng = Rng(cfg.seed + 1);
    const auto rows = train_loop(model, data, cfg.train, st, &std::cout);

    write_train_log((fs::path(cfg.output_dir) / "loss.csv").string(), rows);
    save_checkpoint((fs::path(cfg.output_dir) / "model.ckpt").string(), model, st);
    std::cout << "trained " << st.iter << " iterations, " << model.count_params()
              << " parameters, outputs in " << cfg.output_dir << "\n";
    return kExitOk;
}

nlohmann::json iou_json(const std::vector<ClassIou>& per_class) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& ci : per_class) {
        if (ci.present)
            arr.push_back(ci.iou);
        else
            arr.push_back(nullptr);
    }
    return arr;
}

int cmd_eval(const std::string& config_path, std::string checkpoint_path,
             const std::string& output_dir, int ms_flag, const std::vector<double>& scales,
             int flip_flag, bool dump_mask) {
    RunConfig cfg = load_run_config(config_path);
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    if (ms_flag >= 0) cfg.eval.ms = ms_flag != 0;
    if (!scales.empty()) cfg.eval.scales = scales;
    if (flip_flag >= 0) cfg.eval.flip = flip_flag != 0;
    if (dump_mask) cfg.eval.dump_mask = true;
    try {
        cfg.validate();
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    if (checkpoint_path.empty())
        checkpoint_path = (fs::path(cfg.output_dir) / "model.ckpt").string();

    fs::create_directories(cfg.output_dir);
    write_resolved(cfg);

    SegModel<double> model;
    model.cfg = cfg.model;
    Rng init_rng(cfg.seed);
    model.init(init_rng);
    TrainState<double> st;
    try {
        load_checkpoint(checkpoint_path, model, st);
    } catch (const Error& e) {
        throw ArtifactError(std::string("checkpoint rejected: ") + e.what());
    }

    const auto data = load_dataset(cfg.data);
    const int64_t n_cls = cfg.model.decoder.n_cls;
    const int32_t ignore = static_cast<int32_t>(cfg.data.ignore_index);

    const fs::path mask_dir = fs::path(cfg.output_dir) / "pred_masks";
    if (cfg.eval.dump_mask) fs::create_directories(mask_dir);

    ConfusionMatrix cm_ss(n_cls, ignore);
    ConfusionMatrix cm_ms(n_cls, ignore);
    for (const auto& s : data) {
        const Tensor<double> img = detail::to_precision<double>(s.image);
        const LabelMap pred_ss = single_scale_infer(model, img);
        cm_ss.update(pred_ss, s.mask);
        if (cfg.eval.ms) {
            const LabelMap pred_ms = multi_scale_infer(model, img, cfg.eval.scales, cfg.eval.flip);
            cm_ms.update(pred_ms, s.mask);
            if (cfg.eval.dump_mask)
                write_png_mask((mask_dir / (s.name + ".png")).string(), pred_ms);
        } else if (cfg.eval.dump_mask) {
            write_png_mask((mask_dir / (s.name + ".png")).string(), pred_ss);
        }
    }

    nlohmann::json report;
    report["per_class_iou"] = iou_json(per_class_iou(cm_ss));
    const Scored miou_ss = mean_iou(cm_ss);
    report["miou_ss"] = miou_ss.defined ? nlohmann::json(miou_ss.value) : nlohmann::json(nullptr);
    if (cfg.eval.ms) {
        const Scored miou_ms = mean_iou(cm_ms);
        report["miou_ms"] =
            miou_ms.defined ? nlohmann::json(miou_ms.value) : nlohmann::json(nullptr);
    } else {
        report["miou_ms"] = nullptr;
    }
    const Scored acc = pixel_accuracy(cm_ss);
    report["pixel_acc"] = acc.defined ? nlohmann::json(acc.value) : nlohmann::json(nullptr);
    report["n_images"] = data.size();
    report["config_digest"] = config_digest(cfg.model);

    write_text(fs::path(cfg.output_dir) / "eval.json", report.dump(2) + "\n");
    std::cout << report.dump(2) << "\n";
    return kExitOk;
}

int cmd_bench(const std::string& output_dir, int trials, const std::string& kind) {
    if (kind != "attention" && kind != "paradigm" && kind != "both")
        throw ConfigError("bench --kind must be attention, paradigm, or both, got '" + kind + "'");
    BenchOptions opt;
    opt.trials = trials;

    std::vector<BenchRecord> records;
    std::vector<std::string> notes;
    if (kind != "paradigm") {
        const auto recs =
            run_attention_sweep({{16, 16}, {32, 32}, {64, 64}}, opt, &notes);
        records.insert(records.end(), recs.begin(), recs.end());
    }
    if (kind != "attention") {
        const auto recs = run_paradigm_sweep({64, 256, 1024}, opt, &notes);
        records.insert(records.end(), recs.begin(), recs.end());
    }

    fs::create_directories(output_dir);
    write_bench_csv((fs::path(output_dir) / "bench.csv").string(), records);
    {
        std::ostringstream os;
        os << "[bench]\n"
           << "trials = " << opt.trials << "\n"
           << "warmup = " << opt.warmup << "\n"
           << "kind = \"" << kind << "\"\n"
           << "seed = " << opt.seed << "\n";
        write_text(fs::path(output_dir) / "resolved.toml", os.str());
    }

    std::cout << std::left << std::setw(22) << "kernel" << std::right << std::setw(6) << "H"
              << std::setw(6) << "W" << std::setw(8) << "N" << std::setw(14) << "ns_median"
              << std::setw(16) << "flops_est" << "\n";
    for (const auto& r : records)
        std::cout << std::left << std::setw(22) << r.kernel << std::right << std::setw(6) << r.h
                  << std::setw(6) << r.w << std::setw(8) << r.n << std::setw(14) << r.ns_median
                  << std::setw(16) << std::llround(r.flops_est) << "\n";
    for (const auto& n : notes) std::cout << "note: " << n << "\n";
    std::cout << "wrote " << (fs::path(output_dir) / "bench.csv").string() << "\n";
    return kExitOk;
}

template <typename T>
int gradcheck_run(T h, T tol, T floor_mag) {
    const auto reports = run_gradient_suite<T>(h, tol, floor_mag);
    bool all_ok = true;
    std::cout << std::left << std::setw(24) << "op" << std::right << std::setw(14) << "max_rel_err"
              << std::setw(8) << "status" << "\n";
    for (const auto& r : reports) {
        all_ok = all_ok && r.passed;
        std::cout << std::left << std::setw(24) << r.name << std::right << std::setw(14)
                  << std::scientific << std::setprecision(3) << static_cast<double>(r.max_rel_err)
                  << std::defaultfloat << std::setw(8) << (r.passed ? "ok" : "FAIL") << "\n";
        if (!r.passed) std::cout << "  " << describe(r) << "\n";
    }
    std::cout << (all_ok ? "gradcheck: all ops within tolerance\n"
                         : "gradcheck: tolerance exceeded\n");
    return all_ok ? kExitOk : kExitDiverged;
}

int cmd_gradcheck(const std::string& dtype) {
    if (dtype == "f64") return gradcheck_run<double>(1e-5, 1e-5, 1e-4);
    if (dtype == "f32") return gradcheck_run<float>(1e-2f, 5e-2f, 1e-2f);
    throw ConfigError("gradcheck --dtype must be f64 or f32, got '" + dtype + "'");
}

int cmd_params(const std::string& config_path, const std::string& preset, int64_t n_cls,
               const DecoderOverrides& dec, bool decoder_only, bool verify) {
    ModelConfig mc;
    if (!config_path.empty()) {
        mc = load_run_config(config_path).model;
    } else {
        try {
            mc.backbone = BackboneConfig::preset(preset);
        } catch (const Error& e) {
            throw ConfigError(e.what());
        }
    }
    if (n_cls > 0) mc.decoder.n_cls = n_cls;
    dec.apply(mc);
    try {
        mc.validate();
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }

    SegModel<double> model;
    model.cfg = mc;
    model.backbone.cfg = mc.backbone;
    model.decoder.cfg = mc.decoder;
    model.decoder.in_channels = mc.backbone.channels;

    const int64_t backbone_n = model.backbone.count_params();
    const int64_t decoder_n = model.decoder.count_params();

    std::cout << std::left << std::setw(10) << "module" << std::right << std::setw(14)
              << "params";
    if (verify) std::cout << std::setw(14) << "enumerated" << std::setw(8) << "match";
    std::cout << "\n";

    int64_t enum_backbone = -1, enum_decoder = -1;
    if (verify) {
        Rng rng(0);
        model.init(rng);
        enum_backbone = 0;
        model.backbone.visit_params(
            [&](const std::string&, Tensor<double>& t) { enum_backbone += t.numel(); });
        enum_decoder = 0;
        model.decoder.visit_params(
            [&](const std::string&, Tensor<double>& t) { enum_decoder += t.numel(); });
    }

    bool mismatch = false;
    auto row = [&](const char* name, int64_t closed, int64_t enumerated) {
        std::cout << std::left << std::setw(10) << name << std::right << std::setw(14) << closed;
        if (verify) {
            const bool ok = closed == enumerated;
            mismatch = mismatch || !ok;
            std::cout << std::setw(14) << enumerated << std::setw(8) << (ok ? "ok" : "FAIL");
        }
        std::cout << "\n";
    };
    if (!decoder_only) row("backbone", backbone_n, enum_backbone);
    row("decoder", decoder_n, enum_decoder);
    if (!decoder_only)
        row("total", backbone_n + decoder_n,
            verify ? enum_backbone + enum_decoder : int64_t(-1));
    if (mismatch) throw Error("closed-form parameter count disagrees with enumeration");
    return kExitOk;
}

int cmd_synth(int64_t seed, int64_t n, int64_t size, int64_t n_cls, const std::string& out) {
    SyntheticSpec spec;
    spec.seed = static_cast<uint64_t>(seed);
    spec.n_images = static_cast<int>(n);
    spec.height = size;
    spec.width = size;
    spec.n_cls = n_cls;
    try {
        spec.validate();
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    const auto samples = generate_synthetic(spec);
    const fs::path images = fs::path(out) / "images";
    const fs::path masks = fs::path(out) / "masks";
    save_folder(samples, images.string(), masks.string(), spec.n_cls, spec.ignore_index);
    {
        std::ostringstream os;
        os << "[synth]\n"
           << "seed = " << spec.seed << "\n"
           << "n = " << spec.n_images << "\n"
           << "size = " << size << "\n"
           << "n_cls = " << spec.n_cls << "\n";
        write_text(fs::path(out) / "resolved.toml", os.str());
    }
    std::cout << "wrote " << samples.size() << " image/mask pairs under " << out << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"segkit: retention-based semantic segmentation toolkit"};
    app.require_subcommand(1);

    std::string config_path, output_dir, checkpoint_path;
    std::string dtype = "f64", preset = "micro", bench_kind = "both", synth_out = "synth_out";
    DecoderOverrides dec;
    std::vector<double> scales;
    int64_t iters = -1, seed = -1, params_n_cls = 0;
    int64_t synth_seed = 0, synth_n = 8, synth_size = 64, synth_n_cls = 5;
    int bench_trials = 7;
    bool ms = false, no_flip = false, flip = false, dump_mask = false;
    bool decoder_only = false, verify = false;

    auto add_decoder_flags = [&dec](CLI::App* cmd) {
        cmd->add_option("--decoder-variant", dec.variant, "Residual variant: literal or projected")
            ->check(CLI::IsMember({"literal", "projected"}));
        cmd->add_flag("--no-zir", dec.no_zir, "Disable the zero-initialized residual layer");
        cmd->add_option("--decoder-c", dec.c, "Decoder embedding width C");
    };

    CLI::App* train = app.add_subcommand("train", "Train a model from a config file");
    train->add_option("--config", config_path, "Run configuration (.toml or .json)")->required();
    train->add_option("--output-dir", output_dir, "Override the configured output directory");
    train->add_option("--iters", iters, "Override the configured iteration count");
    train->add_option("--seed", seed, "Override the configured seed");
    add_decoder_flags(train);

    CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the configured data");
    eval->add_option("--config", config_path, "Run configuration (.toml or .json)")->required();
    eval->add_option("--checkpoint", checkpoint_path,
                     "Checkpoint path (default: <output_dir>/model.ckpt)");
    eval->add_option("--output-dir", output_dir, "Override the configured output directory");
    eval->add_flag("--ms", ms, "Also report multi-scale mIoU");
    eval->add_option("--scales", scales, "Multi-scale inference scales");
    eval->add_flag("--flip", flip, "Enable horizontal-flip averaging in multi-scale");
    eval->add_flag("--no-flip", no_flip, "Disable horizontal-flip averaging in multi-scale");
    eval->add_flag("--dump-mask", dump_mask, "Write predicted masks as PNGs");

    CLI::App* bench = app.add_subcommand("bench", "Benchmark attention and retention kernels");
    bench->add_option("--output-dir", output_dir, "Directory for bench.csv")->required();
    bench->add_option("--trials", bench_trials, "Timing trials per kernel (median, >= 5)");
    bench->add_option("--kind", bench_kind, "attention, paradigm, or both");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient audit");
    gradcheck->add_option("--dtype", dtype, "f64 or f32");

    CLI::App* params = app.add_subcommand("params", "Parameter-count breakdown");
    params->add_option("--config", config_path, "Run configuration (.toml or .json)");
    params->add_option("--preset", preset, "Backbone preset when no config is given");
    params->add_option("--n-cls", params_n_cls, "Number of classes for the decoder head");
    params->add_flag("--decoder-only", decoder_only, "Report only the decoder");
    params->add_flag("--verify", verify, "Also enumerate allocated tensors and compare");
    add_decoder_flags(params);

    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset folder");
    synth->add_option("--seed", synth_seed, "Generator seed");
    synth->add_option("--n", synth_n, "Number of images");
    synth->add_option("--size", synth_size, "Image side length (multiple of 32)");
    synth->add_option("--n-cls", synth_n_cls, "Number of classes");
    synth->add_option("--out", synth_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (train->parsed()) return cmd_train(config_path, output_dir, iters, seed, dec);
        if (eval->parsed()) {
            if (flip && no_flip) throw ConfigError("--flip and --no-flip are mutually exclusive");
            const int ms_flag = ms ? 1 : -1;
            const int flip_flag = flip ? 1 : (no_flip ? 0 : -1);
            return cmd_eval(config_path, checkpoint_path, output_dir, ms_flag, scales, flip_flag,
                            dump_mask);
        }
        if (bench->parsed()) return cmd_bench(output_dir, bench_trials, bench_kind);
        if (gradcheck->parsed()) return cmd_gradcheck(dtype);
        if (params->parsed())
            return cmd_params(config_path, preset, params_n_cls, dec, decoder_only, verify);
        if (synth->parsed())
            return cmd_synth(synth_seed, synth_n, synth_size, synth_n_cls, synth_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const ArtifactError& e) {
        std::cerr << "artifact mismatch: " << e.what() << "\n";
        return kExitMismatch;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}
