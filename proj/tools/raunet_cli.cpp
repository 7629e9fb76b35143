// raunet command-line entry point.
//
// Exit codes: 0 success, 1 runtime or I/O failure (and gradient checks above
// threshold), 2 usage or configuration error, 3 numeric abort during training.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "raunet/checkpoint.hpp"
#include "raunet/dataset.hpp"
#include "raunet/image.hpp"
#include "raunet/mask.hpp"
#include "raunet/model.hpp"
#include "raunet/op_suite.hpp"
#include "raunet/synthetic.hpp"
#include "raunet/trainer.hpp"

namespace fs = std::filesystem;
using namespace raunet;

namespace {

constexpr int kOk = 0, kFailure = 1, kUsage = 2, kNumeric = 3;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string trim(std::string s) {
    const auto ws = " \t\r\n";
    s.erase(0, s.find_first_not_of(ws));
    s.erase(s.find_last_not_of(ws) + 1);
    return s;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream in(s);
    for (std::string item; std::getline(in, item, ',');) out.push_back(trim(item));
    return out;
}

std::vector<std::size_t> parse_channels(const std::string& s) {
    std::vector<std::size_t> out;
    for (const auto& item : split_list(s)) {
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (item.empty() || used != item.size()) throw UsageError("--channels: '" + item + "' is not a positive integer");
        out.push_back(static_cast<std::size_t>(v));
    }
    return out;
}

std::string join(const std::vector<std::string>& v, const char* sep = ", ") {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : sep) + x;
    return s;
}

// ---- shared flag groups -------------------------------------------------

struct MaskArgs {
    std::string shape = "trapezoid";
    double coverage = 0.35;
    double jitter = 0.05;
    std::string color = "0.45,0.65,0.85";

    void add(CLI::App* app, bool prefixed) {
        const std::string p = prefixed ? "--mask-" : "--";
        app->add_option(p + "shape", shape, "Mask outline: trapezoid, rounded_polygon or rect_with_earloops");
        app->add_option(p + "coverage", coverage, "Vertical mask extent above the chin line, fraction of image height");
        app->add_option(p + "jitter", jitter, "Per-vertex offset bound, fraction of image side");
        app->add_option(p + "color", color, "Mask RGB colour, three comma-separated values in [0,1]");
    }

    MaskSpec spec(std::uint64_t seed) const {
        MaskSpec m;
        m.shape_kind = parse_mask_shape(shape);
        m.coverage = coverage;
        m.jitter = jitter;
        const auto parts = split_list(color);
        if (parts.size() != 3) throw UsageError("mask colour needs three comma-separated components, got '" + color + "'");
        for (std::size_t i = 0; i < 3; ++i) {
            try {
                m.color[i] = std::stof(parts[i]);
            } catch (const std::exception&) {
                throw UsageError("mask colour component '" + parts[i] + "' is not a number");
            }
        }
        m.seed = seed;
        m.validate();
        return m;
    }
};

struct DataArgs {
    std::string data;
    std::string manifest;
    std::size_t test_count = 10000;
    double val_fraction = 0.2;

    void add(CLI::App* app) {
        app->add_option("--data", data, "Directory of .ppm face images");
        app->add_option("--manifest", manifest, "Split manifest; loaded if it exists, otherwise written after splitting --data");
        app->add_option("--test-count", test_count, "Images held out as the test split (capped to a tenth for small sets)");
        app->add_option("--val-fraction", val_fraction, "Fraction of the non-test images used for validation");
    }

    /// Loads an existing manifest or splits --data; a fresh split is saved to `save_to` when given.
    DatasetManifest resolve(std::uint64_t seed, const fs::path& save_to) const {
        if (!manifest.empty() && fs::exists(manifest)) return DatasetManifest::load(manifest);
        if (data.empty()) throw UsageError("either --data or an existing --manifest is required");
        if (!fs::is_directory(data)) throw UsageError("data directory not found: " + data);
        auto paths = list_images(data);
        if (paths.size() < 3) throw UsageError("data directory " + data + " holds " + std::to_string(paths.size()) + " images; need at least 3");
        const std::size_t test = test_count < paths.size() / 2 ? test_count : paths.size() / 10;
        if (test != test_count)
            std::cerr << "note: --test-count " << test_count << " capped to " << test << " for " << paths.size() << " images\n";
        DatasetManifest m = split_dataset(std::move(paths), test, val_fraction, seed);
        const fs::path target = manifest.empty() ? save_to : fs::path(manifest);
        if (!target.empty()) {
            if (target.has_parent_path()) fs::create_directories(target.parent_path());
            m.save(target);
        }
        return m;
    }
};

std::vector<std::string> effective_config(const CLI::App* app) {
    std::vector<std::string> out{"cli.command=" + app->get_name()};
    std::stringstream in(app->config_to_str(true, false));
    for (std::string line; std::getline(in, line);)
        if (!trim(line).empty()) out.push_back("cli." + line);
    return out;
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    out << text;
    if (!out) throw std::runtime_error(path.string() + ": cannot write");
}

// ---- train --------------------------------------------------------------

struct TrainArgs {
    DataArgs data;
    MaskArgs mask;
    std::string out = "run";
    std::size_t epochs = 40, batch = 8, side = 64;
    double lr = 1e-4, l1_weight = 1.0;
    std::string variant = "residual_attention_unet";
    std::string channels = "64,128,256,512,1024";
    std::string loss = "ssim_l1";
    std::uint64_t seed = 0;
    bool fixed_masks = false, no_shuffle = false, no_prefetch = false;
    std::string resume;
};

CLI::App* add_train(CLI::App& app, TrainArgs& a) {
    auto* s = app.add_subcommand("train", "Train a model; writes checkpoints, a manifest and report.txt under --out");
    s->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
    a.data.add(s);
    s->add_option("--out", a.out, "Output directory for checkpoints, manifest and report");
    s->add_option("--epochs", a.epochs, "Number of epochs");
    s->add_option("--batch", a.batch, "Batch size");
    s->add_option("--lr", a.lr, "Adam learning rate");
    s->add_option("--side", a.side, "Square training resolution (multiple of 2^(levels-1))");
    s->add_option("--variant", a.variant, "plain_unet, attention_unet or residual_attention_unet");
    s->add_option("--channels", a.channels, "Comma-separated channel widths per level (3 to 6 levels)");
    s->add_option("--loss", a.loss, "ssim_l1, mse or mae");
    s->add_option("--l1-weight", a.l1_weight, "Weight of the L1 term in ssim_l1");
    s->add_option("--seed", a.seed, "Seed for weights, split, masks and shuffling")->envname("RAUNET_SEED");
    a.mask.add(s, true);
    s->add_flag("--fixed-masks", a.fixed_masks, "Reuse each image's mask every epoch (default off)");
    s->add_flag("--no-shuffle", a.no_shuffle, "Keep manifest order within epochs (default off)");
    s->add_flag("--no-prefetch", a.no_prefetch, "Build batches on the training thread (default off)");
    s->add_option("--resume", a.resume, "Checkpoint to continue from");
    return s;
}

int run_train(const CLI::App* app, const TrainArgs& a) {
    TrainConfig cfg;
    cfg.model.channels = parse_channels(a.channels);
    cfg.model.variant = parse_variant(a.variant);
    cfg.model.seed = a.seed;
    cfg.loss.kind = parse_loss_kind(a.loss);
    cfg.loss.l1_weight = a.l1_weight;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch;
    cfg.lr = a.lr;
    cfg.image_side = a.side;
    cfg.mask = a.mask.spec(a.seed);
    cfg.data_seed = a.seed;
    cfg.shuffle = !a.no_shuffle;
    cfg.fixed_masks = a.fixed_masks;
    cfg.prefetch = !a.no_prefetch;
    cfg.validate();

    const fs::path out = a.out;
    const DatasetManifest manifest = a.data.resolve(a.seed, out / "manifest.tsv");
    cfg.checkpoint_dir = out / "checkpoints";
    cfg.report_path = out / "report.txt";
    cfg.echo = effective_config(app);
    cfg.on_epoch = [](const EpochRecord& r) { std::cout << r.format() << std::endl; };

    std::optional<Checkpoint> resume;
    if (!a.resume.empty()) resume = load_checkpoint(a.resume, &cfg.model);

    std::cout << "train=" << manifest.count(Split::train) << " val=" << manifest.count(Split::val)
              << " test=" << manifest.count(Split::test) << " params=" << count_parameters(cfg.model) << std::endl;
    try {
        const TrainResult res = train(cfg, manifest, load_rgb, std::move(resume));
        std::cout << "report=" << cfg.report_path.string() << "\ncheckpoint=" << res.report.final_checkpoint.string() << "\n";
    } catch (const TrainingAborted& e) {
        std::cerr << "error: training aborted: " << e.what() << "\n";
        return e.cause == TrainingAborted::Cause::non_finite_loss ? kNumeric : kFailure;
    }
    return kOk;
}

// ---- eval ---------------------------------------------------------------

struct EvalArgs {
    DataArgs data;
    MaskArgs mask;
    std::string checkpoint;
    bool identity = false, oracle = false;
    std::string split = "val";
    std::size_t side = 64, batch = 8;
    std::string loss = "ssim_l1";
    double l1_weight = 1.0;
    std::uint64_t seed = 0;
    std::string report = "eval_report.txt";
};

CLI::App* add_eval(CLI::App& app, EvalArgs& a) {
    auto* s = app.add_subcommand("eval", "Report mean SSIM/PSNR of a checkpoint or a baseline on one split");
    s->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
    s->add_option("--checkpoint", a.checkpoint, "Model checkpoint to evaluate");
    s->add_flag("--identity", a.identity, "Score the masked input itself as the reconstruction (default off)");
    s->add_flag("--oracle", a.oracle, "Score the ground truth as the reconstruction (default off)");
    a.data.add(s);
    s->add_option("--split", a.split, "train, val or test");
    s->add_option("--side", a.side, "Evaluation resolution");
    s->add_option("--batch", a.batch, "Batch size");
    s->add_option("--loss", a.loss, "Loss reported alongside the metrics: ssim_l1, mse or mae");
    s->add_option("--l1-weight", a.l1_weight, "Weight of the L1 term in ssim_l1");
    s->add_option("--seed", a.seed, "Seed for split and masks (match the training seed)")->envname("RAUNET_SEED");
    a.mask.add(s, true);
    s->add_option("--report", a.report, "Report file (config echo plus the metric line)");
    return s;
}

int run_eval(const CLI::App* app, const EvalArgs& a) {
    const int modes = int(!a.checkpoint.empty()) + int(a.identity) + int(a.oracle);
    if (modes != 1) throw UsageError("eval needs exactly one of --checkpoint, --identity or --oracle");
    TrainConfig cfg;
    cfg.image_side = a.side;
    cfg.batch_size = a.batch;
    cfg.mask = a.mask.spec(a.seed);
    cfg.data_seed = a.seed;
    cfg.loss.kind = parse_loss_kind(a.loss);
    cfg.loss.l1_weight = a.l1_weight;
    const Split split = parse_split(a.split);

    Predictor predict;
    std::string mode;
    std::optional<Checkpoint> ckpt;
    if (!a.checkpoint.empty()) {
        ckpt = load_checkpoint(a.checkpoint);
        try {
            ckpt->model.config().validate_input(a.side, a.side);
        } catch (const std::invalid_argument& e) {
            throw UsageError(std::string("--side: ") + e.what());
        }
        predict = model_predictor(ckpt->model);
        mode = "model";
    } else if (a.identity) {
        predict = identity_predictor();
        mode = "identity";
    } else {
        predict = oracle_predictor();
        mode = "oracle";
    }
    const DatasetManifest manifest = a.data.resolve(a.seed, {});
    if (manifest.count(split) == 0) throw UsageError("split '" + a.split + "' is empty in the manifest");
    const EvalResult r = evaluate(predict, manifest, split, cfg);

    char line[256];
    std::snprintf(line, sizeof line, "mode=%s split=%s samples=%zu ssim=%.6f psnr=%.4f loss=%.6f secs_per_sample=%.6f",
                  mode.c_str(), a.split.c_str(), r.samples, r.mean_ssim, r.mean_psnr, r.mean_loss, r.mean_seconds);
    std::string metric = line;
    if (r.skipped) metric += " skipped=" + std::to_string(r.skipped);
    std::cout << metric << "\n";
    if (!a.report.empty()) {
        std::string text;
        for (const auto& e : effective_config(app)) text += "# " + e + "\n";
        write_file(a.report, text + metric + "\n");
    }
    return kOk;
}

// ---- infer --------------------------------------------------------------

struct InferArgs {
    MaskArgs mask;
    std::string checkpoint, input, output, masked_output;
    bool apply_mask = false;
    std::uint64_t seed = 0;
};

CLI::App* add_infer(CLI::App& app, InferArgs& a) {
    auto* s = app.add_subcommand("infer", "Inpaint one image with a trained checkpoint");
    s->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
    s->add_option("--checkpoint", a.checkpoint, "Model checkpoint")->required();
    s->add_option("--input", a.input, "Input .ppm/.pgm image (sides divisible by 2^(levels-1))")->required();
    s->add_option("--output", a.output, "Output .ppm path")->required();
    s->add_flag("--apply-mask", a.apply_mask, "Paint a synthetic mask on the input first (default off)");
    s->add_option("--masked-output", a.masked_output, "Also save the masked input here (with --apply-mask)");
    s->add_option("--seed", a.seed, "Mask seed for --apply-mask")->envname("RAUNET_SEED");
    a.mask.add(s, true);
    return s;
}

int run_infer(const InferArgs& a) {
    const Checkpoint ckpt = load_checkpoint(a.checkpoint);
    Tensor<float> img = load_rgb(a.input);
    try {
        ckpt.model.config().validate_input(img.dim(1), img.dim(2));
    } catch (const std::invalid_argument& e) {
        throw UsageError(a.input + ": " + e.what());
    }
    if (a.apply_mask) {
        img = apply_synthetic_mask(img, a.mask.spec(a.seed)).masked;
        if (!a.masked_output.empty()) save_image(img, a.masked_output);
    }
    NoGradScope<float> no_grad;
    const Tensor<float> out = model_forward(ckpt.model, reshape(img, {1, 3, img.dim(1), img.dim(2)}));
    save_image(reshape(out, {3, img.dim(1), img.dim(2)}), a.output);
    std::cout << "wrote " << a.output << " (" << img.dim(2) << "x" << img.dim(1) << ")\n";
    return kOk;
}

// ---- maskgen ------------------------------------------------------------

struct MaskgenArgs {
    MaskArgs mask;
    std::string input, output;
    std::uint64_t seed = 0;
    std::size_t side = 0;
};

CLI::App* add_maskgen(CLI::App& app, MaskgenArgs& a) {
    auto* s = app.add_subcommand("maskgen", "Paint synthetic masks; writes <name>_masked.ppm and <name>_region.pgm");
    s->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
    s->add_option("--input", a.input, "Image file or directory of .ppm images")->required();
    s->add_option("--output", a.output, "Output directory")->required();
    a.mask.add(s, false);
    s->add_option("--seed", a.seed, "Mask seed (mixed with each file name)")->envname("RAUNET_SEED");
    s->add_option("--side", a.side, "Centre-crop and resize to this side first; 0 keeps the input size");
    return s;
}

int run_maskgen(const MaskgenArgs& a) {
    std::vector<std::string> inputs;
    if (fs::is_directory(a.input)) {
        inputs = list_images(a.input);
    } else if (fs::exists(a.input)) {
        inputs.push_back(a.input);
    } else {
        throw UsageError("input not found: " + a.input);
    }
    if (inputs.empty()) throw UsageError("no .ppm images in " + a.input);
    const MaskSpec base = a.mask.spec(a.seed);
    fs::create_directories(a.output);
    for (const auto& path : inputs) {
        Tensor<float> img = load_rgb(path);
        if (a.side) img = center_crop_resize(img, a.side);
        const std::string stem = fs::path(path).stem().string();
        MaskSpec spec = base;
        spec.seed = mix_seed(a.seed, hash_string(stem));
        const MaskedFace mf = apply_synthetic_mask(img, spec);
        save_image(mf.masked, fs::path(a.output) / (stem + "_masked.ppm"));
        save_image(mf.region, fs::path(a.output) / (stem + "_region.pgm"));
        double covered = 0;
        for (float v : mf.region.data()) covered += v;
        const double px = static_cast<double>(mf.region.size());
        std::printf("%s shape=%s region_fraction=%.4f analytic_fraction=%.4f jitter_dropped=%d\n", stem.c_str(),
                    std::string(to_string(spec.shape_kind)).c_str(), covered / px, analytic_area(mf.geometry) / px,
                    int(mf.jitter_dropped));
    }
    return kOk;
}

// ---- gradcheck ----------------------------------------------------------

struct GradcheckArgs {
    std::string op;
    bool model = false, f64 = false, inject_fault = false;
    std::size_t levels = 3, side = 16, draws = 20, samples = 50;
    std::string variant = "residual_attention_unet";
    std::uint64_t seed = 0;
};

CLI::App* add_gradcheck(CLI::App& app, GradcheckArgs& a) {
    auto* s = app.add_subcommand("gradcheck", "Compare tape gradients with central finite differences");
    s->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
    s->add_option("--op", a.op, "Operation to check, or 'all' (" + join(op_case_names()) + ")");
    s->add_flag("--model", a.model, "Check a whole model end to end at 32-bit (default off)");
    s->add_flag("--f64", a.f64, "Run op checks at 64-bit, threshold 1e-7; 32-bit uses 1e-3 (default off)");
    s->add_option("--draws", a.draws, "Random draws per op");
    s->add_option("--levels", a.levels, "Model depth for --model");
    s->add_option("--side", a.side, "Model input side for --model");
    s->add_option("--variant", a.variant, "Model variant for --model");
    s->add_option("--samples", a.samples, "Parameters probed for --model");
    s->add_option("--seed", a.seed, "Seed for inputs and probe selection")->envname("RAUNET_SEED");
    s->add_flag("--inject-fault", a.inject_fault, "Skew the checked backward pass by 1% to prove failures are caught (default off)");
    return s;
}

int run_gradcheck(const GradcheckArgs& a) {
    if (a.op.empty() == !a.model) throw UsageError("gradcheck needs exactly one of --op NAME or --model");
    bool pass = true;
    if (a.model) {
        GradCheckResult r;
        try {
            r = check_model(parse_variant(a.variant), a.levels, a.side, a.samples, a.seed, a.inject_fault);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
        pass = r.max_relative_error < kModelThreshold;
        std::printf("model=%s levels=%zu side=%zu samples=%zu max_rel_error=%.3e threshold=%.0e %s\n", a.variant.c_str(),
                    a.levels, a.side, r.probed, r.max_relative_error, kModelThreshold, pass ? "PASS" : "FAIL");
        return pass ? kOk : kFailure;
    }
    std::vector<OpCase> cases;
    if (a.op == "all") {
        cases = op_cases();
    } else {
        try {
            cases.push_back(find_op_case(a.op));
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }
    const double threshold = op_threshold(a.f64);
    for (const auto& c : cases) {
        const OpCheckSummary s = check_op(c, a.draws, a.seed, {a.f64, a.inject_fault});
        const bool ok = s.max_relative_error < threshold;
        pass = pass && ok;
        std::printf("op=%s precision=%s draws=%zu max_rel_error=%.3e threshold=%.0e %s\n", s.name.c_str(), a.f64 ? "f64" : "f32",
                    s.draws, s.max_relative_error, threshold, ok ? "PASS" : "FAIL");
    }
    return pass ? kOk : kFailure;
}

// ---- params / synth -----------------------------------------------------

struct ParamsArgs {
    std::string variant = "residual_attention_unet";
    std::string channels = "64,128,256,512,1024";
    bool all_variants = false;
};

CLI::App* add_params(CLI::App& app, ParamsArgs& a) {
    auto* s = app.add_subcommand("params", "Print the trainable parameter count of a configuration");
    s->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
    s->add_option("--variant", a.variant, "plain_unet, attention_unet or residual_attention_unet");
    s->add_option("--channels", a.channels, "Comma-separated channel widths per level");
    s->add_flag("--all-variants", a.all_variants, "Print all three variants at these widths (default off)");
    return s;
}

int run_params(const ParamsArgs& a) {
    ModelConfig cfg;
    cfg.channels = parse_channels(a.channels);
    std::vector<Variant> variants{parse_variant(a.variant)};
    if (a.all_variants) variants = {Variant::plain_unet, Variant::attention_unet, Variant::residual_attention_unet};
    for (Variant v : variants) {
        cfg.variant = v;
        cfg.validate();
        std::cout << "variant=" << to_string(v) << " channels=" << a.channels << " params=" << count_parameters(cfg) << "\n";
    }
    return kOk;
}

struct SynthArgs {
    std::string output;
    std::size_t count = 100, side = 64;
    std::uint64_t seed = 0;
};

CLI::App* add_synth(CLI::App& app, SynthArgs& a) {
    auto* s = app.add_subcommand("synth", "Write procedurally drawn face images for smoke tests");
    s->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
    s->add_option("--output", a.output, "Output directory")->required();
    s->add_option("--count", a.count, "Number of images");
    s->add_option("--side", a.side, "Image side in pixels");
    s->add_option("--seed", a.seed, "Generator seed")->envname("RAUNET_SEED");
    return s;
}

int run_synth(const SynthArgs& a) {
    if (a.count == 0 || a.side < 8) throw UsageError("synth needs --count >= 1 and --side >= 8");
    const auto written = write_synthetic_faces(a.output, a.count, a.side, a.seed);
    std::cout << "wrote " << written.size() << " images to " << a.output << "\n";
    return kOk;
}

// ---- config file --------------------------------------------------------

/// Splices `key = value` lines from --config into argv right after the
/// subcommand, so explicit flags (later in argv) win under TakeLast.
std::vector<std::string> expand_config(const CLI::App& app, std::vector<std::string> args) {
    std::size_t sub_at = args.size();
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (!args[i].empty() && args[i][0] != '-') {
            sub_at = i;
            break;
        }
    }
    if (sub_at == args.size()) return args;
    const CLI::App* sub = nullptr;
    for (const auto* s : app.get_subcommands({}))
        if (s->get_name() == args[sub_at]) sub = s;
    if (!sub) return args;

    std::string config;
    for (std::size_t i = sub_at + 1; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw UsageError("--config needs a file path");
            config = args[i + 1];
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            config = args[i].substr(9);
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
            break;
        }
    }
    if (config.empty()) return args;

    std::ifstream in(config);
    if (!in) throw UsageError("cannot read config file " + config);
    std::vector<std::string> injected;
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = config + ":" + std::to_string(lineno);
        if (eq == std::string::npos) throw UsageError(where + ": expected 'key = value', got '" + line + "'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        std::replace(key.begin(), key.end(), '_', '-');
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        if (key.empty() || key == "help" || sub->get_option_no_throw("--" + key) == nullptr)
            throw UsageError(where + ": unknown key '" + key + "' for " + sub->get_name());
        injected.push_back("--" + key + "=" + value);
    }
    args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub_at + 1), injected.begin(), injected.end());
    return args;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"raunet: blind masked-face inpainting with a Residual Attention UNet"};
    app.require_subcommand(1);
    app.footer("Every subcommand also accepts --config FILE with 'key = value' lines; explicit flags override it.");

    TrainArgs train_args;
    EvalArgs eval_args;
    InferArgs infer_args;
    MaskgenArgs maskgen_args;
    GradcheckArgs gradcheck_args;
    ParamsArgs params_args;
    SynthArgs synth_args;
    auto* train_cmd = add_train(app, train_args);
    auto* eval_cmd = add_eval(app, eval_args);
    auto* infer_cmd = add_infer(app, infer_args);
    auto* maskgen_cmd = add_maskgen(app, maskgen_args);
    auto* gradcheck_cmd = add_gradcheck(app, gradcheck_args);
    auto* params_cmd = add_params(app, params_args);
    auto* synth_cmd = add_synth(app, synth_args);
    for (auto* s : app.get_subcommands({})) {
        s->add_option_function<std::string>("--config", [](const std::string&) {}, "key = value file merged under explicit flags")
            ->default_str("");
        for (auto* o : s->get_options())
            if (o->get_items_expected_max() != 0 && !o->get_required() && o->get_default_str().empty() &&
                o->get_description().find("(default") == std::string::npos)
                o->description(o->get_description() + " (default none)");
    }

    try {
        auto args = expand_config(app, std::vector<std::string>(argv + 1, argv + argc));
        std::reverse(args.begin(), args.end());
        try {
            app.parse(args);
        } catch (const CLI::ParseError& e) {
            const int rc = app.exit(e);
            return rc == 0 ? kOk : kUsage;
        }
        if (*train_cmd) return run_train(train_cmd, train_args);
        if (*eval_cmd) return run_eval(eval_cmd, eval_args);
        if (*infer_cmd) return run_infer(infer_args);
        if (*maskgen_cmd) return run_maskgen(maskgen_args);
        if (*gradcheck_cmd) return run_gradcheck(gradcheck_args);
        if (*params_cmd) return run_params(params_args);
        if (*synth_cmd) return run_synth(synth_args);
        return kUsage;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const ManifestError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
}
