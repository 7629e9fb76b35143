#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "raunet/adam.hpp"
#include "raunet/checkpoint.hpp"
#include "raunet/dataset.hpp"
#include "raunet/losses.hpp"
#include "raunet/model.hpp"

namespace raunet {

struct EpochRecord;

struct TrainConfig {
    ModelConfig model;
    LossConfig loss;
    std::size_t epochs = 40;
    std::size_t batch_size = 8;
    double lr = 1e-4;
    std::size_t image_side = 64;
    MaskSpec mask;
    std::uint64_t data_seed = 0;
    bool shuffle = true;
    /// Same mask on an image every epoch (overfitting diagnostics).
    bool fixed_masks = false;
    bool prefetch = true;
    /// Empty disables checkpointing.
    std::filesystem::path checkpoint_dir;
    /// Empty disables the report file.
    std::filesystem::path report_path;
    /// Extra `# key=value` lines echoed at the top of the report.
    std::vector<std::string> echo;
    /// Called after each epoch's record is added.
    std::function<void(const EpochRecord&)> on_epoch;

    void validate() const {
        model.validate();
        model.validate_input(image_side, image_side);
        loss.validate();
        mask.validate();
        if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
        if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be positive and finite");
    }

    std::vector<std::string> echo_lines() const {
        auto join = [](const std::vector<std::size_t>& v) {
            std::string s;
            for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
            return s;
        };
        char lr_buf[32], w_buf[32];
        std::snprintf(lr_buf, sizeof lr_buf, "%.17g", lr);
        std::snprintf(w_buf, sizeof w_buf, "%.17g", loss.l1_weight);
        std::vector<std::string> out{
            "# variant=" + std::string(to_string(model.variant)),
            "# channels=" + join(model.channels),
            "# model_seed=" + std::to_string(model.seed),
            "# loss=" + std::string(to_string(loss.kind)),
            "# l1_weight=" + std::string(w_buf),
            "# epochs=" + std::to_string(epochs),
            "# batch=" + std::to_string(batch_size),
            "# lr=" + std::string(lr_buf),
            "# side=" + std::to_string(image_side),
            "# mask_shape=" + std::string(to_string(mask.shape_kind)),
            "# mask_coverage=" + std::to_string(mask.coverage),
            "# mask_jitter=" + std::to_string(mask.jitter),
            "# mask_seed=" + std::to_string(mask.seed),
            "# data_seed=" + std::to_string(data_seed),
            "# fixed_masks=" + std::string(fixed_masks ? "true" : "false"),
        };
        for (const auto& e : echo) out.push_back(e.rfind("#", 0) == 0 ? e : "# " + e);
        return out;
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0, val_loss = 0, val_ssim = 0, val_psnr = 0, secs = 0;
    std::size_t skipped = 0;

    bool same_except_timing(const EpochRecord& o) const {
        return epoch == o.epoch && train_loss == o.train_loss && val_loss == o.val_loss && val_ssim == o.val_ssim &&
               val_psnr == o.val_psnr && skipped == o.skipped;
    }

    std::string format() const {
        char buf[256];
        std::snprintf(buf, sizeof buf, "epoch=%zu train_loss=%.6f val_loss=%.6f val_ssim=%.6f val_psnr=%.4f secs=%.3f", epoch,
                      train_loss, val_loss, val_ssim, val_psnr, secs);
        std::string s = buf;
        if (skipped) s += " skipped=" + std::to_string(skipped);
        return s;
    }
};

struct TrainReport {
    std::vector<std::string> config_echo;
    std::vector<EpochRecord> epochs;
    std::vector<double> step_losses;
    std::filesystem::path final_checkpoint;

    std::string format() const {
        std::string s;
        for (const auto& line : config_echo) s += line + "\n";
        for (const auto& e : epochs) s += e.format() + "\n";
        if (!final_checkpoint.empty()) s += "# final_checkpoint=" + final_checkpoint.string() + "\n";
        return s;
    }

    /// Equality of everything except wall-clock fields and artifact location.
    bool same_except_timing(const TrainReport& o) const {
        if (config_echo != o.config_echo || step_losses != o.step_losses || epochs.size() != o.epochs.size()) return false;
        for (std::size_t i = 0; i < epochs.size(); ++i)
            if (!epochs[i].same_except_timing(o.epochs[i])) return false;
        return true;
    }
};

/// Training stopped early. `report` holds every epoch completed before the failure.
class TrainingAborted : public std::runtime_error {
public:
    enum class Cause { non_finite_loss, checkpoint_io };
    TrainingAborted(Cause cause, const std::string& what, TrainReport report)
        : std::runtime_error(what), cause(cause), report(std::move(report)) {}
    Cause cause;
    TrainReport report;
};

struct EvalResult {
    double mean_ssim = 0;
    double mean_psnr = 0;
    double mean_seconds = 0;  // forward time per sample
    double mean_loss = 0;
    std::size_t samples = 0;
    std::size_t skipped = 0;
};

/// Maps a batch to its reconstruction [B,3,H,W].
using Predictor = std::function<Tensor<float>(const SampleBatch&)>;

inline Predictor model_predictor(const Model<float>& model) {
    return [&model](const SampleBatch& b) { return model_forward(model, b.masked); };
}
inline Predictor identity_predictor() {
    return [](const SampleBatch& b) { return b.masked; };
}
inline Predictor oracle_predictor() {
    return [](const SampleBatch& b) { return b.truth; };
}

/// Mean valid-window SSIM, PSNR and loss over every sample of a batch stream.
inline EvalResult evaluate(const Predictor& predict, BatchStream& stream, const LossConfig& loss = {}) {
    NoGradScope<float> no_grad;
    EvalResult r;
    double ssim_sum = 0, psnr_sum = 0, loss_sum = 0, secs = 0;
    while (auto batch = stream.next()) {
        const auto t0 = std::chrono::steady_clock::now();
        const Tensor<float> pred = predict(*batch);
        secs += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        detail::require_same_shape(pred.shape(), batch->truth.shape(), "evaluate");

        const std::size_t B = batch->size();
        const auto map = ssim(pred, batch->truth).map;
        const std::size_t per = map.size() / B, px = pred.size() / B;
        for (std::size_t n = 0; n < B; ++n) {
            double s = 0, se = 0;
            for (std::size_t i = 0; i < per; ++i) s += map.data()[n * per + i];
            for (std::size_t i = 0; i < px; ++i) {
                const double d = static_cast<double>(pred.data()[n * px + i]) - batch->truth.data()[n * px + i];
                se += d * d;
            }
            ssim_sum += s / static_cast<double>(per);
            psnr_sum += psnr_from_mse(se / static_cast<double>(px));
        }
        loss_sum += static_cast<double>(compute_loss(pred, batch->truth, loss).item()) * static_cast<double>(B);
        r.samples += B;
    }
    r.skipped = stream.skipped();
    if (r.samples == 0) throw std::invalid_argument("evaluate: split has no readable samples");
    const auto n = static_cast<double>(r.samples);
    r.mean_ssim = ssim_sum / n;
    r.mean_psnr = psnr_sum / n;
    r.mean_loss = loss_sum / n;
    r.mean_seconds = secs / n;
    return r;
}

inline BatchOptions eval_batch_options(const TrainConfig& cfg) {
    BatchOptions o;
    o.batch_size = cfg.batch_size;
    o.image_side = cfg.image_side;
    o.mask = cfg.mask;
    o.epoch_seed = mix_seed(cfg.data_seed, 0xE7A1ull);
    o.fixed_masks = cfg.fixed_masks;
    o.prefetch = cfg.prefetch;
    return o;
}

inline EvalResult evaluate(const Predictor& predict, const DatasetManifest& manifest, Split split, const TrainConfig& cfg,
                           const ImageLoader& loader = load_rgb) {
    if (manifest.count(split) == 0) throw std::invalid_argument("evaluate: split '" + std::string(to_string(split)) + "' is empty");
    auto stream = make_batches(manifest, split, eval_batch_options(cfg), loader);
    return evaluate(predict, *stream, cfg.loss);
}

struct TrainResult {
    Model<float> model;
    AdamState<float> adam;
    TrainReport report;
};

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    out << text;
    if (!out) throw std::runtime_error(path.string() + ": cannot write");
}

}  // namespace detail

/// Adam on the train split, validation after each epoch. Deterministic given the seeds.
inline TrainResult train(const TrainConfig& cfg, const DatasetManifest& manifest, const ImageLoader& loader = load_rgb,
                         std::optional<Checkpoint> resume = std::nullopt) {
    cfg.validate();
    if (manifest.count(Split::train) == 0 || manifest.count(Split::val) == 0)
        throw std::invalid_argument("train: manifest needs at least one train and one val entry");

    TrainResult res{resume ? resume->model : build_model<float>(cfg.model), resume ? resume->adam : AdamState<float>{}, {}};
    if (resume && !(resume->model.config() == cfg.model)) throw std::invalid_argument("train: resume checkpoint has a different model config");
    res.adam.lr = cfg.lr;
    res.report.config_echo = cfg.echo_lines();
    const std::uint64_t first_epoch = resume ? resume->epoch + 1 : 1;

    if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);
    auto checkpoint = [&](std::uint64_t epoch) {
        if (cfg.checkpoint_dir.empty()) return;
        char name[32];
        std::snprintf(name, sizeof name, "epoch_%04llu.ckpt", static_cast<unsigned long long>(epoch));
        const auto path = cfg.checkpoint_dir / name;
        try {
            save_checkpoint(res.model, res.adam, epoch, path);
            detail::write_text(cfg.checkpoint_dir / "latest", std::string(name) + "\n");
        } catch (const std::exception& e) {
            throw TrainingAborted(TrainingAborted::Cause::checkpoint_io,
                                  "checkpoint for epoch " + std::to_string(epoch) + " failed: " + e.what(), res.report);
        }
        res.report.final_checkpoint = path;
    };
    auto write_report = [&] {
        if (!cfg.report_path.empty()) detail::write_text(cfg.report_path, res.report.format());
    };

    if (!resume) checkpoint(0);
    write_report();

    for (std::uint64_t epoch = first_epoch; epoch < first_epoch + cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        BatchOptions opts = eval_batch_options(cfg);
        opts.epoch_seed = mix_seed(cfg.data_seed, epoch);
        opts.shuffle = cfg.shuffle;
        BatchStream stream(manifest.paths(Split::train), opts, loader);

        double loss_sum = 0;
        std::size_t steps = 0;
        while (auto batch = stream.next()) {
            ++steps;
            Tape<float> tape;
            TapeScope<float> scope(tape);
            const Tensor<float> pred = model_forward(res.model, batch->masked);
            const Tensor<float> loss = compute_loss(pred, batch->truth, cfg.loss);
            const double value = loss.item();
            if (!std::isfinite(value)) {
                write_report();
                throw TrainingAborted(TrainingAborted::Cause::non_finite_loss,
                                      "non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(steps),
                                      res.report);
            }
            tape.backward(loss);
            adam_step(res.model, res.adam);
            res.report.step_losses.push_back(value);
            loss_sum += value;
        }
        if (steps == 0) throw std::runtime_error("train: no readable train entries in epoch " + std::to_string(epoch));

        const EvalResult val = evaluate(model_predictor(res.model), manifest, Split::val, cfg, loader);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(steps);
        rec.val_loss = val.mean_loss;
        rec.val_ssim = val.mean_ssim;
        rec.val_psnr = val.mean_psnr;
        rec.skipped = stream.skipped() + val.skipped;
        rec.secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.report.epochs.push_back(rec);
        if (cfg.on_epoch) cfg.on_epoch(rec);
        write_report();
        checkpoint(epoch);
        write_report();
    }
    return res;
}

}  // namespace raunet
