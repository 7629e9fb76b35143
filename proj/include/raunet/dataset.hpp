#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "raunet/image.hpp"
#include "raunet/mask.hpp"
#include "raunet/random.hpp"
#include "raunet/tensor.hpp"

namespace raunet {

enum class Split { train, val, test };

inline std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

inline Split parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw std::invalid_argument("unknown split '" + std::string(s) + "' (expected train|val|test)");
}

struct ManifestEntry {
    std::string path;
    Split split;
    bool operator==(const ManifestEntry&) const = default;
};

class ManifestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::uint64_t seed = 0;
    std::size_t test_count = 0;
    double val_fraction = 0.2;

    bool operator==(const DatasetManifest&) const = default;

    std::vector<std::string> paths(Split s) const {
        std::vector<std::string> out;
        for (const auto& e : entries)
            if (e.split == s) out.push_back(e.path);
        return out;
    }

    std::size_t count(Split s) const {
        return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [&](const auto& e) { return e.split == s; }));
    }

    std::string serialize() const {
        char frac[64];
        auto res = std::to_chars(frac, frac + sizeof frac, val_fraction);
        std::string out = "# seed=" + std::to_string(seed) + " test=" + std::to_string(test_count) + " val=" +
                          std::string(frac, res.ptr) + "\n";
        for (const auto& e : entries) {
            if (e.path.find_first_of("\t\n") != std::string::npos)
                throw ManifestError("manifest path contains a tab or newline: " + e.path);
            out += std::string(to_string(e.split)) + "\t" + e.path + "\n";
        }
        return out;
    }

    static DatasetManifest parse(std::string_view text) {
        DatasetManifest m;
        std::istringstream in{std::string(text)};
        std::string line;
        if (!std::getline(in, line)) throw ManifestError("manifest: empty input");
        auto field = [&](std::string_view key) -> std::string_view {
            const std::string tag = " " + std::string(key) + "=";
            const auto at = line.find(tag);
            if (line.rfind("#", 0) != 0 || at == std::string::npos) throw ManifestError("manifest header: missing " + std::string(key));
            std::string_view v(line);
            v.remove_prefix(at + tag.size());
            return v.substr(0, v.find(' '));
        };
        auto number = [&](std::string_view key, auto& out) {
            const auto v = field(key);
            auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
            if (ec != std::errc{} || p != v.data() + v.size())
                throw ManifestError("manifest header: bad value for " + std::string(key) + ": '" + std::string(v) + "'");
        };
        number("seed", m.seed);
        number("test", m.test_count);
        number("val", m.val_fraction);
        std::size_t lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) throw ManifestError("manifest line " + std::to_string(lineno) + ": expected <split>\\t<path>");
            try {
                m.entries.push_back({line.substr(tab + 1), parse_split(std::string_view(line).substr(0, tab))});
            } catch (const std::invalid_argument& e) {
                throw ManifestError("manifest line " + std::to_string(lineno) + ": " + e.what());
            }
        }
        if (m.count(Split::test) != m.test_count)
            throw ManifestError("manifest: header declares test=" + std::to_string(m.test_count) + " but lists " +
                                std::to_string(m.count(Split::test)));
        return m;
    }

    void save(const std::filesystem::path& path) const {
        std::ofstream out(path, std::ios::trunc);
        out << serialize();
        if (!out) throw ManifestError(path.string() + ": cannot write manifest");
    }

    static DatasetManifest load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ManifestError(path.string() + ": cannot open manifest");
        std::stringstream ss;
        ss << in.rdbuf();
        return parse(ss.str());
    }
};

/// Sorted .ppm files directly inside `dir`.
inline std::vector<std::string> list_images(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw std::invalid_argument(dir.string() + ": not a directory");
    std::vector<std::string> out;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".ppm") out.push_back(e.path().string());
    std::sort(out.begin(), out.end());
    return out;
}

/// Seeded shuffle; the first test_count go to test, round(val_fraction * rest)
/// of the remainder to val, the rest to train. Input order does not matter.
inline DatasetManifest split_dataset(std::vector<std::string> paths, std::size_t test_count, double val_fraction,
                                     std::uint64_t seed) {
    if (paths.size() <= test_count)
        throw std::invalid_argument("split_dataset: " + std::to_string(paths.size()) + " paths cannot hold a test split of " +
                                    std::to_string(test_count));
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw std::invalid_argument("split_dataset: val_fraction must lie in [0,1)");
    std::sort(paths.begin(), paths.end());
    if (std::adjacent_find(paths.begin(), paths.end()) != paths.end())
        throw std::invalid_argument("split_dataset: duplicate path in input");
    Rng rng(seed);
    for (std::size_t i = paths.size(); i > 1; --i) std::swap(paths[i - 1], paths[rng.below(i)]);

    const std::size_t rest = paths.size() - test_count;
    const auto val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(rest)));
    DatasetManifest m;
    m.seed = seed;
    m.test_count = test_count;
    m.val_fraction = val_fraction;
    for (std::size_t i = 0; i < paths.size(); ++i) {
        const Split s = i < test_count ? Split::test : i < test_count + val ? Split::val : Split::train;
        m.entries.push_back({paths[i], s});
    }
    return m;
}

struct SampleBatch {
    Tensor<float> masked;  // [B,3,H,W]
    Tensor<float> truth;   // [B,3,H,W]
    Tensor<float> region;  // [B,1,H,W]
    std::vector<std::string> ids;
    std::size_t size() const { return ids.size(); }
};

struct BatchOptions {
    std::size_t batch_size = 8;
    std::size_t image_side = 64;
    MaskSpec mask;
    std::uint64_t epoch_seed = 0;
    bool shuffle = false;
    /// Masks depend only on (mask.seed, entry id), not the epoch.
    bool fixed_masks = false;
    bool prefetch = true;
    std::size_t queue_capacity = 2;
    std::function<void(const std::string&)> on_warning = [](const std::string& msg) { std::cerr << "warning: " << msg << "\n"; };

    void validate() const {
        if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
        if (image_side == 0) throw std::invalid_argument("image_side must be positive");
        if (queue_capacity < 2) throw std::invalid_argument("prefetch queue capacity must be >= 2");
        mask.validate();
    }
};

using ImageLoader = std::function<Tensor<float>(const std::string&)>;

inline Tensor<float> load_rgb(const std::string& path) {
    Tensor<float> img = load_image(path);
    if (img.dim(0) == 3) return img;
    const std::size_t plane = img.dim(1) * img.dim(2);
    Tensor<float> rgb(Shape{3, img.dim(1), img.dim(2)});
    for (std::size_t c = 0; c < 3; ++c) std::copy(img.data().begin(), img.data().end(), rgb.data().begin() + c * plane);
    return rgb;
}

/// Seed of the mask painted on entry `id`. Only the file name is hashed, so a
/// dataset gets the same masks wherever it is stored.
inline std::uint64_t mask_seed_for(const BatchOptions& o, std::string_view id) {
    const std::uint64_t base = o.fixed_masks ? o.mask.seed : mix_seed(o.mask.seed, o.epoch_seed);
    return mix_seed(base, hash_string(std::filesystem::path(id).filename().string()));
}

/// Stream of masked/truth batches over a list of entries.
///
/// With prefetch on, a worker thread builds batches ahead into a bounded
/// queue. Batch content depends only on the options, never on timing.
class BatchStream {
public:
    BatchStream(std::vector<std::string> ids, BatchOptions opts, ImageLoader loader = load_rgb)
        : ids_(std::move(ids)), opts_(std::move(opts)), loader_(std::move(loader)) {
        opts_.validate();
        if (opts_.shuffle) {
            Rng rng(mix_seed(opts_.epoch_seed, 0x5A0FF1Eull));
            for (std::size_t i = ids_.size(); i > 1; --i) std::swap(ids_[i - 1], ids_[rng.below(i)]);
        }
        if (opts_.prefetch) worker_ = std::thread([this] { run(); });
    }

    BatchStream(const BatchStream&) = delete;
    BatchStream& operator=(const BatchStream&) = delete;

    ~BatchStream() {
        {
            std::lock_guard lock(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        if (worker_.joinable()) worker_.join();
    }

    /// Next batch, or nullopt once every entry has been consumed.
    std::optional<SampleBatch> next() {
        if (!opts_.prefetch) return build();
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return !queue_.empty() || done_; });
        if (queue_.empty()) {
            if (error_) std::rethrow_exception(error_);
            return std::nullopt;
        }
        SampleBatch b = std::move(queue_.front());
        queue_.pop_front();
        cv_.notify_all();
        return b;
    }

    /// Entries skipped so far because they could not be read.
    std::size_t skipped() const { return skipped_.load(); }
    const std::vector<std::string>& order() const { return ids_; }

private:
    std::optional<SampleBatch> build() {
        const std::size_t side = opts_.image_side;
        std::vector<Tensor<float>> masked, truth, region;
        SampleBatch batch;
        while (cursor_ < ids_.size() && batch.ids.size() < opts_.batch_size) {
            const std::string& id = ids_[cursor_++];
            Tensor<float> face;
            try {
                face = center_crop_resize(loader_(id), side);
            } catch (const std::exception& e) {
                ++skipped_;
                if (opts_.on_warning) opts_.on_warning("skipping unreadable entry " + id + ": " + e.what());
                continue;
            }
            MaskSpec spec = opts_.mask;
            spec.seed = mask_seed_for(opts_, id);
            MaskedFace mf = apply_synthetic_mask(face, spec);
            truth.push_back(face);
            masked.push_back(mf.masked);
            region.push_back(mf.region);
            batch.ids.push_back(id);
        }
        if (batch.ids.empty()) return std::nullopt;
        auto stack = [&](const std::vector<Tensor<float>>& parts, std::size_t channels) {
            Tensor<float> out(Shape{parts.size(), channels, side, side});
            auto d = out.data();
            for (std::size_t i = 0; i < parts.size(); ++i)
                std::copy(parts[i].data().begin(), parts[i].data().end(), d.begin() + i * channels * side * side);
            return out;
        };
        batch.masked = stack(masked, 3);
        batch.truth = stack(truth, 3);
        batch.region = stack(region, 1);
        return batch;
    }

    void run() {
        try {
            while (true) {
                auto b = build();
                std::unique_lock lock(mu_);
                if (!b) break;
                cv_.wait(lock, [&] { return queue_.size() < opts_.queue_capacity || stop_; });
                if (stop_) break;
                queue_.push_back(std::move(*b));
                cv_.notify_all();
            }
        } catch (...) {
            std::lock_guard lock(mu_);
            error_ = std::current_exception();
        }
        std::lock_guard lock(mu_);
        done_ = true;
        cv_.notify_all();
    }

    std::vector<std::string> ids_;
    BatchOptions opts_;
    ImageLoader loader_;
    std::size_t cursor_ = 0;
    std::atomic<std::size_t> skipped_{0};

    std::thread worker_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<SampleBatch> queue_;
    bool done_ = false;
    bool stop_ = false;
    std::exception_ptr error_;
};

inline std::unique_ptr<BatchStream> make_batches(const DatasetManifest& manifest, Split split, BatchOptions opts,
                                                 ImageLoader loader = load_rgb) {
    return std::make_unique<BatchStream>(manifest.paths(split), std::move(opts), std::move(loader));
}

}  // namespace raunet
