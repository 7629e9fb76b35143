#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "raunet/adam.hpp"
#include "raunet/model.hpp"

namespace raunet {

// Binary layout, all integers and reals little-endian:
//   "RAUN" | u32 version
//   config: u32 levels, u32 channels[levels], u32 in, u32 out, u32 variant, u32 kernel, u64 seed
//   u32 tensor count, then per tensor: u32 name length, name, u32 rank, u32 extents[rank], f32 values
//   adam: f64 lr, beta1, beta2, eps, u64 t, u32 moment count, then per moment pair: f32 m[], f32 v[]
//   u64 epoch

inline constexpr char kCheckpointMagic[4] = {'R', 'A', 'U', 'N'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    Model<float> model;
    AdamState<float> adam;
    std::uint64_t epoch = 0;
};

namespace detail {

class ByteWriter {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out.insert(out.end(), b, b + n);
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void size(std::size_t v, const char* what) {
        if (v > 0xFFFFFFFFu) throw CheckpointError(std::string("checkpoint: ") + what + " too large to encode");
        u32(static_cast<std::uint32_t>(v));
    }

    std::vector<std::uint8_t> out;
};

class ByteReader {
public:
    ByteReader(const std::vector<std::uint8_t>& data, std::string origin) : data_(data), origin_(std::move(origin)) {}

    [[noreturn]] void fail(const std::string& field, const std::string& why) const {
        throw CheckpointError(origin_ + ": invalid field '" + field + "' at byte " + std::to_string(pos_) + ": " + why);
    }
    void need(std::size_t n, const std::string& field) const {
        if (data_.size() - pos_ < n) fail(field, "truncated file");
    }
    std::uint32_t u32(const std::string& field) {
        need(4, field);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{data_[pos_++]} << (8 * i);
        return v;
    }
    std::uint64_t u64(const std::string& field) {
        need(8, field);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t{data_[pos_++]} << (8 * i);
        return v;
    }
    float f32(const std::string& field) { return std::bit_cast<float>(u32(field)); }
    double f64(const std::string& field) { return std::bit_cast<double>(u64(field)); }
    std::string str(std::size_t n, const std::string& field) {
        need(n, field);
        std::string s(data_.begin() + static_cast<std::ptrdiff_t>(pos_), data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }
    std::vector<float> f32s(std::size_t n, const std::string& field) {
        need(n * 4, field);
        std::vector<float> v(n);
        for (auto& x : v) x = f32(field);
        return v;
    }
    bool at_end() const { return pos_ == data_.size(); }

private:
    const std::vector<std::uint8_t>& data_;
    std::string origin_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Model<float>& model, const AdamState<float>& adam,
                                                   std::uint64_t epoch) {
    detail::ByteWriter w;
    w.bytes(kCheckpointMagic, 4);
    w.u32(kCheckpointVersion);
    const ModelConfig& cfg = model.config();
    w.size(cfg.levels(), "levels");
    for (std::size_t c : cfg.channels) w.size(c, "channel width");
    w.size(cfg.in_channels, "in_channels");
    w.size(cfg.out_channels, "out_channels");
    w.u32(static_cast<std::uint32_t>(cfg.variant));
    w.size(cfg.conv_kernel, "conv_kernel");
    w.u64(cfg.seed);

    w.size(model.parameters().size(), "tensor count");
    for (const auto& p : model.parameters()) {
        w.size(p.name.size(), "name length");
        w.bytes(p.name.data(), p.name.size());
        w.size(p.tensor.rank(), "rank");
        for (std::size_t e : p.tensor.shape()) w.size(e, "extent");
        for (float v : p.tensor.data()) w.f32(v);
    }

    w.f64(adam.lr);
    w.f64(adam.beta1);
    w.f64(adam.beta2);
    w.f64(adam.eps);
    w.u64(adam.t);
    w.size(adam.m.size(), "moment count");
    if (adam.initialised() && adam.names.size() != model.parameters().size())
        throw CheckpointError("checkpoint: optimizer state does not match the model");
    for (std::size_t i = 0; i < adam.m.size(); ++i) {
        for (float v : adam.m[i]) w.f32(v);
        for (float v : adam.v[i]) w.f32(v);
    }
    w.u64(epoch);
    return std::move(w.out);
}

/// Parses a checkpoint. With `expected`, the stored architecture must match it.
inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>",
                                    const ModelConfig* expected = nullptr) {
    detail::ByteReader r(bytes, origin);
    if (r.str(4, "magic") != std::string(kCheckpointMagic, 4)) r.fail("magic", "not a RAUN checkpoint");
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion)
        r.fail("version", "unsupported version " + std::to_string(version) + " (expected " + std::to_string(kCheckpointVersion) + ")");

    ModelConfig cfg;
    const std::uint32_t levels = r.u32("config.levels");
    if (levels < 3 || levels > 6) r.fail("config.levels", "level count " + std::to_string(levels) + " outside 3..6");
    cfg.channels.clear();
    for (std::uint32_t i = 0; i < levels; ++i) cfg.channels.push_back(r.u32("config.channels"));
    cfg.in_channels = r.u32("config.in_channels");
    cfg.out_channels = r.u32("config.out_channels");
    const std::uint32_t variant = r.u32("config.variant");
    if (variant > static_cast<std::uint32_t>(Variant::residual_attention_unet)) r.fail("config.variant", "unknown variant");
    cfg.variant = static_cast<Variant>(variant);
    cfg.conv_kernel = r.u32("config.conv_kernel");
    cfg.seed = r.u64("config.seed");
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        r.fail("config", e.what());
    }
    if (expected) {
        ModelConfig want = *expected, got = cfg;
        want.seed = got.seed = 0;
        if (!(want == got)) {
            r.fail("config", "checkpoint holds a " + std::to_string(cfg.levels()) + "-level " + std::string(to_string(cfg.variant)) +
                                 " model, but a " + std::to_string(expected->levels()) + "-level " +
                                 std::string(to_string(expected->variant)) + " model was requested");
        }
    }

    const auto layout = parameter_layout(cfg);
    const std::uint32_t count = r.u32("tensor count");
    if (count != layout.size())
        r.fail("tensor count", std::to_string(count) + " tensors, configuration needs " + std::to_string(layout.size()));
    std::vector<Tensor<float>> tensors;
    for (const auto& spec : layout) {
        const std::string field = "tensor " + spec.name;
        const std::uint32_t len = r.u32(field + " name length");
        if (len > 256) r.fail(field + " name length", "implausible length " + std::to_string(len));
        const std::string name = r.str(len, field + " name");
        if (name != spec.name) r.fail(field + " name", "found '" + name + "'");
        const std::uint32_t rank = r.u32(field + " rank");
        if (rank != spec.shape.size()) r.fail(field + " rank", "rank " + std::to_string(rank));
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u32(field + " extents"));
        if (shape != spec.shape) r.fail(field + " extents", "shape " + shape_str(shape) + ", expected " + shape_str(spec.shape));
        tensors.emplace_back(shape, r.f32s(numel(shape), field + " values"));
    }

    AdamState<float> adam;
    adam.lr = r.f64("adam.lr");
    adam.beta1 = r.f64("adam.beta1");
    adam.beta2 = r.f64("adam.beta2");
    adam.eps = r.f64("adam.eps");
    adam.t = r.u64("adam.t");
    const std::uint32_t moments = r.u32("adam.moment count");
    if (moments != 0 && moments != layout.size()) r.fail("adam.moment count", std::to_string(moments));
    for (std::uint32_t i = 0; i < moments; ++i) {
        adam.names.push_back(layout[i].name);
        adam.m.push_back(r.f32s(tensors[i].size(), "adam.m " + layout[i].name));
        adam.v.push_back(r.f32s(tensors[i].size(), "adam.v " + layout[i].name));
    }
    const std::uint64_t epoch = r.u64("epoch");
    if (!r.at_end()) r.fail("epoch", "trailing bytes after checkpoint");
    return Checkpoint{Model<float>(cfg, std::move(tensors)), std::move(adam), epoch};
}

/// Writes atomically: a temporary sibling is renamed over the target.
inline void save_checkpoint(const Model<float>& model, const AdamState<float>& adam, std::uint64_t epoch,
                            const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(model, adam, epoch);
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError(path.string() + ": cannot open for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw CheckpointError(path.string() + ": write failed (disk full?)");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw CheckpointError(path.string() + ": cannot finalise checkpoint: " + ec.message());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(path.string() + ": cannot open checkpoint");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes, path.string(), expected);
}

}  // namespace raunet
