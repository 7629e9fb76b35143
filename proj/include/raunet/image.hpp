#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "raunet/tensor.hpp"

namespace raunet {

// Netpbm codec: P6 for [3,H,W] images, P5 for [1,H,W] maps. 8-bit channels
// map linearly to [0,1]; encoding rounds half up.

class ImageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline std::uint8_t quantize_unit(float v) {
    if (!(v >= 0.0f && v <= 1.0f)) {
        throw std::invalid_argument("save_image: value " + std::to_string(v) + " outside [0,1]");
    }
    return static_cast<std::uint8_t>(std::floor(static_cast<double>(v) * 255.0 + 0.5));
}

inline std::vector<std::uint8_t> encode_pnm(const Tensor<float>& img) {
    if (img.rank() != 3 || (img.dim(0) != 3 && img.dim(0) != 1)) {
        throw std::invalid_argument("encode_pnm: expected [3,H,W] or [1,H,W], got " + shape_str(img.shape()));
    }
    const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    const std::string header = std::string(C == 3 ? "P6" : "P5") + "\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(header.size() + C * H * W);
    auto d = img.data();
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < C; ++c) out.push_back(quantize_unit(d[(c * H + y) * W + x]));
    return out;
}

inline Tensor<float> decode_pnm(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>") {
    std::size_t pos = 0;
    auto fail = [&](const std::string& why) -> ImageError { return ImageError(origin + ": " + why); };
    auto skip_space = [&] {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&](const char* field) {
        skip_space();
        if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw fail(std::string("malformed header field ") + field);
        std::size_t v = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos++] - '0');
            if (v > (1u << 24)) throw fail(std::string("header field ") + field + " too large");
        }
        return v;
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5')) throw fail("not a binary PPM/PGM (P6/P5) file");
    const std::size_t C = bytes[1] == '6' ? 3 : 1;
    pos = 2;
    const std::size_t W = read_int("width");
    const std::size_t H = read_int("height");
    const std::size_t maxval = read_int("maxval");
    if (W == 0 || H == 0) throw fail("zero image extent");
    if (maxval == 0 || maxval > 255) throw fail("unsupported maxval " + std::to_string(maxval) + " (8-bit only)");
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw fail("missing separator after header");
    ++pos;
    if (bytes.size() - pos < C * H * W) {
        throw fail("truncated pixel data: expected " + std::to_string(C * H * W) + " bytes, found " +
                   std::to_string(bytes.size() - pos));
    }
    Tensor<float> img(Shape{C, H, W});
    auto d = img.data();
    const float inv = 1.0f / static_cast<float>(maxval);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x)
            for (std::size_t c = 0; c < C; ++c) d[(c * H + y) * W + x] = static_cast<float>(bytes[pos++]) * inv;
    return img;
}

inline Tensor<float> load_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError(path.string() + ": cannot open image");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_pnm(bytes, path.string());
}

inline void save_image(const Tensor<float>& img, const std::filesystem::path& path) {
    const auto bytes = encode_pnm(img);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ImageError(path.string() + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ImageError(path.string() + ": write failed");
}

namespace detail {

/// Separable resampling weights from `in` samples to `out` samples:
/// box-filter overlap when shrinking, linear interpolation when enlarging.
inline std::vector<std::vector<std::pair<std::size_t, float>>> resample_weights(std::size_t in, std::size_t out) {
    std::vector<std::vector<std::pair<std::size_t, float>>> w(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        if (ratio >= 1.0) {
            const double lo = o * ratio, hi = (o + 1) * ratio;
            for (std::size_t i = static_cast<std::size_t>(lo); i < in && static_cast<double>(i) < hi; ++i) {
                const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
                if (overlap > 0) w[o].emplace_back(i, static_cast<float>(overlap / ratio));
            }
        } else {
            const double centre = std::clamp((o + 0.5) * ratio - 0.5, 0.0, static_cast<double>(in - 1));
            const auto i0 = static_cast<std::size_t>(centre);
            const std::size_t i1 = std::min(i0 + 1, in - 1);
            const float t = static_cast<float>(centre - i0);
            w[o].emplace_back(i0, 1.0f - t);
            if (i1 != i0) w[o].emplace_back(i1, t);
        }
    }
    return w;
}

}  // namespace detail

/// Largest centred square crop, resampled to side x side.
inline Tensor<float> center_crop_resize(const Tensor<float>& img, std::size_t side) {
    if (img.rank() != 3) throw std::invalid_argument("center_crop_resize: expected [C,H,W], got " + shape_str(img.shape()));
    if (side == 0) throw std::invalid_argument("center_crop_resize: side must be positive");
    const std::size_t C = img.dim(0), H = img.dim(1), W = img.dim(2);
    const std::size_t s = std::min(H, W);
    const std::size_t y0 = (H - s) / 2, x0 = (W - s) / 2;
    const auto wy = detail::resample_weights(s, side);
    const auto wx = detail::resample_weights(s, side);
    auto src = img.data();
    std::vector<float> rows(C * side * s, 0.0f);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t oy = 0; oy < side; ++oy)
            for (auto [iy, wgt] : wy[oy])
                for (std::size_t x = 0; x < s; ++x) rows[(c * side + oy) * s + x] += wgt * src[(c * H + y0 + iy) * W + x0 + x];
    Tensor<float> out(Shape{C, side, side});
    auto d = out.data();
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t oy = 0; oy < side; ++oy)
            for (std::size_t ox = 0; ox < side; ++ox) {
                float acc = 0.0f;
                for (auto [ix, wgt] : wx[ox]) acc += wgt * rows[(c * side + oy) * s + ix];
                d[(c * side + oy) * side + ox] = std::clamp(acc, 0.0f, 1.0f);
            }
    return out;
}

}  // namespace raunet
