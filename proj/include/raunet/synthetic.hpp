#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "raunet/image.hpp"
#include "raunet/random.hpp"
#include "raunet/tensor.hpp"

namespace raunet {

// Procedural frontal "faces" on a centred crop: background, hair, skin oval,
// neck, eyes, brows, nose, mouth. Used as test fixtures and desk-scale data
// where no photo dataset is present. Every parameter is drawn from the seed.

namespace detail {

using Rgb = std::array<float, 3>;

class Canvas {
public:
    Canvas(std::size_t side) : side_(side), img_(Shape{3, side, side}) {}

    void gradient(Rgb top, Rgb bottom) {
        auto d = img_.data();
        for (std::size_t y = 0; y < side_; ++y) {
            const float t = (y + 0.5f) / side_;
            for (std::size_t c = 0; c < 3; ++c)
                for (std::size_t x = 0; x < side_; ++x) d[(c * side_ + y) * side_ + x] = top[c] + t * (bottom[c] - top[c]);
        }
    }

    /// Anti-aliased ellipse fill; `shade` darkens toward the left and right rims.
    void ellipse(double cx, double cy, double rx, double ry, Rgb col, float opacity = 1.0f, float shade = 0.0f) {
        auto d = img_.data();
        const double px_r = std::min(rx, ry) * side_;
        for (std::size_t y = 0; y < side_; ++y)
            for (std::size_t x = 0; x < side_; ++x) {
                const double u = ((x + 0.5) / side_ - cx) / rx, v = ((y + 0.5) / side_ - cy) / ry;
                const double sd = (1.0 - std::sqrt(u * u + v * v)) * px_r;
                const float a = opacity * static_cast<float>(std::clamp(sd + 0.5, 0.0, 1.0));
                if (a <= 0.0f) continue;
                const float k = 1.0f - shade * static_cast<float>(u * u);
                for (std::size_t c = 0; c < 3; ++c) {
                    float& p = d[(c * side_ + y) * side_ + x];
                    p += a * (std::clamp(col[c] * k, 0.0f, 1.0f) - p);
                }
            }
    }

    void rect(double x0, double y0, double x1, double y1, Rgb col) {
        auto d = img_.data();
        for (std::size_t y = 0; y < side_; ++y)
            for (std::size_t x = 0; x < side_; ++x) {
                const double px = (x + 0.5) / side_, py = (y + 0.5) / side_;
                const double sd = std::min({px - x0, x1 - px, py - y0, y1 - py}) * side_;
                const float a = static_cast<float>(std::clamp(sd + 0.5, 0.0, 1.0));
                if (a <= 0.0f) continue;
                for (std::size_t c = 0; c < 3; ++c) {
                    float& p = d[(c * side_ + y) * side_ + x];
                    p += a * (col[c] - p);
                }
            }
    }

    Tensor<float> take() { return img_; }

private:
    std::size_t side_;
    Tensor<float> img_;
};

inline Rgb lerp(Rgb a, Rgb b, double t) {
    Rgb r;
    for (int c = 0; c < 3; ++c) r[c] = static_cast<float>(a[c] + t * (b[c] - a[c]));
    return r;
}

inline Rgb scaled(Rgb a, float k) {
    for (float& v : a) v = std::clamp(v * k, 0.0f, 1.0f);
    return a;
}

}  // namespace detail

inline Tensor<float> synthetic_face(std::uint64_t seed, std::size_t side) {
    using detail::Rgb;
    Rng rng(mix_seed(seed, 0x5EEDFACEull));
    auto u = [&](double lo, double hi) { return rng.uniform(lo, hi); };
    auto colour = [&] { return Rgb{float(u(0.1, 0.9)), float(u(0.1, 0.9)), float(u(0.1, 0.9))}; };

    detail::Canvas cv(side);
    cv.gradient(colour(), colour());

    const Rgb skin = detail::lerp(Rgb{0.96f, 0.80f, 0.69f}, Rgb{0.36f, 0.22f, 0.14f}, u(0, 1));
    const Rgb hair = detail::lerp(Rgb{0.08f, 0.06f, 0.05f}, Rgb{0.85f, 0.70f, 0.40f}, std::pow(u(0, 1), 2.0));
    const double fx = 0.5 + u(-0.03, 0.03), fy = 0.52 + u(-0.02, 0.02);
    const double rx = u(0.27, 0.33), ry = u(0.36, 0.41);

    cv.ellipse(fx, fy - 0.12, rx + u(0.03, 0.07), ry * u(0.75, 0.9), hair);
    cv.rect(fx - rx * 0.45, fy + ry * 0.6, fx + rx * 0.45, 1.01, detail::scaled(skin, 0.85f));
    cv.ellipse(fx, fy, rx, ry, skin, 1.0f, 0.25f);
    cv.ellipse(fx, fy - ry * u(0.75, 0.95), rx * 0.95, ry * 0.3, hair);

    const double eye_y = fy - ry * u(0.12, 0.22), eye_dx = rx * u(0.36, 0.44);
    const Rgb iris = detail::lerp(Rgb{0.25f, 0.15f, 0.08f}, Rgb{0.30f, 0.50f, 0.70f}, u(0, 1));
    for (double sgn : {-1.0, 1.0}) {
        const double ex = fx + sgn * eye_dx;
        cv.ellipse(ex, eye_y - 0.065, 0.065, 0.014, detail::scaled(hair, 0.8f));
        cv.ellipse(ex, eye_y, 0.055, 0.028, Rgb{0.95f, 0.95f, 0.93f});
        cv.ellipse(ex + u(-0.01, 0.01), eye_y, 0.024, 0.024, iris);
        cv.ellipse(ex, eye_y, 0.011, 0.011, Rgb{0.03f, 0.03f, 0.03f});
    }

    const double nose_y = fy + ry * u(0.12, 0.2);
    cv.ellipse(fx, nose_y, 0.035, 0.085, detail::scaled(skin, 0.88f), 0.8f);
    for (double sgn : {-1.0, 1.0}) cv.ellipse(fx + sgn * 0.022, nose_y + 0.06, 0.012, 0.008, detail::scaled(skin, 0.5f));

    const double mouth_y = fy + ry * u(0.48, 0.56), mouth_w = rx * u(0.3, 0.42);
    const Rgb lips = detail::lerp(skin, Rgb{0.75f, 0.25f, 0.30f}, u(0.4, 0.8));
    cv.ellipse(fx, mouth_y, mouth_w, u(0.022, 0.038), lips);
    cv.ellipse(fx, mouth_y, mouth_w * 0.9, 0.005, detail::scaled(lips, 0.45f));
    for (double sgn : {-1.0, 1.0})
        cv.ellipse(fx + sgn * rx * 0.55, fy + ry * 0.3, 0.06, 0.04, Rgb{0.9f, 0.45f, 0.45f}, float(u(0.0, 0.25)));
    return cv.take();
}

/// Writes `count` faces as face_00000.ppm ... with seeds mix(seed, i).
inline std::vector<std::filesystem::path> write_synthetic_faces(const std::filesystem::path& dir, std::size_t count,
                                                                std::size_t side, std::uint64_t seed) {
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> paths;
    for (std::size_t i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "face_%05zu.ppm", i);
        paths.push_back(dir / name);
        save_image(synthetic_face(mix_seed(seed, i), side), paths.back());
    }
    return paths;
}

}  // namespace raunet
