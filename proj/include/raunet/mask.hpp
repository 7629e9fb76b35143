#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "raunet/random.hpp"
#include "raunet/tensor.hpp"

namespace raunet {

enum class MaskShape { trapezoid, rounded_polygon, rect_with_earloops };

inline std::string_view to_string(MaskShape s) {
    switch (s) {
        case MaskShape::trapezoid: return "trapezoid";
        case MaskShape::rounded_polygon: return "rounded_polygon";
        case MaskShape::rect_with_earloops: return "rect_with_earloops";
    }
    return "?";
}

inline MaskShape parse_mask_shape(std::string_view s) {
    if (s == "trapezoid") return MaskShape::trapezoid;
    if (s == "rounded_polygon") return MaskShape::rounded_polygon;
    if (s == "rect_with_earloops") return MaskShape::rect_with_earloops;
    throw std::invalid_argument("unknown mask shape '" + std::string(s) +
                                "' (expected trapezoid|rounded_polygon|rect_with_earloops)");
}

struct MaskSpec {
    MaskShape shape_kind = MaskShape::trapezoid;
    std::array<float, 3> color{0.45f, 0.65f, 0.85f};
    double coverage = 0.35;  // vertical extent above the chin line, as a fraction of H
    double jitter = 0.05;    // per-vertex offset bound, as a fraction of the image side
    std::uint64_t seed = 0;

    void validate() const {
        if (!(coverage > 0.1 && coverage < 0.6))
            throw std::invalid_argument("mask coverage must lie in (0.1, 0.6), got " + std::to_string(coverage));
        if (!(jitter >= 0.0 && jitter <= 0.15))
            throw std::invalid_argument("mask jitter must lie in [0, 0.15], got " + std::to_string(jitter));
        for (float c : color)
            if (!(c >= 0.0f && c <= 1.0f)) throw std::invalid_argument("mask color components must lie in [0,1]");
    }
};

struct Point {
    double x, y;
};
using Polygon = std::vector<Point>;

/// Union of polygons in pixel coordinates. Parts touch along edges, so the
/// summed area is exact without jitter and a close bound with it.
struct MaskGeometry {
    std::vector<Polygon> polygons;
};

/// Normalised vertical position of the chin on a centred face crop.
inline constexpr double kChinLine = 0.92;

inline double polygon_area(const Polygon& p) {
    double twice = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const Point& a = p[i];
        const Point& b = p[(i + 1) % p.size()];
        twice += a.x * b.y - b.x * a.y;
    }
    return std::abs(twice) / 2.0;
}

inline double analytic_area(const MaskGeometry& g) {
    double sum = 0.0;
    for (const auto& p : g.polygons) sum += polygon_area(p);
    return sum;
}

namespace detail {

inline double cross(Point o, Point a, Point b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

inline bool segments_cross(Point a, Point b, Point c, Point d) {
    const double d1 = cross(c, d, a), d2 = cross(c, d, b), d3 = cross(a, b, c), d4 = cross(a, b, d);
    return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0)) && d1 != 0 && d2 != 0 && d3 != 0 && d4 != 0;
}

/// Simple (no crossing non-adjacent edges) with non-negligible area.
inline bool well_formed(const Polygon& p, double min_area) {
    if (p.size() < 3 || polygon_area(p) < min_area) return false;
    const std::size_t n = p.size();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 2; j < n; ++j) {
            if (i == 0 && j == n - 1) continue;
            if (segments_cross(p[i], p[(i + 1) % n], p[j], p[(j + 1) % n])) return false;
        }
    return true;
}

/// Template outlines in normalised [0,1]^2 coordinates.
inline std::vector<Polygon> mask_template(MaskShape kind, double coverage) {
    const double bottom = kChinLine, top = kChinLine - coverage, cx = 0.5;
    switch (kind) {
        case MaskShape::trapezoid:
            return {{{cx - 0.31, top}, {cx + 0.31, top}, {cx + 0.18, bottom}, {cx - 0.18, bottom}}};
        case MaskShape::rounded_polygon: {
            // Superellipse |u|^4 + |v|^4 = 1 sampled at 24 vertices.
            Polygon p;
            const double a = 0.30, b = coverage / 2, cy = (top + bottom) / 2;
            for (int i = 0; i < 24; ++i) {
                const double t = 2.0 * std::numbers::pi * i / 24;
                const double c = std::cos(t), s = std::sin(t);
                p.push_back({cx + a * std::copysign(std::sqrt(std::abs(c)), c), cy + b * std::copysign(std::sqrt(std::abs(s)), s)});
            }
            return {p};
        }
        case MaskShape::rect_with_earloops: {
            const double half = 0.27, ear = 0.05, y = top + 0.3 * coverage;
            Polygon body{{cx - half, top}, {cx + half, top}, {cx + half, bottom}, {cx - half, bottom}};
            Polygon left{{ear, y - 0.02}, {cx - half, y - 0.015}, {cx - half, y + 0.015}, {ear, y + 0.01}};
            Polygon right{{cx + half, y - 0.015}, {1.0 - ear, y - 0.02}, {1.0 - ear, y + 0.01}, {cx + half, y + 0.015}};
            return {body, left, right};
        }
    }
    throw std::logic_error("mask_template: unhandled shape");
}

/// Independent jitter offsets per template polygon. Vertices between two
/// controls interpolate around the ring, so dense outlines bend instead of
/// folding; a single control translates thin parts (ear loops) rigidly.
inline std::vector<std::size_t> jitter_controls(MaskShape kind) {
    switch (kind) {
        case MaskShape::trapezoid: return {4};
        case MaskShape::rounded_polygon: return {6};
        case MaskShape::rect_with_earloops: return {4, 1, 1};
    }
    throw std::logic_error("jitter_controls: unhandled shape");
}

}  // namespace detail

/// Mask outline for an H x W image. Vertices shared between polygons move together.
inline MaskGeometry mask_geometry(const MaskSpec& spec, std::size_t height, std::size_t width, double jitter) {
    spec.validate();
    const auto shapes = detail::mask_template(spec.shape_kind, spec.coverage);
    const auto controls = detail::jitter_controls(spec.shape_kind);
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(spec.shape_kind)));
    MaskGeometry g;
    std::vector<std::pair<Point, Point>> moved;  // template vertex -> jittered vertex
    for (std::size_t pi = 0; pi < shapes.size(); ++pi) {
        const Polygon& poly = shapes[pi];
        const std::size_t n = poly.size(), m = controls[pi];
        std::vector<Point> ctrl(m);
        for (auto& c : ctrl) {
            c.x = rng.uniform(-jitter, jitter);
            c.y = rng.uniform(-jitter, jitter);
        }
        Polygon out;
        for (std::size_t i = 0; i < n; ++i) {
            const Point& v = poly[i];
            const double pos = static_cast<double>(i * m) / static_cast<double>(n);
            const auto k = static_cast<std::size_t>(pos);
            const double t = pos - static_cast<double>(k);
            const Point& c0 = ctrl[k % m];
            const Point& c1 = ctrl[(k + 1) % m];
            Point j{v.x + (1 - t) * c0.x + t * c1.x, v.y + (1 - t) * c0.y + t * c1.y};
            bool shared = false;
            for (const auto& [from, to] : moved)
                if (from.x == v.x && from.y == v.y) {
                    j = to;
                    shared = true;
                }
            if (!shared) moved.emplace_back(v, j);
            out.push_back({j.x * static_cast<double>(width), j.y * static_cast<double>(height)});
        }
        g.polygons.push_back(std::move(out));
    }
    return g;
}

inline MaskGeometry mask_geometry(const MaskSpec& spec, std::size_t height, std::size_t width) {
    return mask_geometry(spec, height, width, spec.jitter);
}

/// Binary [1,H,W] map of pixels whose centre lies inside any polygon.
inline Tensor<float> rasterize(const MaskGeometry& g, std::size_t height, std::size_t width) {
    Tensor<float> region(Shape{1, height, width});
    auto d = region.data();
    for (std::size_t y = 0; y < height; ++y) {
        const double py = y + 0.5;
        for (std::size_t x = 0; x < width; ++x) {
            const double px = x + 0.5;
            for (const auto& p : g.polygons) {
                bool inside = false;
                for (std::size_t i = 0, j = p.size() - 1; i < p.size(); j = i++) {
                    if ((p[i].y > py) != (p[j].y > py) &&
                        px < (p[j].x - p[i].x) * (py - p[i].y) / (p[j].y - p[i].y) + p[i].x)
                        inside = !inside;
                }
                if (inside) {
                    d[y * width + x] = 1.0f;
                    break;
                }
            }
        }
    }
    return region;
}

struct MaskedFace {
    Tensor<float> masked;  // [3,H,W]
    Tensor<float> region;  // [1,H,W], 1 where the mask colour was written
    MaskGeometry geometry;
    bool jitter_dropped = false;
};

/// Paints a synthetic face mask over `face`. A jittered outline that is
/// self-intersecting or collapses is regenerated once without jitter.
inline MaskedFace apply_synthetic_mask(const Tensor<float>& face, const MaskSpec& spec) {
    spec.validate();
    if (face.rank() != 3 || face.dim(0) != 3)
        throw std::invalid_argument("apply_synthetic_mask: expected [3,H,W], got " + shape_str(face.shape()));
    for (float v : face.data())
        if (!(v >= 0.0f && v <= 1.0f)) throw std::invalid_argument("apply_synthetic_mask: face values must lie in [0,1]");
    const std::size_t H = face.dim(1), W = face.dim(2);
    const double min_area = 0.002 * static_cast<double>(H * W);

    auto attempt = [&](double jitter) {
        MaskedFace r;
        r.geometry = mask_geometry(spec, H, W, jitter);
        bool ok = true;
        for (const auto& p : r.geometry.polygons) ok = ok && detail::well_formed(p, min_area * 0.01);
        ok = ok && analytic_area(r.geometry) >= min_area;
        if (ok) {
            r.region = rasterize(r.geometry, H, W);
            double count = 0;
            for (float v : r.region.data()) count += v;
            ok = count > 0;
        }
        return std::pair{std::move(r), ok};
    };
    auto [result, ok] = attempt(spec.jitter);
    if (!ok) {
        std::tie(result, ok) = attempt(0.0);
        result.jitter_dropped = true;
        if (!ok) throw std::runtime_error("apply_synthetic_mask: degenerate mask polygon even without jitter");
    }

    result.masked = face.clone();
    auto m = result.masked.data();
    auto r = result.region.data();
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < H * W; ++i)
            if (r[i] != 0.0f) m[c * H * W + i] = spec.color[c];
    return result;
}

}  // namespace raunet
