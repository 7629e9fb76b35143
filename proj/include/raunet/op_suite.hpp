#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "raunet/grad_check.hpp"
#include "raunet/losses.hpp"
#include "raunet/model.hpp"
#include "raunet/ops.hpp"
#include "raunet/random.hpp"

namespace raunet {

// Finite-difference self-checks for every differentiable primitive, shared by
// the CLI and the acceptance binary. Inputs are drawn away from kinks
// (relu/abs near zero, max-pool near-ties) and the reference uses a fourth-order
// central stencil, so truncation stays negligible at a comfortably wide step.

struct OpCheckOptions {
    bool f64 = true;
    /// Scales the backward pass of the checked op by 1.01 to prove the harness can fail.
    bool inject_fault = false;
};

inline double op_threshold(bool f64) { return f64 ? 1e-7 : 1e-3; }
inline constexpr double kModelThreshold = 1e-3;

namespace detail {

template <class T>
Tensor<T> faulty_identity(const Tensor<T>& x) {
    return unary_op(x, [](T v) { return v; }, [](T, T) { return T(1.01); });
}

/// Signed weights with magnitude in [0.5, 1.5] so no output coefficient is near zero.
inline Tensor<double> probe_weights(const Shape& shape, Rng& rng) {
    Tensor<double> w(shape);
    for (double& v : w.data()) v = (rng.below(2) ? 1.0 : -1.0) * rng.uniform(0.5, 1.5);
    return w;
}

inline Tensor<double> uniform(const Shape& shape, Rng& rng, double lo, double hi) {
    Tensor<double> t(shape);
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

/// Magnitudes in [lo, hi] with random sign.
inline Tensor<double> away_from_zero(const Shape& shape, Rng& rng, double lo = 0.1, double hi = 1.0) {
    Tensor<double> t(shape);
    for (double& v : t.data()) v = (rng.below(2) ? 1.0 : -1.0) * rng.uniform(lo, hi);
    return t;
}

/// Shuffled, well-separated values so no pooling window holds a near-tie.
inline Tensor<double> distinct(const Shape& shape, Rng& rng) {
    Tensor<double> t(shape);
    auto d = t.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = -1.0 + 0.02 * static_cast<double>(i) + rng.uniform(0.0, 0.005);
    for (std::size_t i = d.size(); i > 1; --i) std::swap(d[i - 1], d[rng.below(i)]);
    return t;
}

/// Extended precision keeps the reference differences well below 1e-7 even
/// for gradient entries many orders smaller than their neighbours.
using OracleReal = long double;

/// Runs `op` on inputs cast to the requested precision; the scalar probe is mean(out * w).
template <class Op>
GradCheckResult run_probe(Op op, const std::vector<Tensor<double>>& inputs, const Tensor<double>& weights, double eps,
                          const OpCheckOptions& opts) {
    auto f = [&](const auto& xs) {
        using U = typename std::decay_t<decltype(xs)>::value_type::value_type;
        Tensor<U> out = op(xs);
        if (opts.inject_fault) out = faulty_identity(out);
        if (!weights.defined()) return out;
        return reduce_mean(mul(out, weights.cast<U>()));
    };
    GradCheckOptions gc{.eps = eps, .stencil = 4};
    if (opts.f64) return grad_check<double, OracleReal>(f, inputs, gc);
    std::vector<Tensor<float>> narrow;
    for (const auto& x : inputs) narrow.push_back(x.cast<float>());
    return grad_check<float, OracleReal>(f, narrow, gc);
}

}  // namespace detail

struct OpCase {
    std::string name;
    std::function<GradCheckResult(Rng&, const OpCheckOptions&)> draw;
};

inline std::vector<OpCase> op_cases() {
    using detail::away_from_zero;
    using detail::distinct;
    using detail::probe_weights;
    using detail::run_probe;
    using detail::uniform;
    using In = std::vector<Tensor<double>>;
    constexpr double wide = 1e-2;  // exact for ops linear in each element
    constexpr double kink = 1e-4;
    constexpr double smooth = 1e-3;
    std::vector<OpCase> cases;
    auto add_case = [&](std::string name, auto fn) { cases.push_back({std::move(name), fn}); };

    add_case("conv2d", [=](Rng& r, const OpCheckOptions& o) {
        auto w = probe_weights({2, 4, 6, 6}, r);
        return run_probe([](const auto& x) { return conv2d(x[0], x[1], x[2], 1, 1); },
                         In{uniform({2, 3, 6, 6}, r, -1, 1), uniform({4, 3, 3, 3}, r, -1, 1), uniform({4}, r, -1, 1)}, w, wide, o);
    });
    add_case("conv2d_strided", [=](Rng& r, const OpCheckOptions& o) {
        auto w = probe_weights({1, 3, 4, 4}, r);
        return run_probe([](const auto& x) { return conv2d(x[0], x[1], x[2], 2, 0); },
                         In{uniform({1, 5, 8, 8}, r, -1, 1), uniform({3, 5, 2, 2}, r, -1, 1), uniform({3}, r, -1, 1)}, w, wide, o);
    });
    add_case("conv2d_pointwise", [=](Rng& r, const OpCheckOptions& o) {
        auto w = probe_weights({2, 5, 4, 4}, r);
        return run_probe([](const auto& x) { return conv2d(x[0], x[1], x[2]); },
                         In{uniform({2, 6, 4, 4}, r, -1, 1), uniform({5, 6, 1, 1}, r, -1, 1), uniform({5}, r, -1, 1)}, w, wide, o);
    });
    add_case("maxpool2x2", [=](Rng& r, const OpCheckOptions& o) {
        auto w = probe_weights({2, 2, 3, 3}, r);
        return run_probe([](const auto& x) { return maxpool2x2(x[0]); }, In{distinct({2, 2, 6, 6}, r)}, w, kink, o);
    });
    add_case("upsample2x2", [=](Rng& r, const OpCheckOptions& o) {
        auto w = probe_weights({2, 2, 6, 8}, r);
        return run_probe([](const auto& x) { return upsample2x2(x[0]); }, In{uniform({2, 2, 3, 4}, r, -1, 1)}, w, wide, o);
    });
    add_case("subsample2x2", [=](Rng& r, const OpCheckOptions& o) {
        auto w = probe_weights({2, 2, 3, 2}, r);
        return run_probe([](const auto& x) { return subsample2x2(x[0]); }, In{uniform({2, 2, 6, 4}, r, -1, 1)}, w, wide, o);
    });
    add_case("relu", [=](Rng& r, const OpCheckOptions& o) {
        auto w = probe_weights({3, 4, 5}, r);
        return run_probe([](const auto& x) { return relu(x[0]); }, In{away_from_zero({3, 4, 5}, r)}, w, kink, o);
    });
    add_case("sigmoid", [=](Rng& r, const OpCheckOptions& o) {
        auto w = probe_weights({3, 4, 5}, r);
        return run_probe([](const auto& x) { return sigmoid(x[0]); }, In{uniform({3, 4, 5}, r, -4, 4)}, w, smooth, o);
    });
    add_case("abs", [=](Rng& r, const OpCheckOptions& o) {
        auto w = probe_weights({3, 4, 5}, r);
        return run_probe([](const auto& x) { return abs(x[0]); }, In{away_from_zero({3, 4, 5}, r)}, w, kink, o);
    });
    add_case("scale", [=](Rng& r, const OpCheckOptions& o) {
        auto w = probe_weights({4, 5}, r);
        const double k = r.uniform(-2, 2);
        return run_probe([k](const auto& x) { return scale(x[0], static_cast<typename std::decay_t<decltype(x[0])>::value_type>(k)); },
                         In{uniform({4, 5}, r, -1, 1)}, w, wide, o);
    });
    add_case("add_scalar", [=](Rng& r, const OpCheckOptions& o) {
        auto w = probe_weights({4, 5}, r);
        const double k = r.uniform(-2, 2);
        return run_probe(
            [k](const auto& x) { return add_scalar(x[0], static_cast<typename std::decay_t<decltype(x[0])>::value_type>(k)); },
            In{uniform({4, 5}, r, -1, 1)}, w, wide, o);
    });
    add_case("add", [=](Rng& r, const OpCheckOptions& o) {
        auto w = probe_weights({2, 3, 4}, r);
        return run_probe([](const auto& x) { return add(x[0], x[1]); },
                         In{uniform({2, 3, 4}, r, -1, 1), uniform({2, 3, 4}, r, -1, 1)}, w, wide, o);
    });
    add_case("sub", [=](Rng& r, const OpCheckOptions& o) {
        auto w = probe_weights({2, 3, 4}, r);
        return run_probe([](const auto& x) { return sub(x[0], x[1]); },
                         In{uniform({2, 3, 4}, r, -1, 1), uniform({2, 3, 4}, r, -1, 1)}, w, wide, o);
    });
    add_case("mul", [=](Rng& r, const OpCheckOptions& o) {
        auto w = probe_weights({2, 3, 4}, r);
        return run_probe([](const auto& x) { return mul(x[0], x[1]); },
                         In{away_from_zero({2, 3, 4}, r), away_from_zero({2, 3, 4}, r)}, w, wide, o);
    });
    add_case("div", [=](Rng& r, const OpCheckOptions& o) {
        auto w = probe_weights({2, 3, 4}, r);
        return run_probe([](const auto& x) { return div(x[0], x[1]); },
                         In{away_from_zero({2, 3, 4}, r), away_from_zero({2, 3, 4}, r, 0.5, 2.0)}, w, smooth, o);
    });
    add_case("mul_channel_broadcast", [=](Rng& r, const OpCheckOptions& o) {
        auto w = probe_weights({2, 3, 4, 4}, r);
        return run_probe([](const auto& x) { return mul_channel_broadcast(x[0], x[1]); },
                         In{away_from_zero({2, 1, 4, 4}, r), away_from_zero({2, 3, 4, 4}, r)}, w, wide, o);
    });
    add_case("concat_channels", [=](Rng& r, const OpCheckOptions& o) {
        auto w = probe_weights({2, 5, 3, 3}, r);
        return run_probe([](const auto& x) { return concat_channels(x[0], x[1]); },
                         In{uniform({2, 2, 3, 3}, r, -1, 1), uniform({2, 3, 3, 3}, r, -1, 1)}, w, wide, o);
    });
    add_case("slice_channels", [=](Rng& r, const OpCheckOptions& o) {
        auto w = probe_weights({2, 2, 3, 3}, r);
        return run_probe([](const auto& x) { return slice_channels(x[0], 1, 3); }, In{uniform({2, 4, 3, 3}, r, -1, 1)}, w, wide, o);
    });
    add_case("reshape", [=](Rng& r, const OpCheckOptions& o) {
        auto w = probe_weights({6, 4}, r);
        return run_probe([](const auto& x) { return reshape(x[0], Shape{6, 4}); }, In{uniform({2, 3, 4}, r, -1, 1)}, w, wide, o);
    });
    add_case("reduce_mean", [=](Rng& r, const OpCheckOptions& o) {
        return run_probe([](const auto& x) { return reduce_mean(x[0]); }, In{uniform({3, 4, 5}, r, -1, 1)}, Tensor<double>(), wide, o);
    });
    add_case("ssim_valid", [=](Rng& r, const OpCheckOptions& o) {
        return run_probe([](const auto& x) { return ssim(x[0], x[1], SsimParams{}, SsimBorder::valid).mean; },
                         In{uniform({1, 2, 12, 12}, r, 0, 1), uniform({1, 2, 12, 12}, r, 0, 1)}, Tensor<double>(), smooth, o);
    });
    add_case("ssim_same", [=](Rng& r, const OpCheckOptions& o) {
        return run_probe([](const auto& x) { return ssim(x[0], x[1], SsimParams{}, SsimBorder::same).mean; },
                         In{uniform({1, 2, 12, 12}, r, 0, 1), uniform({1, 2, 12, 12}, r, 0, 1)}, Tensor<double>(), smooth, o);
    });
    add_case("ssim_uniform_window", [=](Rng& r, const OpCheckOptions& o) {
        SsimParams p;
        p.window_side = 5;
        p.window_kind = WindowKind::uniform;
        return run_probe([p](const auto& x) { return ssim(x[0], x[1], p, SsimBorder::valid).mean; },
                         In{uniform({2, 1, 8, 8}, r, 0, 1), uniform({2, 1, 8, 8}, r, 0, 1)}, Tensor<double>(), smooth, o);
    });
    add_case("mse_loss", [=](Rng& r, const OpCheckOptions& o) {
        return run_probe([](const auto& x) { return mse_loss(x[0], x[1]); },
                         In{uniform({2, 3, 4, 4}, r, 0, 1), uniform({2, 3, 4, 4}, r, 0, 1)}, Tensor<double>(), wide, o);
    });
    add_case("mae_loss", [=](Rng& r, const OpCheckOptions& o) {
        auto a = uniform({2, 3, 4, 4}, r, 0, 1);
        auto b = a.clone();
        auto d = away_from_zero(a.shape(), r, 0.05, 0.3);
        for (std::size_t i = 0; i < b.size(); ++i) b.data()[i] += d.data()[i];
        return run_probe([](const auto& x) { return mae_loss(x[0], x[1]); }, In{a, b}, Tensor<double>(), kink, o);
    });
    add_case("ssim_l1_loss", [=](Rng& r, const OpCheckOptions& o) {
        auto a = uniform({1, 3, 12, 12}, r, 0, 1);
        auto b = a.clone();
        auto d = away_from_zero(a.shape(), r, 0.05, 0.3);
        for (std::size_t i = 0; i < b.size(); ++i) b.data()[i] += d.data()[i];
        return run_probe([](const auto& x) { return ssim_l1_loss(x[0], x[1]); }, In{a, b}, Tensor<double>(), smooth, o);
    });
    return cases;
}

inline std::vector<std::string> op_case_names() {
    std::vector<std::string> out;
    for (const auto& c : op_cases()) out.push_back(c.name);
    return out;
}

struct OpCheckSummary {
    std::string name;
    double max_relative_error = 0.0;
    std::size_t draws = 0;
};

/// Worst relative error of one op over `draws` independent random draws.
inline OpCheckSummary check_op(const OpCase& c, std::size_t draws, std::uint64_t seed, const OpCheckOptions& opts = {}) {
    OpCheckSummary s{c.name, 0.0, draws};
    for (std::size_t d = 0; d < draws; ++d) {
        Rng rng(mix_seed(mix_seed(seed, hash_string(c.name)), d));
        s.max_relative_error = std::max(s.max_relative_error, c.draw(rng, opts).max_relative_error);
    }
    return s;
}

inline OpCase find_op_case(const std::string& name) {
    for (auto& c : op_cases())
        if (c.name == name) return c;
    std::string known;
    for (const auto& n : op_case_names()) known += (known.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown op '" + name + "' (known: " + known + ")");
}

/// End-to-end check of a small float model: weighted output probe, gradients
/// of a random parameter subsample compared with extended-precision
/// differences. The narrow step keeps the stencil clear of ReLU kinks.
inline GradCheckResult check_model(Variant variant, std::size_t levels, std::size_t side, std::size_t samples,
                                   std::uint64_t seed, bool inject_fault = false) {
    ModelConfig cfg;
    cfg.variant = variant;
    cfg.channels.clear();
    for (std::size_t l = 0; l < levels; ++l) cfg.channels.push_back(std::size_t{4} << l);
    cfg.seed = seed;
    cfg.validate();
    cfg.validate_input(side, side);
    const auto model = build_model<float>(cfg);
    Rng rng(mix_seed(seed, 0x6C0DE));
    const auto x = detail::uniform({1, 3, side, side}, rng, 0, 1);
    const auto w = detail::probe_weights({1, 3, side, side}, rng);
    auto f = [&](const auto& xs) {
        using U = typename std::decay_t<decltype(xs)>::value_type::value_type;
        Model<U> m(cfg, xs);
        Tensor<U> out = model_forward(m, x.cast<U>());
        if (inject_fault) out = detail::faulty_identity(out);
        return reduce_mean(mul(out, w.cast<U>()));
    };
    return grad_check<float, detail::OracleReal>(f, model.tensors(),
                                                 {.eps = 1e-6, .max_samples = samples, .seed = seed, .stencil = 4});
}

}  // namespace raunet
