#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "raunet/ops.hpp"
#include "raunet/tensor.hpp"

namespace raunet {

enum class WindowKind { uniform, gaussian };
enum class SsimBorder { valid, same };

inline std::string_view to_string(WindowKind k) { return k == WindowKind::uniform ? "uniform" : "gaussian"; }
inline WindowKind parse_window_kind(std::string_view s) {
    if (s == "uniform") return WindowKind::uniform;
    if (s == "gaussian") return WindowKind::gaussian;
    throw std::invalid_argument("unknown SSIM window kind '" + std::string(s) + "' (expected uniform|gaussian)");
}

struct SsimParams {
    std::size_t window_side = 11;
    WindowKind window_kind = WindowKind::gaussian;
    double sigma = 1.5;
    double dynamic_range = 1.0;

    double c1() const { return (0.01 * dynamic_range) * (0.01 * dynamic_range); }
    double c2() const { return (0.03 * dynamic_range) * (0.03 * dynamic_range); }

    void validate() const {
        if (window_side == 0 || window_side % 2 == 0)
            throw std::invalid_argument("SSIM window side must be odd and positive, got " + std::to_string(window_side));
        if (!(sigma > 0.0)) throw std::invalid_argument("SSIM gaussian sigma must be positive");
        if (!(dynamic_range > 0.0)) throw std::invalid_argument("SSIM dynamic range must be positive");
    }

    /// Normalised 1-D profile; the 2-D window is its outer product.
    std::vector<double> window_1d() const {
        validate();
        std::vector<double> w(window_side, 1.0);
        if (window_kind == WindowKind::gaussian) {
            const double centre = static_cast<double>(window_side / 2);
            for (std::size_t i = 0; i < window_side; ++i) {
                const double d = static_cast<double>(i) - centre;
                w[i] = std::exp(-(d * d) / (2.0 * sigma * sigma));
            }
        }
        double sum = 0.0;
        for (double v : w) sum += v;
        for (double& v : w) v /= sum;
        return w;
    }
};

template <class T>
struct SsimResult {
    Tensor<T> mean;  // rank-0
    Tensor<T> map;   // [N,C,H',W']
};

/// Windowed SSIM of two NCHW (or CHW) images, differentiable through the tape.
///
/// `valid` evaluates only windows fully inside the image; `same` zero-pads
/// so the map keeps the input extent.
template <class T>
SsimResult<T> ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimParams& params = {},
                   SsimBorder border = SsimBorder::valid) {
    detail::require_same_shape(a.shape(), b.shape(), "ssim");
    Shape s = a.shape();
    if (s.size() == 3) s.insert(s.begin(), 1);
    detail::require_rank(s, 4, "ssim");
    const std::size_t N = s[0], C = s[1], H = s[2], W = s[3];
    const std::size_t k = params.window_side;
    params.validate();
    if (k > H || k > W) {
        throw std::invalid_argument("ssim: window " + std::to_string(k) + " larger than image " + shape_str(a.shape()));
    }

    const auto profile = params.window_1d();
    std::vector<T> taps(profile.begin(), profile.end());
    const Tensor<T> wh(Shape{1, 1, 1, k}, taps);
    const Tensor<T> wv(Shape{1, 1, k, 1}, taps);
    const std::size_t pad = border == SsimBorder::same ? k / 2 : 0;
    auto filter = [&](const Tensor<T>& t) { return conv2d(conv2d(t, wh, Tensor<T>(), 1, 0, pad), wv, Tensor<T>(), 1, pad, 0); };

    const Tensor<T> x = reshape(a, {N * C, 1, H, W});
    const Tensor<T> y = reshape(b, {N * C, 1, H, W});
    const Tensor<T> mu_x = filter(x);
    const Tensor<T> mu_y = filter(y);
    const Tensor<T> mu_xy = mul(mu_x, mu_y);
    const Tensor<T> mu_xx = mul(mu_x, mu_x);
    const Tensor<T> mu_yy = mul(mu_y, mu_y);
    const Tensor<T> s_xx = sub(filter(mul(x, x)), mu_xx);
    const Tensor<T> s_yy = sub(filter(mul(y, y)), mu_yy);
    const Tensor<T> s_xy = sub(filter(mul(x, y)), mu_xy);

    const T c1 = static_cast<T>(params.c1());
    const T c2 = static_cast<T>(params.c2());
    const Tensor<T> num = mul(add_scalar(scale(mu_xy, T(2)), c1), add_scalar(scale(s_xy, T(2)), c2));
    const Tensor<T> den = mul(add_scalar(add(mu_xx, mu_yy), c1), add_scalar(add(s_xx, s_yy), c2));
    Tensor<T> map = div(num, den);
    map = reshape(map, {N, C, map.dim(2), map.dim(3)});
    Tensor<T> mean = reduce_mean(map);
    return {mean, map};
}

/// Mean SSIM as a plain number, no recording.
template <class T>
double ssim_value(const Tensor<T>& a, const Tensor<T>& b, const SsimParams& params = {},
                  SsimBorder border = SsimBorder::valid) {
    NoGradScope<T> no_grad;
    return static_cast<double>(ssim(a, b, params, border).mean.item());
}

enum class LossKind { ssim_l1, mse, mae };

inline std::string_view to_string(LossKind k) {
    switch (k) {
        case LossKind::ssim_l1: return "ssim_l1";
        case LossKind::mse: return "mse";
        case LossKind::mae: return "mae";
    }
    return "?";
}
inline LossKind parse_loss_kind(std::string_view s) {
    if (s == "ssim_l1") return LossKind::ssim_l1;
    if (s == "mse") return LossKind::mse;
    if (s == "mae") return LossKind::mae;
    throw std::invalid_argument("unknown loss '" + std::string(s) + "' (expected ssim_l1|mse|mae)");
}

struct LossConfig {
    LossKind kind = LossKind::ssim_l1;
    double l1_weight = 1.0;

    void validate() const {
        if (!(l1_weight >= 0.0)) throw std::invalid_argument("l1_weight must be >= 0");
    }
};

template <class T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    detail::require_same_shape(pred.shape(), target.shape(), "mse_loss");
    const Tensor<T> d = sub(pred, target);
    return reduce_mean(mul(d, d));
}

template <class T>
Tensor<T> mae_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    detail::require_same_shape(pred.shape(), target.shape(), "mae_loss");
    return reduce_mean(abs(sub(pred, target)));
}

/// (1 - mean SSIM) + l1_weight * mean|pred - target|, SSIM over same-padded windows.
template <class T>
Tensor<T> ssim_l1_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossConfig& config = {},
                       const SsimParams& params = {}) {
    config.validate();
    const Tensor<T> structural = add_scalar(scale(ssim(pred, target, params, SsimBorder::same).mean, T(-1)), T(1));
    if (config.l1_weight == 0.0) return structural;
    return add(structural, scale(mae_loss(pred, target), static_cast<T>(config.l1_weight)));
}

template <class T>
Tensor<T> compute_loss(const Tensor<T>& pred, const Tensor<T>& target, const LossConfig& config,
                       const SsimParams& params = {}) {
    switch (config.kind) {
        case LossKind::ssim_l1: return ssim_l1_loss(pred, target, config, params);
        case LossKind::mse: return mse_loss(pred, target);
        case LossKind::mae: return mae_loss(pred, target);
    }
    throw std::logic_error("compute_loss: unhandled loss kind");
}

inline double psnr_from_mse(double mse, double max_val = 1.0) {
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(max_val * max_val / mse);
}

/// Peak signal-to-noise ratio in dB; +infinity when the images are identical.
template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double max_val = 1.0) {
    detail::require_same_shape(a.shape(), b.shape(), "psnr");
    if (!(max_val > 0.0)) throw std::invalid_argument("psnr: max_val must be positive");
    if (a.size() == 0) throw std::invalid_argument("psnr: empty images");
    double acc = 0.0;
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
        acc += d * d;
    }
    return psnr_from_mse(acc / static_cast<double>(x.size()), max_val);
}

}  // namespace raunet
