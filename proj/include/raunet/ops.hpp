#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "raunet/tensor.hpp"

namespace raunet {

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
    if (s.size() != rank) {
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
    }
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

struct ConvGeometry {
    std::size_t channels, height, width;
    std::size_t kernel_h, kernel_w;
    std::size_t stride, pad_h, pad_w;
    std::size_t out_h, out_w;

    std::size_t patch() const { return channels * kernel_h * kernel_w; }
    std::size_t pixels() const { return out_h * out_w; }
    bool is_pointwise() const { return kernel_h == 1 && kernel_w == 1 && stride == 1 && pad_h == 0 && pad_w == 0; }
};

inline std::size_t conv_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad, const char* axis) {
    const std::size_t padded = in + 2 * pad;
    if (padded < k || (padded - k) % stride != 0) {
        throw std::invalid_argument(std::string("conv2d: non-integral output ") + axis + " extent: (" + std::to_string(in) +
                                    " + 2*" + std::to_string(pad) + " - " + std::to_string(k) + ")/" +
                                    std::to_string(stride) + " + 1");
    }
    return (padded - k) / stride + 1;
}

/// Unfolds one image [C,H,W] into columns [C*kh*kw, out_h*out_w].
template <class T>
void im2col(const T* img, const ConvGeometry& g, T* cols) {
    const std::size_t P = g.pixels();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                T* row = cols + ((c * g.kernel_h + ky) * g.kernel_w + kx) * P;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_h);
                    T* dst = row + oy * g.out_w;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
                        std::fill(dst, dst + g.out_w, T(0));
                        continue;
                    }
                    const T* src = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad_w);
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) ? T(0) : src[ix];
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatters columns back, accumulating into img.
template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, T* img) {
    const std::size_t P = g.pixels();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                const T* row = cols + ((c * g.kernel_h + ky) * g.kernel_w + kx) * P;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad_h);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
                    T* dst = img + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    const T* src = row + oy * g.out_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad_w);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) dst[ix] += src[ox];
                    }
                }
            }
        }
    }
}

template <class T, class F, class DF>
Tensor<T> unary_op(const Tensor<T>& x, F f, DF df_from_in_out) {
    Tensor<T> out(x.shape());
    auto xd = x.data();
    auto od = out.data();
    for (std::size_t i = 0; i < xd.size(); ++i) od[i] = f(xd[i]);
    record_if_tracked<T>({x}, out, [x, out, df_from_in_out](const typename Tape<T>::GradContext& ctx) {
        auto gi = ctx.input_grad(0);
        if (gi.empty()) return;
        auto go = ctx.output_grad();
        auto xd = x.data();
        auto od = out.data();
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i] * df_from_in_out(xd[i], od[i]);
    });
    return out;
}

}  // namespace detail

/// 2-D cross-correlation with zero padding and per-channel bias.
/// `bias` may be an undefined Tensor for no bias.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad_h, std::size_t pad_w) {
    detail::require_rank(input.shape(), 4, "conv2d input");
    detail::require_rank(weight.shape(), 4, "conv2d weight");
    if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
    const std::size_t N = input.dim(0), Cin = input.dim(1);
    const std::size_t Cout = weight.dim(0);
    if (weight.dim(1) != Cin) {
        throw std::invalid_argument("conv2d: input " + shape_str(input.shape()) + " has " + std::to_string(Cin) +
                                    " channels but weight " + shape_str(weight.shape()) + " expects " +
                                    std::to_string(weight.dim(1)));
    }
    if (bias.defined() && bias.shape() != Shape{Cout}) {
        throw std::invalid_argument("conv2d: bias " + shape_str(bias.shape()) + " does not match weight " +
                                    shape_str(weight.shape()));
    }
    detail::ConvGeometry g{Cin, input.dim(2), input.dim(3), weight.dim(2), weight.dim(3), stride, pad_h, pad_w, 0, 0};
    g.out_h = detail::conv_extent(g.height, g.kernel_h, stride, pad_h, "height");
    g.out_w = detail::conv_extent(g.width, g.kernel_w, stride, pad_w, "width");

    const std::size_t K = g.patch(), P = g.pixels();
    const std::size_t in_stride = Cin * g.height * g.width;
    Tensor<T> out(Shape{N, Cout, g.out_h, g.out_w});

    using Mat = detail::RowMat<T>;
    using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
    Eigen::Map<const Mat> W(weight.data().data(), Cout, K);
    detail::Buffer<T> cols(g.is_pointwise() ? 0 : K * P);
    for (std::size_t n = 0; n < N; ++n) {
        const T* src = input.data().data() + n * in_stride;
        if (!g.is_pointwise()) detail::im2col(src, g, cols.data());
        Eigen::Map<const Mat> C(g.is_pointwise() ? src : cols.data(), K, P);
        Eigen::Map<Mat> O(out.data().data() + n * Cout * P, Cout, P);
        O.noalias() = W * C;
        if (bias.defined()) O.colwise() += Eigen::Map<const Vec>(bias.data().data(), Cout);
    }

    std::vector<Tensor<T>> inputs{input, weight};
    if (bias.defined()) inputs.push_back(bias);
    detail::record_if_tracked<T>(std::move(inputs), out, [input, weight, g, N, Cout, K, P, in_stride, has_bias = bias.defined()](
                                                             const typename Tape<T>::GradContext& ctx) {
        auto go = ctx.output_grad();
        auto gx = ctx.input_grad(0);
        auto gw = ctx.input_grad(1);
        std::span<T> gb = has_bias ? ctx.input_grad(2) : std::span<T>();
        Eigen::Map<const Mat> W(weight.data().data(), Cout, K);
        detail::Buffer<T> cols(g.is_pointwise() ? 0 : K * P);
        Mat dcols;
        for (std::size_t n = 0; n < N; ++n) {
            Eigen::Map<const Mat> dO(go.data() + n * Cout * P, Cout, P);
            if (!gw.empty()) {
                const T* src = input.data().data() + n * in_stride;
                if (!g.is_pointwise()) detail::im2col(src, g, cols.data());
                Eigen::Map<const Mat> C(g.is_pointwise() ? src : cols.data(), K, P);
                Eigen::Map<Mat>(gw.data(), Cout, K).noalias() += dO * C.transpose();
            }
            if (!gb.empty()) Eigen::Map<Vec>(gb.data(), Cout) += dO.rowwise().sum();
            if (!gx.empty()) {
                if (g.is_pointwise()) {
                    Eigen::Map<Mat>(gx.data() + n * in_stride, K, P).noalias() += W.transpose() * dO;
                } else {
                    dcols.noalias() = W.transpose() * dO;
                    detail::col2im_add(dcols.data(), g, gx.data() + n * in_stride);
                }
            }
        }
    });
    return out;
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride = 1,
                 std::size_t padding = 0) {
    return conv2d(input, weight, bias, stride, padding, padding);
}

/// 2x2 max-pooling with stride 2. Ties resolve to the lowest flat index.
template <class T>
Tensor<T> maxpool2x2(const Tensor<T>& input) {
    detail::require_rank(input.shape(), 4, "maxpool2x2");
    const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (H % 2 || W % 2) throw std::invalid_argument("maxpool2x2: odd spatial extent in " + shape_str(input.shape()));
    const std::size_t Ho = H / 2, Wo = W / 2;
    Tensor<T> out(Shape{N, C, Ho, Wo});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    auto x = input.data();
    auto o = out.data();
    std::size_t k = 0;
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        const std::size_t base = nc * H * W;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
            for (std::size_t ox = 0; ox < Wo; ++ox, ++k) {
                const std::size_t i0 = base + 2 * oy * W + 2 * ox;
                const std::size_t cand[4] = {i0, i0 + 1, i0 + W, i0 + W + 1};
                std::size_t best = cand[0];
                for (int j = 1; j < 4; ++j)
                    if (x[cand[j]] > x[best]) best = cand[j];
                o[k] = x[best];
                (*argmax)[k] = best;
            }
        }
    }
    detail::record_if_tracked<T>({input}, out, [argmax](const typename Tape<T>::GradContext& ctx) {
        auto gi = ctx.input_grad(0);
        if (gi.empty()) return;
        auto go = ctx.output_grad();
        for (std::size_t k = 0; k < go.size(); ++k) gi[(*argmax)[k]] += go[k];
    });
    return out;
}

/// Nearest-neighbour 2x up-sampling.
template <class T>
Tensor<T> upsample2x2(const Tensor<T>& input) {
    detail::require_rank(input.shape(), 4, "upsample2x2");
    const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t Wo = 2 * W;
    Tensor<T> out(Shape{N, C, 2 * H, Wo});
    auto x = input.data();
    auto o = out.data();
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        for (std::size_t y = 0; y < H; ++y) {
            T* r0 = o.data() + (nc * 2 * H + 2 * y) * Wo;
            T* r1 = r0 + Wo;
            const T* src = x.data() + (nc * H + y) * W;
            for (std::size_t xx = 0; xx < W; ++xx) r0[2 * xx] = r0[2 * xx + 1] = r1[2 * xx] = r1[2 * xx + 1] = src[xx];
        }
    }
    detail::record_if_tracked<T>({input}, out, [N, C, H, W](const typename Tape<T>::GradContext& ctx) {
        auto gi = ctx.input_grad(0);
        if (gi.empty()) return;
        auto go = ctx.output_grad();
        const std::size_t Wo = 2 * W;
        for (std::size_t nc = 0; nc < N * C; ++nc) {
            for (std::size_t y = 0; y < H; ++y) {
                const T* r0 = go.data() + (nc * 2 * H + 2 * y) * Wo;
                const T* r1 = r0 + Wo;
                T* dst = gi.data() + (nc * H + y) * W;
                for (std::size_t xx = 0; xx < W; ++xx) dst[xx] += (r0[2 * xx] + r0[2 * xx + 1]) + (r1[2 * xx] + r1[2 * xx + 1]);
            }
        }
    });
    return out;
}

/// Keeps the top-left element of every 2x2 block. Composed with a 1x1
/// convolution this is a stride-2 pointwise projection on even extents.
template <class T>
Tensor<T> subsample2x2(const Tensor<T>& input) {
    detail::require_rank(input.shape(), 4, "subsample2x2");
    const std::size_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (H % 2 || W % 2) throw std::invalid_argument("subsample2x2: odd spatial extent in " + shape_str(input.shape()));
    const std::size_t Ho = H / 2, Wo = W / 2;
    Tensor<T> out(Shape{N, C, Ho, Wo});
    auto x = input.data();
    auto o = out.data();
    for (std::size_t nc = 0; nc < N * C; ++nc)
        for (std::size_t y = 0; y < Ho; ++y)
            for (std::size_t xx = 0; xx < Wo; ++xx) o[(nc * Ho + y) * Wo + xx] = x[(nc * H + 2 * y) * W + 2 * xx];
    detail::record_if_tracked<T>({input}, out, [N, C, H, W](const typename Tape<T>::GradContext& ctx) {
        auto gi = ctx.input_grad(0);
        if (gi.empty()) return;
        auto go = ctx.output_grad();
        const std::size_t Ho = H / 2, Wo = W / 2;
        for (std::size_t nc = 0; nc < N * C; ++nc)
            for (std::size_t y = 0; y < Ho; ++y)
                for (std::size_t xx = 0; xx < Wo; ++xx) gi[(nc * H + 2 * y) * W + 2 * xx] += go[(nc * Ho + y) * Wo + xx];
    });
    return out;
}

enum class Activation { relu, sigmoid };

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return v > T(0) ? v : T(0); }, [](T in, T) { return in > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary_op(
        x,
        [](T v) {
            if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
            const T e = std::exp(v);
            return e / (T(1) + e);
        },
        [](T, T s) { return s * (T(1) - s); });
}

template <class T>
Tensor<T> activation(Activation kind, const Tensor<T>& x) {
    return kind == Activation::relu ? relu(x) : sigmoid(x);
}

/// |x|; the subgradient at 0 is 0.
template <class T>
Tensor<T> abs(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::abs(v); }, [](T in, T) { return in > T(0) ? T(1) : (in < T(0) ? T(-1) : T(0)); });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
    return detail::unary_op(
        x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T offset) {
    return detail::unary_op(
        x, [offset](T v) { return v + offset; }, [](T, T) { return T(1); });
}

/// Concatenation along the channel axis: a fills [0,Ca), b fills [Ca,Ca+Cb).
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_rank(a.shape(), 4, "concat_channels");
    detail::require_rank(b.shape(), 4, "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
        throw std::invalid_argument("concat_channels: batch/spatial mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    }
    const std::size_t N = a.dim(0), HW = a.dim(2) * a.dim(3);
    const std::size_t sa = a.dim(1) * HW, sb = b.dim(1) * HW;
    Tensor<T> out(Shape{N, a.dim(1) + b.dim(1), a.dim(2), a.dim(3)});
    auto o = out.data();
    for (std::size_t n = 0; n < N; ++n) {
        std::copy_n(a.data().data() + n * sa, sa, o.data() + n * (sa + sb));
        std::copy_n(b.data().data() + n * sb, sb, o.data() + n * (sa + sb) + sa);
    }
    detail::record_if_tracked<T>({a, b}, out, [N, sa, sb](const typename Tape<T>::GradContext& ctx) {
        auto go = ctx.output_grad();
        auto ga = ctx.input_grad(0);
        auto gb = ctx.input_grad(1);
        for (std::size_t n = 0; n < N; ++n) {
            const T* src = go.data() + n * (sa + sb);
            if (!ga.empty())
                for (std::size_t i = 0; i < sa; ++i) ga[n * sa + i] += src[i];
            if (!gb.empty())
                for (std::size_t i = 0; i < sb; ++i) gb[n * sb + i] += src[sa + i];
        }
    });
    return out;
}

/// Channels [begin, end) of an NCHW tensor.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end) {
    detail::require_rank(x.shape(), 4, "slice_channels");
    if (begin >= end || end > x.dim(1)) {
        throw std::invalid_argument("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(end) +
                                    ") invalid for " + shape_str(x.shape()));
    }
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    const std::size_t len = (end - begin) * HW;
    Tensor<T> out(Shape{N, end - begin, x.dim(2), x.dim(3)});
    for (std::size_t n = 0; n < N; ++n) std::copy_n(x.data().data() + (n * C + begin) * HW, len, out.data().data() + n * len);
    detail::record_if_tracked<T>({x}, out, [N, C, HW, begin, len](const typename Tape<T>::GradContext& ctx) {
        auto gi = ctx.input_grad(0);
        if (gi.empty()) return;
        auto go = ctx.output_grad();
        for (std::size_t n = 0; n < N; ++n) {
            T* dst = gi.data() + (n * C + begin) * HW;
            for (std::size_t i = 0; i < len; ++i) dst[i] += go[n * len + i];
        }
    });
    return out;
}

/// Same data under a new shape with equal element count.
template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " cannot become " + shape_str(shape));
    }
    Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
    detail::record_if_tracked<T>({x}, out, [](const typename Tape<T>::GradContext& ctx) {
        auto gi = ctx.input_grad(0);
        if (gi.empty()) return;
        auto go = ctx.output_grad();
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
    });
    return out;
}

enum class Elementwise { add, sub, mul, div };

template <class T>
Tensor<T> elementwise(Elementwise kind, const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "elementwise");
    Tensor<T> out(a.shape());
    auto x = a.data();
    auto y = b.data();
    auto o = out.data();
    switch (kind) {
        case Elementwise::add:
            for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
            break;
        case Elementwise::sub:
            for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
            break;
        case Elementwise::mul:
            for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
            break;
        case Elementwise::div:
            for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] / y[i];
            break;
    }
    detail::record_if_tracked<T>({a, b}, out, [kind, a, b, out](const typename Tape<T>::GradContext& ctx) {
        auto go = ctx.output_grad();
        auto ga = ctx.input_grad(0);
        auto gb = ctx.input_grad(1);
        auto x = a.data();
        auto y = b.data();
        const std::size_t n = go.size();
        switch (kind) {
            case Elementwise::add:
                if (!ga.empty())
                    for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
                if (!gb.empty())
                    for (std::size_t i = 0; i < n; ++i) gb[i] += go[i];
                break;
            case Elementwise::sub:
                if (!ga.empty())
                    for (std::size_t i = 0; i < n; ++i) ga[i] += go[i];
                if (!gb.empty())
                    for (std::size_t i = 0; i < n; ++i) gb[i] -= go[i];
                break;
            case Elementwise::mul:
                if (!ga.empty())
                    for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] * y[i];
                if (!gb.empty())
                    for (std::size_t i = 0; i < n; ++i) gb[i] += go[i] * x[i];
                break;
            case Elementwise::div: {
                auto q = out.data();
                if (!ga.empty())
                    for (std::size_t i = 0; i < n; ++i) ga[i] += go[i] / y[i];
                if (!gb.empty())
                    for (std::size_t i = 0; i < n; ++i) gb[i] -= go[i] * q[i] / y[i];
                break;
            }
        }
    });
    return out;
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise(Elementwise::add, a, b);
}
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise(Elementwise::sub, a, b);
}
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise(Elementwise::mul, a, b);
}
template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return elementwise(Elementwise::div, a, b);
}

/// out[n,c,h,w] = coeffs[n,0,h,w] * x[n,c,h,w]. The one explicit broadcast:
/// a single-channel map gating every channel of x.
template <class T>
Tensor<T> mul_channel_broadcast(const Tensor<T>& coeffs, const Tensor<T>& x) {
    detail::require_rank(coeffs.shape(), 4, "mul_channel_broadcast");
    detail::require_rank(x.shape(), 4, "mul_channel_broadcast");
    if (coeffs.dim(1) != 1 || coeffs.dim(0) != x.dim(0) || coeffs.dim(2) != x.dim(2) || coeffs.dim(3) != x.dim(3)) {
        throw std::invalid_argument("mul_channel_broadcast: coefficients " + shape_str(coeffs.shape()) +
                                    " cannot gate " + shape_str(x.shape()));
    }
    const std::size_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor<T> out(x.shape());
    auto a = coeffs.data();
    auto v = x.data();
    auto o = out.data();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < HW; ++i) o[(n * C + c) * HW + i] = a[n * HW + i] * v[(n * C + c) * HW + i];
    detail::record_if_tracked<T>({coeffs, x}, out, [coeffs, x, N, C, HW](const typename Tape<T>::GradContext& ctx) {
        auto go = ctx.output_grad();
        auto ga = ctx.input_grad(0);
        auto gx = ctx.input_grad(1);
        auto a = coeffs.data();
        auto v = x.data();
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < HW; ++i) {
                    const std::size_t k = (n * C + c) * HW + i;
                    if (!ga.empty()) ga[n * HW + i] += go[k] * v[k];
                    if (!gx.empty()) gx[k] += go[k] * a[n * HW + i];
                }
    });
    return out;
}

/// Arithmetic mean as a rank-0 tensor.
template <class T>
Tensor<T> reduce_mean(const Tensor<T>& x) {
    if (x.size() == 0) throw std::invalid_argument("reduce_mean: empty tensor " + shape_str(x.shape()));
    using Acc = std::conditional_t<(sizeof(T) > sizeof(double)), T, double>;
    Acc sum = 0;
    for (T v : x.data()) sum += static_cast<Acc>(v);
    const T inv = T(1) / static_cast<T>(x.size());
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(sum / static_cast<Acc>(x.size())));
    detail::record_if_tracked<T>({x}, out, [inv](const typename Tape<T>::GradContext& ctx) {
        auto gi = ctx.input_grad(0);
        if (gi.empty()) return;
        const T g = ctx.output_grad()[0] * inv;
        for (auto& v : gi) v += g;
    });
    return out;
}

}  // namespace raunet
