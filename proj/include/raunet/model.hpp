#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "raunet/ops.hpp"
#include "raunet/random.hpp"
#include "raunet/tensor.hpp"

namespace raunet {

enum class Variant { plain_unet, attention_unet, residual_attention_unet };

inline std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::plain_unet: return "plain_unet";
        case Variant::attention_unet: return "attention_unet";
        case Variant::residual_attention_unet: return "residual_attention_unet";
    }
    return "?";
}

inline Variant parse_variant(std::string_view s) {
    if (s == "plain_unet") return Variant::plain_unet;
    if (s == "attention_unet") return Variant::attention_unet;
    if (s == "residual_attention_unet") return Variant::residual_attention_unet;
    throw std::invalid_argument("unknown variant '" + std::string(s) +
                                "' (expected plain_unet|attention_unet|residual_attention_unet)");
}

struct ModelConfig {
    std::vector<std::size_t> channels{64, 128, 256, 512, 1024};
    std::size_t in_channels = 3;
    std::size_t out_channels = 3;
    Variant variant = Variant::residual_attention_unet;
    std::size_t conv_kernel = 3;
    std::uint64_t seed = 0;

    std::size_t levels() const { return channels.size(); }
    bool residual() const { return variant == Variant::residual_attention_unet; }
    bool attention() const { return variant != Variant::plain_unet; }
    /// Image sides must be multiples of this.
    std::size_t side_multiple() const { return std::size_t{1} << (levels() - 1); }

    void validate() const {
        if (channels.size() < 3 || channels.size() > 6) {
            throw std::invalid_argument("ModelConfig: channels must list 3 to 6 levels, got " +
                                        std::to_string(channels.size()));
        }
        for (std::size_t i = 0; i < channels.size(); ++i) {
            if (channels[i] == 0) throw std::invalid_argument("ModelConfig: channel widths must be positive");
            if (i && channels[i] <= channels[i - 1])
                throw std::invalid_argument("ModelConfig: channels must be strictly increasing");
        }
        if (in_channels == 0 || out_channels == 0) throw std::invalid_argument("ModelConfig: in/out channels must be positive");
        if (conv_kernel == 0 || conv_kernel % 2 == 0)
            throw std::invalid_argument("ModelConfig: conv_kernel must be odd, got " + std::to_string(conv_kernel));
    }

    void validate_input(std::size_t height, std::size_t width) const {
        const std::size_t m = side_multiple();
        if (height == 0 || width == 0 || height % m || width % m) {
            throw std::invalid_argument("image sides " + std::to_string(height) + "x" + std::to_string(width) +
                                        " must be positive multiples of 2^(levels-1) = " + std::to_string(m));
        }
    }

    bool operator==(const ModelConfig&) const = default;
};

struct ParameterSpec {
    std::string name;
    Shape shape;
    std::size_t fan_in;  // 0 marks a bias
    double gain = 2.0;   // He variance gain: 2 ahead of a ReLU, 1 for a linear output
};

namespace detail {

inline void add_conv_spec(std::vector<ParameterSpec>& out, const std::string& prefix, std::size_t cin, std::size_t cout,
                          std::size_t k, double gain = 2.0) {
    out.push_back({prefix + ".weight", {cout, cin, k, k}, cin * k * k, gain});
    out.push_back({prefix + ".bias", {cout}, 0});
}

inline void add_stack_spec(std::vector<ParameterSpec>& out, const std::string& prefix, std::size_t cin, std::size_t cout,
                           const ModelConfig& cfg) {
    add_conv_spec(out, prefix + ".conv1", cin, cout, cfg.conv_kernel);
    add_conv_spec(out, prefix + ".conv2", cout, cout, cfg.conv_kernel);
    if (cfg.residual()) add_conv_spec(out, prefix + ".res", cout + cin, cout, 1, 1.0);
}

}  // namespace detail

/// Ordered parameter layout of a configuration, without allocating weights.
///
/// Encoder level i: enc.i.{conv1,conv2[,res]}. Decoder level i (i < levels-1)
/// takes the gated skip of enc.i concatenated with the up-sampled level i+1
/// feature: dec.i.{gate.{wx,wg,psi},conv1,conv2[,res]}. Final head: 1x1 conv.
inline std::vector<ParameterSpec> parameter_layout(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<ParameterSpec> specs;
    const auto& ch = cfg.channels;
    std::size_t cin = cfg.in_channels;
    for (std::size_t i = 0; i < ch.size(); ++i) {
        detail::add_stack_spec(specs, "enc." + std::to_string(i), cin, ch[i], cfg);
        cin = ch[i];
    }
    for (std::size_t i = ch.size() - 1; i-- > 0;) {
        const std::string prefix = "dec." + std::to_string(i);
        if (cfg.attention()) {
            const std::size_t inter = std::max<std::size_t>(1, ch[i] / 2);
            detail::add_conv_spec(specs, prefix + ".gate.wx", ch[i], inter, 1);
            detail::add_conv_spec(specs, prefix + ".gate.wg", ch[i + 1], inter, 1);
            detail::add_conv_spec(specs, prefix + ".gate.psi", inter, 1, 1, 1.0);
        }
        detail::add_stack_spec(specs, prefix, ch[i] + ch[i + 1], ch[i], cfg);
    }
    detail::add_conv_spec(specs, "head", ch.front(), cfg.out_channels, 1, 1.0);
    return specs;
}

inline std::size_t count_parameters(const ModelConfig& cfg) {
    std::size_t n = 0;
    for (const auto& s : parameter_layout(cfg)) n += numel(s.shape);
    return n;
}

template <class T>
struct NamedParameter {
    std::string name;
    Tensor<T> tensor;
};

template <class T>
class Model {
public:
    /// Adopts `tensors` in parameter_layout order; shapes must match exactly.
    Model(ModelConfig config, std::vector<Tensor<T>> tensors) : config_(std::move(config)) {
        const auto layout = parameter_layout(config_);
        if (tensors.size() != layout.size()) {
            throw std::invalid_argument("Model: expected " + std::to_string(layout.size()) + " parameter tensors, got " +
                                        std::to_string(tensors.size()));
        }
        for (std::size_t i = 0; i < layout.size(); ++i) {
            if (tensors[i].shape() != layout[i].shape) {
                throw std::invalid_argument("Model: parameter " + layout[i].name + " has shape " +
                                            shape_str(tensors[i].shape()) + ", expected " + shape_str(layout[i].shape));
            }
            tensors[i].set_requires_grad(true);
            index_.emplace(layout[i].name, params_.size());
            params_.push_back({layout[i].name, std::move(tensors[i])});
        }
    }

    const ModelConfig& config() const { return config_; }
    const std::vector<NamedParameter<T>>& parameters() const { return params_; }

    bool contains(std::string_view name) const { return index_.find(std::string(name)) != index_.end(); }

    const Tensor<T>& param(std::string_view name) const {
        auto it = index_.find(std::string(name));
        if (it == index_.end()) throw std::out_of_range("Model: no parameter named " + std::string(name));
        return params_[it->second].tensor;
    }

    std::vector<Tensor<T>> tensors() const {
        std::vector<Tensor<T>> out;
        for (const auto& p : params_) out.push_back(p.tensor);
        return out;
    }

    /// Deep copy, converting the element type.
    template <class U>
    Model<U> cast() const {
        std::vector<Tensor<U>> out;
        for (const auto& p : params_) out.push_back(p.tensor.template cast<U>());
        return Model<U>(config_, std::move(out));
    }

    Model clone() const {
        std::vector<Tensor<T>> out;
        for (const auto& p : params_) out.push_back(p.tensor.clone());
        return Model(config_, std::move(out));
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.clear_grad();
    }

private:
    ModelConfig config_;
    std::vector<NamedParameter<T>> params_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

template <class T>
std::size_t count_parameters(const Model<T>& model) {
    std::size_t n = 0;
    for (const auto& p : model.parameters()) n += p.tensor.size();
    return n;
}

/// He-normal weights from the seeded generator (variance gain / fan_in), zero biases.
template <class T = float>
Model<T> build_model(const ModelConfig& config) {
    const auto layout = parameter_layout(config);
    Rng rng(config.seed);
    std::vector<Tensor<T>> tensors;
    for (const auto& spec : layout) {
        Tensor<T> t(spec.shape);
        if (spec.fan_in) {
            const double stddev = std::sqrt(spec.gain / static_cast<double>(spec.fan_in));
            for (T& v : t.data()) v = static_cast<T>(rng.normal() * stddev);
        }
        tensors.push_back(std::move(t));
    }
    return Model<T>(config, std::move(tensors));
}

template <class T>
struct StackParams {
    Tensor<T> conv1_w, conv1_b, conv2_w, conv2_b;
    Tensor<T> res_w, res_b;  // undefined for the plain stack
};

template <class T>
struct GateParams {
    Tensor<T> wx_w, wx_b, wg_w, wg_b, psi_w, psi_b;
};

template <class T>
struct AttentionGateOutput {
    Tensor<T> gated;         // same shape as x
    Tensor<T> coefficients;  // [N,1,Hx,Wx], sigmoid range
};

/// Two same-padded convolutions with ReLU, F. With residual parameters the
/// block input is concatenated onto F along channels and projected back to
/// Cout by a 1x1 convolution, so x reaches the output without passing
/// through the two-convolution path.
template <class T>
Tensor<T> residual_conv_stack(const Tensor<T>& x, const StackParams<T>& p) {
    detail::require_rank(x.shape(), 4, "residual_conv_stack");
    const std::size_t pad1 = (p.conv1_w.dim(2) - 1) / 2;
    const std::size_t pad2 = (p.conv2_w.dim(2) - 1) / 2;
    Tensor<T> f = relu(conv2d(x, p.conv1_w, p.conv1_b, 1, pad1));
    f = relu(conv2d(f, p.conv2_w, p.conv2_b, 1, pad2));
    if (!p.res_w.defined()) return f;
    if (p.res_w.dim(1) != f.dim(1) + x.dim(1)) {
        throw std::invalid_argument("residual_conv_stack: 1x1 projection " + shape_str(p.res_w.shape()) +
                                    " does not accept concat of " + shape_str(f.shape()) + " and " + shape_str(x.shape()));
    }
    return conv2d(concat_channels(f, x), p.res_w, p.res_b);
}

/// Additive attention gate on skip features x using gating signal g at half
/// x's resolution.
template <class T>
AttentionGateOutput<T> attention_gate(const Tensor<T>& x, const Tensor<T>& g, const GateParams<T>& p) {
    detail::require_rank(x.shape(), 4, "attention_gate x");
    detail::require_rank(g.shape(), 4, "attention_gate g");
    if (x.dim(2) != 2 * g.dim(2) || x.dim(3) != 2 * g.dim(3) || x.dim(0) != g.dim(0)) {
        throw std::invalid_argument("attention_gate: gating signal " + shape_str(g.shape()) +
                                    " must have exactly half the spatial extent of " + shape_str(x.shape()));
    }
    const Tensor<T> theta_x = conv2d(subsample2x2(x), p.wx_w, p.wx_b);
    const Tensor<T> phi_g = conv2d(g, p.wg_w, p.wg_b);
    const Tensor<T> a = relu(add(theta_x, phi_g));
    const Tensor<T> small = sigmoid(conv2d(a, p.psi_w, p.psi_b));
    Tensor<T> coefficients = upsample2x2(small);
    Tensor<T> gated = mul_channel_broadcast(coefficients, x);
    return {gated, coefficients};
}

template <class T>
StackParams<T> stack_params(const Model<T>& m, const std::string& prefix) {
    StackParams<T> p{m.param(prefix + ".conv1.weight"), m.param(prefix + ".conv1.bias"),
                     m.param(prefix + ".conv2.weight"), m.param(prefix + ".conv2.bias"), {}, {}};
    if (m.config().residual()) {
        p.res_w = m.param(prefix + ".res.weight");
        p.res_b = m.param(prefix + ".res.bias");
    }
    return p;
}

template <class T>
GateParams<T> gate_params(const Model<T>& m, const std::string& prefix) {
    return {m.param(prefix + ".gate.wx.weight"), m.param(prefix + ".gate.wx.bias"),
            m.param(prefix + ".gate.wg.weight"), m.param(prefix + ".gate.wg.bias"),
            m.param(prefix + ".gate.psi.weight"), m.param(prefix + ".gate.psi.bias")};
}

/// Intermediate results exposed for inspection.
template <class T>
struct ForwardTrace {
    std::vector<Tensor<T>> attention_coefficients;  // indexed by decoder level
};

template <class T>
Tensor<T> model_forward(const Model<T>& model, const Tensor<T>& input, ForwardTrace<T>* trace = nullptr) {
    const ModelConfig& cfg = model.config();
    detail::require_rank(input.shape(), 4, "model_forward");
    if (input.dim(1) != cfg.in_channels) {
        throw std::invalid_argument("model_forward: input " + shape_str(input.shape()) + " must have " +
                                    std::to_string(cfg.in_channels) + " channels");
    }
    cfg.validate_input(input.dim(2), input.dim(3));
    const std::size_t L = cfg.levels();
    if (trace) trace->attention_coefficients.assign(L - 1, Tensor<T>());

    std::vector<Tensor<T>> skips;
    Tensor<T> h = input;
    for (std::size_t i = 0; i + 1 < L; ++i) {
        h = residual_conv_stack(h, stack_params(model, "enc." + std::to_string(i)));
        skips.push_back(h);
        h = maxpool2x2(h);
    }
    h = residual_conv_stack(h, stack_params(model, "enc." + std::to_string(L - 1)));

    for (std::size_t i = L - 1; i-- > 0;) {
        const std::string prefix = "dec." + std::to_string(i);
        Tensor<T> skip = skips[i];
        if (cfg.attention()) {
            auto gate = attention_gate(skip, h, gate_params(model, prefix));
            skip = gate.gated;
            if (trace) trace->attention_coefficients[i] = gate.coefficients;
        }
        h = residual_conv_stack(concat_channels(skip, upsample2x2(h)), stack_params(model, prefix));
    }
    return sigmoid(conv2d(h, model.param("head.weight"), model.param("head.bias")));
}

}  // namespace raunet
