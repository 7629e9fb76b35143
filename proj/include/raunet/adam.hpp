#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "raunet/model.hpp"
#include "raunet/tensor.hpp"

namespace raunet {

/// Bias-corrected Adam moments, stored in parameter order.
template <class T>
struct AdamState {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t t = 0;
    std::vector<std::string> names;
    std::vector<std::vector<T>> m, v;

    bool initialised() const { return !names.empty(); }
    bool operator==(const AdamState&) const = default;

    void validate() const {
        if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("Adam: lr must be positive and finite");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
            throw std::invalid_argument("Adam: betas must lie in [0,1)");
        if (!(eps > 0.0)) throw std::invalid_argument("Adam: eps must be positive");
    }
};

/// One Adam update of every parameter from its accumulated gradient, then zeroes the gradients.
template <class T>
void adam_step(const std::vector<NamedParameter<T>>& params, AdamState<T>& state) {
    state.validate();
    for (const auto& p : params)
        if (!p.tensor.has_grad()) throw std::invalid_argument("adam_step: parameter " + p.name + " has no gradient");

    if (!state.initialised()) {
        for (const auto& p : params) {
            state.names.push_back(p.name);
            state.m.emplace_back(p.tensor.size(), T(0));
            state.v.emplace_back(p.tensor.size(), T(0));
        }
    }
    if (state.names.size() != params.size())
        throw std::invalid_argument("adam_step: state tracks " + std::to_string(state.names.size()) + " parameters, got " +
                                    std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.names[i] != params[i].name || state.m[i].size() != params[i].tensor.size())
            throw std::invalid_argument("adam_step: state does not match parameter " + params[i].name);
    }

    ++state.t;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
    const T step = static_cast<T>(state.lr / c1);
    const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
    const T eps = static_cast<T>(state.eps);

    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T> w = params[i].tensor;
        auto data = w.data();
        auto g = w.mutable_grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t k = 0; k < data.size(); ++k) {
            m[k] = b1 * m[k] + (T(1) - b1) * g[k];
            v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
            data[k] -= step * m[k] / (std::sqrt(v[k]) * inv_sqrt_c2 + eps);
        }
        w.zero_grad();
    }
}

template <class T>
void adam_step(Model<T>& model, AdamState<T>& state) {
    adam_step(model.parameters(), state);
}

}  // namespace raunet
