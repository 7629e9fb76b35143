#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "raunet/random.hpp"
#include "raunet/tensor.hpp"

namespace raunet {

struct GradCheckOptions {
    double eps = 1e-5;
    /// Total number of (input, element) pairs to probe; 0 probes every element.
    std::size_t max_samples = 0;
    std::uint64_t seed = 0;
    /// Central-difference points: 2 gives O(eps^2) truncation, 4 gives O(eps^4).
    int stencil = 2;
};

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t probed = 0;
};

class GradCheckError : public std::domain_error {
public:
    GradCheckError(const std::string& what, std::size_t input, std::size_t index)
        : std::domain_error(what), input_(input), index_(index) {}
    std::size_t input() const { return input_; }
    std::size_t index() const { return index_; }

private:
    std::size_t input_, index_;
};

inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
    return std::abs(analytic - numeric) / denom;
}

/// Compares tape gradients of a scalar function against central differences.
///
/// `f` must be generic over the scalar type: it is called with
/// `std::vector<Tensor<T>>` to obtain tape gradients and with
/// `std::vector<Tensor<Oracle>>` to evaluate the finite differences, so the
/// numeric side of a 32-bit check is computed at 64-bit (or wider).
template <class T, class Oracle = double, class F>
GradCheckResult grad_check(F&& f, const std::vector<Tensor<T>>& inputs, GradCheckOptions opts = {}) {
    std::vector<Tensor<T>> leaves;
    for (const auto& in : inputs) leaves.push_back(in.clone().set_requires_grad(true));
    {
        Tape<T> tape;
        TapeScope<T> scope(tape);
        Tensor<T> loss = f(leaves);
        tape.backward(loss);
    }

    std::vector<Tensor<Oracle>> probe;
    for (const auto& in : inputs) probe.push_back(in.template cast<Oracle>());

    std::vector<std::pair<std::size_t, std::size_t>> sites;
    std::size_t total = 0;
    for (const auto& in : inputs) total += in.size();
    if (opts.max_samples == 0 || opts.max_samples >= total) {
        for (std::size_t i = 0; i < inputs.size(); ++i)
            for (std::size_t k = 0; k < inputs[i].size(); ++k) sites.emplace_back(i, k);
    } else {
        Rng rng(opts.seed);
        std::vector<std::size_t> flat(total);
        for (std::size_t k = 0; k < total; ++k) flat[k] = k;
        for (std::size_t k = 0; k < opts.max_samples; ++k) std::swap(flat[k], flat[k + rng.below(total - k)]);
        flat.resize(opts.max_samples);
        std::sort(flat.begin(), flat.end());
        for (std::size_t k : flat) {
            std::size_t i = 0;
            while (k >= inputs[i].size()) k -= inputs[i++].size();
            sites.emplace_back(i, k);
        }
    }

    auto evaluate = [&](std::size_t i, std::size_t k) {
        const Oracle v = f(probe).item();
        if (!std::isfinite(v)) {
            throw GradCheckError("grad_check: non-finite function value at input " + std::to_string(i) + " element " +
                                     std::to_string(k),
                                 i, k);
        }
        return v;
    };

    if (opts.stencil != 2 && opts.stencil != 4) throw std::invalid_argument("grad_check: stencil must be 2 or 4");
    NoGradScope<Oracle> no_grad;
    GradCheckResult result;
    for (auto [i, k] : sites) {
        auto x = probe[i].data();
        const Oracle saved = x[k];
        const Oracle eps = static_cast<Oracle>(opts.eps);
        auto at = [&](Oracle offset) {
            x[k] = saved + offset;
            return evaluate(i, k);
        };
        Oracle diff;
        if (opts.stencil == 4) {
            diff = (Oracle(8) * (at(eps) - at(-eps)) - (at(2 * eps) - at(-2 * eps))) / (Oracle(12) * eps);
        } else {
            diff = (at(eps) - at(-eps)) / (Oracle(2) * eps);
        }
        x[k] = saved;
        const double numeric = static_cast<double>(diff);
        const auto g = leaves[i].grad();
        const double analytic = g.empty() ? 0.0 : static_cast<double>(g[k]);
        if (!std::isfinite(analytic)) {
            throw GradCheckError("grad_check: non-finite analytic gradient at input " + std::to_string(i) + " element " +
                                     std::to_string(k),
                                 i, k);
        }
        const double err = relative_error(analytic, numeric);
        ++result.probed;
        if (result.probed == 1 || err > result.max_relative_error) {
            result.max_relative_error = err;
            result.worst_input = i;
            result.worst_index = k;
            result.worst_analytic = analytic;
            result.worst_numeric = numeric;
        }
    }
    return result;
}

}  // namespace raunet
