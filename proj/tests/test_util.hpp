#pragma once

#include <type_traits>
#include <vector>

#include "raunet/ops.hpp"
#include "raunet/random.hpp"
#include "raunet/tensor.hpp"

namespace raunet::testing {

template <class Inputs>
using scalar_of = typename std::decay_t<Inputs>::value_type::value_type;

template <class T = double>
Tensor<T> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<T> t(shape);
    for (T& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

/// Scalar probe mean(out * w) with fixed random weights, so every output
/// element contributes with a distinct coefficient.
template <class U>
Tensor<U> weighted_mean(const Tensor<U>& out, const Tensor<double>& weights) {
    return reduce_mean(mul(out, weights.cast<U>()));
}

}  // namespace raunet::testing
