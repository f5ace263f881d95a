#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "pns/tensor.hpp"

namespace testutil {

inline double rel_err(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline std::vector<double> random_values(std::mt19937_64& rng, int64_t n, double lo = -1.0,
                                         double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> out(static_cast<size_t>(n));
    for (auto& v : out) v = dist(rng);
    return out;
}

inline pns::Tensor random_tensor(std::mt19937_64& rng, pns::Shape shape, bool requires_grad = false,
                                 double lo = -1.0, double hi = 1.0) {
    auto vals = random_values(rng, pns::shape_size(shape), lo, hi);
    return pns::Tensor::from_data(std::move(shape), std::move(vals), requires_grad);
}

/// Checks d(loss)/d(input_i) against central differences for every element of
/// every listed input. `build` must rebuild the whole graph from raw input
/// storages and return the scalar loss value.
/// Returns the max relative error observed.
inline double check_gradients(
    const std::function<double(const std::vector<std::vector<double>>&)>& forward,
    std::vector<std::vector<double>> inputs,
    const std::function<std::vector<std::vector<double>>(
        const std::vector<std::vector<double>>&)>& analytic,
    double h = 1e-5) {
    const auto grads = analytic(inputs);
    double worst = 0.0;
    for (size_t which = 0; which < inputs.size(); ++which) {
        auto f = [&](const std::vector<double>& x) {
            auto probe = inputs;
            probe[which] = x;
            return forward(probe);
        };
        const auto fd = pns::finite_diff_grad(f, inputs[which], h);
        for (size_t i = 0; i < fd.size(); ++i)
            worst = std::max(worst, rel_err(grads[which][i], fd[i]));
    }
    return worst;
}

} // namespace testutil
