// SPDX-License-Identifier: MIT
// Width-m two-layer ReLU function approximator
//
//   f(x) = (1/√m) Σᵢ bᵢ · max(0, ϑᵢᵀ x)
//
// with only the first-layer weights ϑ trainable, the output signs bᵢ frozen
// at ±1, and every update followed by Euclidean projection onto the ball
// ‖ϑ − ϑ⁰‖₂ ≤ R around the frozen initialization ϑ⁰. The frozen snapshot
// also defines the linearized model (activation indicators held at ϑ⁰),
// which is exactly linear in the weights. Values are immutable snapshots:
// every operation returns a new value instead of mutating in place, so
// parameters can be shared read-only across concurrent clients.
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "fedrl/errors.hpp"
#include "fedrl/rng.hpp"

namespace fedrl {

/// Parameters of the two-layer ReLU approximator (row-major m×d weights).
struct NetworkParams {
    std::size_t width = 0;            ///< m, number of hidden units
    std::size_t input_dim = 0;        ///< d, input dimension
    std::vector<double> weights;      ///< current ϑ, m×d row-major
    std::vector<double> init_weights; ///< frozen ϑ⁰, m×d row-major
    std::vector<double> output_signs; ///< frozen bᵢ ∈ {−1, +1}
    double radius = 0.0;              ///< projection radius R ≥ 0
};

namespace detail {

inline void check_input(const NetworkParams& net, std::span<const double> x,
                        const char* op) {
    if (x.size() != net.input_dim)
        throw DimensionError(std::string(op) + ": input has dimension " +
                             std::to_string(x.size()) + ", network expects " +
                             std::to_string(net.input_dim));
}

/// ϑᵢᵀx for row i of the given flat m×d matrix.
inline double row_dot(const std::vector<double>& mat, std::size_t d,
                      std::size_t i, std::span<const double> x) {
    double acc = 0.0;
    const std::size_t base = i * d;
    for (std::size_t j = 0; j < d; ++j) acc += mat[base + j] * x[j];
    return acc;
}

} // namespace detail

/// Frobenius distance between the current weights and the frozen snapshot.
inline double distance_from_init(const NetworkParams& net) {
    double acc = 0.0;
    for (std::size_t k = 0; k < net.weights.size(); ++k) {
        const double dlt = net.weights[k] - net.init_weights[k];
        acc += dlt * dlt;
    }
    return std::sqrt(acc);
}

/// Frobenius distance between the current weights of two networks.
inline double param_distance(const NetworkParams& a, const NetworkParams& b) {
    if (a.weights.size() != b.weights.size())
        throw DimensionError("param_distance: mismatched parameter shapes");
    double acc = 0.0;
    for (std::size_t k = 0; k < a.weights.size(); ++k) {
        const double dlt = a.weights[k] - b.weights[k];
        acc += dlt * dlt;
    }
    return std::sqrt(acc);
}

/// Draws a fresh network: weight entries i.i.d. N(0, 1/(d·m)), output signs
/// i.i.d. uniform on {−1, +1}, current weights equal to the snapshot.
inline NetworkParams init_network(std::size_t width, std::size_t input_dim,
                                  double radius, RngStream& rng) {
    if (width == 0 || input_dim == 0)
        throw InvalidArgument("init_network: width and input_dim must be >= 1");
    if (!(radius >= 0.0))
        throw InvalidArgument("init_network: radius must be nonnegative");

    NetworkParams net;
    net.width = width;
    net.input_dim = input_dim;
    net.radius = radius;
    net.init_weights.resize(width * input_dim);
    net.output_signs.resize(width);

    const double stddev =
        1.0 / std::sqrt(static_cast<double>(width) * static_cast<double>(input_dim));
    for (std::size_t i = 0; i < width; ++i) {
        // Each snapshot row must have strictly positive norm; with Gaussian
        // entries a zero row has probability zero, but guard anyway.
        double norm2 = 0.0;
        do {
            norm2 = 0.0;
            for (std::size_t j = 0; j < input_dim; ++j) {
                const double v = rng.normal(0.0, stddev);
                net.init_weights[i * input_dim + j] = v;
                norm2 += v * v;
            }
        } while (norm2 == 0.0);
    }
    for (std::size_t i = 0; i < width; ++i) net.output_signs[i] = rng.rademacher();
    net.weights = net.init_weights;
    return net;
}

/// f(x) = (1/√m) Σᵢ bᵢ · max(0, ϑᵢᵀx). Callers keep ‖x‖₂ ≤ 1.
inline double forward(const NetworkParams& net, std::span<const double> x) {
    detail::check_input(net, x, "forward");
    double acc = 0.0;
    for (std::size_t i = 0; i < net.width; ++i) {
        const double pre = detail::row_dot(net.weights, net.input_dim, i, x);
        if (pre > 0.0) acc += net.output_signs[i] * pre;
    }
    return acc / std::sqrt(static_cast<double>(net.width));
}

/// Linearized model: activation indicators frozen at the snapshot ϑ⁰, so the
/// value is exactly linear in the current weights.
inline double forward_linearized(const NetworkParams& net, std::span<const double> x) {
    detail::check_input(net, x, "forward_linearized");
    double acc = 0.0;
    for (std::size_t i = 0; i < net.width; ++i) {
        const double pre0 = detail::row_dot(net.init_weights, net.input_dim, i, x);
        if (pre0 > 0.0)
            acc += net.output_signs[i] *
                   detail::row_dot(net.weights, net.input_dim, i, x);
    }
    return acc / std::sqrt(static_cast<double>(net.width));
}

/// ∂f/∂ϑ as an m×d row-major matrix: row i is (1/√m)·bᵢ·𝟙{ϑᵢᵀx > 0}·xᵀ.
/// The ReLU subgradient at exactly 0 is taken as 0, matching the indicator.
/// For ‖x‖₂ ≤ 1 the Frobenius norm of the result is at most 1.
inline std::vector<double> gradient(const NetworkParams& net, std::span<const double> x) {
    detail::check_input(net, x, "gradient");
    std::vector<double> grad(net.width * net.input_dim, 0.0);
    const double scale = 1.0 / std::sqrt(static_cast<double>(net.width));
    for (std::size_t i = 0; i < net.width; ++i) {
        const double pre = detail::row_dot(net.weights, net.input_dim, i, x);
        if (pre > 0.0) {
            const double c = scale * net.output_signs[i];
            for (std::size_t j = 0; j < net.input_dim; ++j)
                grad[i * net.input_dim + j] = c * x[j];
        }
    }
    return grad;
}

/// Relative slack on the projection test. Rescaling an out-of-ball point
/// lands within a few ulp of the boundary; accepting that shell makes the
/// projection bitwise idempotent while staying far inside the documented
/// ‖ϑ − ϑ⁰‖₂ ≤ R + 1e−9 contract.
inline constexpr double kProjectionSlack = 1e-12;

/// Euclidean projection onto {ϑ : ‖ϑ − ϑ⁰‖₂ ≤ R}. Points inside the ball
/// (or exactly on its boundary) are returned bit-identically.
inline NetworkParams project_to_ball(NetworkParams net) {
    const double dist = distance_from_init(net);
    if (dist > net.radius * (1.0 + kProjectionSlack)) {
        const double scale = net.radius / dist;
        for (std::size_t k = 0; k < net.weights.size(); ++k)
            net.weights[k] =
                net.init_weights[k] + scale * (net.weights[k] - net.init_weights[k]);
    }
    return net;
}

/// One projected SGD step: ϑ ← Π_ball(ϑ − lr·grad).
inline NetworkParams sgd_step(NetworkParams net, std::span<const double> grad,
                              double lr) {
    if (grad.size() != net.weights.size())
        throw DimensionError("sgd_step: gradient has " + std::to_string(grad.size()) +
                             " entries, expected " + std::to_string(net.weights.size()));
    if (!(lr >= 0.0)) throw InvalidArgument("sgd_step: learning rate must be >= 0");
    for (double g : grad)
        if (!std::isfinite(g))
            throw DivergenceError("sgd_step: non-finite gradient entry");
    if (lr == 0.0) return net;
    for (std::size_t k = 0; k < net.weights.size(); ++k)
        net.weights[k] -= lr * grad[k];
    return project_to_ball(std::move(net));
}

} // namespace fedrl
