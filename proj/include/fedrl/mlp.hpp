// SPDX-License-Identifier: MIT
// Optional deeper approximator: a fully-connected ReLU MLP with a scalar
// linear output head, exposed behind the same forward / gradient / projected
// SGD contract as the two-layer network. Intended for benchmark runs that
// want extra capacity; all structural diagnostics operate on the two-layer
// form only.
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "fedrl/errors.hpp"
#include "fedrl/rng.hpp"

namespace fedrl {

/// Parameters of a ReLU MLP, stored as one flat vector (weights then biases,
/// layer by layer) together with a frozen copy of the initialization used as
/// the projection-ball center.
struct MlpParams {
    std::vector<std::size_t> layer_sizes; ///< [d, h₁, …, h_L, 1]
    std::vector<double> params;           ///< current parameters, flattened
    std::vector<double> init_params;      ///< frozen initialization, flattened
    double radius = 0.0;                  ///< projection radius around init
};

namespace detail {

inline std::size_t mlp_param_count(const std::vector<std::size_t>& sizes) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l)
        n += sizes[l] * sizes[l + 1] + sizes[l + 1];
    return n;
}

} // namespace detail

/// Draws a fresh MLP with N(0, 1/fan_in) weights and zero biases.
inline MlpParams mlp_init(std::vector<std::size_t> layer_sizes, double radius,
                          RngStream& rng) {
    if (layer_sizes.size() < 2)
        throw InvalidArgument("mlp_init: need at least input and output layers");
    for (std::size_t s : layer_sizes)
        if (s == 0) throw InvalidArgument("mlp_init: zero-width layer");
    if (layer_sizes.back() != 1)
        throw InvalidArgument("mlp_init: output layer must have width 1");

    MlpParams mlp;
    mlp.layer_sizes = std::move(layer_sizes);
    mlp.radius = radius;
    mlp.init_params.assign(detail::mlp_param_count(mlp.layer_sizes), 0.0);

    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < mlp.layer_sizes.size(); ++l) {
        const std::size_t fan_in = mlp.layer_sizes[l];
        const std::size_t fan_out = mlp.layer_sizes[l + 1];
        const double stddev = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (std::size_t k = 0; k < fan_in * fan_out; ++k)
            mlp.init_params[off + k] = rng.normal(0.0, stddev);
        off += fan_in * fan_out + fan_out; // biases stay zero
    }
    mlp.params = mlp.init_params;
    return mlp;
}

/// Forward pass; optionally records pre-activations and activations for
/// backpropagation (pass nullptr to skip).
inline double mlp_forward(const MlpParams& mlp, std::span<const double> x,
                          std::vector<std::vector<double>>* acts = nullptr) {
    if (x.size() != mlp.layer_sizes.front())
        throw DimensionError("mlp_forward: input dimension mismatch");
    std::vector<double> cur(x.begin(), x.end());
    if (acts) {
        acts->clear();
        acts->push_back(cur);
    }
    std::size_t off = 0;
    const std::size_t layers = mlp.layer_sizes.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t fan_in = mlp.layer_sizes[l];
        const std::size_t fan_out = mlp.layer_sizes[l + 1];
        std::vector<double> nxt(fan_out, 0.0);
        for (std::size_t o = 0; o < fan_out; ++o) {
            double acc = mlp.params[off + fan_in * fan_out + o]; // bias
            for (std::size_t i = 0; i < fan_in; ++i)
                acc += mlp.params[off + o * fan_in + i] * cur[i];
            // Hidden layers use ReLU; the scalar head stays linear.
            nxt[o] = (l + 1 < layers) ? std::max(0.0, acc) : acc;
        }
        off += fan_in * fan_out + fan_out;
        cur = std::move(nxt);
        if (acts) acts->push_back(cur);
    }
    return cur[0];
}

/// Gradient of the scalar output with respect to all parameters (flattened
/// in the same layout as MlpParams::params), computed by backpropagation.
inline std::vector<double> mlp_gradient(const MlpParams& mlp, std::span<const double> x) {
    std::vector<std::vector<double>> acts;
    (void)mlp_forward(mlp, x, &acts);

    std::vector<double> grad(mlp.params.size(), 0.0);
    const std::size_t layers = mlp.layer_sizes.size() - 1;

    // Layer parameter offsets for the backward sweep.
    std::vector<std::size_t> offs(layers, 0);
    for (std::size_t l = 1; l < layers; ++l)
        offs[l] = offs[l - 1] +
                  mlp.layer_sizes[l - 1] * mlp.layer_sizes[l] + mlp.layer_sizes[l];

    std::vector<double> delta{1.0}; // d output / d output
    for (std::size_t l = layers; l-- > 0;) {
        const std::size_t fan_in = mlp.layer_sizes[l];
        const std::size_t fan_out = mlp.layer_sizes[l + 1];
        const std::vector<double>& in = acts[l];
        const std::vector<double>& out = acts[l + 1];

        // ReLU mask for hidden layers (output of this layer), identity head.
        std::vector<double> dpre(fan_out);
        for (std::size_t o = 0; o < fan_out; ++o)
            dpre[o] = (l + 1 < layers && out[o] <= 0.0) ? 0.0 : delta[o];

        for (std::size_t o = 0; o < fan_out; ++o) {
            grad[offs[l] + fan_in * fan_out + o] = dpre[o];
            for (std::size_t i = 0; i < fan_in; ++i)
                grad[offs[l] + o * fan_in + i] = dpre[o] * in[i];
        }

        if (l > 0) {
            std::vector<double> prev(fan_in, 0.0);
            for (std::size_t i = 0; i < fan_in; ++i)
                for (std::size_t o = 0; o < fan_out; ++o)
                    prev[i] += dpre[o] * mlp.params[offs[l] + o * fan_in + i];
            delta = std::move(prev);
        }
    }
    return grad;
}

/// Euclidean projection of the flattened parameters onto the radius-R ball
/// around the flattened initialization.
inline MlpParams mlp_project_to_ball(MlpParams mlp) {
    double acc = 0.0;
    for (std::size_t k = 0; k < mlp.params.size(); ++k) {
        const double dlt = mlp.params[k] - mlp.init_params[k];
        acc += dlt * dlt;
    }
    const double dist = std::sqrt(acc);
    if (dist > mlp.radius * (1.0 + 1e-12)) {
        const double scale = mlp.radius / dist;
        for (std::size_t k = 0; k < mlp.params.size(); ++k)
            mlp.params[k] =
                mlp.init_params[k] + scale * (mlp.params[k] - mlp.init_params[k]);
    }
    return mlp;
}

/// One projected SGD step on the flattened parameters.
inline MlpParams mlp_sgd_step(MlpParams mlp, std::span<const double> grad, double lr) {
    if (grad.size() != mlp.params.size())
        throw DimensionError("mlp_sgd_step: gradient size mismatch");
    if (!(lr >= 0.0)) throw InvalidArgument("mlp_sgd_step: learning rate must be >= 0");
    for (double g : grad)
        if (!std::isfinite(g)) throw DivergenceError("mlp_sgd_step: non-finite gradient");
    if (lr == 0.0) return mlp;
    for (std::size_t k = 0; k < mlp.params.size(); ++k) mlp.params[k] -= lr * grad[k];
    return mlp_project_to_ball(std::move(mlp));
}

} // namespace fedrl
