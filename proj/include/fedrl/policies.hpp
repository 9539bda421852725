// SPDX-License-Identifier: MIT
// Stochastic policies on top of the two-layer approximator:
//
//   * Softmax with temperature τ over a finite action set, using the network
//     value f(s,a) as the energy of action a,
//   * Gaussian with mean f(s) and scheduled standard deviation σ_t,
//
// plus log-probabilities, sampling, KL divergences, the stepwise log-ratio
// diagnostic, and the τ/β/σ schedules used during training. The softmax
// network input is the concatenation [state ⊕ action encoding]; the Gaussian
// mean network consumes the state encoding alone.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "fedrl/errors.hpp"
#include "fedrl/network.hpp"
#include "fedrl/rng.hpp"

namespace fedrl {

/// Discrete policy: π(a|s) ∝ exp(τ⁻¹·f(s,a)).
struct SoftmaxPolicy {
    NetworkParams net;                            ///< energy network over (s,a)
    std::vector<std::vector<double>> action_set;  ///< per-action encodings
    double temperature = 1.0;                     ///< τ > 0
};

/// Continuous policy: a|s ~ N(f(s), σ²), scalar action.
struct GaussianPolicy {
    NetworkParams net;     ///< mean network over s
    double stddev = 1.0;   ///< σ > 0
};

/// Training schedules: τ_t = β·T²/(t+1) (strictly decreasing),
/// β_t = β·√T (constant in t), σ_t = σ₀·ρᵗ (strictly decreasing for ρ < 1).
struct ScheduleSet {
    double beta_base = 1.0;      ///< β > 0
    std::size_t horizon = 1;     ///< T ≥ 1 (number of rounds)
    double sigma0 = 1.0;         ///< σ₀ > 0
    double sigma_decay = 0.995;  ///< ρ ∈ (0, 1)

    void validate() const {
        if (!(beta_base > 0.0)) throw InvalidArgument("ScheduleSet: beta_base must be > 0");
        if (horizon == 0) throw InvalidArgument("ScheduleSet: horizon must be >= 1");
        if (!(sigma0 > 0.0)) throw InvalidArgument("ScheduleSet: sigma0 must be > 0");
        if (!(sigma_decay > 0.0 && sigma_decay < 1.0))
            throw InvalidArgument("ScheduleSet: sigma_decay must lie in (0, 1)");
    }

    double tau_of(std::size_t t) const {
        const double T = static_cast<double>(horizon);
        return beta_base * T * T / static_cast<double>(t + 1);
    }
    double beta_of(std::size_t /*t*/) const {
        return beta_base * std::sqrt(static_cast<double>(horizon));
    }
    double sigma_of(std::size_t t) const {
        return sigma0 * std::pow(sigma_decay, static_cast<double>(t));
    }
};

/// The β making β_t = β√T equal to 2√((5R² + 6)/log|𝒜|), the constant that
/// balances the penalty and progress terms in the convergence analysis.
inline double optimal_beta_base(double actor_radius, std::size_t action_count,
                                std::size_t horizon) {
    if (action_count < 2)
        throw InvalidArgument("optimal_beta_base: need at least two actions");
    if (horizon == 0) throw InvalidArgument("optimal_beta_base: horizon must be >= 1");
    const double r2 = actor_radius * actor_radius;
    const double num = 2.0 * std::sqrt((5.0 * r2 + 6.0) /
                                       std::log(static_cast<double>(action_count)));
    return num / std::sqrt(static_cast<double>(horizon));
}

/// Max-shifted log-sum-exp; finite for any finite input.
inline double log_sum_exp(std::span<const double> xs) {
    if (xs.empty()) throw InvalidArgument("log_sum_exp: empty input");
    const double mx = *std::max_element(xs.begin(), xs.end());
    double acc = 0.0;
    for (double x : xs) acc += std::exp(x - mx);
    return mx + std::log(acc);
}

namespace detail {

inline std::vector<double> concat_input(std::span<const double> state,
                                        std::span<const double> action_enc) {
    std::vector<double> input;
    input.reserve(state.size() + action_enc.size());
    input.insert(input.end(), state.begin(), state.end());
    input.insert(input.end(), action_enc.begin(), action_enc.end());
    return input;
}

} // namespace detail

/// Per-action energies f(s,a) at the given (encoded) state.
inline std::vector<double> softmax_energies(const SoftmaxPolicy& policy,
                                            std::span<const double> state) {
    if (policy.action_set.empty())
        throw InvalidArgument("softmax policy has an empty action set");
    std::vector<double> energies;
    energies.reserve(policy.action_set.size());
    for (const std::vector<double>& enc : policy.action_set)
        energies.push_back(forward(policy.net, detail::concat_input(state, enc)));
    return energies;
}

/// log π(a|s) = τ⁻¹f(s,a) − logΣ_{a'} exp(τ⁻¹f(s,a')), max-shift stabilized.
inline std::vector<double> softmax_log_probs(const SoftmaxPolicy& policy,
                                             std::span<const double> state) {
    if (!(policy.temperature > 0.0))
        throw InvalidArgument("softmax policy temperature must be > 0");
    std::vector<double> logits = softmax_energies(policy, state);
    for (double& e : logits) e /= policy.temperature;
    const double lse = log_sum_exp(logits);
    for (double& e : logits) e -= lse;
    return logits;
}

/// π(·|s) as probabilities (exponentiated log-probabilities).
inline std::vector<double> softmax_probs(const SoftmaxPolicy& policy,
                                         std::span<const double> state) {
    std::vector<double> p = softmax_log_probs(policy, state);
    for (double& v : p) v = std::exp(v);
    return p;
}

/// log N(a; f(s), σ²) = −(a − f(s))²/(2σ²) − log(√(2π)·σ).
inline double gaussian_log_prob(const GaussianPolicy& policy,
                                std::span<const double> state, double action) {
    if (!(policy.stddev > 0.0))
        throw InvalidArgument("gaussian policy stddev must be > 0");
    const double mean = forward(policy.net, state);
    const double z = (action - mean) / policy.stddev;
    return -0.5 * z * z - std::log(policy.stddev) -
           0.5 * std::log(2.0 * std::numbers::pi);
}

/// Inverse-CDF categorical draw from π(·|s); returns the action index.
inline std::size_t sample_action(const SoftmaxPolicy& policy,
                                 std::span<const double> state, RngStream& rng) {
    const std::vector<double> probs = softmax_probs(policy, state);
    return rng.categorical(probs);
}

/// Gaussian draw f(s) + σ·z with z standard normal.
inline double sample_action(const GaussianPolicy& policy,
                            std::span<const double> state, RngStream& rng) {
    if (!(policy.stddev > 0.0))
        throw InvalidArgument("gaussian policy stddev must be > 0");
    return forward(policy.net, state) + policy.stddev * rng.normal();
}

/// Discrete KL divergence Σ p·log(p/q) with 0·log 0 := 0. Returns +∞ when q
/// assigns zero mass to an outcome with p > 0.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size())
        throw DimensionError("kl_divergence: distributions have different support sizes");
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
        acc += p[i] * std::log(p[i] / q[i]);
    }
    return acc;
}

/// KL(N(μ₁,σ₁²) ‖ N(μ₂,σ₂²)) = log(σ₂/σ₁) + (σ₁² + (μ₁−μ₂)²)/(2σ₂²) − 1/2.
inline double kl_divergence_gaussian(double mu1, double sigma1, double mu2,
                                     double sigma2) {
    if (!(sigma1 > 0.0) || !(sigma2 > 0.0))
        throw InvalidArgument("kl_divergence_gaussian: stddevs must be > 0");
    const double dmu = mu1 - mu2;
    return std::log(sigma2 / sigma1) +
           (sigma1 * sigma1 + dmu * dmu) / (2.0 * sigma2 * sigma2) - 0.5;
}

/// Mean over sampled states of maxₐ (log π_new(a|s) − log π_old(a|s))²,
/// computed exactly over the finite action set.
inline double stepwise_logratio_supnorm(const SoftmaxPolicy& pol_new,
                                        const SoftmaxPolicy& pol_old,
                                        const std::vector<std::vector<double>>& states) {
    if (pol_new.action_set.size() != pol_old.action_set.size())
        throw DimensionError("stepwise_logratio_supnorm: action sets differ in size");
    if (states.empty()) return 0.0;
    double total = 0.0;
    for (const std::vector<double>& s : states) {
        const std::vector<double> lp_new = softmax_log_probs(pol_new, s);
        const std::vector<double> lp_old = softmax_log_probs(pol_old, s);
        double worst = 0.0;
        for (std::size_t a = 0; a < lp_new.size(); ++a) {
            const double d = lp_new[a] - lp_old[a];
            worst = std::max(worst, d * d);
        }
        total += worst;
    }
    return total / static_cast<double>(states.size());
}

/// Number of grid points used to approximate the sup over continuous actions.
inline constexpr std::size_t kGaussianSupGridPoints = 201;

/// Gaussian variant of the stepwise diagnostic. The sup over actions is
/// approximated on a uniform 201-point grid spanning ±4σ_old around the old
/// policy's mean at each state (documented approximation).
inline double stepwise_logratio_supnorm(const GaussianPolicy& pol_new,
                                        const GaussianPolicy& pol_old,
                                        const std::vector<std::vector<double>>& states) {
    if (states.empty()) return 0.0;
    double total = 0.0;
    for (const std::vector<double>& s : states) {
        const double center = forward(pol_old.net, s);
        const double lo = center - 4.0 * pol_old.stddev;
        const double step =
            8.0 * pol_old.stddev / static_cast<double>(kGaussianSupGridPoints - 1);
        double worst = 0.0;
        for (std::size_t i = 0; i < kGaussianSupGridPoints; ++i) {
            const double a = lo + step * static_cast<double>(i);
            const double d = gaussian_log_prob(pol_new, s, a) -
                             gaussian_log_prob(pol_old, s, a);
            worst = std::max(worst, d * d);
        }
        total += worst;
    }
    return total / static_cast<double>(states.size());
}

} // namespace fedrl
