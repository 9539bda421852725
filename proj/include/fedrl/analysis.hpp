// SPDX-License-Identifier: MIT
// Exact tabular oracles and measured diagnostics.
//
// The oracles (value iteration, linear-solve policy evaluation, discounted
// visitation, brute-force federated optimum) ground every learned quantity
// in closed-form finite-MDP computation. The diagnostics quantify what the
// federated runs are about: κ (pairwise critic dissimilarity weighted by the
// optimal-policy visitation), Ω (log-probability gap between the aggregated
// actor and the local actors), the mixture target the actor-first update
// order implicitly regresses on, and the linearization error of the
// two-layer network.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "fedrl/environments.hpp"
#include "fedrl/errors.hpp"
#include "fedrl/network.hpp"
#include "fedrl/rng.hpp"

namespace fedrl {

// ---------------------------------------------------------------------------
// Tabular MDP view
// ---------------------------------------------------------------------------

/// Explicit finite MDP: transition tensor P[s][a][s'], reward table R[s][a],
/// and initial state distribution μ.
struct TabularMDP {
    std::size_t S = 0;
    std::size_t A = 0;
    std::vector<double> P;  ///< S×A×S row-major
    std::vector<double> R;  ///< S×A row-major
    std::vector<double> mu; ///< size S, sums to 1

    double p(std::size_t s, std::size_t a, std::size_t s2) const {
        return P[(s * A + a) * S + s2];
    }
    double r(std::size_t s, std::size_t a) const { return R[s * A + a]; }

    void validate() const {
        if (S == 0 || A == 0 || P.size() != S * A * S || R.size() != S * A ||
            mu.size() != S)
            throw DimensionError("TabularMDP: inconsistent table shapes");
        for (std::size_t sa = 0; sa < S * A; ++sa) {
            double total = 0.0;
            for (std::size_t s2 = 0; s2 < S; ++s2) {
                const double v = P[sa * S + s2];
                if (!(v >= 0.0))
                    throw InvalidArgument("TabularMDP: negative transition probability");
                total += v;
            }
            if (std::abs(total - 1.0) > 1e-9)
                throw InvalidArgument("TabularMDP: non-stochastic transition row");
        }
        double mass = 0.0;
        for (double v : mu) {
            if (!(v >= 0.0))
                throw InvalidArgument("TabularMDP: negative initial probability");
            mass += v;
        }
        if (std::abs(mass - 1.0) > 1e-9)
            throw InvalidArgument("TabularMDP: initial distribution must sum to 1");
    }
};

/// Extracts the explicit tables of a chain environment (uniform μ).
inline TabularMDP to_tabular(const PerturbedChainMDP& env) {
    TabularMDP mdp;
    mdp.S = env.state_count();
    mdp.A = env.action_count();
    mdp.P = env.transition_tensor();
    mdp.R = env.reward_table();
    mdp.mu.assign(mdp.S, 1.0 / static_cast<double>(mdp.S));
    return mdp;
}

/// S×A stochastic matrix of a deterministic policy (unit mass on π(s)).
inline std::vector<double> policy_matrix(std::span<const std::size_t> det_policy,
                                         std::size_t n_actions) {
    std::vector<double> pi(det_policy.size() * n_actions, 0.0);
    for (std::size_t s = 0; s < det_policy.size(); ++s) {
        if (det_policy[s] >= n_actions)
            throw InvalidArgument("policy_matrix: action index out of range");
        pi[s * n_actions + det_policy[s]] = 1.0;
    }
    return pi;
}

namespace detail {

inline void check_policy(const TabularMDP& mdp, std::span<const double> policy) {
    if (policy.size() != mdp.S * mdp.A)
        throw DimensionError("policy matrix must be S×A");
    for (std::size_t s = 0; s < mdp.S; ++s) {
        double total = 0.0;
        for (std::size_t a = 0; a < mdp.A; ++a) {
            if (!(policy[s * mdp.A + a] >= 0.0))
                throw InvalidArgument("policy matrix has a negative entry");
            total += policy[s * mdp.A + a];
        }
        if (std::abs(total - 1.0) > 1e-9)
            throw InvalidArgument("policy rows must sum to 1");
    }
}

inline void check_gamma(double gamma) {
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw InvalidArgument("discount must lie in [0, 1) for exact solves");
}

} // namespace detail

// ---------------------------------------------------------------------------
// Oracles
// ---------------------------------------------------------------------------

/// Result of value iteration: optimal action values and a greedy policy.
struct ValueIterationResult {
    std::vector<double> q;             ///< S×A optimal action values
    std::vector<std::size_t> greedy;   ///< argmax_a Q*(s,a), lowest index on ties
    std::size_t iterations = 0;
};

/// Iterates Q ← R + γ·P·max_a' Q until the sup-norm Bellman residual drops
/// below `tol`.
inline ValueIterationResult value_iteration(const TabularMDP& mdp, double gamma,
                                            double tol = 1e-12) {
    mdp.validate();
    detail::check_gamma(gamma);
    ValueIterationResult out;
    out.q.assign(mdp.S * mdp.A, 0.0);
    std::vector<double> vmax(mdp.S, 0.0), next(mdp.S * mdp.A, 0.0);
    const std::size_t max_iters = 1000000;
    for (out.iterations = 0; out.iterations < max_iters; ++out.iterations) {
        for (std::size_t s = 0; s < mdp.S; ++s) {
            double best = out.q[s * mdp.A];
            for (std::size_t a = 1; a < mdp.A; ++a)
                best = std::max(best, out.q[s * mdp.A + a]);
            vmax[s] = best;
        }
        double residual = 0.0;
        for (std::size_t s = 0; s < mdp.S; ++s)
            for (std::size_t a = 0; a < mdp.A; ++a) {
                double ev = 0.0;
                for (std::size_t s2 = 0; s2 < mdp.S; ++s2)
                    ev += mdp.p(s, a, s2) * vmax[s2];
                next[s * mdp.A + a] = mdp.r(s, a) + gamma * ev;
                residual = std::max(residual,
                                    std::abs(next[s * mdp.A + a] - out.q[s * mdp.A + a]));
            }
        out.q.swap(next);
        if (residual < tol) break;
    }
    out.greedy.resize(mdp.S);
    for (std::size_t s = 0; s < mdp.S; ++s) {
        std::size_t best = 0;
        for (std::size_t a = 1; a < mdp.A; ++a)
            if (out.q[s * mdp.A + a] > out.q[s * mdp.A + best]) best = a;
        out.greedy[s] = best;
    }
    return out;
}

/// Exact Q^π and V^π via the linear Bellman system (I − γP_π)V = R_π.
struct PolicyEvalResult {
    std::vector<double> q; ///< S×A
    std::vector<double> v; ///< S
};

inline PolicyEvalResult exact_policy_eval(const TabularMDP& mdp,
                                          std::span<const double> policy,
                                          double gamma) {
    mdp.validate();
    detail::check_policy(mdp, policy);
    detail::check_gamma(gamma);

    Eigen::MatrixXd P_pi = Eigen::MatrixXd::Zero(mdp.S, mdp.S);
    Eigen::VectorXd R_pi = Eigen::VectorXd::Zero(mdp.S);
    for (std::size_t s = 0; s < mdp.S; ++s)
        for (std::size_t a = 0; a < mdp.A; ++a) {
            const double pa = policy[s * mdp.A + a];
            R_pi(static_cast<Eigen::Index>(s)) += pa * mdp.r(s, a);
            for (std::size_t s2 = 0; s2 < mdp.S; ++s2)
                P_pi(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s2)) +=
                    pa * mdp.p(s, a, s2);
        }
    const Eigen::MatrixXd M =
        Eigen::MatrixXd::Identity(mdp.S, mdp.S) - gamma * P_pi;
    const Eigen::VectorXd V = M.partialPivLu().solve(R_pi);

    PolicyEvalResult out;
    out.v.assign(V.data(), V.data() + mdp.S);
    out.q.assign(mdp.S * mdp.A, 0.0);
    for (std::size_t s = 0; s < mdp.S; ++s)
        for (std::size_t a = 0; a < mdp.A; ++a) {
            double ev = 0.0;
            for (std::size_t s2 = 0; s2 < mdp.S; ++s2)
                ev += mdp.p(s, a, s2) * out.v[s2];
            out.q[s * mdp.A + a] = mdp.r(s, a) + gamma * ev;
        }
    return out;
}

/// Unnormalized discounted visitation ρ(s) = Σ_t γᵗ·Pr(s_t = s), computed by
/// solving (I − γ·P_πᵀ)ρ = μ. Entrywise nonnegative; (1−γ)·Σρ = 1.
inline std::vector<double> discounted_visitation(const TabularMDP& mdp,
                                                 std::span<const double> policy,
                                                 double gamma) {
    mdp.validate();
    detail::check_policy(mdp, policy);
    detail::check_gamma(gamma);

    Eigen::MatrixXd P_pi = Eigen::MatrixXd::Zero(mdp.S, mdp.S);
    for (std::size_t s = 0; s < mdp.S; ++s)
        for (std::size_t a = 0; a < mdp.A; ++a)
            for (std::size_t s2 = 0; s2 < mdp.S; ++s2)
                P_pi(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s2)) +=
                    policy[s * mdp.A + a] * mdp.p(s, a, s2);
    Eigen::VectorXd mu(mdp.S);
    for (std::size_t s = 0; s < mdp.S; ++s) mu(static_cast<Eigen::Index>(s)) = mdp.mu[s];
    const Eigen::MatrixXd M =
        Eigen::MatrixXd::Identity(mdp.S, mdp.S) - gamma * P_pi.transpose();
    const Eigen::VectorXd rho = M.partialPivLu().solve(mu);

    std::vector<double> out(rho.data(), rho.data() + mdp.S);
    // The solve can leave −1e−17-scale dust on unreachable states.
    for (double& v : out)
        if (v < 0.0 && v > -1e-10) v = 0.0;
    return out;
}

/// Best deterministic policy for the weighted multi-client objective
/// Σ_n q_n · E_{s₀~μ_n}[V^π_n(s₀)], found by exhaustive enumeration.
struct FedOptimumResult {
    std::vector<std::size_t> policy; ///< deterministic, per state
    double objective = 0.0;
};

inline FedOptimumResult brute_force_fed_optimum(const std::vector<TabularMDP>& mdps,
                                                std::span<const double> q,
                                                double gamma) {
    if (mdps.empty()) throw InvalidArgument("brute_force_fed_optimum: no clients");
    if (q.size() != mdps.size())
        throw DimensionError("brute_force_fed_optimum: one weight per client required");
    const std::size_t S = mdps[0].S, A = mdps[0].A;
    for (const TabularMDP& m : mdps)
        if (m.S != S || m.A != A)
            throw DimensionError("brute_force_fed_optimum: clients must share S and A");

    double n_policies = 1.0;
    for (std::size_t s = 0; s < S; ++s) {
        n_policies *= static_cast<double>(A);
        if (n_policies > 1e6)
            throw InvalidArgument("brute_force_fed_optimum: |A|^|S| exceeds 1e6");
    }

    FedOptimumResult best;
    best.objective = -std::numeric_limits<double>::infinity();
    std::vector<std::size_t> det(S, 0);
    const std::size_t total = static_cast<std::size_t>(n_policies);
    for (std::size_t idx = 0; idx < total; ++idx) {
        std::size_t code = idx;
        for (std::size_t s = 0; s < S; ++s) {
            det[s] = code % A;
            code /= A;
        }
        const std::vector<double> pi = policy_matrix(det, A);
        double objective = 0.0;
        for (std::size_t n = 0; n < mdps.size(); ++n) {
            const PolicyEvalResult ev = exact_policy_eval(mdps[n], pi, gamma);
            double j = 0.0;
            for (std::size_t s = 0; s < S; ++s) j += mdps[n].mu[s] * ev.v[s];
            objective += q[n] * j;
        }
        if (objective > best.objective) {
            best.objective = objective;
            best.policy = det;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Monte-Carlo estimate container
// ---------------------------------------------------------------------------

/// Sample mean with its standard error (and the sample maximum of |·|).
struct McEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    double max_abs = 0.0;
    std::size_t n_samples = 0;
};

namespace detail {

inline McEstimate summarize(const std::vector<double>& xs) {
    McEstimate out;
    out.n_samples = xs.size();
    if (xs.empty()) return out;
    double acc = 0.0;
    for (double x : xs) {
        acc += x;
        out.max_abs = std::max(out.max_abs, std::abs(x));
    }
    out.mean = acc / static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - out.mean) * (x - out.mean);
    var /= static_cast<double>(xs.size());
    out.std_error = std::sqrt(var / static_cast<double>(xs.size()));
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// κ — pairwise critic dissimilarity (Definition-style double expectation)
// ---------------------------------------------------------------------------

/// Exact evaluation on a tabular grid:
///   κ = (1/N)·Σ_n Σ_s d_n(s)·Σ_a π(a|s)·Σ_i q_i·|Q_n(s,a) − Q_i(s,a)|
/// where d_n is client n's (normalized) reference state distribution and π
/// the reference action distribution.
inline double measure_kappa_exact(
    const std::vector<std::vector<double>>& critic_values, // N × (S×A)
    std::span<const double> q,
    const std::vector<std::vector<double>>& state_dists,   // N × S
    std::span<const double> action_probs,                  // S×A
    std::size_t S, std::size_t A) {
    const std::size_t N = critic_values.size();
    if (N == 0) throw InvalidArgument("measure_kappa_exact: need at least one critic");
    if (q.size() != N || state_dists.size() != N)
        throw DimensionError("measure_kappa_exact: weights/distributions per critic");
    double kappa = 0.0;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t s = 0; s < S; ++s) {
            if (state_dists[n][s] == 0.0) continue;
            for (std::size_t a = 0; a < A; ++a) {
                const double w = state_dists[n][s] * action_probs[s * A + a];
                if (w == 0.0) continue;
                double mix = 0.0;
                for (std::size_t i = 0; i < N; ++i)
                    mix += q[i] * std::abs(critic_values[n][s * A + a] -
                                           critic_values[i][s * A + a]);
                kappa += w * mix;
            }
        }
    return kappa / static_cast<double>(N);
}

/// Monte-Carlo estimate of the same double expectation (client uniform,
/// state from d_n, action from π).
inline McEstimate measure_kappa_mc(
    const std::vector<std::vector<double>>& critic_values,
    std::span<const double> q,
    const std::vector<std::vector<double>>& state_dists,
    std::span<const double> action_probs, std::size_t S, std::size_t A,
    RngStream& rng, std::size_t n_samples = 10000) {
    const std::size_t N = critic_values.size();
    if (N == 0) throw InvalidArgument("measure_kappa_mc: need at least one critic");
    for (std::size_t n = 0; n < N; ++n)
        if (state_dists[n].size() != S || critic_values[n].size() != S * A)
            throw DimensionError("measure_kappa_mc: grid shapes must be N×S and N×(S×A)");
    std::vector<double> draws;
    draws.reserve(n_samples);
    for (std::size_t k = 0; k < n_samples; ++k) {
        const std::size_t n = rng.uniform_index(N);
        const std::size_t s = rng.categorical(state_dists[n]);
        const std::size_t a =
            rng.categorical(std::span<const double>(action_probs.data() + s * A, A));
        double mix = 0.0;
        for (std::size_t i = 0; i < N; ++i)
            mix += q[i] *
                   std::abs(critic_values[n][s * A + a] - critic_values[i][s * A + a]);
        draws.push_back(mix);
    }
    return detail::summarize(draws);
}

/// Sample-based κ for non-tabular runs: `values[k][m]` is critic k evaluated
/// on shared probe point m; the result averages the q-weighted pairwise
/// dissimilarity over critics and probes.
inline double measure_kappa_samples(const std::vector<std::vector<double>>& values,
                                    std::span<const double> q) {
    const std::size_t N = values.size();
    if (N == 0) throw InvalidArgument("measure_kappa_samples: need at least one critic");
    if (q.size() != N)
        throw DimensionError("measure_kappa_samples: one weight per critic required");
    const std::size_t M = values[0].size();
    if (M == 0) return 0.0;
    double kappa = 0.0;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t m = 0; m < M; ++m) {
            double mix = 0.0;
            for (std::size_t i = 0; i < N; ++i)
                mix += q[i] * std::abs(values[n][m] - values[i][m]);
            kappa += mix;
        }
    return kappa / static_cast<double>(N * M);
}

// ---------------------------------------------------------------------------
// Ω — aggregation error in log probability
// ---------------------------------------------------------------------------

/// Exact evaluation:
///   Ω = |(1/N)·Σ_n Σ_s d_n(s)·Σ_a π(a|s)·(log π_glob(a|s) − log π_n(a|s))|.
inline double measure_omega_exact(
    std::span<const double> global_logp,                  // S×A
    const std::vector<std::vector<double>>& local_logp,   // N × (S×A)
    const std::vector<std::vector<double>>& state_dists,  // N × S
    std::span<const double> action_probs,                 // S×A
    std::size_t S, std::size_t A) {
    const std::size_t N = local_logp.size();
    if (N == 0) throw InvalidArgument("measure_omega_exact: need at least one local policy");
    double acc = 0.0;
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t s = 0; s < S; ++s) {
            if (state_dists[n][s] == 0.0) continue;
            for (std::size_t a = 0; a < A; ++a) {
                const double w = state_dists[n][s] * action_probs[s * A + a];
                acc += w * (global_logp[s * A + a] - local_logp[n][s * A + a]);
            }
        }
    return std::abs(acc / static_cast<double>(N));
}

/// Monte-Carlo estimate; mean is reported in signed form inside the
/// estimate, callers take |mean| as Ω.
inline McEstimate measure_omega_mc(
    std::span<const double> global_logp,
    const std::vector<std::vector<double>>& local_logp,
    const std::vector<std::vector<double>>& state_dists,
    std::span<const double> action_probs, std::size_t S, std::size_t A,
    RngStream& rng, std::size_t n_samples = 10000) {
    const std::size_t N = local_logp.size();
    if (N == 0) throw InvalidArgument("measure_omega_mc: need at least one local policy");
    for (std::size_t n = 0; n < N; ++n)
        if (state_dists[n].size() != S || local_logp[n].size() != S * A)
            throw DimensionError("measure_omega_mc: grid shapes must be N×S and N×(S×A)");
    std::vector<double> draws;
    draws.reserve(n_samples);
    for (std::size_t k = 0; k < n_samples; ++k) {
        const std::size_t n = rng.uniform_index(N);
        const std::size_t s = rng.categorical(state_dists[n]);
        const std::size_t a =
            rng.categorical(std::span<const double>(action_probs.data() + s * A, A));
        draws.push_back(global_logp[s * A + a] - local_logp[n][s * A + a]);
    }
    return detail::summarize(draws);
}

/// Sample-based Ω from per-sample log-probability differences
/// (log π_glob − log π_n on shared probes), as collected during training.
inline McEstimate measure_omega_samples(const std::vector<double>& log_diffs) {
    return detail::summarize(log_diffs);
}

// ---------------------------------------------------------------------------
// Ideal mixture critic target for the actor-first update order
// ---------------------------------------------------------------------------

/// Mixture target Σ_i [q_i·ρ_i(s)/Z(s)]·Q_i^π(s,a) with exact per-client Q^π,
/// visitation weights ρ_i taken under `visit_policy`, and Z(s) = Σ q_i ρ_i(s).
struct FedracTargetResult {
    std::vector<double> target;     ///< S×A
    std::vector<double> z;          ///< S mixture weights
    std::vector<double> critic_mse; ///< per supplied critic, uniform grid MSE
};

inline FedracTargetResult fedrac_ideal_target(
    const std::vector<TabularMDP>& mdps, std::span<const double> q,
    std::span<const double> eval_policy, std::span<const double> visit_policy,
    double gamma,
    const std::vector<std::vector<double>>& critic_values = {}) {
    if (mdps.empty()) throw InvalidArgument("fedrac_ideal_target: no clients");
    if (q.size() != mdps.size())
        throw DimensionError("fedrac_ideal_target: one weight per client required");
    const std::size_t S = mdps[0].S, A = mdps[0].A;

    std::vector<std::vector<double>> rho, qpi;
    for (const TabularMDP& mdp : mdps) {
        rho.push_back(discounted_visitation(mdp, visit_policy, gamma));
        qpi.push_back(exact_policy_eval(mdp, eval_policy, gamma).q);
    }

    FedracTargetResult out;
    out.z.assign(S, 0.0);
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t i = 0; i < mdps.size(); ++i)
            out.z[s] += q[i] * rho[i][s];

    out.target.assign(S * A, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
        if (!(out.z[s] > 0.0))
            throw InvalidArgument("fedrac_ideal_target: zero mixture weight at state " +
                                  std::to_string(s) + " (unreachable)");
        for (std::size_t a = 0; a < A; ++a)
            for (std::size_t i = 0; i < mdps.size(); ++i)
                out.target[s * A + a] +=
                    (q[i] * rho[i][s] / out.z[s]) * qpi[i][s * A + a];
    }

    for (const std::vector<double>& cv : critic_values) {
        if (cv.size() != S * A)
            throw DimensionError("fedrac_ideal_target: critic grid must be S×A");
        double mse = 0.0;
        for (std::size_t k = 0; k < S * A; ++k) {
            const double d = cv[k] - out.target[k];
            mse += d * d;
        }
        out.critic_mse.push_back(mse / static_cast<double>(S * A));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Linearization error
// ---------------------------------------------------------------------------

/// Monte-Carlo |forward − forward_linearized| over inputs from `sampler`.
inline McEstimate measure_linearization_error(
    const NetworkParams& net, const std::function<std::vector<double>()>& sampler,
    std::size_t n_samples = 10000) {
    std::vector<double> draws;
    draws.reserve(n_samples);
    for (std::size_t k = 0; k < n_samples; ++k) {
        const std::vector<double> x = sampler();
        draws.push_back(std::abs(forward(net, x) - forward_linearized(net, x)));
    }
    return detail::summarize(draws);
}

// ---------------------------------------------------------------------------
// Per-round diagnostics bundle
// ---------------------------------------------------------------------------

/// One round's diagnostic measurements; all entries nonnegative and finite.
struct DiagnosticsRecord {
    double kappa = 0.0;
    double omega = 0.0;
    double stepwise_logdiff = 0.0;
    double linearization_error = 0.0;
    double eval_error = 0.0;          ///< critic MSE against exact/realized values
    double fedrac_target_error = 0.0; ///< critic MSE against the mixture target

    void validate() const {
        for (double v : {kappa, omega, stepwise_logdiff, linearization_error,
                         eval_error, fedrac_target_error})
            if (!(std::isfinite(v) && v >= 0.0))
                throw DivergenceError("DiagnosticsRecord: non-finite or negative entry");
    }
};

// ---------------------------------------------------------------------------
// Exact population solution
// ---------------------------------------------------------------------------

/// Exact quantities for a tabular client population: per-client optimal
/// values, the best deterministic federated policy, its per-client
/// visitations, and the mixture weights Z.
struct ExactSolution {
    std::vector<std::vector<double>> q_star; ///< per client, S×A
    std::vector<std::size_t> pi_hat_star;    ///< best deterministic policy
    double fed_objective = 0.0;
    std::vector<std::vector<double>> rho_star; ///< per client ρ under π̂*
    std::vector<double> z;                     ///< Σ q_n ρ_n(s)
};

inline ExactSolution solve_population(const std::vector<TabularMDP>& mdps,
                                      std::span<const double> q, double gamma) {
    ExactSolution sol;
    for (const TabularMDP& mdp : mdps)
        sol.q_star.push_back(value_iteration(mdp, gamma).q);
    const FedOptimumResult opt = brute_force_fed_optimum(mdps, q, gamma);
    sol.pi_hat_star = opt.policy;
    sol.fed_objective = opt.objective;
    const std::vector<double> pi = policy_matrix(sol.pi_hat_star, mdps[0].A);
    sol.z.assign(mdps[0].S, 0.0);
    for (std::size_t n = 0; n < mdps.size(); ++n) {
        sol.rho_star.push_back(discounted_visitation(mdps[n], pi, gamma));
        for (std::size_t s = 0; s < mdps[0].S; ++s)
            sol.z[s] += q[n] * sol.rho_star[n][s];
    }
    return sol;
}

/// Normalizes a visitation vector into a probability distribution.
inline std::vector<double> normalize_dist(std::span<const double> rho) {
    double total = 0.0;
    for (double v : rho) total += v;
    if (!(total > 0.0)) throw InvalidArgument("normalize_dist: zero total mass");
    std::vector<double> out(rho.begin(), rho.end());
    for (double& v : out) v /= total;
    return out;
}

} // namespace fedrl
