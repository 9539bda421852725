// SPDX-License-Identifier: MIT
// Self-diagnostic suites behind the `verify` subcommand: randomized checks
// of the numerical kernels against closed-form bounds and brute-force
// re-computations, plus exact-solver consistency checks on small tabular
// models. Each check reports a pass/fail verdict with the worst observed
// deviation, so a failure pinpoints the broken invariant.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include "fedrl/analysis.hpp"
#include "fedrl/environments.hpp"
#include "fedrl/federation.hpp"
#include "fedrl/learners.hpp"
#include "fedrl/network.hpp"
#include "fedrl/policies.hpp"
#include "fedrl/rng.hpp"

namespace fedrl {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail; ///< worst observed deviation vs the tolerance
};

struct VerificationReport {
    std::vector<CheckResult> checks;

    bool all_passed() const {
        return std::all_of(checks.begin(), checks.end(),
                           [](const CheckResult& c) { return c.passed; });
    }
};

namespace detail {

inline std::string worst_vs_tol(double worst, double tol) {
    char buf[80];
    std::snprintf(buf, sizeof buf, "worst %.3g (tolerance %.3g)", worst, tol);
    return buf;
}

inline NetworkParams random_net(RngStream& rng, std::size_t width,
                                std::size_t dim, double radius) {
    return init_network(width, dim, radius, rng);
}

/// Shifts a net's weights by Gaussian noise scaled so its distance from the
/// initialization is approximately `target_dist`.
inline NetworkParams displaced(NetworkParams net, double target_dist,
                               RngStream& rng) {
    std::vector<double> dir(net.weights.size());
    double norm2 = 0.0;
    for (double& v : dir) {
        v = rng.normal();
        norm2 += v * v;
    }
    const double scale = target_dist / std::sqrt(norm2);
    for (std::size_t j = 0; j < dir.size(); ++j)
        net.weights[j] = net.init_weights[j] + scale * dir[j];
    return net;
}

inline std::vector<double> random_vector(RngStream& rng, std::size_t n,
                                         double scale) {
    std::vector<double> x(n);
    for (double& v : x) v = scale * rng.normal();
    return x;
}

inline std::vector<double> random_simplex(RngStream& rng, std::size_t n) {
    std::vector<double> p(n);
    double total = 0.0;
    for (double& v : p) {
        v = -std::log(rng.uniform() + 1e-300);
        total += v;
    }
    for (double& v : p) v /= total;
    return p;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Property suite: numerical kernels vs closed forms
// ---------------------------------------------------------------------------

inline VerificationReport run_property_suite(std::uint64_t seed = 9001) {
    VerificationReport report;
    RngStream rng(seed);

    { // Ball projection: lands inside the radius and is idempotent.
        double worst_excess = 0.0;
        bool idempotent = true;
        bool interior_untouched = true;
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t width = 4 + rng.uniform_index(17);
            const std::size_t dim = 2 + rng.uniform_index(5);
            const double radius = 0.5 + 7.5 * rng.uniform();
            NetworkParams net = detail::random_net(rng, width, dim, radius);
            NetworkParams outside =
                detail::displaced(net, radius * (1.5 + 3.0 * rng.uniform()), rng);
            const NetworkParams once = project_to_ball(outside);
            worst_excess = std::max(
                worst_excess, (distance_from_init(once) - radius) / radius);
            if (project_to_ball(once).weights != once.weights)
                idempotent = false;
            const NetworkParams inside =
                detail::displaced(net, 0.5 * radius, rng);
            if (project_to_ball(inside).weights != inside.weights)
                interior_untouched = false;
        }
        CheckResult c;
        c.name = "ball projection: radius respected, idempotent, interior fixed";
        c.passed = worst_excess <= 1e-10 && idempotent && interior_untouched;
        c.detail = detail::worst_vs_tol(worst_excess, 1e-10);
        if (!idempotent) c.detail += "; re-projection moved weights";
        if (!interior_untouched) c.detail += "; interior point was moved";
        report.checks.push_back(c);
    }

    { // Evaluation is 1-Lipschitz in the weights per unit input norm:
      // |f_a(x) − f_b(x)| ≤ ‖a − b‖₂·‖x‖₂, and hence |f − f⁰| ≤ R‖x‖.
        double worst = 0.0;
        for (int trial = 0; trial < 300; ++trial) {
            const std::size_t width = 4 + rng.uniform_index(29);
            const std::size_t dim = 2 + rng.uniform_index(5);
            const double radius = 1.0 + 5.0 * rng.uniform();
            const NetworkParams base = detail::random_net(rng, width, dim, radius);
            const NetworkParams a =
                detail::displaced(base, radius * rng.uniform(), rng);
            const NetworkParams b =
                detail::displaced(base, radius * rng.uniform(), rng);
            const std::vector<double> x =
                detail::random_vector(rng, dim, 1.0 + 2.0 * rng.uniform());
            double xnorm = 0.0;
            for (double v : x) xnorm += v * v;
            xnorm = std::sqrt(xnorm);
            const double gap = std::abs(forward(a, x) - forward(b, x));
            const double bound = param_distance(a, b) * xnorm;
            worst = std::max(worst, gap - bound);
            const double dev_gap = std::abs(forward(a, x) - forward_linearized(a, x));
            // f and f⁰ share weights, so the same bound caps the deviation
            // from the frozen-activation evaluation at distance-to-init.
            worst = std::max(worst, dev_gap - distance_from_init(a) * xnorm);
        }
        CheckResult c;
        c.name = "evaluation gap bounded by weight distance times input norm";
        c.passed = worst <= 1e-9;
        c.detail = detail::worst_vs_tol(worst, 1e-9);
        report.checks.push_back(c);
    }

    { // Analytic weight gradient vs central finite differences.
        double worst_rel = 0.0;
        for (int trial = 0; trial < 120; ++trial) {
            const std::size_t width = 4 + rng.uniform_index(13);
            const std::size_t dim = 2 + rng.uniform_index(4);
            NetworkParams net = detail::random_net(rng, width, dim, 5.0);
            net = detail::displaced(net, 2.0 * rng.uniform(), rng);
            // Resample inputs whose pre-activations sit near a ReLU kink,
            // where one-sided derivatives make finite differences ill-posed.
            std::vector<double> x;
            for (int attempt = 0; attempt < 64; ++attempt) {
                x = detail::random_vector(rng, dim, 1.5);
                double closest = 1e300;
                for (std::size_t i = 0; i < net.width; ++i)
                    closest = std::min(closest,
                                       std::abs(detail::row_dot(
                                           net.weights, net.input_dim, i, x)));
                if (closest > 1e-4) break;
            }
            std::vector<double> dir(net.weights.size());
            double dn = 0.0;
            for (double& v : dir) {
                v = rng.normal();
                dn += v * v;
            }
            dn = std::sqrt(dn);
            for (double& v : dir) v /= dn;
            const std::vector<double> grad = gradient(net, x);
            double analytic = 0.0;
            for (std::size_t j = 0; j < grad.size(); ++j)
                analytic += grad[j] * dir[j];
            const double h = 1e-6;
            NetworkParams plus = net, minus = net;
            for (std::size_t j = 0; j < dir.size(); ++j) {
                plus.weights[j] += h * dir[j];
                minus.weights[j] -= h * dir[j];
            }
            const double fd = (forward(plus, x) - forward(minus, x)) / (2.0 * h);
            const double rel = std::abs(analytic - fd) /
                               std::max(1e-8, std::abs(analytic) + std::abs(fd));
            worst_rel = std::max(worst_rel, rel);
        }
        CheckResult c;
        c.name = "weight gradient matches central finite differences";
        c.passed = worst_rel <= 1e-4;
        c.detail = detail::worst_vs_tol(worst_rel, 1e-4);
        report.checks.push_back(c);
    }

    { // KL(p‖q) ≥ 2·TV(p,q)² on 1000 random simplex pairs.
        double worst = 0.0;
        for (int trial = 0; trial < 1000; ++trial) {
            const std::size_t n = 2 + rng.uniform_index(9);
            const std::vector<double> p = detail::random_simplex(rng, n);
            const std::vector<double> q = detail::random_simplex(rng, n);
            double tv = 0.0;
            for (std::size_t i = 0; i < n; ++i) tv += std::abs(p[i] - q[i]);
            tv *= 0.5;
            const double kl = kl_divergence(p, q);
            worst = std::max(worst, 2.0 * tv * tv - kl);
            worst = std::max(worst, -kl); // nonnegativity
        }
        CheckResult c;
        c.name = "KL dominates twice the squared total variation";
        c.passed = worst <= 1e-12;
        c.detail = detail::worst_vs_tol(worst, 1e-12);
        report.checks.push_back(c);
    }

    { // log-sum-exp: bracketed by max and max + log n; shift equivariant.
        double worst = 0.0;
        for (int trial = 0; trial < 1000; ++trial) {
            const std::size_t n = 1 + rng.uniform_index(12);
            std::vector<double> xs(n);
            for (double& v : xs) v = rng.uniform(-600.0, 600.0);
            const double lse = log_sum_exp(xs);
            const double top = *std::max_element(xs.begin(), xs.end());
            worst = std::max(worst, top - lse);
            worst = std::max(worst,
                             lse - (top + std::log(static_cast<double>(n))));
            const double shift = rng.uniform(-500.0, 500.0);
            std::vector<double> shifted = xs;
            for (double& v : shifted) v += shift;
            worst = std::max(worst,
                             std::abs(log_sum_exp(shifted) - (lse + shift)));
        }
        CheckResult c;
        c.name = "log-sum-exp bounds and shift equivariance";
        c.passed = worst <= 1e-12;
        c.detail = detail::worst_vs_tol(worst, 1e-12);
        report.checks.push_back(c);
    }

    { // Advantage estimator vs brute-force truncated double sums.
        double worst = 0.0;
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t n = 1 + rng.uniform_index(40);
            const std::size_t dim = 2;
            const NetworkParams critic = detail::random_net(rng, 6, dim, 10.0);
            TrajectoryBatch batch;
            for (std::size_t t = 0; t < n; ++t) {
                batch.features.push_back(detail::random_vector(rng, dim, 1.0));
                batch.states.push_back(batch.features.back());
                batch.actions.push_back(0.0);
                batch.rewards.push_back(rng.normal());
                batch.old_log_probs.push_back(-1.0);
                batch.terminals.push_back(rng.uniform() < 0.15 ? 1 : 0);
            }
            batch.final_feature = detail::random_vector(rng, dim, 1.0);
            const double gamma = 0.9 + 0.09 * rng.uniform();
            const double lambda = 0.8 + 0.2 * rng.uniform();
            compute_gae(batch, critic, gamma, lambda);
            // Brute force: values, one-step errors, then the truncated
            // exponentially-weighted tail sum for every position.
            std::vector<double> v(n + 1);
            for (std::size_t t = 0; t < n; ++t)
                v[t] = forward(critic, batch.features[t]);
            v[n] = forward(critic, batch.final_feature);
            std::vector<double> delta(n);
            for (std::size_t t = 0; t < n; ++t) {
                const double next_v = batch.terminals[t] ? 0.0 : v[t + 1];
                delta[t] = batch.rewards[t] + gamma * next_v - v[t];
            }
            for (std::size_t t = 0; t < n; ++t) {
                double adv = 0.0;
                double w = 1.0;
                for (std::size_t l = t; l < n; ++l) {
                    adv += w * delta[l];
                    if (batch.terminals[l]) break;
                    w *= gamma * lambda;
                }
                worst = std::max(worst, std::abs(adv - batch.advantages[t]));
                worst = std::max(worst,
                                 std::abs((adv + v[t]) - batch.returns[t]));
            }
        }
        CheckResult c;
        c.name = "advantage estimator equals brute-force truncated sums";
        c.passed = worst <= 1e-10;
        c.detail = detail::worst_vs_tol(worst, 1e-10);
        report.checks.push_back(c);
    }

    { // Aggregation commutes with frozen-activation evaluation: the
      // weighted parameter average evaluates, under f⁰, to the same
      // weighted average of client evaluations.
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t width = 4 + rng.uniform_index(13);
            const std::size_t dim = 2 + rng.uniform_index(4);
            const double radius = 2.0 + 4.0 * rng.uniform();
            const NetworkParams base = detail::random_net(rng, width, dim, radius);
            const std::size_t k = 2 + rng.uniform_index(4);
            std::vector<NetworkParams> clients;
            for (std::size_t i = 0; i < k; ++i)
                clients.push_back(
                    detail::displaced(base, 0.9 * radius * rng.uniform(), rng));
            const std::vector<double> q = detail::random_simplex(rng, k);
            const NetworkParams agg = aggregate(clients, q);
            for (int probe = 0; probe < 5; ++probe) {
                const std::vector<double> x =
                    detail::random_vector(rng, dim, 2.0);
                double mix = 0.0;
                for (std::size_t i = 0; i < k; ++i)
                    mix += q[i] * forward_linearized(clients[i], x);
                worst = std::max(
                    worst, std::abs(forward_linearized(agg, x) - mix));
            }
        }
        CheckResult c;
        c.name = "aggregation is linear under frozen-activation evaluation";
        c.passed = worst <= 1e-10;
        c.detail = detail::worst_vs_tol(worst, 1e-10);
        report.checks.push_back(c);
    }

    { // Softmax policies normalize exactly across temperatures and scales.
        double worst = 0.0;
        for (int trial = 0; trial < 400; ++trial) {
            const std::size_t state_dim = 2 + rng.uniform_index(3);
            const std::size_t enc_dim = 1 + rng.uniform_index(3);
            const std::size_t actions = 2 + rng.uniform_index(5);
            SoftmaxPolicy policy;
            policy.net = detail::random_net(rng, 4 + rng.uniform_index(9),
                                            state_dim + enc_dim, 6.0);
            policy.net = detail::displaced(policy.net, 4.0 * rng.uniform(), rng);
            for (std::size_t a = 0; a < actions; ++a)
                policy.action_set.push_back(
                    detail::random_vector(rng, enc_dim, 1.0));
            policy.temperature = 0.05 + 3.0 * rng.uniform();
            const std::vector<double> state =
                detail::random_vector(rng, state_dim, 2.0);
            const std::vector<double> probs = softmax_probs(policy, state);
            double total = 0.0;
            for (double p : probs) total += p;
            worst = std::max(worst, std::abs(total - 1.0));
        }
        CheckResult c;
        c.name = "softmax probabilities sum to one";
        c.passed = worst <= 1e-12;
        c.detail = detail::worst_vs_tol(worst, 1e-12);
        report.checks.push_back(c);
    }

    return report;
}

// ---------------------------------------------------------------------------
// Tabular suite: exact solvers vs Bellman algebra and Monte Carlo
// ---------------------------------------------------------------------------

inline VerificationReport run_tabular_suite(std::uint64_t seed = 9002) {
    VerificationReport report;
    RngStream rng(seed);

    const auto random_policy = [&rng](std::size_t S, std::size_t A) {
        std::vector<double> pi;
        pi.reserve(S * A);
        for (std::size_t s = 0; s < S; ++s) {
            const std::vector<double> row = detail::random_simplex(rng, A);
            pi.insert(pi.end(), row.begin(), row.end());
        }
        return pi;
    };

    { // Exact policy evaluation satisfies the Bellman identity.
        double worst = 0.0;
        for (int trial = 0; trial < 50; ++trial) {
            const std::size_t S = 4 + rng.uniform_index(5);
            RngStream noise(seed + 100 + static_cast<std::uint64_t>(trial));
            const PerturbedChainMDP chain(S, 3, 0.5 * rng.uniform(), noise, 0.9,
                                          60);
            const TabularMDP mdp = to_tabular(chain);
            const double gamma = 0.9 + 0.09 * rng.uniform();
            const std::vector<double> pi = random_policy(mdp.S, mdp.A);
            const PolicyEvalResult eval = exact_policy_eval(mdp, pi, gamma);
            for (std::size_t s = 0; s < mdp.S; ++s) {
                double backup = 0.0;
                for (std::size_t a = 0; a < mdp.A; ++a) {
                    double next = 0.0;
                    for (std::size_t s2 = 0; s2 < mdp.S; ++s2)
                        next += mdp.p(s, a, s2) * eval.v[s2];
                    const double qsa = mdp.r(s, a) + gamma * next;
                    worst = std::max(worst,
                                     std::abs(qsa - eval.q[s * mdp.A + a]));
                    backup += pi[s * mdp.A + a] * qsa;
                }
                worst = std::max(worst, std::abs(backup - eval.v[s]));
            }
        }
        CheckResult c;
        c.name = "exact policy evaluation has zero Bellman residual";
        c.passed = worst <= 1e-10;
        c.detail = detail::worst_vs_tol(worst, 1e-10);
        report.checks.push_back(c);
    }

    { // Discounted visitation vs geometric-termination Monte Carlo.
        RngStream noise(seed + 1);
        const PerturbedChainMDP chain(6, 3, 0.3, noise, 0.9, 120);
        const TabularMDP mdp = to_tabular(chain);
        const double gamma = 0.9;
        const std::vector<double> pi = random_policy(mdp.S, mdp.A);
        const std::vector<double> rho = discounted_visitation(mdp, pi, gamma);
        const std::size_t n_rollouts = 100000;
        std::vector<double> sum(mdp.S, 0.0), sumsq(mdp.S, 0.0);
        for (std::size_t r = 0; r < n_rollouts; ++r) {
            std::vector<double> visit(mdp.S, 0.0);
            std::size_t s = rng.categorical(mdp.mu);
            while (true) {
                visit[s] += 1.0;
                if (rng.uniform() >= gamma) break;
                const std::size_t a = rng.categorical(
                    std::span<const double>(pi.data() + s * mdp.A, mdp.A));
                s = rng.categorical(std::span<const double>(
                    mdp.P.data() + (s * mdp.A + a) * mdp.S, mdp.S));
            }
            for (std::size_t st = 0; st < mdp.S; ++st) {
                sum[st] += visit[st];
                sumsq[st] += visit[st] * visit[st];
            }
        }
        double worst_sigmas = 0.0;
        for (std::size_t s = 0; s < mdp.S; ++s) {
            const double mean = sum[s] / static_cast<double>(n_rollouts);
            const double var =
                (sumsq[s] / static_cast<double>(n_rollouts) - mean * mean) *
                static_cast<double>(n_rollouts) /
                static_cast<double>(n_rollouts - 1);
            const double se =
                std::sqrt(var / static_cast<double>(n_rollouts));
            if (se > 0.0)
                worst_sigmas =
                    std::max(worst_sigmas, std::abs(mean - rho[s]) / se);
        }
        CheckResult c;
        c.name = "discounted visitation matches 1e5 Monte-Carlo rollouts (3 sigma)";
        c.passed = worst_sigmas <= 3.0;
        c.detail = detail::worst_vs_tol(worst_sigmas, 3.0);
        report.checks.push_back(c);
    }

    { // The greedy policy from value iteration is improvement-stable: one
      // policy-improvement step maps it to itself.
        double worst = 0.0;
        bool stable = true;
        for (int trial = 0; trial < 30; ++trial) {
            RngStream noise(seed + 200 + static_cast<std::uint64_t>(trial));
            const PerturbedChainMDP chain(4 + rng.uniform_index(5), 3,
                                          0.5 * rng.uniform(), noise, 0.9, 60);
            const TabularMDP mdp = to_tabular(chain);
            const double gamma = 0.9;
            const ValueIterationResult vi = value_iteration(mdp, gamma);
            const std::vector<double> pi = policy_matrix(vi.greedy, mdp.A);
            const PolicyEvalResult eval = exact_policy_eval(mdp, pi, gamma);
            for (std::size_t s = 0; s < mdp.S; ++s) {
                double best = -1e300;
                for (std::size_t a = 0; a < mdp.A; ++a)
                    best = std::max(best, eval.q[s * mdp.A + a]);
                const double chosen = eval.q[s * mdp.A + vi.greedy[s]];
                if (chosen < best - 1e-10) stable = false;
                worst = std::max(worst, best - chosen);
                // Its evaluation also solves the optimality backup.
                worst = std::max(
                    worst, std::abs(eval.q[s * mdp.A + vi.greedy[s]] -
                                    vi.q[s * mdp.A + vi.greedy[s]]));
            }
        }
        CheckResult c;
        c.name = "value-iteration greedy policy is improvement-stable";
        c.passed = stable && worst <= 1e-8;
        c.detail = detail::worst_vs_tol(worst, 1e-8);
        report.checks.push_back(c);
    }

    return report;
}

} // namespace fedrl
