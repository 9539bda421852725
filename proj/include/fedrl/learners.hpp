// SPDX-License-Identifier: MIT
// Per-client learning machinery: rollout collection, generalized advantage
// estimation, critic regression (with optional proximal augmentation), and
// two actor update modes — direct log-probability regression onto
// β⁻¹·Q̂ + log π_old, and the adaptive-KL-penalty policy-gradient surrogate.
//
// The learners are deliberately order-agnostic: the caller decides which
// critic (freshly trained local vs. received global) fills the value
// estimates before the actor update, which is exactly the distinction the
// two federated variants exercise.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "fedrl/environments.hpp"
#include "fedrl/errors.hpp"
#include "fedrl/network.hpp"
#include "fedrl/policies.hpp"
#include "fedrl/rng.hpp"

namespace fedrl {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class ActorMode { mse_regression, kl_penalty };

struct LearnerConfig {
    double lr = 0.01;          ///< SGD step size (callers apply any round decay)
    double lr_decay = 0.98;    ///< per-round multiplicative decay
    std::size_t minibatch = 128;
    std::size_t epochs = 10;   ///< E passes over the batch
    double gamma = 0.99;
    double gae_lambda = 0.95;
    double kl_target = 0.01;   ///< adaptive-penalty KL set point
    ActorMode actor_mode = ActorMode::kl_penalty;
    double fedprox_mu = 0.0;   ///< proximal weight; 0 disables the term

    bool operator==(const LearnerConfig&) const = default;

    void validate() const {
        // lr = 0 is allowed and freezes learning (used by the no-op round
        // contract); validation rejects only negatives and non-finites.
        if (!(lr >= 0.0) || !std::isfinite(lr))
            throw InvalidArgument("LearnerConfig: lr must be >= 0");
        if (!(lr_decay > 0.0 && lr_decay <= 1.0))
            throw InvalidArgument("LearnerConfig: lr_decay must lie in (0, 1]");
        if (minibatch == 0)
            throw InvalidArgument("LearnerConfig: minibatch must be >= 1");
        if (epochs == 0) throw InvalidArgument("LearnerConfig: epochs must be >= 1");
        if (!(gamma >= 0.0 && gamma < 1.0))
            throw InvalidArgument("LearnerConfig: gamma must lie in [0, 1)");
        if (!(gae_lambda > 0.0 && gae_lambda <= 1.0))
            throw InvalidArgument("LearnerConfig: gae_lambda must lie in (0, 1]");
        if (!(kl_target > 0.0))
            throw InvalidArgument("LearnerConfig: kl_target must be > 0");
        if (!(fedprox_mu >= 0.0))
            throw InvalidArgument("LearnerConfig: fedprox_mu must be >= 0");
    }
};

// ---------------------------------------------------------------------------
// Trajectory batch
// ---------------------------------------------------------------------------

/// Exactly B collected transitions with everything the updates need. The
/// terminal flag marks episode boundaries (true termination or horizon
/// truncation — both bootstrap with value 0); episodes auto-reset inside
/// the batch.
struct TrajectoryBatch {
    std::vector<std::vector<double>> states;   ///< raw environment states
    std::vector<std::vector<double>> features; ///< encoded states
    std::vector<double> actions;
    std::vector<double> rewards;
    std::vector<unsigned char> terminals;      ///< episode ends after this step
    std::vector<double> old_log_probs;         ///< log π(a|s) under the collector
    std::vector<double> values;                ///< V(s_t), filled by compute_gae
    std::vector<double> advantages;            ///< Â_t
    std::vector<double> returns;               ///< Ĝ_t = Â_t + V(s_t)
    std::vector<double> q_targets;             ///< Q̂(s_t,a_t) := Ĝ_t
    std::vector<double> final_feature;         ///< encoding of the post-batch state

    std::size_t size() const { return rewards.size(); }

    void validate() const {
        const std::size_t n = size();
        if (n == 0) throw InvalidArgument("TrajectoryBatch: empty batch");
        if (states.size() != n || features.size() != n || actions.size() != n ||
            terminals.size() != n || old_log_probs.size() != n)
            throw DimensionError("TrajectoryBatch: core arrays must share length B");
        if (!advantages.empty()) {
            if (advantages.size() != n || values.size() != n ||
                returns.size() != n || q_targets.size() != n)
                throw DimensionError("TrajectoryBatch: estimate arrays must share length B");
            for (std::size_t t = 0; t < n; ++t) {
                if (!std::isfinite(advantages[t]))
                    throw DivergenceError("TrajectoryBatch: non-finite advantage");
                if (std::abs(returns[t] - (advantages[t] + values[t])) > 1e-9)
                    throw InvalidArgument(
                        "TrajectoryBatch: returns must equal advantages + values");
            }
        }
    }
};

// ---------------------------------------------------------------------------
// Policy-kind helpers (shared by collection and the actor updates)
// ---------------------------------------------------------------------------

inline std::size_t checked_action_index(const SoftmaxPolicy& policy, double action) {
    const long long idx = std::llround(action);
    if (idx < 0 || static_cast<std::size_t>(idx) >= policy.action_set.size() ||
        std::abs(action - static_cast<double>(idx)) > 1e-9)
        throw InvalidArgument("softmax action must be an integer action index");
    return static_cast<std::size_t>(idx);
}

inline double policy_log_prob(const SoftmaxPolicy& policy,
                              std::span<const double> state_enc, double action) {
    return softmax_log_probs(policy, state_enc)[checked_action_index(policy, action)];
}

inline double policy_log_prob(const GaussianPolicy& policy,
                              std::span<const double> state_enc, double action) {
    return gaussian_log_prob(policy, state_enc, action);
}

inline double policy_draw(const SoftmaxPolicy& policy,
                          std::span<const double> state_enc, RngStream& rng) {
    return static_cast<double>(sample_action(policy, state_enc, rng));
}

inline double policy_draw(const GaussianPolicy& policy,
                          std::span<const double> state_enc, RngStream& rng) {
    return sample_action(policy, state_enc, rng);
}

// ---------------------------------------------------------------------------
// Rollout collection
// ---------------------------------------------------------------------------

/// Runs the policy for exactly `B` timesteps, auto-resetting episodes at
/// terminals and at the horizon. Old log-probs are recorded under the
/// collecting policy at collection time.
template <typename Policy>
TrajectoryBatch collect_rollout(const Env& env, const Policy& policy,
                                std::size_t B, RngStream& rng) {
    if (B == 0) throw InvalidArgument("collect_rollout: need at least 1 timestep");
    TrajectoryBatch batch;
    batch.states.reserve(B);
    batch.features.reserve(B);
    batch.actions.reserve(B);
    batch.rewards.reserve(B);
    batch.terminals.reserve(B);
    batch.old_log_probs.reserve(B);

    std::vector<double> state = env.reset(rng);
    std::size_t episode_len = 0;
    for (std::size_t t = 0; t < B; ++t) {
        std::vector<double> enc = env.encode_state(state);
        const double action = policy_draw(policy, enc, rng);
        const double logp = policy_log_prob(policy, enc, action);
        const StepResult sr = env.step(state, action, rng);
        ++episode_len;
        const bool done = sr.terminal || episode_len >= env.horizon();

        batch.states.push_back(state);
        batch.features.push_back(std::move(enc));
        batch.actions.push_back(action);
        batch.rewards.push_back(sr.reward);
        batch.terminals.push_back(done ? 1 : 0);
        batch.old_log_probs.push_back(logp);

        if (done) {
            state = env.reset(rng);
            episode_len = 0;
        } else {
            state = sr.state;
        }
    }
    // Only consulted when the batch ends mid-episode.
    batch.final_feature = env.encode_state(state);
    return batch;
}

// ---------------------------------------------------------------------------
// Generalized advantage estimation
// ---------------------------------------------------------------------------

/// Fills values, advantages Â_t = Σ_{l≥0}(γλ)ˡ·δ_{t+l} (truncated at episode
/// ends), returns Ĝ = Â + V, and action-value targets Q̂ := Ĝ using the given
/// critic for every value estimate.
inline void compute_gae(TrajectoryBatch& batch, const NetworkParams& critic,
                        double gamma, double lambda) {
    if (!(gamma >= 0.0 && gamma < 1.0))
        throw InvalidArgument("compute_gae: gamma must lie in [0, 1)");
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw InvalidArgument("compute_gae: lambda must lie in [0, 1]");
    const std::size_t n = batch.size();
    if (n == 0) throw InvalidArgument("compute_gae: empty batch");

    batch.values.resize(n);
    for (std::size_t t = 0; t < n; ++t)
        batch.values[t] = forward(critic, batch.features[t]);
    const double final_value =
        batch.terminals[n - 1] ? 0.0 : forward(critic, batch.final_feature);

    batch.advantages.assign(n, 0.0);
    double next_adv = 0.0;
    for (std::size_t i = n; i-- > 0;) {
        const bool done = batch.terminals[i] != 0;
        const double next_value =
            done ? 0.0 : (i + 1 < n ? batch.values[i + 1] : final_value);
        const double delta =
            batch.rewards[i] + gamma * next_value - batch.values[i];
        next_adv = delta + (done ? 0.0 : gamma * lambda * next_adv);
        batch.advantages[i] = next_adv;
    }

    batch.returns.resize(n);
    for (std::size_t t = 0; t < n; ++t)
        batch.returns[t] = batch.advantages[t] + batch.values[t];
    batch.q_targets = batch.returns;
    batch.validate();
}

// ---------------------------------------------------------------------------
// Critic regression
// ---------------------------------------------------------------------------

/// Mean squared error of the critic against the return targets, plus the
/// proximal term (μ/2)·‖w − w_anchor‖² when an anchor is supplied.
inline double critic_loss(const NetworkParams& critic, const TrajectoryBatch& batch,
                          const NetworkParams* anchor = nullptr, double mu = 0.0) {
    if (batch.returns.size() != batch.size())
        throw InvalidArgument("critic_loss: return targets missing");
    double acc = 0.0;
    for (std::size_t t = 0; t < batch.size(); ++t) {
        const double r = forward(critic, batch.features[t]) - batch.returns[t];
        acc += r * r;
    }
    acc /= static_cast<double>(batch.size());
    if (anchor != nullptr && mu > 0.0) {
        const double d = param_distance(critic, *anchor);
        acc += 0.5 * mu * d * d;
    }
    return acc;
}

namespace detail {

inline void shuffle_indices(std::vector<std::size_t>& idx, RngStream& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
}

} // namespace detail

/// E epochs of minibatch SGD on the squared return-regression error. The
/// parameters received at entry serve as the proximal anchor when
/// fedprox_mu > 0 (they are the globally aggregated weights in federated
/// use). `grad_offset`, when non-empty, is added to every step's gradient
/// (control-variate correction). Projection runs after every step.
inline NetworkParams train_critic(NetworkParams critic, const TrajectoryBatch& batch,
                                  const LearnerConfig& cfg, RngStream& rng,
                                  std::span<const double> grad_offset = {}) {
    cfg.validate();
    batch.validate();
    if (batch.returns.size() != batch.size())
        throw InvalidArgument("train_critic: return targets missing");
    if (!grad_offset.empty() && grad_offset.size() != critic.weights.size())
        throw DimensionError("train_critic: gradient offset shape mismatch");
    const NetworkParams anchor = critic;
    const std::size_t n = batch.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::vector<double> grad(critic.weights.size());

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        detail::shuffle_indices(order, rng);
        for (std::size_t start = 0; start < n; start += cfg.minibatch) {
            const std::size_t stop = std::min(n, start + cfg.minibatch);
            const double scale = 1.0 / static_cast<double>(stop - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t k = start; k < stop; ++k) {
                const std::size_t i = order[k];
                const double pred = forward(critic, batch.features[i]);
                if (!std::isfinite(pred))
                    throw DivergenceError("train_critic: non-finite prediction");
                const double residual = pred - batch.returns[i];
                const std::vector<double> g = gradient(critic, batch.features[i]);
                const double coeff = 2.0 * residual * scale;
                for (std::size_t j = 0; j < grad.size(); ++j)
                    grad[j] += coeff * g[j];
            }
            if (cfg.fedprox_mu > 0.0)
                for (std::size_t j = 0; j < grad.size(); ++j)
                    grad[j] += cfg.fedprox_mu * (critic.weights[j] - anchor.weights[j]);
            for (std::size_t j = 0; j < grad_offset.size(); ++j)
                grad[j] += grad_offset[j];
            critic = sgd_step(std::move(critic), grad, cfg.lr);
        }
    }
    return critic;
}

// ---------------------------------------------------------------------------
// Actor updates
// ---------------------------------------------------------------------------

struct ActorUpdateResult {
    NetworkParams params;
    double beta = 0.0;        ///< adaptive penalty after this update
    double measured_kl = 0.0; ///< mean KL(π_new ‖ π_old) over batch states
    double final_loss = 0.0;  ///< regression MSE (mse mode) / −surrogate (kl mode)
};

inline constexpr double kBetaFloor = 1e-4;
inline constexpr double kBetaCeil = 1e4;

/// Regression loss of mse mode: mean over the batch of
/// (log π_θ(a|s) − [β⁻¹·Q̂(s,a) + log π_old(a|s)])².
template <typename Policy>
double actor_mse_loss(const Policy& policy, const TrajectoryBatch& batch,
                      double beta_t) {
    if (!(beta_t > 0.0)) throw InvalidArgument("actor_mse_loss: beta must be > 0");
    if (batch.q_targets.size() != batch.size())
        throw InvalidArgument("actor_mse_loss: action-value targets missing");
    double acc = 0.0;
    for (std::size_t t = 0; t < batch.size(); ++t) {
        const double target =
            batch.q_targets[t] / beta_t + batch.old_log_probs[t];
        const double r =
            policy_log_prob(policy, batch.features[t], batch.actions[t]) - target;
        acc += r * r;
    }
    return acc / static_cast<double>(batch.size());
}

namespace detail {

/// Per-sample softmax quantities shared by both actor modes: per-action
/// log-probs, raw energy gradients g_b = ∇f(s,b), and the probability-
/// weighted mean ḡ = Σ_b π(b|s)·g_b. Then
///   ∇ log π(a|s) = (1/τ)·(g_a − ḡ)
///   ∇ KL(π‖π_old) = (1/τ)·Σ_b π(b|s)·(log π_b − log π_old,b)·(g_b − ḡ).
struct SoftmaxSampleGrads {
    std::vector<double> logp;
    std::vector<std::vector<double>> g;
    std::vector<double> gbar;
};

inline SoftmaxSampleGrads softmax_sample_grads(const SoftmaxPolicy& policy,
                                               std::span<const double> state_enc) {
    SoftmaxSampleGrads out;
    out.logp = softmax_log_probs(policy, state_enc);
    const std::size_t A = policy.action_set.size();
    out.gbar.assign(policy.net.weights.size(), 0.0);
    for (std::size_t b = 0; b < A; ++b) {
        const std::vector<double> input =
            concat_input(state_enc, policy.action_set[b]);
        out.g.push_back(gradient(policy.net, input));
        const double p = std::exp(out.logp[b]);
        for (std::size_t j = 0; j < out.gbar.size(); ++j)
            out.gbar[j] += p * out.g[b][j];
    }
    return out;
}

/// Advantages normalized to zero mean / unit variance (standard practice in
/// the penalty mode only).
inline std::vector<double> normalized_advantages(const TrajectoryBatch& batch) {
    std::vector<double> adv = batch.advantages;
    double mean = 0.0;
    for (double v : adv) mean += v;
    mean /= static_cast<double>(adv.size());
    double var = 0.0;
    for (double v : adv) var += (v - mean) * (v - mean);
    var /= static_cast<double>(adv.size());
    const double scale = 1.0 / (std::sqrt(var) + 1e-8);
    for (double& v : adv) v = (v - mean) * scale;
    return adv;
}

inline double adapt_beta(double beta, double measured_kl, double kl_target) {
    if (measured_kl > 1.5 * kl_target) beta *= 2.0;
    else if (measured_kl < kl_target / 1.5) beta /= 2.0;
    return std::clamp(beta, kBetaFloor, kBetaCeil);
}

} // namespace detail

/// Softmax-actor update. In mse mode the net regresses its log-probability
/// at the taken action onto β_t⁻¹·Q̂ + log π_old with β_t from the schedule;
/// `beta_penalty` passes through. In kl mode the net ascends
/// Â·log π − β·KL(π‖π_old) and β adapts once per call toward the KL target.
inline ActorUpdateResult train_actor(const SoftmaxPolicy& actor,
                                     const TrajectoryBatch& batch,
                                     const LearnerConfig& cfg,
                                     const ScheduleSet& schedules,
                                     std::size_t round, double beta_penalty,
                                     RngStream& rng,
                                     std::span<const double> grad_offset = {}) {
    cfg.validate();
    batch.validate();
    if (batch.q_targets.size() != batch.size())
        throw InvalidArgument("train_actor: action-value targets missing");
    if (!grad_offset.empty() && grad_offset.size() != actor.net.weights.size())
        throw DimensionError("train_actor: gradient offset shape mismatch");
    const SoftmaxPolicy old_actor = actor; // π_old snapshot for targets and KL
    SoftmaxPolicy cur = actor;
    const std::size_t n = batch.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    const bool mse = cfg.actor_mode == ActorMode::mse_regression;
    const double beta_t = mse ? schedules.beta_of(round) : 0.0;
    const std::vector<double> adv =
        mse ? std::vector<double>{} : detail::normalized_advantages(batch);

    std::vector<double> grad(cur.net.weights.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        detail::shuffle_indices(order, rng);
        for (std::size_t start = 0; start < n; start += cfg.minibatch) {
            const std::size_t stop = std::min(n, start + cfg.minibatch);
            const double scale = 1.0 / static_cast<double>(stop - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t k = start; k < stop; ++k) {
                const std::size_t i = order[k];
                const std::size_t a_idx = checked_action_index(cur, batch.actions[i]);
                const detail::SoftmaxSampleGrads sg =
                    detail::softmax_sample_grads(cur, batch.features[i]);
                if (!std::isfinite(sg.logp[a_idx]))
                    throw DivergenceError("train_actor: non-finite log-probability");
                const double inv_tau = 1.0 / cur.temperature;
                if (mse) {
                    const double target =
                        batch.q_targets[i] / beta_t + batch.old_log_probs[i];
                    const double coeff =
                        2.0 * (sg.logp[a_idx] - target) * inv_tau * scale;
                    for (std::size_t j = 0; j < grad.size(); ++j)
                        grad[j] += coeff * (sg.g[a_idx][j] - sg.gbar[j]);
                } else {
                    // Ascent on Â·log π − β·KL; sgd_step descends, so negate.
                    const std::vector<double> logp_old =
                        softmax_log_probs(old_actor, batch.features[i]);
                    const double adv_coeff = -adv[i] * inv_tau * scale;
                    for (std::size_t j = 0; j < grad.size(); ++j)
                        grad[j] += adv_coeff * (sg.g[a_idx][j] - sg.gbar[j]);
                    for (std::size_t b = 0; b < cur.action_set.size(); ++b) {
                        const double w = beta_penalty * std::exp(sg.logp[b]) *
                                         (sg.logp[b] - logp_old[b]) * inv_tau * scale;
                        if (w == 0.0) continue;
                        for (std::size_t j = 0; j < grad.size(); ++j)
                            grad[j] += w * (sg.g[b][j] - sg.gbar[j]);
                    }
                }
            }
            for (std::size_t j = 0; j < grad_offset.size(); ++j)
                grad[j] += grad_offset[j];
            cur.net = sgd_step(std::move(cur.net), grad, cfg.lr);
        }
    }

    ActorUpdateResult out;
    out.params = cur.net;
    double kl_acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::vector<double> p_new = softmax_probs(cur, batch.features[i]);
        const std::vector<double> p_old = softmax_probs(old_actor, batch.features[i]);
        kl_acc += kl_divergence(p_new, p_old);
    }
    out.measured_kl = kl_acc / static_cast<double>(n);
    out.beta = mse ? beta_penalty
                   : detail::adapt_beta(beta_penalty, out.measured_kl, cfg.kl_target);
    if (mse) {
        out.final_loss = actor_mse_loss(cur, batch, beta_t);
    } else {
        double surr = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            surr += adv[i] * policy_log_prob(cur, batch.features[i], batch.actions[i]);
        out.final_loss = -(surr / static_cast<double>(n) -
                           beta_penalty * out.measured_kl);
    }
    if (!std::isfinite(out.final_loss))
        throw DivergenceError("train_actor: non-finite loss");
    return out;
}

/// Gaussian-actor update; same two modes with the closed-form Gaussian KL
/// (the collection σ_t is shared by π_old and π_new within a round).
inline ActorUpdateResult train_actor(const GaussianPolicy& actor,
                                     const TrajectoryBatch& batch,
                                     const LearnerConfig& cfg,
                                     const ScheduleSet& schedules,
                                     std::size_t round, double beta_penalty,
                                     RngStream& rng,
                                     std::span<const double> grad_offset = {}) {
    cfg.validate();
    batch.validate();
    if (batch.q_targets.size() != batch.size())
        throw InvalidArgument("train_actor: action-value targets missing");
    if (!grad_offset.empty() && grad_offset.size() != actor.net.weights.size())
        throw DimensionError("train_actor: gradient offset shape mismatch");
    const GaussianPolicy old_actor = actor;
    GaussianPolicy cur = actor;
    const double sigma2 = cur.stddev * cur.stddev;
    const std::size_t n = batch.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    const bool mse = cfg.actor_mode == ActorMode::mse_regression;
    const double beta_t = mse ? schedules.beta_of(round) : 0.0;
    const std::vector<double> adv =
        mse ? std::vector<double>{} : detail::normalized_advantages(batch);

    std::vector<double> grad(cur.net.weights.size());
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        detail::shuffle_indices(order, rng);
        for (std::size_t start = 0; start < n; start += cfg.minibatch) {
            const std::size_t stop = std::min(n, start + cfg.minibatch);
            const double scale = 1.0 / static_cast<double>(stop - start);
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t k = start; k < stop; ++k) {
                const std::size_t i = order[k];
                const double f = forward(cur.net, batch.features[i]);
                if (!std::isfinite(f))
                    throw DivergenceError("train_actor: non-finite mean output");
                const std::vector<double> g = gradient(cur.net, batch.features[i]);
                // ∇ log π(a|s) = ((a − f)/σ²)·∇f.
                const double dlog = (batch.actions[i] - f) / sigma2;
                if (mse) {
                    const double logp =
                        gaussian_log_prob(cur, batch.features[i], batch.actions[i]);
                    const double target =
                        batch.q_targets[i] / beta_t + batch.old_log_probs[i];
                    const double coeff = 2.0 * (logp - target) * dlog * scale;
                    for (std::size_t j = 0; j < grad.size(); ++j)
                        grad[j] += coeff * g[j];
                } else {
                    const double f_old = forward(old_actor.net, batch.features[i]);
                    // ∇KL = ((f − f_old)/σ²)·∇f for equal stddevs.
                    const double coeff =
                        (-adv[i] * dlog + beta_penalty * (f - f_old) / sigma2) *
                        scale;
                    for (std::size_t j = 0; j < grad.size(); ++j)
                        grad[j] += coeff * g[j];
                }
            }
            for (std::size_t j = 0; j < grad_offset.size(); ++j)
                grad[j] += grad_offset[j];
            cur.net = sgd_step(std::move(cur.net), grad, cfg.lr);
        }
    }

    ActorUpdateResult out;
    out.params = cur.net;
    double kl_acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double f_new = forward(cur.net, batch.features[i]);
        const double f_old = forward(old_actor.net, batch.features[i]);
        kl_acc += kl_divergence_gaussian(f_new, cur.stddev, f_old, old_actor.stddev);
    }
    out.measured_kl = kl_acc / static_cast<double>(n);
    out.beta = mse ? beta_penalty
                   : detail::adapt_beta(beta_penalty, out.measured_kl, cfg.kl_target);
    if (mse) {
        out.final_loss = actor_mse_loss(cur, batch, beta_t);
    } else {
        double surr = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            surr += adv[i] * policy_log_prob(cur, batch.features[i], batch.actions[i]);
        out.final_loss = -(surr / static_cast<double>(n) -
                           beta_penalty * out.measured_kl);
    }
    if (!std::isfinite(out.final_loss))
        throw DivergenceError("train_actor: non-finite loss");
    return out;
}

// ---------------------------------------------------------------------------
// Policy evaluation rollouts
// ---------------------------------------------------------------------------

/// Mean undiscounted episode return over `n_episodes` fresh episodes
/// (horizon-truncated), with its standard error.
template <typename Policy>
std::pair<double, double> evaluate_return(const Env& env, const Policy& policy,
                                          std::size_t n_episodes, RngStream& rng) {
    if (n_episodes == 0)
        throw InvalidArgument("evaluate_return: need at least one episode");
    std::vector<double> totals;
    totals.reserve(n_episodes);
    for (std::size_t e = 0; e < n_episodes; ++e) {
        std::vector<double> state = env.reset(rng);
        double total = 0.0;
        for (std::size_t t = 0; t < env.horizon(); ++t) {
            const std::vector<double> enc = env.encode_state(state);
            const double action = policy_draw(policy, enc, rng);
            const StepResult sr = env.step(state, action, rng);
            total += sr.reward;
            if (sr.terminal) break;
            state = sr.state;
        }
        totals.push_back(total);
    }
    double mean = 0.0;
    for (double v : totals) mean += v;
    mean /= static_cast<double>(totals.size());
    double var = 0.0;
    for (double v : totals) var += (v - mean) * (v - mean);
    var /= static_cast<double>(totals.size());
    const double std_error = std::sqrt(var / static_cast<double>(totals.size()));
    return {mean, std_error};
}

} // namespace fedrl
