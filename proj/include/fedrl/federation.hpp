// SPDX-License-Identifier: MIT
// Server-side orchestration of federated actor-critic training: client
// sampling, the two intra-round update orders (critic-then-actor vs.
// actor-then-critic), data-weighted parameter aggregation, and the three
// base algorithms (plain averaging, proximal local training, and
// control-variate drift correction).
//
// One round: broadcast (θᵗ, wᵗ) → each sampled client collects a fixed-size
// rollout with π_{θᵗ} and runs its local updates → the server averages the
// returned parameters with weights q_k and evaluates the new global policy.
// The only difference between the two variants is whether a client's actor
// consumes value estimates from its freshly trained local critic (baseline)
// or from the received global critic (fedrac).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedrl/analysis.hpp"
#include "fedrl/environments.hpp"
#include "fedrl/errors.hpp"
#include "fedrl/learners.hpp"
#include "fedrl/network.hpp"
#include "fedrl/policies.hpp"
#include "fedrl/rng.hpp"

namespace fedrl {

// ---------------------------------------------------------------------------
// Variants and base algorithms
// ---------------------------------------------------------------------------

/// Intra-round update order: baseline trains the critic before the actor,
/// fedrac trains the actor first against the received global critic.
enum class Variant { baseline, fedrac };

/// Federated base algorithm the variant runs on top of.
enum class BaseAlgo { fedavg, fedprox, scaffold };

inline std::string to_string(Variant v) {
    return v == Variant::baseline ? "baseline" : "fedrac";
}

inline std::string to_string(BaseAlgo a) {
    switch (a) {
        case BaseAlgo::fedavg: return "fedavg";
        case BaseAlgo::fedprox: return "fedprox";
        default: return "scaffold";
    }
}

inline Variant parse_variant(std::string_view s) {
    if (s == "baseline") return Variant::baseline;
    if (s == "fedrac") return Variant::fedrac;
    throw InvalidArgument("unknown variant '" + std::string(s) +
                          "' (expected baseline or fedrac)");
}

inline BaseAlgo parse_base_algo(std::string_view s) {
    if (s == "fedavg") return BaseAlgo::fedavg;
    if (s == "fedprox") return BaseAlgo::fedprox;
    if (s == "scaffold") return BaseAlgo::scaffold;
    throw InvalidArgument("unknown base algorithm '" + std::string(s) +
                          "' (expected fedavg, fedprox, or scaffold)");
}

// ---------------------------------------------------------------------------
// Server state
// ---------------------------------------------------------------------------

/// Registry entry for one client.
struct ClientInfo {
    std::size_t id = 0;
    double data_weight = 1.0;   ///< l_n
    double q = 0.0;             ///< q_n = l_n / Σ l
    std::uint64_t env_seed = 0; ///< environment construction seed (manifest)
};

/// Control variates for drift correction, kept per parameter block.
struct ScaffoldState {
    std::vector<double> c_actor;  ///< server variate for the actor block
    std::vector<double> c_critic; ///< server variate for the critic block
    std::vector<std::vector<double>> client_actor;  ///< c_n, actor block
    std::vector<std::vector<double>> client_critic; ///< c_n, critic block
};

/// Everything the server carries between rounds.
struct FederationState {
    std::size_t round = 0;   ///< t, the next round to run
    std::size_t horizon = 0; ///< T, total rounds
    NetworkParams actor;     ///< θᵗ
    NetworkParams critic;    ///< wᵗ
    std::vector<ClientInfo> clients;
    Variant variant = Variant::baseline;
    BaseAlgo base_algo = BaseAlgo::fedavg;
    std::optional<ScaffoldState> scaffold; ///< present iff base_algo == scaffold
    std::vector<double> beta_penalties;    ///< adaptive KL β per client

    void validate() const {
        if (round > horizon)
            throw InvalidArgument("FederationState: round index exceeds horizon");
        if (clients.empty()) throw InvalidArgument("FederationState: no clients");
        double qsum = 0.0;
        for (const ClientInfo& c : clients) qsum += c.q;
        if (std::abs(qsum - 1.0) > 1e-12)
            throw InvalidArgument("FederationState: client weights must sum to 1");
        if (scaffold.has_value() != (base_algo == BaseAlgo::scaffold))
            throw InvalidArgument(
                "FederationState: control variates present iff base algorithm "
                "is scaffold");
        if (beta_penalties.size() != clients.size())
            throw InvalidArgument("FederationState: one KL penalty per client required");
    }
};

/// What one round produced: who participated, how far each client moved,
/// how the new global policy evaluates, and the round diagnostics.
struct RoundReport {
    std::size_t round = 0;
    std::vector<std::size_t> participants;  ///< exactly K ids, ascending
    std::vector<double> actor_deltas;       ///< ‖θ_k^{t+1} − θᵗ‖₂ per participant
    std::vector<double> critic_deltas;      ///< ‖w_k^{t+1} − wᵗ‖₂ per participant
    /// Per participant: 1 iff the parameters whose value estimates fed the
    /// actor update were bitwise equal to the broadcast critic wᵗ.
    std::vector<unsigned char> value_source_is_broadcast;
    std::vector<double> client_returns;     ///< eval mean per client (all N)
    double mean_return = 0.0;               ///< f(θ^{t+1}) = Σ q_n · mean_n
    double return_stderr = 0.0;
    double kappa = 0.0;               ///< critic disagreement across participants
    double omega = 0.0;               ///< aggregation error in log probability
    double stepwise_logdiff = 0.0;    ///< sup-norm log-ratio of consecutive globals
    double linearization_error = 0.0; ///< mean |f − f⁰| of the new global actor
    double critic_eval_error = 0.0;   ///< aggregated critic's MSE on round targets

    void validate(std::size_t expected_k) const {
        if (participants.size() != expected_k)
            throw InvalidArgument("RoundReport: wrong participant count");
        if (actor_deltas.size() != expected_k || critic_deltas.size() != expected_k ||
            value_source_is_broadcast.size() != expected_k)
            throw InvalidArgument(
                "RoundReport: one instrumentation entry per participant required");
    }
};

// ---------------------------------------------------------------------------
// Client sampling
// ---------------------------------------------------------------------------

/// Uniform sample of K distinct client ids out of N, returned ascending.
inline std::vector<std::size_t> sample_clients(std::size_t n_clients, std::size_t k,
                                               RngStream& rng) {
    if (k == 0) throw InvalidArgument("sample_clients: need at least one client");
    if (k > n_clients)
        throw InvalidArgument("sample_clients: cannot sample more clients than exist");
    std::vector<std::size_t> ids(n_clients);
    for (std::size_t i = 0; i < n_clients; ++i) ids[i] = i;
    // Partial Fisher–Yates: after i swaps the prefix is a uniform i-subset.
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.uniform_index(n_clients - i);
        std::swap(ids[i], ids[j]);
    }
    ids.resize(k);
    std::sort(ids.begin(), ids.end());
    return ids;
}

// ---------------------------------------------------------------------------
// One client's local round
// ---------------------------------------------------------------------------

/// Frozen inputs for one client's local work in round t.
struct ClientRoundParams {
    Variant variant = Variant::baseline;
    LearnerConfig learner;        ///< lr already decayed for this round
    ScheduleSet schedules;
    std::size_t round = 0;
    std::size_t batch_size = 512; ///< B timesteps to collect
    double tau = 1.0;             ///< softmax temperature this round
    double sigma = 1.0;           ///< exploration stddev this round
    double beta_penalty = 1.0;    ///< adaptive KL β carried in
    std::span<const double> c_global_actor = {};  ///< drift variates (scaffold)
    std::span<const double> c_client_actor = {};
    std::span<const double> c_global_critic = {};
    std::span<const double> c_client_critic = {};
};

/// One client's round output, with the instrumentation the order contract
/// and the diagnostics need.
struct ClientRoundResult {
    std::size_t client_id = 0;
    NetworkParams actor;     ///< θ_k^{t+1}
    NetworkParams critic;    ///< w_k^{t+1}
    double data_weight = 0.0; ///< l_k, uploaded with the parameters
    double beta_penalty = 1.0;
    double measured_kl = 0.0;
    NetworkParams gae_critic; ///< the critic whose values fed the actor update
    TrajectoryBatch batch;    ///< rollout with estimates under the received wᵗ
    std::vector<double> c_actor_new;  ///< updated variates (scaffold only)
    std::vector<double> c_critic_new;
};

namespace detail {

/// Local SGD step count of one training call: E epochs of ⌈B/b⌉ minibatches.
inline std::size_t sgd_step_count(std::size_t batch_size, const LearnerConfig& cfg) {
    return cfg.epochs * ((batch_size + cfg.minibatch - 1) / cfg.minibatch);
}

/// c_k⁺ = c_k − c + (global − local)/(steps·lr). With frozen learning
/// (lr = 0) or no steps the variate is left unchanged.
inline std::vector<double> updated_client_variate(std::span<const double> c_client,
                                                  std::span<const double> c_global,
                                                  const NetworkParams& global,
                                                  const NetworkParams& local,
                                                  std::size_t steps, double lr) {
    if (c_client.size() != global.weights.size() ||
        c_global.size() != global.weights.size())
        throw DimensionError("scaffold: control variate shape mismatch");
    std::vector<double> out(c_client.begin(), c_client.end());
    if (steps == 0 || lr == 0.0) return out;
    const double inv = 1.0 / (static_cast<double>(steps) * lr);
    for (std::size_t j = 0; j < out.size(); ++j)
        out[j] += -c_global[j] + (global.weights[j] - local.weights[j]) * inv;
    return out;
}

/// The per-step gradient correction (c − c_k); empty when not drifting.
inline std::vector<double> variate_offset(std::span<const double> c_global,
                                          std::span<const double> c_client) {
    if (c_global.empty() && c_client.empty()) return {};
    if (c_global.size() != c_client.size())
        throw DimensionError("scaffold: control variate shape mismatch");
    std::vector<double> out(c_global.size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = c_global[j] - c_client[j];
    return out;
}

inline double weight_delta_l2(const NetworkParams& a, const NetworkParams& b) {
    if (a.weights.size() != b.weights.size())
        throw DimensionError("weight_delta_l2: parameter shapes differ");
    double acc = 0.0;
    for (std::size_t j = 0; j < a.weights.size(); ++j) {
        const double d = a.weights[j] - b.weights[j];
        acc += d * d;
    }
    return std::sqrt(acc);
}

inline SoftmaxPolicy make_softmax(const Env& env, NetworkParams net, double tau) {
    SoftmaxPolicy pol;
    pol.net = std::move(net);
    pol.temperature = tau;
    pol.action_set.reserve(env.action_count());
    for (std::size_t a = 0; a < env.action_count(); ++a)
        pol.action_set.push_back(env.encode_action(static_cast<double>(a)));
    return pol;
}

} // namespace detail

/// Runs one client's local round. Both variants collect the same B-step
/// rollout with π_{θᵗ}; then
///   baseline: train critic from wᵗ, refresh the value estimates with the
///             new local critic, train the actor on those;
///   fedrac:   train the actor on value estimates from the received wᵗ,
///             then train the critic from wᵗ on the same targets.
/// The returned batch always carries estimates under the received wᵗ so
/// round diagnostics are comparable across variants; `gae_critic` records
/// the exact parameters whose values the actor consumed.
inline ClientRoundResult client_round(const Env& env, std::size_t client_id,
                                      double data_weight,
                                      const NetworkParams& global_actor,
                                      const NetworkParams& global_critic,
                                      const ClientRoundParams& params,
                                      RngStream& rng) {
    params.learner.validate();
    try {
        ClientRoundResult out;
        out.client_id = client_id;
        out.data_weight = data_weight;

        const std::vector<double> actor_offset =
            detail::variate_offset(params.c_global_actor, params.c_client_actor);
        const std::vector<double> critic_offset =
            detail::variate_offset(params.c_global_critic, params.c_client_critic);

        TrajectoryBatch batch;
        ActorUpdateResult actor_update;
        if (env.discrete_actions()) {
            const SoftmaxPolicy collector =
                detail::make_softmax(env, global_actor, params.tau);
            batch = collect_rollout(env, collector, params.batch_size, rng);
            compute_gae(batch, global_critic, params.learner.gamma,
                        params.learner.gae_lambda);
            if (params.variant == Variant::baseline) {
                out.critic = train_critic(global_critic, batch, params.learner, rng,
                                          critic_offset);
                out.gae_critic = out.critic;
                compute_gae(batch, out.critic, params.learner.gamma,
                            params.learner.gae_lambda);
                actor_update =
                    train_actor(collector, batch, params.learner, params.schedules,
                                params.round, params.beta_penalty, rng, actor_offset);
                // Restore estimates under the received critic for diagnostics.
                compute_gae(batch, global_critic, params.learner.gamma,
                            params.learner.gae_lambda);
            } else {
                out.gae_critic = global_critic;
                actor_update =
                    train_actor(collector, batch, params.learner, params.schedules,
                                params.round, params.beta_penalty, rng, actor_offset);
                out.critic = train_critic(global_critic, batch, params.learner, rng,
                                          critic_offset);
            }
        } else {
            GaussianPolicy collector;
            collector.net = global_actor;
            collector.stddev = params.sigma;
            batch = collect_rollout(env, collector, params.batch_size, rng);
            compute_gae(batch, global_critic, params.learner.gamma,
                        params.learner.gae_lambda);
            if (params.variant == Variant::baseline) {
                out.critic = train_critic(global_critic, batch, params.learner, rng,
                                          critic_offset);
                out.gae_critic = out.critic;
                compute_gae(batch, out.critic, params.learner.gamma,
                            params.learner.gae_lambda);
                actor_update =
                    train_actor(collector, batch, params.learner, params.schedules,
                                params.round, params.beta_penalty, rng, actor_offset);
                compute_gae(batch, global_critic, params.learner.gamma,
                            params.learner.gae_lambda);
            } else {
                out.gae_critic = global_critic;
                actor_update =
                    train_actor(collector, batch, params.learner, params.schedules,
                                params.round, params.beta_penalty, rng, actor_offset);
                out.critic = train_critic(global_critic, batch, params.learner, rng,
                                          critic_offset);
            }
        }

        out.actor = std::move(actor_update.params);
        out.beta_penalty = actor_update.beta;
        out.measured_kl = actor_update.measured_kl;
        out.batch = std::move(batch);

        if (!params.c_global_actor.empty()) {
            const std::size_t steps =
                detail::sgd_step_count(params.batch_size, params.learner);
            out.c_actor_new = detail::updated_client_variate(
                params.c_client_actor, params.c_global_actor, global_actor,
                out.actor, steps, params.learner.lr);
            out.c_critic_new = detail::updated_client_variate(
                params.c_client_critic, params.c_global_critic, global_critic,
                out.critic, steps, params.learner.lr);
        }
        return out;
    } catch (const DivergenceError& e) {
        throw DivergenceError("client " + std::to_string(client_id) + ": " +
                              e.what());
    }
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

/// Weighted average of parameter blocks: weights matrix = Σ q_k·weights_k,
/// summed in the given (ascending client-id) order. All inputs must share
/// the frozen fields — clients must have started from one initialization.
/// The result is projected, which convexity makes a no-op.
inline NetworkParams aggregate(const std::vector<NetworkParams>& params,
                               const std::vector<double>& q) {
    if (params.empty()) throw InvalidArgument("aggregate: no parameters given");
    if (q.size() != params.size())
        throw InvalidArgument("aggregate: one weight per parameter block required");
    double qsum = 0.0;
    for (double w : q) {
        if (!(w >= 0.0)) throw InvalidArgument("aggregate: weights must be >= 0");
        qsum += w;
    }
    if (std::abs(qsum - 1.0) > 1e-12)
        throw InvalidArgument("aggregate: weights must sum to 1");

    const NetworkParams& head = params.front();
    for (const NetworkParams& p : params) {
        if (p.width != head.width || p.input_dim != head.input_dim ||
            p.weights.size() != head.weights.size() || p.radius != head.radius)
            throw DimensionError("aggregate: parameter shapes differ");
        if (p.init_weights != head.init_weights ||
            p.output_signs != head.output_signs)
            throw InvalidArgument(
                "aggregate: clients do not share one initialization");
    }

    NetworkParams out = head;
    std::fill(out.weights.begin(), out.weights.end(), 0.0);
    for (std::size_t k = 0; k < params.size(); ++k)
        for (std::size_t j = 0; j < out.weights.size(); ++j)
            out.weights[j] += q[k] * params[k].weights[j];
    return project_to_ball(std::move(out));
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Server-side knobs for a full training run.
struct TrainingSetup {
    Variant variant = Variant::baseline;
    BaseAlgo base_algo = BaseAlgo::fedavg;
    LearnerConfig learner;
    std::size_t rounds = 30;           ///< T
    std::size_t clients_per_round = 0; ///< K; 0 means every client
    std::size_t batch_size = 512;      ///< B
    std::size_t eval_episodes = 5;     ///< per client per round
    std::size_t actor_width = 64;
    std::size_t critic_width = 64;
    double actor_radius = 5.0;
    double critic_radius = 10.0;
    double tau = 1.0;                ///< fixed softmax temperature…
    bool tau_from_schedule = false;  ///< …unless the τ_t schedule is requested
    double beta_base = 0.3;          ///< β for the schedule set
    double sigma0 = 1.0;             ///< exploration stddev at t = 0
    double sigma_decay = 0.995;
    double initial_beta_penalty = 1.0; ///< adaptive KL β at t = 0
    std::uint64_t master_seed = 1;
    std::size_t diag_probes = 32; ///< probe states per participant; 0 disables

    ScheduleSet schedules() const {
        ScheduleSet s;
        s.beta_base = beta_base;
        s.horizon = rounds == 0 ? 1 : rounds;
        s.sigma0 = sigma0;
        s.sigma_decay = sigma_decay;
        return s;
    }

    void validate(std::size_t n_clients) const {
        learner.validate();
        if (n_clients == 0) throw InvalidArgument("TrainingSetup: no clients");
        if (clients_per_round > n_clients)
            throw InvalidArgument(
                "TrainingSetup: cannot sample more clients than exist");
        if (batch_size == 0)
            throw InvalidArgument("TrainingSetup: batch_size must be >= 1");
        if (eval_episodes == 0)
            throw InvalidArgument("TrainingSetup: eval_episodes must be >= 1");
        if (actor_width == 0 || critic_width == 0)
            throw InvalidArgument("TrainingSetup: network widths must be >= 1");
        if (!(actor_radius >= 0.0) || !(critic_radius >= 0.0))
            throw InvalidArgument("TrainingSetup: radii must be >= 0");
        if (!(tau > 0.0)) throw InvalidArgument("TrainingSetup: tau must be > 0");
        if (!(beta_base > 0.0))
            throw InvalidArgument("TrainingSetup: beta_base must be > 0");
        if (!(sigma0 > 0.0) || !(sigma_decay > 0.0 && sigma_decay <= 1.0))
            throw InvalidArgument("TrainingSetup: invalid exploration schedule");
        if (!(initial_beta_penalty > 0.0))
            throw InvalidArgument("TrainingSetup: initial KL penalty must be > 0");
    }
};

/// A finished (or empty) run: the final server state plus every report.
struct TrainingResult {
    FederationState state;
    std::vector<RoundReport> reports;
};

namespace detail {

/// State-encoding dimension probed with the zero state (valid for both
/// environment families, whose encoders are state-independent in shape).
inline std::size_t state_encoding_dim(const Env& env) {
    return env.encode_state(std::vector<double>(env.state_dim(), 0.0)).size();
}

} // namespace detail

/// Builds the round-0 server state: shared (θ⁰, w⁰) drawn from streams
/// derived from the master seed, the client registry, and (for scaffold)
/// zero-initialized control variates.
inline FederationState init_federation(const ClientPopulation& pop,
                                       const TrainingSetup& setup) {
    const std::size_t n = pop.envs.size();
    setup.validate(n);
    const Env& probe = *pop.envs.front();
    const std::size_t state_dim = detail::state_encoding_dim(probe);
    const std::size_t actor_dim =
        probe.discrete_actions() ? probe.encoding_dim() : state_dim;

    FederationState st;
    st.round = 0;
    st.horizon = setup.rounds;
    st.variant = setup.variant;
    st.base_algo = setup.base_algo;
    {
        RngStream actor_rng = RngStream::derive(setup.master_seed, 0, "actor_init", 0);
        st.actor = init_network(setup.actor_width, actor_dim, setup.actor_radius,
                                actor_rng);
        RngStream critic_rng =
            RngStream::derive(setup.master_seed, 0, "critic_init", 0);
        st.critic = init_network(setup.critic_width, state_dim,
                                 setup.critic_radius, critic_rng);
    }
    st.clients.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        ClientInfo info;
        info.id = i;
        info.data_weight = pop.data_weights[i];
        info.q = pop.q[i];
        info.env_seed = pop.env_seeds.empty() ? 0 : pop.env_seeds[i];
        st.clients.push_back(info);
    }
    st.beta_penalties.assign(n, setup.initial_beta_penalty);
    if (setup.base_algo == BaseAlgo::scaffold) {
        ScaffoldState sc;
        sc.c_actor.assign(st.actor.weights.size(), 0.0);
        sc.c_critic.assign(st.critic.weights.size(), 0.0);
        sc.client_actor.assign(n, std::vector<double>(st.actor.weights.size(), 0.0));
        sc.client_critic.assign(n,
                                std::vector<double>(st.critic.weights.size(), 0.0));
        st.scaffold = std::move(sc);
    }
    st.validate();
    return st;
}

/// Executes round t = state.round and advances the state. All randomness
/// comes from streams derived as (master seed, client id + 1, purpose, t),
/// so per-client work is order- and scheduling-independent.
inline RoundReport run_round(FederationState& state, const ClientPopulation& pop,
                             const TrainingSetup& setup) {
    state.validate();
    const std::size_t n = state.clients.size();
    if (state.round >= state.horizon)
        throw InvalidArgument("run_round: training horizon already reached");
    const std::size_t t = state.round;
    const std::size_t k =
        setup.clients_per_round == 0 ? n : setup.clients_per_round;

    RngStream sample_rng = RngStream::derive(setup.master_seed, 0, "sample", t);
    const std::vector<std::size_t> participants = sample_clients(n, k, sample_rng);

    ClientRoundParams base_params;
    base_params.variant = state.variant;
    base_params.learner = setup.learner;
    base_params.learner.lr =
        setup.learner.lr * std::pow(setup.learner.lr_decay, static_cast<double>(t));
    if (state.base_algo != BaseAlgo::fedprox) base_params.learner.fedprox_mu = 0.0;
    base_params.schedules = setup.schedules();
    base_params.round = t;
    base_params.batch_size = setup.batch_size;
    base_params.tau =
        setup.tau_from_schedule ? base_params.schedules.tau_of(t) : setup.tau;
    base_params.sigma = base_params.schedules.sigma_of(t);

    const NetworkParams old_actor = state.actor;
    const NetworkParams old_critic = state.critic;

    std::vector<ClientRoundResult> results;
    results.reserve(participants.size());
    for (const std::size_t id : participants) {
        ClientRoundParams params = base_params;
        params.beta_penalty = state.beta_penalties[id];
        if (state.scaffold) {
            params.c_global_actor = state.scaffold->c_actor;
            params.c_client_actor = state.scaffold->client_actor[id];
            params.c_global_critic = state.scaffold->c_critic;
            params.c_client_critic = state.scaffold->client_critic[id];
        }
        RngStream rng = RngStream::derive(setup.master_seed, id + 1, "round", t);
        try {
            results.push_back(client_round(*pop.envs[id], id,
                                           state.clients[id].data_weight,
                                           old_actor, old_critic, params, rng));
        } catch (const DivergenceError& e) {
            throw DivergenceError("round " + std::to_string(t) + ": " + e.what());
        }
    }

    // Renormalized participant weights, in the sampled (ascending) order.
    std::vector<double> part_q;
    part_q.reserve(participants.size());
    double qsum = 0.0;
    for (const std::size_t id : participants) qsum += state.clients[id].q;
    for (const std::size_t id : participants)
        part_q.push_back(state.clients[id].q / qsum);

    std::vector<NetworkParams> actors;
    std::vector<NetworkParams> critics;
    actors.reserve(results.size());
    critics.reserve(results.size());
    for (const ClientRoundResult& r : results) {
        actors.push_back(r.actor);
        critics.push_back(r.critic);
    }
    state.actor = aggregate(actors, part_q);
    state.critic = aggregate(critics, part_q);

    if (state.scaffold) {
        // Server variate moves by (K/N)·mean(c_k⁺ − c_k) before the
        // per-client slots are overwritten.
        const double scale = static_cast<double>(participants.size()) /
                             static_cast<double>(n) /
                             static_cast<double>(participants.size());
        for (std::size_t r = 0; r < results.size(); ++r) {
            const std::size_t id = results[r].client_id;
            const std::vector<double>& a_new = results[r].c_actor_new;
            const std::vector<double>& c_new = results[r].c_critic_new;
            for (std::size_t j = 0; j < a_new.size(); ++j)
                state.scaffold->c_actor[j] +=
                    scale * (a_new[j] - state.scaffold->client_actor[id][j]);
            for (std::size_t j = 0; j < c_new.size(); ++j)
                state.scaffold->c_critic[j] +=
                    scale * (c_new[j] - state.scaffold->client_critic[id][j]);
            state.scaffold->client_actor[id] = a_new;
            state.scaffold->client_critic[id] = c_new;
        }
    }

    RoundReport report;
    report.round = t;
    report.participants = participants;
    for (const ClientRoundResult& r : results) {
        report.actor_deltas.push_back(detail::weight_delta_l2(r.actor, old_actor));
        report.critic_deltas.push_back(detail::weight_delta_l2(r.critic, old_critic));
        report.value_source_is_broadcast.push_back(
            r.gae_critic.weights == old_critic.weights ? 1 : 0);
        state.beta_penalties[r.client_id] = r.beta_penalty;
    }

    // Evaluate f(θ^{t+1}) = Σ q_n·η_n over every client with dedicated
    // evaluation streams (never reused for training).
    report.client_returns.reserve(n);
    double mean = 0.0;
    double var = 0.0;
    for (std::size_t id = 0; id < n; ++id) {
        RngStream eval_rng = RngStream::derive(setup.master_seed, id + 1, "eval", t);
        std::pair<double, double> eval;
        if (pop.envs[id]->discrete_actions()) {
            const SoftmaxPolicy pol =
                detail::make_softmax(*pop.envs[id], state.actor, base_params.tau);
            eval = evaluate_return(*pop.envs[id], pol, setup.eval_episodes, eval_rng);
        } else {
            GaussianPolicy pol;
            pol.net = state.actor;
            pol.stddev = base_params.sigma;
            eval = evaluate_return(*pop.envs[id], pol, setup.eval_episodes, eval_rng);
        }
        report.client_returns.push_back(eval.first);
        mean += state.clients[id].q * eval.first;
        var += state.clients[id].q * state.clients[id].q * eval.second * eval.second;
    }
    report.mean_return = mean;
    report.return_stderr = std::sqrt(var);

    // Round diagnostics on probe states pooled from the participants'
    // rollouts (first diag_probes transitions of each).
    if (setup.diag_probes > 0) {
        std::vector<std::vector<double>> probe_states;
        std::vector<std::vector<double>> critic_values(results.size());
        for (std::size_t r = 0; r < results.size(); ++r) {
            const TrajectoryBatch& b = results[r].batch;
            const std::size_t m = std::min(setup.diag_probes, b.size());
            for (std::size_t i = 0; i < m; ++i)
                probe_states.push_back(b.features[i]);
        }
        for (std::size_t r = 0; r < results.size(); ++r) {
            critic_values[r].reserve(probe_states.size());
            for (const std::vector<double>& s : probe_states)
                critic_values[r].push_back(forward(results[r].critic, s));
        }
        report.kappa = measure_kappa_samples(critic_values, part_q);

        // Ω: q-weighted mean over clients of the mean log-probability gap
        // between the aggregated actor and the client's own actor, at the
        // client's sampled state-action pairs.
        double omega_acc = 0.0;
        const bool discrete = pop.envs.front()->discrete_actions();
        for (std::size_t r = 0; r < results.size(); ++r) {
            const std::size_t id = results[r].client_id;
            const TrajectoryBatch& b = results[r].batch;
            const std::size_t m = std::min(setup.diag_probes, b.size());
            double gap = 0.0;
            if (discrete) {
                const SoftmaxPolicy agg =
                    detail::make_softmax(*pop.envs[id], state.actor, base_params.tau);
                const SoftmaxPolicy local = detail::make_softmax(
                    *pop.envs[id], results[r].actor, base_params.tau);
                for (std::size_t i = 0; i < m; ++i)
                    gap += policy_log_prob(agg, b.features[i], b.actions[i]) -
                           policy_log_prob(local, b.features[i], b.actions[i]);
            } else {
                GaussianPolicy agg;
                agg.net = state.actor;
                agg.stddev = base_params.sigma;
                GaussianPolicy local;
                local.net = results[r].actor;
                local.stddev = base_params.sigma;
                for (std::size_t i = 0; i < m; ++i)
                    gap += policy_log_prob(agg, b.features[i], b.actions[i]) -
                           policy_log_prob(local, b.features[i], b.actions[i]);
            }
            if (m > 0) omega_acc += part_q[r] * gap / static_cast<double>(m);
        }
        report.omega = std::abs(omega_acc);

        if (discrete) {
            const SoftmaxPolicy pol_new = detail::make_softmax(
                *pop.envs.front(), state.actor, base_params.tau);
            const SoftmaxPolicy pol_old = detail::make_softmax(
                *pop.envs.front(), old_actor, base_params.tau);
            report.stepwise_logdiff =
                stepwise_logratio_supnorm(pol_new, pol_old, probe_states);
            // Actor inputs are (state ⊕ action) encodings; probe with the
            // sampled pairs.
            double lin = 0.0;
            std::size_t count = 0;
            for (std::size_t r = 0; r < results.size(); ++r) {
                const TrajectoryBatch& b = results[r].batch;
                const std::size_t m = std::min(setup.diag_probes, b.size());
                for (std::size_t i = 0; i < m; ++i) {
                    const std::vector<double> x = detail::concat_input(
                        b.features[i],
                        pol_new.action_set[checked_action_index(pol_new,
                                                                b.actions[i])]);
                    lin += std::abs(forward(state.actor, x) -
                                    forward_linearized(state.actor, x));
                    ++count;
                }
            }
            report.linearization_error =
                count == 0 ? 0.0 : lin / static_cast<double>(count);
        } else {
            GaussianPolicy pol_new;
            pol_new.net = state.actor;
            pol_new.stddev = base_params.sigma;
            GaussianPolicy pol_old;
            pol_old.net = old_actor;
            pol_old.stddev = base_params.sigma;
            report.stepwise_logdiff =
                stepwise_logratio_supnorm(pol_new, pol_old, probe_states);
            double lin = 0.0;
            for (const std::vector<double>& s : probe_states)
                lin += std::abs(forward(state.actor, s) -
                                forward_linearized(state.actor, s));
            report.linearization_error =
                probe_states.empty()
                    ? 0.0
                    : lin / static_cast<double>(probe_states.size());
        }

        // How well the new aggregated critic fits this round's value
        // targets (computed under the broadcast critic on every client).
        double fit = 0.0;
        for (std::size_t r = 0; r < results.size(); ++r)
            fit += part_q[r] * critic_loss(state.critic, results[r].batch);
        report.critic_eval_error = fit;
    }

    state.round = t + 1;
    report.validate(participants.size());
    return report;
}

/// Runs T rounds from a fresh round-0 state, invoking `sink` with each
/// report as it is produced. T = 0 yields no reports and globals equal to
/// the shared initialization.
inline TrainingResult run_training(
    const ClientPopulation& pop, const TrainingSetup& setup,
    const std::function<void(const RoundReport&)>& sink = nullptr) {
    TrainingResult result;
    result.state = init_federation(pop, setup);
    result.reports.reserve(setup.rounds);
    for (std::size_t t = 0; t < setup.rounds; ++t) {
        RoundReport report = run_round(result.state, pop, setup);
        if (sink) sink(report);
        result.reports.push_back(std::move(report));
    }
    return result;
}

} // namespace fedrl
