// SPDX-License-Identifier: MIT
// Heterogeneous client environments behind one stepping interface:
//
//   * ShiftedCarEnv — a 2-state (position, velocity) continuous-action car on
//     a quadratic hill with sparse goal reward; client n shifts every action
//     by ω_n before it reaches the actuator.
//   * PerturbedChainMDP — a 6-state, 3-action tabular chain whose transition
//     tensor mixes a shared base chain with a client-specific random
//     stochastic tensor at level ε_P.
//
// Environments are immutable after construction: reset/step are pure
// functions of (state, action, rng), so one instance can serve any number of
// replayed trajectories. Feature encodings are scaled so ‖(s,a)‖₂ ≤ 1.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fedrl/errors.hpp"
#include "fedrl/rng.hpp"

namespace fedrl {

/// Result of one environment transition.
struct StepResult {
    std::vector<double> state; ///< successor state
    double reward = 0.0;       ///< bounded by reward_bound()
    bool terminal = false;     ///< true only for genuine terminal states
};

/// Common environment contract. Implementations are stateless: the caller
/// owns the current state and the episode-step counter (episodes are
/// truncated at horizon() with bootstrap value 0 by the rollout collector).
class Env {
public:
    virtual ~Env() = default;

    virtual std::size_t state_dim() const = 0;     ///< raw state coordinates
    virtual bool discrete_actions() const = 0;
    virtual std::size_t action_count() const = 0;  ///< 0 for continuous boxes
    virtual double gamma() const = 0;
    virtual double reward_bound() const = 0;       ///< R_max
    virtual std::size_t horizon() const = 0;       ///< truncation length

    virtual std::vector<double> reset(RngStream& rng) const = 0;
    virtual StepResult step(std::span<const double> state, double action,
                            RngStream& rng) const = 0;

    /// Normalized state block of the joint encoding (‖·‖₂ < 1 on its own).
    virtual std::vector<double> encode_state(std::span<const double> state) const = 0;
    /// Normalized action block; for discrete actions, `action` is the index.
    virtual std::vector<double> encode_action(double action) const = 0;

    /// Joint feature vector [state block ⊕ action block] with ‖(s,a)‖₂ ≤ 1.
    std::vector<double> encode(std::span<const double> state, double action) const {
        std::vector<double> x = encode_state(state);
        const std::vector<double> a = encode_action(action);
        x.insert(x.end(), a.begin(), a.end());
        return x;
    }
    /// Dimension of the joint encoding.
    std::size_t encoding_dim() const {
        return encode_state(std::vector<double>(state_dim(), 0.0)).size() +
               encode_action(discrete_actions() ? 0.0 : 0.0).size();
    }

    virtual std::unique_ptr<Env> clone() const = 0;
};

// ---------------------------------------------------------------------------
// Shifted-action car on a quadratic hill
// ---------------------------------------------------------------------------

/// One step of the unshifted base car dynamics: the hill applies a restoring
/// force 0.004·(pos − valley) and the actuator contributes 0.002·u.
inline void car_base_step(double& pos, double& vel, double u) {
    constexpr double kValley = -0.3;
    vel = std::clamp(vel + 0.002 * u - 0.004 * (pos - kValley), -0.07, 0.07);
    pos = std::clamp(pos + vel, -1.2, 0.6);
}

/// Continuous-action car task; client heterogeneity enters as an additive
/// action shift ω applied after the policy's action is clipped to [−1, 1]
/// and itself clipped to the actuator range (the hardware saturates).
class ShiftedCarEnv final : public Env {
public:
    explicit ShiftedCarEnv(double action_shift = 0.0, double discount = 0.99,
                           std::size_t episode_horizon = 200)
        : shift_(action_shift), gamma_(discount), horizon_(episode_horizon) {}

    std::size_t state_dim() const override { return 2; }
    bool discrete_actions() const override { return false; }
    std::size_t action_count() const override { return 0; }
    double gamma() const override { return gamma_; }
    double reward_bound() const override { return kGoalReward; }
    std::size_t horizon() const override { return horizon_; }
    double action_shift() const { return shift_; }

    std::vector<double> reset(RngStream& rng) const override {
        return {rng.uniform(-0.4, -0.2), 0.0};
    }

    StepResult step(std::span<const double> state, double action,
                    RngStream& /*rng*/) const override {
        check_state(state);
        const double commanded = std::clamp(action, -1.0, 1.0);
        const double u = std::clamp(commanded + shift_, -1.0, 1.0);
        double pos = state[0], vel = state[1];
        car_base_step(pos, vel, u);
        StepResult out;
        out.state = {pos, vel};
        if (pos >= kGoalPosition) {
            out.reward = kGoalReward;
            out.terminal = true;
        } else {
            out.reward = -0.05 * u * u; // effort cost, bounded by 0.05
            out.terminal = false;
        }
        return out;
    }

    std::vector<double> encode_state(std::span<const double> state) const override {
        check_state(state);
        // Affine map of each coordinate to [−1/√3, 1/√3]; together with the
        // one-dimensional action block the joint encoding has norm ≤ 1 and
        // hits exactly 1 at the box corners.
        const double inv = 1.0 / std::sqrt(3.0);
        return {to_unit(state[0], -1.2, 0.6, "position") * inv,
                to_unit(state[1], -0.07, 0.07, "velocity") * inv};
    }

    std::vector<double> encode_action(double action) const override {
        return {to_unit(action, -1.0, 1.0, "action") / std::sqrt(3.0)};
    }

    std::unique_ptr<Env> clone() const override {
        return std::make_unique<ShiftedCarEnv>(*this);
    }

    static constexpr double kGoalPosition = 0.5;
    static constexpr double kGoalReward = 10.0;

private:
    static void check_state(std::span<const double> state) {
        if (state.size() != 2)
            throw DimensionError("ShiftedCarEnv: state must be (position, velocity)");
    }
    static double to_unit(double v, double lo, double hi, const char* name) {
        if (!(v >= lo - 1e-9 && v <= hi + 1e-9))
            throw InvalidArgument(std::string("ShiftedCarEnv: ") + name +
                                  " out of range [" + std::to_string(lo) + ", " +
                                  std::to_string(hi) + "]: " + std::to_string(v));
        return 2.0 * (v - lo) / (hi - lo) - 1.0;
    }

    double shift_;
    double gamma_;
    std::size_t horizon_;
};

// ---------------------------------------------------------------------------
// Perturbed tabular chain MDP
// ---------------------------------------------------------------------------

/// Tabular chain with explicit transition tensor P[s][a][s'] and reward
/// table R[s][a]. Client heterogeneity mixes the shared base chain with a
/// client-specific random stochastic tensor: P_n = (1−ε_P)·P_base + ε_P·D_n.
class PerturbedChainMDP final : public Env {
public:
    /// Builds the shared base chain (ε_P = 0) or a perturbed client copy.
    /// `noise_rng` supplies the client-specific tensor D_n; it is unused when
    /// epsilon == 0.
    PerturbedChainMDP(std::size_t n_states, std::size_t n_actions, double epsilon,
                      RngStream& noise_rng, double discount = 0.99,
                      std::size_t episode_horizon = 120)
        : S_(n_states), A_(n_actions), epsilon_(epsilon), gamma_(discount),
          horizon_(episode_horizon) {
        if (S_ < 2 || A_ < 2)
            throw InvalidArgument("PerturbedChainMDP: need at least 2 states and 2 actions");
        if (!(epsilon_ >= 0.0 && epsilon_ <= 0.5))
            throw InvalidArgument("PerturbedChainMDP: epsilon must lie in [0, 0.5]");

        P_.assign(S_ * A_ * S_, 0.0);
        R_.assign(S_ * A_, 0.0);
        for (std::size_t s = 0; s < S_; ++s) {
            for (std::size_t a = 0; a < A_; ++a) {
                // Action semantics: 0 = left, 1 = stay, 2 = right (actions
                // beyond three cycle through the same three moves). Moves
                // succeed with probability 0.9 and otherwise stay put.
                const int dir = static_cast<int>(a % 3) - 1;
                const std::size_t target = static_cast<std::size_t>(std::clamp(
                    static_cast<int>(s) + dir, 0, static_cast<int>(S_) - 1));
                if (target == s) {
                    P_[(s * A_ + a) * S_ + s] = 1.0;
                } else {
                    P_[(s * A_ + a) * S_ + target] = 0.9;
                    P_[(s * A_ + a) * S_ + s] = 0.1;
                }
                // Unit reward for occupying the rightmost state.
                R_[s * A_ + a] = (s + 1 == S_) ? 1.0 : 0.0;
            }
        }

        if (epsilon_ > 0.0) {
            for (std::size_t sa = 0; sa < S_ * A_; ++sa) {
                std::vector<double> row(S_);
                double total = 0.0;
                for (double& v : row) total += (v = 0.05 + noise_rng.uniform());
                for (std::size_t s2 = 0; s2 < S_; ++s2)
                    P_[sa * S_ + s2] = (1.0 - epsilon_) * P_[sa * S_ + s2] +
                                       epsilon_ * row[s2] / total;
            }
        }
    }

    std::size_t state_dim() const override { return 1; }
    bool discrete_actions() const override { return true; }
    std::size_t action_count() const override { return A_; }
    std::size_t state_count() const { return S_; }
    double gamma() const override { return gamma_; }
    double reward_bound() const override { return 1.0; }
    std::size_t horizon() const override { return horizon_; }
    double epsilon() const { return epsilon_; }

    /// Uniform initial state distribution.
    std::vector<double> reset(RngStream& rng) const override {
        return {static_cast<double>(rng.uniform_index(S_))};
    }

    StepResult step(std::span<const double> state, double action,
                    RngStream& rng) const override {
        const std::size_t s = state_index(state);
        const std::size_t a = action_index(action);
        const std::span<const double> row(P_.data() + (s * A_ + a) * S_, S_);
        StepResult out;
        out.state = {static_cast<double>(rng.categorical(row))};
        out.reward = R_[s * A_ + a];
        out.terminal = false; // continuing task; the collector truncates
        return out;
    }

    std::vector<double> encode_state(std::span<const double> state) const override {
        const std::size_t s = state_index(state);
        std::vector<double> enc(S_, 0.0);
        enc[s] = 1.0 / std::sqrt(static_cast<double>(S_ + A_));
        return enc;
    }

    std::vector<double> encode_action(double action) const override {
        const std::size_t a = action_index(action);
        std::vector<double> enc(A_, 0.0);
        enc[a] = 1.0 / std::sqrt(static_cast<double>(S_ + A_));
        return enc;
    }

    std::unique_ptr<Env> clone() const override {
        return std::make_unique<PerturbedChainMDP>(*this);
    }

    /// Transition probability P(s'|s,a).
    double transition(std::size_t s, std::size_t a, std::size_t s2) const {
        return P_[(s * A_ + a) * S_ + s2];
    }
    /// Reward R(s,a).
    double reward(std::size_t s, std::size_t a) const { return R_[s * A_ + a]; }
    /// Flat S×A×S transition tensor (row-major).
    const std::vector<double>& transition_tensor() const { return P_; }
    /// Flat S×A reward table (row-major).
    const std::vector<double>& reward_table() const { return R_; }

    std::size_t state_index(std::span<const double> state) const {
        if (state.size() != 1)
            throw DimensionError("PerturbedChainMDP: state must be a single index");
        const double v = state[0];
        const double r = std::round(v);
        if (!(std::abs(v - r) < 1e-9) || r < 0.0 || r >= static_cast<double>(S_))
            throw InvalidArgument("PerturbedChainMDP: invalid state index " +
                                  std::to_string(v));
        return static_cast<std::size_t>(r);
    }

    std::size_t action_index(double action) const {
        const double r = std::round(action);
        if (!(std::abs(action - r) < 1e-9) || r < 0.0 ||
            r >= static_cast<double>(A_))
            throw InvalidArgument("PerturbedChainMDP: invalid action index " +
                                  std::to_string(action));
        return static_cast<std::size_t>(r);
    }

private:
    std::size_t S_, A_;
    double epsilon_;
    double gamma_;
    std::size_t horizon_;
    std::vector<double> P_; ///< S×A×S, rows sum to 1
    std::vector<double> R_; ///< S×A
};

// ---------------------------------------------------------------------------
// Client populations
// ---------------------------------------------------------------------------

/// Description of a heterogeneous client population.
struct HeterogeneityNetworkSpec {
    enum class Family { car, chain };

    Family family = Family::car;
    std::size_t n_clients = 1;       ///< N ≥ 1
    double shift_halfwidth = 0.0;    ///< h: ω_n ~ Uniform[−h, h] (car family)
    double transition_noise = 0.0;   ///< ε_P ∈ [0, 0.5] (chain family)
    std::vector<double> data_weights; ///< l_n > 0; empty means all equal
    double discount = 0.99;
    std::size_t episode_horizon = 200;
    std::size_t chain_states = 6;
    std::size_t chain_actions = 3;

    void validate() const {
        if (n_clients == 0)
            throw InvalidArgument("HeterogeneityNetworkSpec: n_clients must be >= 1");
        if (!(shift_halfwidth >= 0.0))
            throw InvalidArgument("HeterogeneityNetworkSpec: shift half-width must be >= 0");
        if (!(transition_noise >= 0.0 && transition_noise <= 0.5))
            throw InvalidArgument("HeterogeneityNetworkSpec: epsilon must lie in [0, 0.5]");
        if (!data_weights.empty()) {
            if (data_weights.size() != n_clients)
                throw InvalidArgument(
                    "HeterogeneityNetworkSpec: data_weights must have one entry per client");
            for (double l : data_weights)
                if (!(l > 0.0))
                    throw InvalidArgument(
                        "HeterogeneityNetworkSpec: data weights must be positive");
        }
    }
};

/// A constructed client population with its provenance metadata.
struct ClientPopulation {
    std::vector<std::shared_ptr<const Env>> envs; ///< one per client
    std::vector<double> omegas;                   ///< ω_n (car) — empty for chain
    std::vector<std::uint64_t> env_seeds;         ///< chain perturbation seeds
    std::vector<double> data_weights;             ///< l_n
    std::vector<double> q;                        ///< q_n = l_n / Σ l, sums to 1
};

/// Instantiates N client environments that differ only in their
/// heterogeneity parameter (ω_n or D_n), recording the draws for manifests.
inline ClientPopulation build_network(const HeterogeneityNetworkSpec& spec,
                                      RngStream& rng) {
    spec.validate();
    ClientPopulation pop;
    pop.data_weights = spec.data_weights;
    if (pop.data_weights.empty())
        pop.data_weights.assign(spec.n_clients, 1.0);
    double total = 0.0;
    for (double l : pop.data_weights) total += l;
    for (double l : pop.data_weights) pop.q.push_back(l / total);

    for (std::size_t n = 0; n < spec.n_clients; ++n) {
        if (spec.family == HeterogeneityNetworkSpec::Family::car) {
            const double omega = spec.shift_halfwidth == 0.0
                                     ? 0.0
                                     : rng.uniform(-spec.shift_halfwidth,
                                                   spec.shift_halfwidth);
            pop.omegas.push_back(omega);
            pop.envs.push_back(std::make_shared<ShiftedCarEnv>(
                omega, spec.discount, spec.episode_horizon));
        } else {
            const std::uint64_t env_seed = rng.next_bits();
            pop.env_seeds.push_back(env_seed);
            RngStream noise(env_seed);
            pop.envs.push_back(std::make_shared<PerturbedChainMDP>(
                spec.chain_states, spec.chain_actions, spec.transition_noise,
                noise, spec.discount, spec.episode_horizon));
        }
    }
    return pop;
}

/// Mean total-variation distance between the transition tensors of all
/// client pairs in a chain population (heterogeneity diagnostic).
inline double mean_pairwise_tv(const ClientPopulation& pop) {
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < pop.envs.size(); ++i) {
        const auto* ei = dynamic_cast<const PerturbedChainMDP*>(pop.envs[i].get());
        if (!ei) throw InvalidArgument("mean_pairwise_tv: chain environments required");
        for (std::size_t j = i + 1; j < pop.envs.size(); ++j) {
            const auto* ej = dynamic_cast<const PerturbedChainMDP*>(pop.envs[j].get());
            const std::size_t S = ei->state_count(), A = ei->action_count();
            double tv = 0.0;
            for (std::size_t s = 0; s < S; ++s)
                for (std::size_t a = 0; a < A; ++a) {
                    double row = 0.0;
                    for (std::size_t s2 = 0; s2 < S; ++s2)
                        row += std::abs(ei->transition(s, a, s2) -
                                        ej->transition(s, a, s2));
                    tv += 0.5 * row;
                }
            total += tv / static_cast<double>(S * A);
            ++pairs;
        }
    }
    return pairs == 0 ? 0.0 : total / static_cast<double>(pairs);
}

} // namespace fedrl
