// SPDX-License-Identifier: MIT
// Tests for the client environments: heterogeneity-network construction,
// stepping semantics (shift clipping, multinomial transitions), normalized
// encodings, determinism, reward bounds, and the ε_P ordering of chain
// heterogeneity.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "fedrl/environments.hpp"
#include "fedrl/errors.hpp"
#include "fedrl/rng.hpp"
#include "oracles.hpp"

using Catch::Approx;
using namespace fedrl;

namespace {

/// Rolls a fixed-length trajectory under a fixed action sequence.
std::vector<std::vector<double>> rollout_states(const Env& env,
                                                const std::vector<double>& actions,
                                                std::uint64_t seed) {
    RngStream rng(seed);
    std::vector<std::vector<double>> traj{env.reset(rng)};
    for (double a : actions) {
        StepResult r = env.step(traj.back(), a, rng);
        traj.push_back(r.state);
        if (r.terminal) break;
    }
    return traj;
}

HeterogeneityNetworkSpec car_spec(std::size_t n, double h) {
    HeterogeneityNetworkSpec spec;
    spec.family = HeterogeneityNetworkSpec::Family::car;
    spec.n_clients = n;
    spec.shift_halfwidth = h;
    return spec;
}

HeterogeneityNetworkSpec chain_spec(std::size_t n, double eps) {
    HeterogeneityNetworkSpec spec;
    spec.family = HeterogeneityNetworkSpec::Family::chain;
    spec.n_clients = n;
    spec.transition_noise = eps;
    spec.episode_horizon = 120;
    return spec;
}

} // namespace

TEST_CASE("client populations reflect their heterogeneity spec", "[environments]") {
    SECTION("zero half-width makes all clients identical") {
        RngStream rng(201);
        ClientPopulation pop = build_network(car_spec(4, 0.0), rng);
        std::vector<double> actions;
        RngStream arng(7);
        for (int i = 0; i < 50; ++i) actions.push_back(arng.uniform(-1.0, 1.0));
        const auto ref = rollout_states(*pop.envs[0], actions, 99);
        for (std::size_t n = 1; n < pop.envs.size(); ++n) {
            const auto traj = rollout_states(*pop.envs[n], actions, 99);
            REQUIRE(traj == ref);
        }
        REQUIRE(pop.q == std::vector<double>(4, 0.25));
    }

    SECTION("shift draws stay inside [−h, h] with a centered mean") {
        for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
            RngStream rng(seed);
            ClientPopulation pop = build_network(car_spec(60, 1.5), rng);
            REQUIRE(pop.omegas.size() == 60);
            for (double w : pop.omegas) {
                REQUIRE(w >= -1.5);
                REQUIRE(w <= 1.5);
            }
            const double mean = oracle::mean_of(pop.omegas);
            INFO("seed " << seed << " mean shift " << mean);
            REQUIRE(mean >= -0.2);
            REQUIRE(mean <= 0.2);
        }
    }

    SECTION("the documented heterogeneity levels are constructible") {
        RngStream rng(14);
        for (double h : {1.0, 1.5, 2.0})
            REQUIRE(build_network(car_spec(8, h), rng).envs.size() == 8);
        for (double eps : {0.0, 0.2, 0.4})
            REQUIRE(build_network(chain_spec(8, eps), rng).envs.size() == 8);
        HeterogeneityNetworkSpec bad = chain_spec(8, 0.7);
        REQUIRE_THROWS_AS(build_network(bad, rng), InvalidArgument);
        bad = car_spec(0, 1.0);
        REQUIRE_THROWS_AS(build_network(bad, rng), InvalidArgument);
        bad = car_spec(3, 1.0);
        bad.data_weights = {1.0, 2.0};
        REQUIRE_THROWS_AS(build_network(bad, rng), InvalidArgument);
    }

    SECTION("data weights normalize into q") {
        RngStream rng(15);
        HeterogeneityNetworkSpec spec = car_spec(2, 0.5);
        spec.data_weights = {1.0, 3.0};
        ClientPopulation pop = build_network(spec, rng);
        REQUIRE(pop.q[0] == Approx(0.25));
        REQUIRE(pop.q[1] == Approx(0.75));
        REQUIRE(pop.q[0] + pop.q[1] == Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("car dynamics and action shifting", "[environments]") {
    SECTION("zero action at the valley rest state is a fixed point") {
        ShiftedCarEnv env(0.0);
        RngStream rng(21);
        const std::vector<double> rest{-0.3, 0.0};
        const StepResult r1 = env.step(rest, 0.0, rng);
        const StepResult r2 = env.step(rest, 0.0, rng);
        REQUIRE(r1.state == rest);
        REQUIRE(r1.state == r2.state);
        REQUIRE(r1.reward == r2.reward);
        REQUIRE_FALSE(r1.terminal);
    }

    SECTION("a zero shift reproduces the base dynamics exactly") {
        ShiftedCarEnv env(0.0);
        RngStream rng(22);
        std::vector<double> state{-0.35, 0.01};
        double pos = state[0], vel = state[1];
        RngStream arng(23);
        for (int i = 0; i < 100; ++i) {
            const double a = arng.uniform(-1.0, 1.0);
            const StepResult r = env.step(state, a, rng);
            car_base_step(pos, vel, a);
            REQUIRE(r.state[0] == pos);
            REQUIRE(r.state[1] == vel);
            state = r.state;
            if (r.terminal) break;
        }
    }

    SECTION("actions clip before the shift and the sum clips after") {
        ShiftedCarEnv shifted(1.5);
        RngStream rng(24);
        const std::vector<double> s{-0.4, 0.0};
        // Commanded 5 clips to 1; 1 + 1.5 clips to the actuator limit 1.
        const StepResult wild = shifted.step(s, 5.0, rng);
        const StepResult sane = shifted.step(s, 1.0, rng);
        REQUIRE(wild.state == sane.state);
        double pos = s[0], vel = s[1];
        car_base_step(pos, vel, 1.0);
        REQUIRE(wild.state[0] == pos);
        REQUIRE(wild.state[1] == vel);
    }

    SECTION("the goal emits the terminal reward") {
        ShiftedCarEnv env(0.0);
        RngStream rng(25);
        const StepResult r = env.step(std::vector<double>{0.49, 0.07}, 1.0, rng);
        REQUIRE(r.terminal);
        REQUIRE(r.reward == ShiftedCarEnv::kGoalReward);
    }
}

TEST_CASE("chain transitions sample the declared tensor", "[environments]") {
    RngStream build_rng(31);
    PerturbedChainMDP base(6, 3, 0.0, build_rng);

    SECTION("rows are stochastic") {
        for (std::size_t s = 0; s < 6; ++s)
            for (std::size_t a = 0; a < 3; ++a) {
                double total = 0.0;
                for (std::size_t s2 = 0; s2 < 6; ++s2) {
                    REQUIRE(base.transition(s, a, s2) >= 0.0);
                    total += base.transition(s, a, s2);
                }
                REQUIRE(total == Approx(1.0).margin(1e-12));
            }
    }

    SECTION("a deterministic row always lands on its support point") {
        RngStream rng(32);
        const std::vector<double> s{2.0};
        for (int i = 0; i < 1000; ++i) {
            const StepResult r = base.step(s, 1.0, rng); // "stay" is deterministic
            REQUIRE(r.state[0] == 2.0);
        }
    }

    SECTION("sampled next-state frequencies match the tensor row") {
        RngStream build2(33);
        PerturbedChainMDP env(6, 3, 0.3, build2);
        RngStream rng(34);
        const std::size_t n = 100000;
        std::vector<std::size_t> counts(6, 0);
        const std::vector<double> s{3.0};
        for (std::size_t i = 0; i < n; ++i) {
            const StepResult r = env.step(s, 2.0, rng);
            counts[static_cast<std::size_t>(r.state[0])]++;
        }
        for (std::size_t s2 = 0; s2 < 6; ++s2) {
            const double p = env.transition(3, 2, s2);
            const double freq = static_cast<double>(counts[s2]) / static_cast<double>(n);
            const double band = std::max(oracle::binomial_band(p, n), 1e-4);
            INFO("s'=" << s2 << " p=" << p << " freq=" << freq << " band=" << band);
            REQUIRE(std::abs(freq - p) <= band);
        }
    }

    SECTION("invalid indices are rejected") {
        RngStream rng(35);
        REQUIRE_THROWS_AS(base.step(std::vector<double>{9.0}, 0.0, rng),
                          InvalidArgument);
        REQUIRE_THROWS_AS(base.step(std::vector<double>{1.5}, 0.0, rng),
                          InvalidArgument);
        REQUIRE_THROWS_AS(base.step(std::vector<double>{1.0}, 7.0, rng),
                          InvalidArgument);
        REQUIRE_THROWS_AS(base.step(std::vector<double>{1.0, 2.0}, 0.0, rng),
                          DimensionError);
    }
}

TEST_CASE("encodings are normalized", "[environments]") {
    SECTION("car midpoint maps to zero and the corner to norm one") {
        ShiftedCarEnv env(0.3);
        const std::vector<double> mid = env.encode(std::vector<double>{-0.3, 0.0}, 0.0);
        for (double v : mid) REQUIRE(v == Approx(0.0).margin(1e-15));

        const std::vector<double> corner =
            env.encode(std::vector<double>{0.6, 0.07}, 1.0);
        double norm2 = 0.0;
        for (double v : corner) norm2 += v * v;
        REQUIRE(std::sqrt(norm2) == Approx(1.0).margin(1e-12));
    }

    SECTION("ten thousand random car inputs stay inside the unit ball") {
        ShiftedCarEnv env(0.0);
        RngStream rng(41);
        for (int i = 0; i < 10000; ++i) {
            const std::vector<double> s{rng.uniform(-1.2, 0.6),
                                        rng.uniform(-0.07, 0.07)};
            const std::vector<double> x = env.encode(s, rng.uniform(-1.0, 1.0));
            double norm2 = 0.0;
            for (double v : x) norm2 += v * v;
            REQUIRE(std::sqrt(norm2) <= 1.0 + 1e-12);
        }
        REQUIRE_THROWS_AS(env.encode(std::vector<double>{0.7, 0.0}, 0.0),
                          InvalidArgument);
        REQUIRE_THROWS_AS(env.encode(std::vector<double>{0.0, 0.0}, 1.5),
                          InvalidArgument);
    }

    SECTION("tabular encodings are scaled one-hots") {
        RngStream build_rng(42);
        PerturbedChainMDP env(6, 3, 0.0, build_rng);
        const std::vector<double> x = env.encode(std::vector<double>{2.0}, 1.0);
        REQUIRE(x.size() == 9);
        const double eta = 1.0 / 3.0; // 1/√(6+3)
        for (std::size_t i = 0; i < x.size(); ++i)
            REQUIRE(x[i] == ((i == 2 || i == 7) ? Approx(eta) : Approx(0.0)));
        double norm2 = 0.0;
        for (double v : x) norm2 += v * v;
        REQUIRE(std::sqrt(norm2) <= 1.0);
    }
}

TEST_CASE("determinism and reward bounds", "[environments]") {
    SECTION("identical seeds give bitwise-identical trajectories") {
        RngStream build_rng(51);
        PerturbedChainMDP chain(6, 3, 0.25, build_rng);
        ShiftedCarEnv car(0.7);
        for (const Env* env : {static_cast<const Env*>(&chain),
                               static_cast<const Env*>(&car)}) {
            std::vector<double> actions;
            RngStream arng(52);
            for (int i = 0; i < 80; ++i)
                actions.push_back(env->discrete_actions()
                                      ? static_cast<double>(arng.uniform_index(3))
                                      : arng.uniform(-1.0, 1.0));
            REQUIRE(rollout_states(*env, actions, 500) ==
                    rollout_states(*env, actions, 500));
        }
    }

    SECTION("rewards stay inside the declared bound") {
        RngStream build_rng(53);
        PerturbedChainMDP chain(6, 3, 0.4, build_rng);
        ShiftedCarEnv car(1.2);
        RngStream rng(54);
        for (int i = 0; i < 10000; ++i) {
            const StepResult rc = chain.step(
                std::vector<double>{static_cast<double>(rng.uniform_index(6))},
                static_cast<double>(rng.uniform_index(3)), rng);
            REQUIRE(std::abs(rc.reward) <= chain.reward_bound());
            const StepResult rr = car.step(
                std::vector<double>{rng.uniform(-1.2, 0.6), rng.uniform(-0.07, 0.07)},
                rng.uniform(-1.0, 1.0), rng);
            REQUIRE(std::abs(rr.reward) <= car.reward_bound());
        }
    }

    SECTION("chain heterogeneity grows with the perturbation level") {
        std::vector<double> tv;
        for (double eps : {0.1, 0.25, 0.4}) {
            RngStream rng(55);
            tv.push_back(mean_pairwise_tv(build_network(chain_spec(8, eps), rng)));
        }
        INFO("mean pairwise TV at eps 0.1/0.25/0.4: " << tv[0] << " " << tv[1]
                                                      << " " << tv[2]);
        REQUIRE(tv[0] < tv[1]);
        REQUIRE(tv[1] < tv[2]);
        RngStream rng(56);
        REQUIRE(mean_pairwise_tv(build_network(chain_spec(5, 0.0), rng)) == 0.0);
    }
}
