// Acceptance gate for the federated actor-critic laboratory.
//
// Each numbered criterion is an end-to-end behavioral guarantee of the
// shipped library: numeric invariants, oracle consistency, the intra-round
// update-order contract, and directional experiment outcomes on the two
// synthetic environment families. The binary prints exactly one PASS/FAIL
// line per requested criterion and exits nonzero iff any requested
// criterion fails.
//
// Usage: fedrl_acceptance [criterion-number...]   (no arguments = all 8)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fedrl/analysis.hpp"
#include "fedrl/environments.hpp"
#include "fedrl/federation.hpp"
#include "fedrl/harness.hpp"
#include "fedrl/network.hpp"
#include "fedrl/verification.hpp"

namespace {

using namespace fedrl;

struct CriterionResult {
    bool passed = false;
    std::string detail;
};

double elapsed_s(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start)
        .count();
}

std::string format_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Shared experiment scaffolding
// ---------------------------------------------------------------------------

/// Chain-family population: 6 states, 3 actions, discount 0.9, horizon 60.
ClientPopulation chain_population(std::size_t n_clients, double transition_noise,
                                  std::uint64_t master_seed) {
    HeterogeneityNetworkSpec spec;
    spec.family = HeterogeneityNetworkSpec::Family::chain;
    spec.n_clients = n_clients;
    spec.transition_noise = transition_noise;
    spec.chain_states = 6;
    spec.chain_actions = 3;
    spec.discount = 0.9;
    spec.episode_horizon = 60;
    RngStream rng = RngStream::derive(master_seed, 0, "population", 0);
    return build_network(spec, rng);
}

/// Chain-family training setup tuned for convergence within a few dozen
/// rounds (aggressive local steps inside generous trust regions).
TrainingSetup chain_setup(Variant variant, std::uint64_t master_seed,
                          std::size_t rounds, std::size_t batch,
                          std::size_t width) {
    TrainingSetup s;
    s.variant = variant;
    s.base_algo = BaseAlgo::fedavg;
    s.rounds = rounds;
    s.clients_per_round = 0;  // full participation
    s.batch_size = batch;
    s.eval_episodes = 5;
    s.actor_width = width;
    s.critic_width = width;
    s.actor_radius = 25.0;
    s.critic_radius = 40.0;
    s.tau = 1.0;
    s.beta_base = 0.4;
    s.master_seed = master_seed;
    s.diag_probes = 64;
    s.learner.lr = 0.5;
    s.learner.lr_decay = 0.99;
    s.learner.minibatch = 128;
    s.learner.epochs = 20;
    s.learner.gamma = 0.9;
    s.learner.gae_lambda = 0.95;
    s.learner.actor_mode = ActorMode::mse_regression;
    return s;
}

/// Shifted-car population: 12 clients with action shifts ~ Uniform[-1.5, 1.5].
ClientPopulation car_population(std::uint64_t master_seed) {
    HeterogeneityNetworkSpec spec;
    spec.family = HeterogeneityNetworkSpec::Family::car;
    spec.n_clients = 12;
    spec.shift_halfwidth = 1.5;
    spec.discount = 0.99;
    spec.episode_horizon = 200;
    RngStream rng = RngStream::derive(master_seed, 0, "population", 0);
    return build_network(spec, rng);
}

/// Shifted-car benchmark setup (matches configs/car_benchmark.cfg): the
/// unnormalized-target actor mode with an update strength that latches onto
/// the velocity-pumping solution without letting goal-free batches pin the
/// mean action at the trust-region boundary.
TrainingSetup car_setup(Variant variant, std::uint64_t master_seed) {
    TrainingSetup s;
    s.variant = variant;
    s.base_algo = BaseAlgo::fedavg;
    s.rounds = 100;
    s.clients_per_round = 4;
    s.batch_size = 1024;
    s.eval_episodes = 5;
    s.actor_width = 64;
    s.critic_width = 64;
    s.actor_radius = 8.0;
    s.critic_radius = 12.0;
    s.beta_base = 0.1;
    s.sigma0 = 1.0;
    s.sigma_decay = 0.998;
    s.master_seed = master_seed;
    s.diag_probes = 32;
    s.learner.lr = 0.5;
    s.learner.lr_decay = 0.99;
    s.learner.minibatch = 256;
    s.learner.epochs = 20;
    s.learner.gamma = 0.99;
    s.learner.gae_lambda = 0.95;
    s.learner.actor_mode = ActorMode::mse_regression;
    return s;
}

double mean_of(const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    return m / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v) {
    const double m = mean_of(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

// ---------------------------------------------------------------------------
// Criterion 1 — numeric property suite
// ---------------------------------------------------------------------------

CriterionResult criterion_properties() {
    const auto start = std::chrono::steady_clock::now();
    const VerificationReport report = run_property_suite(9001);
    const double secs = elapsed_s(start);
    std::size_t passed = 0;
    std::string first_fail;
    for (const CheckResult& c : report.checks) {
        if (c.passed)
            ++passed;
        else if (first_fail.empty())
            first_fail = c.name + " (" + c.detail + ")";
    }
    CriterionResult out;
    out.passed = report.all_passed() && secs < 60.0;
    out.detail = std::to_string(passed) + "/" +
                 std::to_string(report.checks.size()) + " checks in " +
                 format_num(secs) + " s (budget 60 s)";
    if (!first_fail.empty()) out.detail += "; first failure: " + first_fail;
    return out;
}

// ---------------------------------------------------------------------------
// Criterion 2 — tabular oracle consistency
// ---------------------------------------------------------------------------

CriterionResult criterion_tabular_oracles() {
    const auto start = std::chrono::steady_clock::now();
    const VerificationReport report = run_tabular_suite(9002);
    const double secs = elapsed_s(start);
    std::size_t passed = 0;
    std::string first_fail;
    for (const CheckResult& c : report.checks) {
        if (c.passed)
            ++passed;
        else if (first_fail.empty())
            first_fail = c.name + " (" + c.detail + ")";
    }
    CriterionResult out;
    out.passed = report.all_passed() && secs < 120.0;
    out.detail = std::to_string(passed) + "/" +
                 std::to_string(report.checks.size()) + " checks in " +
                 format_num(secs) + " s (budget 120 s)";
    if (!first_fail.empty()) out.detail += "; first failure: " + first_fail;
    return out;
}

// ---------------------------------------------------------------------------
// Criterion 3 — intra-round update-order contract
// ---------------------------------------------------------------------------

CriterionResult criterion_order_contract() {
    CriterionResult out;

    // Direct single-client check: exercise one client round per variant and
    // compare, bitwise, the critic parameters whose value estimates fed the
    // actor update against the broadcast critic and the uploaded critic.
    ClientPopulation pop = chain_population(2, 0.2, 7);
    TrainingSetup setup = chain_setup(Variant::baseline, 7, 10, 128, 16);
    FederationState state = init_federation(pop, setup);

    ClientRoundParams params;
    params.learner = setup.learner;
    params.schedules = setup.schedules();
    params.round = 0;
    params.batch_size = setup.batch_size;
    params.tau = setup.tau;
    params.sigma = setup.schedules().sigma_of(0);

    params.variant = Variant::baseline;
    RngStream rng_b = RngStream::derive(setup.master_seed, 1, "round", 0);
    const ClientRoundResult base_res =
        client_round(*pop.envs[0], 0, pop.data_weights[0], state.actor,
                     state.critic, params, rng_b);
    const bool base_used_fresh =
        base_res.gae_critic.weights == base_res.critic.weights;
    const bool base_not_broadcast =
        base_res.gae_critic.weights != state.critic.weights;

    params.variant = Variant::fedrac;
    RngStream rng_f = RngStream::derive(setup.master_seed, 1, "round", 0);
    const ClientRoundResult rac_res =
        client_round(*pop.envs[0], 0, pop.data_weights[0], state.actor,
                     state.critic, params, rng_f);
    const bool rac_used_broadcast =
        rac_res.gae_critic.weights == state.critic.weights;
    const bool rac_critic_trained_after =
        rac_res.critic.weights != rac_res.gae_critic.weights;

    // Ten-round runs: the per-participant instrumentation (bitwise equality
    // of the actor's value source with the broadcast critic, recorded inside
    // every round) must read all-true for the actor-first order and
    // all-false for the critic-first order, on every round.
    std::size_t flag_rounds = 0, flag_entries = 0;
    bool fedrac_all_broadcast = true, baseline_none_broadcast = true;
    for (Variant v : {Variant::baseline, Variant::fedrac}) {
        ClientPopulation p = chain_population(2, 0.2, 11);
        TrainingSetup s = chain_setup(v, 11, 10, 128, 16);
        run_training(p, s, [&](const RoundReport& r) {
            ++flag_rounds;
            for (unsigned char flag : r.value_source_is_broadcast) {
                ++flag_entries;
                if (v == Variant::fedrac && flag != 1) fedrac_all_broadcast = false;
                if (v == Variant::baseline && flag != 0)
                    baseline_none_broadcast = false;
            }
        });
    }

    out.passed = base_used_fresh && base_not_broadcast && rac_used_broadcast &&
                 rac_critic_trained_after && fedrac_all_broadcast &&
                 baseline_none_broadcast && flag_rounds == 20;
    out.detail = std::string("critic-first actor fed by freshly trained critic: ") +
                 (base_used_fresh && base_not_broadcast ? "yes" : "NO") +
                 "; actor-first actor fed by broadcast critic: " +
                 (rac_used_broadcast && rac_critic_trained_after ? "yes" : "NO") +
                 "; per-round instrumentation over " +
                 std::to_string(flag_rounds) + " rounds / " +
                 std::to_string(flag_entries) + " participant entries: " +
                 (fedrac_all_broadcast && baseline_none_broadcast ? "consistent"
                                                                  : "VIOLATED");
    return out;
}

// ---------------------------------------------------------------------------
// Criterion 4 — heterogeneity raises measured critic disagreement
// ---------------------------------------------------------------------------

CriterionResult criterion_disagreement_monotone() {
    const auto start = std::chrono::steady_clock::now();
    // 8 chain clients, full participation, 20 rounds; the disagreement
    // statistic is the final round's value. Five seeds per noise level.
    std::map<double, std::vector<double>> kappa_by_eps;
    for (double eps : {0.0, 0.4}) {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            ClientPopulation pop = chain_population(8, eps, seed);
            TrainingSetup setup = chain_setup(Variant::baseline, seed, 20, 1024, 32);
            double last = 0.0;
            run_training(pop, setup,
                         [&](const RoundReport& r) { last = r.kappa; });
            kappa_by_eps[eps].push_back(last);
        }
    }
    const double secs = elapsed_s(start);
    const double lo_mean = mean_of(kappa_by_eps[0.0]);
    const double lo_sd = sample_sd(kappa_by_eps[0.0]);
    const double hi_mean = mean_of(kappa_by_eps[0.4]);
    const double hi_sd = sample_sd(kappa_by_eps[0.4]);
    const bool separated = lo_mean + lo_sd < hi_mean - hi_sd;

    CriterionResult out;
    out.passed = separated && hi_mean > lo_mean && secs < 600.0;
    out.detail = "disagreement " + format_num(lo_mean) + " +/- " +
                 format_num(lo_sd) + " (noise 0) vs " + format_num(hi_mean) +
                 " +/- " + format_num(hi_sd) + " (noise 0.4); 1-sigma bands " +
                 (separated ? "separated" : "OVERLAP") + "; " +
                 format_num(secs) + " s (budget 600 s)";
    return out;
}

// ---------------------------------------------------------------------------
// Criterion 5 — actor-first ordering helps on the shifted-car network
// ---------------------------------------------------------------------------

CriterionResult criterion_car_ordering_advantage() {
    const auto start = std::chrono::steady_clock::now();
    // Five paired seeds, 100 rounds each; compare the mean evaluation return
    // over the final 10 rounds.
    std::vector<double> base_tail, rac_tail;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        for (Variant v : {Variant::baseline, Variant::fedrac}) {
            ClientPopulation pop = car_population(seed);
            TrainingSetup setup = car_setup(v, seed);
            double acc = 0.0;
            std::size_t cnt = 0;
            run_training(pop, setup, [&](const RoundReport& r) {
                if (r.round + 10 >= setup.rounds) {
                    acc += r.mean_return;
                    ++cnt;
                }
            });
            (v == Variant::baseline ? base_tail : rac_tail)
                .push_back(acc / static_cast<double>(cnt));
        }
    }
    const double secs = elapsed_s(start);
    std::size_t wins = 0;
    for (std::size_t i = 0; i < 5; ++i)
        if (rac_tail[i] >= base_tail[i]) ++wins;
    const double base_mean = mean_of(base_tail);
    const double rac_mean = mean_of(rac_tail);

    CriterionResult out;
    out.passed = wins >= 4 && rac_mean >= base_mean && secs < 1800.0;
    out.detail = "actor-first wins " + std::to_string(wins) +
                 "/5 paired seeds; means " + format_num(rac_mean) +
                 " (actor-first) vs " + format_num(base_mean) +
                 " (critic-first); " + format_num(secs) + " s (budget 1800 s)";
    return out;
}

// ---------------------------------------------------------------------------
// Criterion 6 — aggregation-error growth under heterogeneity
// ---------------------------------------------------------------------------

CriterionResult criterion_aggregation_error_growth() {
    const auto start = std::chrono::steady_clock::now();
    // Aggregation error averaged over rounds 10-30 of a 30-round run,
    // 5-seed means per (variant, noise level). Value-estimate-driven actor
    // targets (small lambda) with large batches so that the critic each
    // client consumed — the only quantity the two orders disagree on —
    // dominates the client-to-client update dispersion.
    std::map<std::pair<int, int>, double> omega_means;  // (variant, eps idx)
    for (int vi = 0; vi < 2; ++vi) {
        const Variant v = vi == 0 ? Variant::baseline : Variant::fedrac;
        int ei = 0;
        for (double eps : {0.0, 0.4}) {
            double total = 0.0;
            for (std::uint64_t seed = 1; seed <= 5; ++seed) {
                ClientPopulation pop = chain_population(8, eps, seed);
                TrainingSetup setup = chain_setup(v, seed, 30, 2048, 16);
                setup.learner.gae_lambda = 0.05;
                double acc = 0.0;
                std::size_t cnt = 0;
                run_training(pop, setup, [&](const RoundReport& r) {
                    if (r.round >= 9) {
                        acc += r.omega;
                        ++cnt;
                    }
                });
                total += acc / static_cast<double>(cnt);
            }
            omega_means[{vi, ei++}] = total / 5.0;
        }
    }
    const double secs = elapsed_s(start);
    const double base_factor = omega_means[{0, 1}] / omega_means[{0, 0}];
    const double rac_factor = omega_means[{1, 1}] / omega_means[{1, 0}];

    CriterionResult out;
    out.passed = base_factor > rac_factor && secs < 900.0;
    out.detail = "aggregation-error growth factor " + format_num(base_factor) +
                 " (critic-first) vs " + format_num(rac_factor) +
                 " (actor-first); " + format_num(secs) + " s (budget 900 s)";
    return out;
}

// ---------------------------------------------------------------------------
// Criterion 7 — linearization gap shrinks with width
// ---------------------------------------------------------------------------

CriterionResult criterion_width_trend() {
    const auto start = std::chrono::steady_clock::now();
    const double radius = 5.0;
    const std::size_t dim = 3, probes = 256, n_seeds = 30;
    std::vector<double> means;
    for (std::size_t width : {std::size_t{16}, std::size_t{256}, std::size_t{4096}}) {
        double total = 0.0;
        for (std::uint64_t seed = 1; seed <= n_seeds; ++seed) {
            RngStream rng = RngStream::derive(seed, 0, "linearization", width);
            NetworkParams net = init_network(width, dim, radius, rng);
            net = detail::displaced(net, radius, rng);
            double acc = 0.0;
            for (std::size_t i = 0; i < probes; ++i) {
                std::vector<double> x(dim);
                for (double& v : x) v = rng.uniform(-0.577, 0.577);
                acc += std::abs(forward(net, x) - forward_linearized(net, x));
            }
            total += acc / static_cast<double>(probes);
        }
        means.push_back(total / static_cast<double>(n_seeds));
    }
    const double secs = elapsed_s(start);
    const bool decreasing = means[0] > means[1] && means[1] > means[2];

    CriterionResult out;
    out.passed = decreasing && secs < 300.0;
    out.detail = "mean |f - f_linearized| over widths {16, 256, 4096}: " +
                 format_num(means[0]) + " > " + format_num(means[1]) + " > " +
                 format_num(means[2]) + (decreasing ? "" : "  NOT DECREASING") +
                 "; " + format_num(secs) + " s (budget 300 s)";
    return out;
}

// ---------------------------------------------------------------------------
// Criterion 8 — homogeneous convergence to the brute-force optimum
// ---------------------------------------------------------------------------

/// Exact expected truncated (undiscounted) return of a deterministic policy
/// on a tabular model: distribution pushforward over the episode horizon.
double exact_truncated_return(const TabularMDP& mdp,
                              const std::vector<std::size_t>& policy,
                              std::size_t horizon) {
    std::vector<double> d = mdp.mu;
    double ret = 0.0;
    for (std::size_t h = 0; h < horizon; ++h) {
        std::vector<double> next(mdp.S, 0.0);
        for (std::size_t s = 0; s < mdp.S; ++s) {
            ret += d[s] * mdp.r(s, policy[s]);
            for (std::size_t s2 = 0; s2 < mdp.S; ++s2)
                next[s2] += d[s] * mdp.p(s, policy[s], s2);
        }
        d = std::move(next);
    }
    return ret;
}

CriterionResult criterion_homogeneous_convergence() {
    const auto start = std::chrono::steady_clock::now();
    const std::size_t horizon = 60;

    // Brute-force optimum: enumerate every deterministic policy and take the
    // best exact population-weighted truncated return.
    ClientPopulation ref_pop = chain_population(2, 0.0, 1);
    std::vector<TabularMDP> mdps;
    for (const auto& env : ref_pop.envs)
        mdps.push_back(to_tabular(dynamic_cast<const PerturbedChainMDP&>(*env)));
    const std::size_t S = mdps[0].S, A = mdps[0].A;
    std::size_t n_policies = 1;
    for (std::size_t s = 0; s < S; ++s) n_policies *= A;
    double optimum = -1e300;
    std::vector<std::size_t> policy(S);
    for (std::size_t code = 0; code < n_policies; ++code) {
        std::size_t c = code;
        for (std::size_t s = 0; s < S; ++s) {
            policy[s] = c % A;
            c /= A;
        }
        double fed = 0.0;
        for (std::size_t i = 0; i < mdps.size(); ++i)
            fed += ref_pop.q[i] * exact_truncated_return(mdps[i], policy, horizon);
        optimum = std::max(optimum, fed);
    }
    const double bar = 0.9 * optimum;

    // Both orders, three seeds, 50 rounds: best per-round evaluation return
    // must clear 90% of the optimum.
    std::size_t passes = 0;
    double worst_peak = 1e300;
    for (Variant v : {Variant::baseline, Variant::fedrac}) {
        for (std::uint64_t seed = 1; seed <= 3; ++seed) {
            ClientPopulation pop = chain_population(2, 0.0, seed);
            TrainingSetup setup = chain_setup(v, seed, 50, 384, 64);
            double peak = -1e300;
            run_training(pop, setup, [&](const RoundReport& r) {
                peak = std::max(peak, r.mean_return);
            });
            worst_peak = std::min(worst_peak, peak);
            if (peak >= bar) ++passes;
        }
    }
    const double secs = elapsed_s(start);

    CriterionResult out;
    out.passed = passes == 6;
    out.detail = std::to_string(passes) +
                 "/6 runs (2 orders x 3 seeds) reached 90% of the exact "
                 "brute-force optimum " +
                 format_num(optimum) + " (bar " + format_num(bar) +
                 ", worst peak " + format_num(worst_peak) + "); " +
                 format_num(secs) + " s";
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    const std::map<int, std::pair<const char*, std::function<CriterionResult()>>>
        criteria = {
            {1, {"numeric property suite", criterion_properties}},
            {2, {"tabular oracle consistency", criterion_tabular_oracles}},
            {3, {"intra-round update-order contract", criterion_order_contract}},
            {4, {"heterogeneity raises critic disagreement",
                 criterion_disagreement_monotone}},
            {5, {"actor-first ordering helps on the shifted-car network",
                 criterion_car_ordering_advantage}},
            {6, {"aggregation-error growth under heterogeneity",
                 criterion_aggregation_error_growth}},
            {7, {"linearization gap shrinks with width", criterion_width_trend}},
            {8, {"homogeneous convergence to the brute-force optimum",
                 criterion_homogeneous_convergence}},
        };

    std::vector<int> requested;
    for (int i = 1; i < argc; ++i) {
        const int id = std::atoi(argv[i]);
        if (criteria.find(id) == criteria.end()) {
            std::fprintf(stderr, "unknown criterion: %s\n", argv[i]);
            return 2;
        }
        requested.push_back(id);
    }
    if (requested.empty())
        for (const auto& [id, entry] : criteria) requested.push_back(id);

    bool all_passed = true;
    for (int id : requested) {
        const auto& [name, fn] = criteria.at(id);
        CriterionResult result;
        try {
            result = fn();
        } catch (const std::exception& e) {
            result.passed = false;
            result.detail = std::string("exception: ") + e.what();
        }
        all_passed = all_passed && result.passed;
        std::printf("%s  criterion %d: %s — %s\n",
                    result.passed ? "PASS" : "FAIL", id, name,
                    result.detail.c_str());
        std::fflush(stdout);
    }
    return all_passed ? 0 : 1;
}
