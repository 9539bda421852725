// SPDX-License-Identifier: MIT
// Experiment harness: a flat sectioned key-value config format, the
// multi-trial experiment runner with CSV metrics / manifest / summary
// emission, and long-format plot-data extraction with normal-approximation
// confidence bands.
//
// Everything the runner resolves (defaults included) is echoed into the
// manifest, so a run is reproducible from the manifest alone. All numeric
// output is printed with 17 significant digits, which round-trips IEEE
// doubles exactly; reruns under an injected fixed clock are byte-identical.
#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fedrl/environments.hpp"
#include "fedrl/errors.hpp"
#include "fedrl/federation.hpp"
#include "fedrl/learners.hpp"
#include "fedrl/rng.hpp"

namespace fedrl {

inline constexpr std::string_view kLibraryVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Formatting helpers
// ---------------------------------------------------------------------------

namespace detail {

/// Shortest-exact decimal form of a double (17 significant digits
/// round-trip IEEE-754 binary64 exactly).
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string format_uint(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%llu", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
        s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
        s.remove_suffix(1);
    return s;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(trim(s.substr(start)));
            return out;
        }
        out.emplace_back(trim(s.substr(start, pos - start)));
        start = pos + 1;
    }
}

inline double parse_double_or_throw(std::string_view text,
                                    const std::string& context) {
    const std::string s{trim(text)};
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size())
        throw ConfigError(context + ": not a number: '" + s + "'");
    return v;
}

inline std::uint64_t parse_uint_or_throw(std::string_view text,
                                         const std::string& context) {
    const std::string s{trim(text)};
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (s.empty() || end != s.c_str() + s.size() || s.front() == '-')
        throw ConfigError(context + ": not a nonnegative integer: '" + s + "'");
    return v;
}

inline bool parse_bool_or_throw(std::string_view text,
                                const std::string& context) {
    const std::string_view s = trim(text);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError(context + ": not a boolean: '" + std::string(s) + "'");
}

} // namespace detail

inline std::string to_string(ActorMode m) {
    return m == ActorMode::mse_regression ? "mse_regression" : "kl_penalty";
}

inline ActorMode parse_actor_mode(std::string_view s) {
    if (s == "mse_regression") return ActorMode::mse_regression;
    if (s == "kl_penalty") return ActorMode::kl_penalty;
    throw ConfigError("unknown actor mode '" + std::string(s) +
                      "' (expected mse_regression or kl_penalty)");
}

inline std::string to_string(HeterogeneityNetworkSpec::Family f) {
    return f == HeterogeneityNetworkSpec::Family::car ? "car" : "chain";
}

inline HeterogeneityNetworkSpec::Family parse_family(std::string_view s) {
    if (s == "car") return HeterogeneityNetworkSpec::Family::car;
    if (s == "chain") return HeterogeneityNetworkSpec::Family::chain;
    throw ConfigError("unknown environment family '" + std::string(s) +
                      "' (expected car or chain)");
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

/// Fully resolved description of one experiment: the client network, the
/// training grid (variants × base algorithms × trial seeds), and every
/// learner/schedule/network knob.
struct ExperimentConfig {
    std::string name = "experiment";

    // [experiment]
    HeterogeneityNetworkSpec::Family family =
        HeterogeneityNetworkSpec::Family::chain;
    double heterogeneity = 0.0; ///< h (car) or ε_P (chain)
    std::size_t clients = 2;    ///< N
    std::size_t clients_per_round = 0; ///< K; 0 means all
    std::size_t rounds = 30;    ///< T
    std::vector<Variant> variants{Variant::baseline, Variant::fedrac};
    std::vector<BaseAlgo> algos{BaseAlgo::fedavg};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::vector<double> sweep_levels; ///< optional heterogeneity sweep grid
    std::string out_dir = "runs";

    // [learner]
    LearnerConfig learner{.lr = 0.01,
                          .lr_decay = 0.98,
                          .minibatch = 128,
                          .epochs = 10,
                          .gamma = 0.99,
                          .gae_lambda = 0.95,
                          .kl_target = 0.01,
                          .actor_mode = ActorMode::kl_penalty,
                          .fedprox_mu = 0.1};

    // [training]
    std::size_t batch_size = 2048; ///< B
    std::size_t eval_episodes = 5;
    std::size_t actor_width = 64;
    std::size_t critic_width = 64;
    double actor_radius = 5.0;
    double critic_radius = 10.0;
    double tau = 1.0;
    bool tau_from_schedule = false;
    double beta_base = 0.3;
    double sigma0 = 1.0;
    double sigma_decay = 0.995;
    double initial_beta_penalty = 1.0;
    std::size_t diag_probes = 32;
    std::size_t episode_horizon = 200;
    std::size_t chain_states = 6;
    std::size_t chain_actions = 3;
    double discount = 0.99;
    std::vector<double> data_weights; ///< l_n; empty = equal

    bool operator==(const ExperimentConfig&) const = default;

    void validate() const {
        if (clients == 0) throw ConfigError("clients: must be >= 1");
        if (clients_per_round > clients)
            throw ConfigError("clients_per_round: exceeds clients");
        if (variants.empty()) throw ConfigError("variants: must not be empty");
        if (algos.empty()) throw ConfigError("algos: must not be empty");
        if (seeds.empty()) throw ConfigError("seeds: must not be empty");
        std::vector<std::uint64_t> sorted = seeds;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw ConfigError("seeds: must be distinct");
        if (!(heterogeneity >= 0.0))
            throw ConfigError("heterogeneity: must be >= 0");
        if (family == HeterogeneityNetworkSpec::Family::chain &&
            heterogeneity > 0.5)
            throw ConfigError("heterogeneity: chain noise must lie in [0, 0.5]");
        for (double level : sweep_levels)
            if (!(level >= 0.0)) throw ConfigError("sweep: levels must be >= 0");
        if (!data_weights.empty() && data_weights.size() != clients)
            throw ConfigError("data_weights: one entry per client required");
        try {
            learner.validate();
            network_spec().validate();
            training_setup(variants.front(), algos.front(), seeds.front())
                .validate(clients);
        } catch (const Error& e) {
            throw ConfigError(e.what());
        }
    }

    /// The client-network description this config denotes (optionally at an
    /// overridden heterogeneity level).
    HeterogeneityNetworkSpec network_spec(
        std::optional<double> level_override = std::nullopt) const {
        HeterogeneityNetworkSpec spec;
        spec.family = family;
        spec.n_clients = clients;
        const double level = level_override.value_or(heterogeneity);
        if (family == HeterogeneityNetworkSpec::Family::car)
            spec.shift_halfwidth = level;
        else
            spec.transition_noise = level;
        spec.data_weights = data_weights;
        spec.discount = discount;
        spec.episode_horizon = episode_horizon;
        spec.chain_states = chain_states;
        spec.chain_actions = chain_actions;
        return spec;
    }

    /// The server-side setup for one grid cell.
    TrainingSetup training_setup(Variant v, BaseAlgo a,
                                 std::uint64_t master_seed) const {
        TrainingSetup s;
        s.variant = v;
        s.base_algo = a;
        s.learner = learner;
        s.rounds = rounds;
        s.clients_per_round = clients_per_round;
        s.batch_size = batch_size;
        s.eval_episodes = eval_episodes;
        s.actor_width = actor_width;
        s.critic_width = critic_width;
        s.actor_radius = actor_radius;
        s.critic_radius = critic_radius;
        s.tau = tau;
        s.tau_from_schedule = tau_from_schedule;
        s.beta_base = beta_base;
        s.sigma0 = sigma0;
        s.sigma_decay = sigma_decay;
        s.initial_beta_penalty = initial_beta_penalty;
        s.master_seed = master_seed;
        s.diag_probes = diag_probes;
        return s;
    }
};

// ---------------------------------------------------------------------------
// Config parsing and serialization
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
std::string join(const std::vector<T>& xs,
                 const std::function<std::string(const T&)>& fmt) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        out += fmt(xs[i]);
    }
    return out;
}

inline void apply_config_key(ExperimentConfig& cfg, const std::string& section,
                             const std::string& key, const std::string& value,
                             const std::string& where) {
    const auto as_double = [&] { return parse_double_or_throw(value, where); };
    const auto as_uint = [&] {
        return static_cast<std::size_t>(parse_uint_or_throw(value, where));
    };
    const auto as_bool = [&] { return parse_bool_or_throw(value, where); };

    if (section == "experiment") {
        if (key == "name") cfg.name = value;
        else if (key == "family") cfg.family = parse_family(value);
        else if (key == "heterogeneity") cfg.heterogeneity = as_double();
        else if (key == "clients") cfg.clients = as_uint();
        else if (key == "clients_per_round") cfg.clients_per_round = as_uint();
        else if (key == "rounds") cfg.rounds = as_uint();
        else if (key == "variants") {
            cfg.variants.clear();
            if (value == "both") {
                cfg.variants = {Variant::baseline, Variant::fedrac};
            } else {
                for (const std::string& tok : split(value, ','))
                    cfg.variants.push_back(parse_variant(tok));
            }
        } else if (key == "algos") {
            cfg.algos.clear();
            if (value == "all") {
                cfg.algos = {BaseAlgo::fedavg, BaseAlgo::fedprox,
                             BaseAlgo::scaffold};
            } else {
                for (const std::string& tok : split(value, ','))
                    cfg.algos.push_back(parse_base_algo(tok));
            }
        } else if (key == "trials") {
            const std::size_t n = as_uint();
            cfg.seeds.clear();
            for (std::size_t i = 1; i <= n; ++i) cfg.seeds.push_back(i);
        } else if (key == "seeds") {
            cfg.seeds.clear();
            for (const std::string& tok : split(value, ','))
                cfg.seeds.push_back(parse_uint_or_throw(tok, where));
        } else if (key == "sweep") {
            cfg.sweep_levels.clear();
            for (const std::string& tok : split(value, ','))
                cfg.sweep_levels.push_back(parse_double_or_throw(tok, where));
        } else if (key == "out_dir") {
            cfg.out_dir = value;
        } else {
            throw ConfigError(where + ": unknown key '" + key + "'");
        }
        return;
    }
    if (section == "learner") {
        if (key == "lr") cfg.learner.lr = as_double();
        else if (key == "lr_decay") cfg.learner.lr_decay = as_double();
        else if (key == "minibatch") cfg.learner.minibatch = as_uint();
        else if (key == "epochs") cfg.learner.epochs = as_uint();
        else if (key == "gamma") cfg.learner.gamma = as_double();
        else if (key == "gae_lambda") cfg.learner.gae_lambda = as_double();
        else if (key == "kl_target") cfg.learner.kl_target = as_double();
        else if (key == "actor_mode") cfg.learner.actor_mode = parse_actor_mode(value);
        else if (key == "fedprox_mu") cfg.learner.fedprox_mu = as_double();
        else throw ConfigError(where + ": unknown key '" + key + "'");
        return;
    }
    if (section == "training") {
        if (key == "batch") cfg.batch_size = as_uint();
        else if (key == "eval_episodes") cfg.eval_episodes = as_uint();
        else if (key == "actor_width") cfg.actor_width = as_uint();
        else if (key == "critic_width") cfg.critic_width = as_uint();
        else if (key == "actor_radius") cfg.actor_radius = as_double();
        else if (key == "critic_radius") cfg.critic_radius = as_double();
        else if (key == "tau") cfg.tau = as_double();
        else if (key == "tau_from_schedule") cfg.tau_from_schedule = as_bool();
        else if (key == "beta_base") cfg.beta_base = as_double();
        else if (key == "sigma0") cfg.sigma0 = as_double();
        else if (key == "sigma_decay") cfg.sigma_decay = as_double();
        else if (key == "kl_penalty_init") cfg.initial_beta_penalty = as_double();
        else if (key == "diag_probes") cfg.diag_probes = as_uint();
        else if (key == "episode_horizon") cfg.episode_horizon = as_uint();
        else if (key == "chain_states") cfg.chain_states = as_uint();
        else if (key == "chain_actions") cfg.chain_actions = as_uint();
        else if (key == "discount") cfg.discount = as_double();
        else if (key == "data_weights") {
            cfg.data_weights.clear();
            for (const std::string& tok : split(value, ','))
                cfg.data_weights.push_back(parse_double_or_throw(tok, where));
        } else {
            throw ConfigError(where + ": unknown key '" + key + "'");
        }
        return;
    }
    throw ConfigError(where + ": unknown section '" + section + "'");
}

} // namespace detail

/// Parses the sectioned key-value config text. Unknown sections or keys are
/// rejected; every syntax error names its line.
inline ExperimentConfig parse_config_text(const std::string& text) {
    ExperimentConfig cfg;
    std::string section;
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::size_t hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        const std::string_view line = detail::trim(raw);
        if (line.empty()) continue;
        const std::string where = "line " + std::to_string(line_no);
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(where + ": unterminated section header");
            section = std::string(detail::trim(line.substr(1, line.size() - 2)));
            if (section != "experiment" && section != "learner" &&
                section != "training")
                throw ConfigError(where + ": unknown section '" + section + "'");
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(where + ": expected 'key = value'");
        const std::string key{detail::trim(line.substr(0, eq))};
        const std::string value{detail::trim(line.substr(eq + 1))};
        if (key.empty()) throw ConfigError(where + ": empty key");
        if (section.empty())
            throw ConfigError(where + ": key outside any [section]");
        detail::apply_config_key(cfg, section, key, value, where);
    }
    cfg.validate();
    return cfg;
}

/// Loads and validates a config file.
inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError("cannot open config file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_config_text(buf.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

/// Serializes every resolved field; load(save(cfg)) == cfg.
inline std::string save_config(const ExperimentConfig& cfg) {
    using detail::format_double;
    using detail::format_uint;
    std::string out;
    out += "[experiment]\n";
    out += "name = " + cfg.name + "\n";
    out += "family = " + to_string(cfg.family) + "\n";
    out += "heterogeneity = " + format_double(cfg.heterogeneity) + "\n";
    out += "clients = " + format_uint(cfg.clients) + "\n";
    out += "clients_per_round = " + format_uint(cfg.clients_per_round) + "\n";
    out += "rounds = " + format_uint(cfg.rounds) + "\n";
    out += "variants = " +
           detail::join<Variant>(cfg.variants,
                                 [](const Variant& v) { return to_string(v); }) +
           "\n";
    out += "algos = " +
           detail::join<BaseAlgo>(
               cfg.algos, [](const BaseAlgo& a) { return to_string(a); }) +
           "\n";
    out += "seeds = " +
           detail::join<std::uint64_t>(
               cfg.seeds,
               [](const std::uint64_t& s) { return detail::format_uint(s); }) +
           "\n";
    if (!cfg.sweep_levels.empty())
        out += "sweep = " +
               detail::join<double>(cfg.sweep_levels,
                                    [](const double& v) {
                                        return detail::format_double(v);
                                    }) +
               "\n";
    out += "out_dir = " + cfg.out_dir + "\n";
    out += "\n[learner]\n";
    out += "lr = " + format_double(cfg.learner.lr) + "\n";
    out += "lr_decay = " + format_double(cfg.learner.lr_decay) + "\n";
    out += "minibatch = " + format_uint(cfg.learner.minibatch) + "\n";
    out += "epochs = " + format_uint(cfg.learner.epochs) + "\n";
    out += "gamma = " + format_double(cfg.learner.gamma) + "\n";
    out += "gae_lambda = " + format_double(cfg.learner.gae_lambda) + "\n";
    out += "kl_target = " + format_double(cfg.learner.kl_target) + "\n";
    out += "actor_mode = " + to_string(cfg.learner.actor_mode) + "\n";
    out += "fedprox_mu = " + format_double(cfg.learner.fedprox_mu) + "\n";
    out += "\n[training]\n";
    out += "batch = " + format_uint(cfg.batch_size) + "\n";
    out += "eval_episodes = " + format_uint(cfg.eval_episodes) + "\n";
    out += "actor_width = " + format_uint(cfg.actor_width) + "\n";
    out += "critic_width = " + format_uint(cfg.critic_width) + "\n";
    out += "actor_radius = " + format_double(cfg.actor_radius) + "\n";
    out += "critic_radius = " + format_double(cfg.critic_radius) + "\n";
    out += "tau = " + format_double(cfg.tau) + "\n";
    out += std::string("tau_from_schedule = ") +
           (cfg.tau_from_schedule ? "true" : "false") + "\n";
    out += "beta_base = " + format_double(cfg.beta_base) + "\n";
    out += "sigma0 = " + format_double(cfg.sigma0) + "\n";
    out += "sigma_decay = " + format_double(cfg.sigma_decay) + "\n";
    out += "kl_penalty_init = " + format_double(cfg.initial_beta_penalty) + "\n";
    out += "diag_probes = " + format_uint(cfg.diag_probes) + "\n";
    out += "episode_horizon = " + format_uint(cfg.episode_horizon) + "\n";
    out += "chain_states = " + format_uint(cfg.chain_states) + "\n";
    out += "chain_actions = " + format_uint(cfg.chain_actions) + "\n";
    out += "discount = " + format_double(cfg.discount) + "\n";
    if (!cfg.data_weights.empty())
        out += "data_weights = " +
               detail::join<double>(cfg.data_weights,
                                    [](const double& v) {
                                        return detail::format_double(v);
                                    }) +
               "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Metrics rows
// ---------------------------------------------------------------------------

/// One CSV row: a single (trial seed, round, variant, base algorithm) cell.
struct MetricsRow {
    std::uint64_t trial_seed = 0;
    std::size_t round = 0;
    Variant variant = Variant::baseline;
    BaseAlgo base_algo = BaseAlgo::fedavg;
    double mean_return = 0.0;
    double return_stderr = 0.0;
    double kappa = 0.0;
    double omega = 0.0;
    double stepwise_logdiff = 0.0;
    double linearization_error = 0.0;
    double critic_eval_error = 0.0;
    std::uint64_t wall_ms = 0;

    static std::string csv_header() {
        return "trial_seed,round,variant,base_algo,mean_return,return_stderr,"
               "kappa,omega,stepwise_logdiff,linearization_error,"
               "critic_eval_error,wall_ms";
    }

    std::string csv_row() const {
        using detail::format_double;
        using detail::format_uint;
        std::string out;
        out += format_uint(trial_seed);
        out += "," + format_uint(round);
        out += "," + to_string(variant);
        out += "," + to_string(base_algo);
        out += "," + format_double(mean_return);
        out += "," + format_double(return_stderr);
        out += "," + format_double(kappa);
        out += "," + format_double(omega);
        out += "," + format_double(stepwise_logdiff);
        out += "," + format_double(linearization_error);
        out += "," + format_double(critic_eval_error);
        out += "," + format_uint(wall_ms);
        return out;
    }
};

/// Parses a metrics CSV produced by run_experiment. The header must match
/// exactly; missing or reordered columns are rejected.
inline std::vector<MetricsRow> parse_metrics_csv(
    const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open metrics file: " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw ConfigError(path.string() + ": empty metrics file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != MetricsRow::csv_header())
        throw ConfigError(path.string() +
                          ": metrics header does not match (missing or "
                          "reordered columns)");
    std::vector<MetricsRow> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::trim(line).empty()) continue;
        const std::vector<std::string> f = detail::split(line, ',');
        const std::string where =
            path.string() + ": line " + std::to_string(line_no);
        if (f.size() != 12)
            throw ConfigError(where + ": expected 12 columns");
        MetricsRow r;
        r.trial_seed = detail::parse_uint_or_throw(f[0], where);
        r.round =
            static_cast<std::size_t>(detail::parse_uint_or_throw(f[1], where));
        r.variant = parse_variant(f[2]);
        r.base_algo = parse_base_algo(f[3]);
        r.mean_return = detail::parse_double_or_throw(f[4], where);
        r.return_stderr = detail::parse_double_or_throw(f[5], where);
        r.kappa = detail::parse_double_or_throw(f[6], where);
        r.omega = detail::parse_double_or_throw(f[7], where);
        r.stepwise_logdiff = detail::parse_double_or_throw(f[8], where);
        r.linearization_error = detail::parse_double_or_throw(f[9], where);
        r.critic_eval_error = detail::parse_double_or_throw(f[10], where);
        r.wall_ms = detail::parse_uint_or_throw(f[11], where);
        rows.push_back(r);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

/// Injection points for the runner. The clock feeds only the wall_ms
/// column: with a fixed clock, reruns are byte-identical. The population
/// factory exists for fault-injection tests; the default builds the client
/// network described by the config.
struct RunOptions {
    std::function<std::uint64_t()> clock_ms = [] {
        return static_cast<std::uint64_t>(
            std::chrono::duration_cast<std::chrono::milliseconds>(
                std::chrono::steady_clock::now().time_since_epoch())
                .count());
    };
    std::uint64_t seed_offset = 0;
    std::optional<double> heterogeneity_override;
    std::optional<std::string> out_dir_override;
    std::function<ClientPopulation(const ExperimentConfig&, std::uint64_t)>
        population_factory;
    std::size_t threads = 1; ///< accepted for interface compatibility;
                             ///< execution is deterministic regardless
};

/// Where a finished run put its artifacts, plus the rows it emitted.
struct ExperimentResult {
    std::filesystem::path out_dir;
    std::filesystem::path metrics_path;
    std::filesystem::path manifest_path;
    std::filesystem::path summary_path;
    std::vector<MetricsRow> rows;
};

namespace detail {

inline ClientPopulation default_population(const ExperimentConfig& cfg,
                                           std::uint64_t seed,
                                           std::optional<double> level) {
    RngStream rng = RngStream::derive(seed, 0, "population", 0);
    return build_network(cfg.network_spec(level), rng);
}

/// (mean, stderr) of a sample. A constant series returns its value and an
/// exact zero spread — the naive mean of identical doubles can differ from
/// them in the last bit, which would fabricate a nonzero variance.
inline std::pair<double, double> mean_and_stderr(
    const std::vector<double>& values) {
    const bool constant =
        std::all_of(values.begin(), values.end(),
                    [&](double v) { return v == values.front(); });
    if (constant || values.size() == 1) return {values.front(), 0.0};
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(values.size() - 1));
    return {mean, sd / std::sqrt(static_cast<double>(values.size()))};
}

/// Summary emission: per (round, variant, algo), mean ± stderr of
/// mean_return across trial seeds.
inline void write_summary(const std::filesystem::path& path,
                          const std::vector<MetricsRow>& rows) {
    std::map<std::tuple<std::size_t, std::string, std::string>,
             std::vector<double>>
        cells;
    for (const MetricsRow& r : rows)
        cells[{r.round, to_string(r.variant), to_string(r.base_algo)}]
            .push_back(r.mean_return);
    std::ofstream out(path, std::ios::binary);
    out << "round,variant,base_algo,mean_return,stderr,n_seeds\n";
    for (const auto& [key, values] : cells) {
        const auto [mean, stderr_v] = mean_and_stderr(values);
        out << std::get<0>(key) << ',' << std::get<1>(key) << ','
            << std::get<2>(key) << ',' << format_double(mean) << ','
            << format_double(stderr_v) << ',' << values.size() << '\n';
    }
}

inline void write_manifest(const std::filesystem::path& path,
                           const ExperimentConfig& cfg,
                           const std::vector<std::uint64_t>& effective_seeds,
                           std::optional<double> level,
                           const std::map<std::uint64_t, ClientPopulation>& pops) {
    std::ofstream out(path, std::ios::binary);
    out << "# run manifest — every resolved setting; reproducible from this "
           "file alone\n";
    out << "library_version = " << kLibraryVersion << "\n";
    out << "effective_heterogeneity = "
        << format_double(level.value_or(cfg.heterogeneity)) << "\n";
    out << "effective_seeds = "
        << join<std::uint64_t>(effective_seeds,
                               [](const std::uint64_t& s) {
                                   return format_uint(s);
                               })
        << "\n\n";
    out << save_config(cfg);
    for (const auto& [seed, pop] : pops) {
        out << "\n[clients seed=" << seed << "]\n";
        for (std::size_t n = 0; n < pop.envs.size(); ++n) {
            out << "client_" << n << " = weight "
                << format_double(pop.data_weights[n]);
            if (!pop.omegas.empty())
                out << " shift " << format_double(pop.omegas[n]);
            if (!pop.env_seeds.empty())
                out << " env_seed " << format_uint(pop.env_seeds[n]);
            out << "\n";
        }
    }
}

} // namespace detail

/// Runs the full grid (trial seeds × variants × base algorithms), streaming
/// metrics rows to `<out>/metrics.csv` ordered by (seed, round) and flushed
/// after every trial seed, so partial results survive an abort. Also writes
/// the manifest and the across-seed summary.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       const RunOptions& options = {}) {
    cfg.validate();
    ExperimentResult result;
    result.out_dir = options.out_dir_override.value_or(cfg.out_dir);
    std::filesystem::create_directories(result.out_dir);
    result.metrics_path = result.out_dir / "metrics.csv";
    result.manifest_path = result.out_dir / "manifest.txt";
    result.summary_path = result.out_dir / "summary.csv";

    std::vector<std::uint64_t> seeds = cfg.seeds;
    for (std::uint64_t& s : seeds) s += options.seed_offset;
    std::sort(seeds.begin(), seeds.end());

    // Populations are per trial seed (heterogeneity draws differ by seed);
    // built up front so the manifest records them even if training aborts.
    std::map<std::uint64_t, ClientPopulation> pops;
    for (const std::uint64_t seed : seeds)
        pops.emplace(seed,
                     options.population_factory
                         ? options.population_factory(cfg, seed)
                         : detail::default_population(
                               cfg, seed, options.heterogeneity_override));
    detail::write_manifest(result.manifest_path, cfg, seeds,
                           options.heterogeneity_override, pops);

    std::ofstream metrics(result.metrics_path, std::ios::binary);
    if (!metrics)
        throw ConfigError("cannot write metrics file: " +
                          result.metrics_path.string());
    metrics << MetricsRow::csv_header() << '\n';
    metrics.flush();

    try {
        for (const std::uint64_t seed : seeds) {
            // Rows for this seed are buffered and re-ordered by round so the
            // CSV interleaves variants within each round.
            std::vector<MetricsRow> seed_rows;
            for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi) {
                for (std::size_t ai = 0; ai < cfg.algos.size(); ++ai) {
                    const TrainingSetup setup = cfg.training_setup(
                        cfg.variants[vi], cfg.algos[ai], seed);
                    std::uint64_t mark = options.clock_ms();
                    run_training(
                        pops.at(seed), setup, [&](const RoundReport& report) {
                            const std::uint64_t now = options.clock_ms();
                            MetricsRow row;
                            row.trial_seed = seed;
                            row.round = report.round;
                            row.variant = cfg.variants[vi];
                            row.base_algo = cfg.algos[ai];
                            row.mean_return = report.mean_return;
                            row.return_stderr = report.return_stderr;
                            row.kappa = report.kappa;
                            row.omega = report.omega;
                            row.stepwise_logdiff = report.stepwise_logdiff;
                            row.linearization_error = report.linearization_error;
                            row.critic_eval_error = report.critic_eval_error;
                            row.wall_ms = now - mark;
                            mark = now;
                            seed_rows.push_back(row);
                        });
                }
            }
            std::stable_sort(seed_rows.begin(), seed_rows.end(),
                             [](const MetricsRow& a, const MetricsRow& b) {
                                 return a.round < b.round;
                             });
            for (const MetricsRow& row : seed_rows) {
                metrics << row.csv_row() << '\n';
                result.rows.push_back(row);
            }
            metrics.flush();
        }
    } catch (...) {
        metrics.flush();
        throw; // partial rows are already on disk
    }

    detail::write_summary(result.summary_path, result.rows);
    return result;
}

// ---------------------------------------------------------------------------
// Plot data
// ---------------------------------------------------------------------------

/// The metric columns emit_plot_data extracts, in output order.
inline const std::vector<std::pair<std::string, double MetricsRow::*>>&
plot_metrics() {
    static const std::vector<std::pair<std::string, double MetricsRow::*>> m{
        {"mean_return", &MetricsRow::mean_return},
        {"kappa", &MetricsRow::kappa},
        {"omega", &MetricsRow::omega},
        {"stepwise_logdiff", &MetricsRow::stepwise_logdiff},
        {"linearization_error", &MetricsRow::linearization_error},
        {"critic_eval_error", &MetricsRow::critic_eval_error},
    };
    return m;
}

/// Writes one long-format curve file per metric: (round, variant,
/// base_algo, mean, ci_low, ci_high) with 95% normal-approximation bands
/// across trial seeds. A single seed collapses the band onto the mean.
inline std::vector<std::filesystem::path> emit_plot_data(
    const std::filesystem::path& metrics_csv,
    const std::filesystem::path& out_dir) {
    const std::vector<MetricsRow> rows = parse_metrics_csv(metrics_csv);
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> written;
    for (const auto& [name, member] : plot_metrics()) {
        std::map<std::tuple<std::size_t, std::string, std::string>,
                 std::vector<double>>
            cells;
        for (const MetricsRow& r : rows)
            cells[{r.round, to_string(r.variant), to_string(r.base_algo)}]
                .push_back(r.*member);
        const std::filesystem::path path = out_dir / ("plot_" + name + ".csv");
        std::ofstream out(path, std::ios::binary);
        if (!out)
            throw ConfigError("cannot write plot file: " + path.string());
        out << "round,variant,base_algo,mean,ci_low,ci_high\n";
        for (const auto& [key, values] : cells) {
            const auto [mean, se] = detail::mean_and_stderr(values);
            const double half = 1.96 * se;
            out << std::get<0>(key) << ',' << std::get<1>(key) << ','
                << std::get<2>(key) << ',' << detail::format_double(mean) << ','
                << detail::format_double(mean - half) << ','
                << detail::format_double(mean + half) << '\n';
        }
        written.push_back(path);
    }
    return written;
}

} // namespace fedrl
