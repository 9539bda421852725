// SPDX-License-Identifier: MIT
// Experiment harness: config parsing with line-numbered diagnostics,
// save/load round-trips, the grid runner's CSV/manifest/summary contract,
// byte-identical reruns under a fixed clock, partial-result flushing on
// divergence, and plot-data confidence bands against the closed form.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "fedrl/environments.hpp"
#include "fedrl/errors.hpp"
#include "fedrl/harness.hpp"
#include "fedrl/rng.hpp"

using Catch::Approx;
using Catch::Matchers::ContainsSubstring;
using namespace fedrl;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
    const std::filesystem::path dir =
        std::filesystem::temp_directory_path() / ("fedrl_harness_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    REQUIRE(out.good());
    out << text;
}

/// Deterministic millisecond clock: advances by a fixed step per call, so
/// wall_ms columns are reproducible and reruns byte-identical.
RunOptions fixed_clock_options(std::uint64_t step = 7) {
    RunOptions options;
    auto counter = std::make_shared<std::uint64_t>(0);
    options.clock_ms = [counter, step] {
        *counter += step;
        return *counter;
    };
    return options;
}

/// A small two-client chain experiment that runs in milliseconds.
ExperimentConfig tiny_chain_config(const std::filesystem::path& out_dir) {
    ExperimentConfig cfg;
    cfg.name = "tiny";
    cfg.family = HeterogeneityNetworkSpec::Family::chain;
    cfg.heterogeneity = 0.2;
    cfg.clients = 2;
    cfg.clients_per_round = 0;
    cfg.rounds = 2;
    cfg.variants = {Variant::baseline, Variant::fedrac};
    cfg.algos = {BaseAlgo::fedavg};
    cfg.seeds = {1, 2};
    cfg.out_dir = out_dir.string();
    cfg.learner.lr = 0.05;
    cfg.learner.lr_decay = 0.99;
    cfg.learner.minibatch = 32;
    cfg.learner.epochs = 2;
    cfg.learner.gamma = 0.9;
    cfg.learner.gae_lambda = 0.95;
    cfg.learner.actor_mode = ActorMode::mse_regression;
    cfg.batch_size = 64;
    cfg.eval_episodes = 2;
    cfg.actor_width = 8;
    cfg.critic_width = 8;
    cfg.tau = 1.0;
    cfg.beta_base = 0.5;
    cfg.diag_probes = 4;
    cfg.episode_horizon = 40;
    cfg.discount = 0.9;
    return cfg;
}

/// Environment whose rewards are NaN, to force a mid-grid divergence.
class NanRewardEnv final : public Env {
public:
    std::size_t state_dim() const override { return 1; }
    bool discrete_actions() const override { return true; }
    std::size_t action_count() const override { return 2; }
    double gamma() const override { return 0.9; }
    double reward_bound() const override { return 1.0; }
    std::size_t horizon() const override { return 8; }
    std::vector<double> reset(RngStream&) const override { return {0.0}; }
    StepResult step(std::span<const double>, double, RngStream&) const override {
        StepResult out;
        out.state = {0.0};
        out.reward = std::numeric_limits<double>::quiet_NaN();
        out.terminal = false;
        return out;
    }
    std::vector<double> encode_state(std::span<const double>) const override {
        return {0.5};
    }
    std::vector<double> encode_action(double a) const override {
        return {a > 0.5 ? 0.4 : 0.1};
    }
    std::unique_ptr<Env> clone() const override {
        return std::make_unique<NanRewardEnv>(*this);
    }
};

std::vector<std::string> data_lines(const std::string& csv) {
    std::vector<std::string> lines;
    std::istringstream in(csv);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (first) {
            first = false;
            continue;
        }
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

std::vector<std::string> fields(const std::string& line) {
    std::vector<std::string> f;
    std::istringstream in(line);
    std::string tok;
    while (std::getline(in, tok, ',')) f.push_back(tok);
    return f;
}

} // namespace

TEST_CASE("config: minimal file resolves documented defaults", "[harness]") {
    const ExperimentConfig cfg =
        parse_config_text("[experiment]\nfamily = chain\n");
    CHECK(cfg.family == HeterogeneityNetworkSpec::Family::chain);
    CHECK(cfg.learner.lr == 0.01);
    CHECK(cfg.learner.lr_decay == 0.98);
    CHECK(cfg.learner.epochs == 10);
    CHECK(cfg.learner.gamma == 0.99);
    CHECK(cfg.learner.gae_lambda == 0.95);
    CHECK(cfg.batch_size == 2048);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
    CHECK(cfg.variants ==
          std::vector<Variant>{Variant::baseline, Variant::fedrac});
    CHECK(cfg.algos == std::vector<BaseAlgo>{BaseAlgo::fedavg});
    CHECK(cfg.rounds == 30);
    CHECK(cfg.clients_per_round == 0);
    CHECK(cfg.eval_episodes == 5);
    CHECK(cfg.actor_width == 64);
    CHECK(cfg.critic_width == 64);

    // Comments, blank lines, and token-list conveniences.
    const ExperimentConfig sugar = parse_config_text(
        "# full-line comment\n"
        "[experiment]\n"
        "family = car   # trailing comment\n"
        "\n"
        "variants = both\n"
        "algos = all\n"
        "trials = 3\n");
    CHECK(sugar.family == HeterogeneityNetworkSpec::Family::car);
    CHECK(sugar.variants.size() == 2);
    CHECK(sugar.algos ==
          std::vector<BaseAlgo>{BaseAlgo::fedavg, BaseAlgo::fedprox,
                                BaseAlgo::scaffold});
    CHECK(sugar.seeds == std::vector<std::uint64_t>{1, 2, 3});
}

TEST_CASE("config: save/load is the identity", "[harness]") {
    ExperimentConfig cfg;
    cfg.name = "roundtrip";
    cfg.family = HeterogeneityNetworkSpec::Family::car;
    cfg.heterogeneity = 1.5;
    cfg.clients = 12;
    cfg.clients_per_round = 4;
    cfg.rounds = 100;
    cfg.variants = {Variant::fedrac};
    cfg.algos = {BaseAlgo::scaffold, BaseAlgo::fedprox};
    cfg.seeds = {11, 3, 8};
    cfg.sweep_levels = {1.5, 2.0};
    cfg.out_dir = "runs/custom";
    cfg.learner.lr = 0.003;
    cfg.learner.lr_decay = 0.97;
    cfg.learner.minibatch = 256;
    cfg.learner.epochs = 7;
    cfg.learner.gamma = 0.97;
    cfg.learner.gae_lambda = 0.9;
    cfg.learner.kl_target = 0.02;
    cfg.learner.actor_mode = ActorMode::mse_regression;
    cfg.learner.fedprox_mu = 0.25;
    cfg.batch_size = 1024;
    cfg.eval_episodes = 3;
    cfg.actor_width = 32;
    cfg.critic_width = 48;
    cfg.actor_radius = 7.5;
    cfg.critic_radius = 12.5;
    cfg.tau = 0.8;
    cfg.tau_from_schedule = true;
    cfg.beta_base = 0.45;
    cfg.sigma0 = 0.9;
    cfg.sigma_decay = 0.99;
    cfg.initial_beta_penalty = 2.0;
    cfg.diag_probes = 16;
    cfg.episode_horizon = 80;
    cfg.chain_states = 8;
    cfg.chain_actions = 4;
    cfg.discount = 0.95;
    cfg.data_weights = {1.0, 1.0, 2.0, 1.0, 1.0, 1.0,
                        1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
    cfg.validate();

    CHECK(parse_config_text(save_config(cfg)) == cfg);

    const std::filesystem::path dir = fresh_dir("roundtrip");
    write_file(dir / "exp.cfg", save_config(cfg));
    CHECK(load_config(dir / "exp.cfg") == cfg);
}

TEST_CASE("config: errors carry line numbers and field names", "[harness]") {
    // Line-numbered syntax and vocabulary errors.
    CHECK_THROWS_WITH(
        parse_config_text("[experiment]\nfamily = chain\nbogus_key = 1\n"),
        ContainsSubstring("line 3") && ContainsSubstring("bogus_key"));
    CHECK_THROWS_WITH(parse_config_text("[experiment]\n[mystery]\n"),
                      ContainsSubstring("line 2") &&
                          ContainsSubstring("mystery"));
    CHECK_THROWS_WITH(
        parse_config_text("[experiment]\nfamily = chain\nrounds = soon\n"),
        ContainsSubstring("line 3"));
    CHECK_THROWS_WITH(parse_config_text("[experiment]\nfamily chain\n"),
                      ContainsSubstring("line 2") &&
                          ContainsSubstring("key = value"));
    CHECK_THROWS_WITH(parse_config_text("family = chain\n"),
                      ContainsSubstring("line 1") &&
                          ContainsSubstring("section"));
    CHECK_THROWS_WITH(parse_config_text("[experiment\nfamily = chain\n"),
                      ContainsSubstring("line 1"));
    CHECK_THROWS_AS(parse_config_text("[learner]\nlr = -1\n"), ConfigError);

    // Semantic violations name the offending field.
    CHECK_THROWS_WITH(parse_config_text("[experiment]\nfamily = chain\n"
                                        "clients = 4\nclients_per_round = 9\n"),
                      ContainsSubstring("clients_per_round"));
    CHECK_THROWS_WITH(
        parse_config_text("[experiment]\nfamily = chain\nseeds = 5,5\n"),
        ContainsSubstring("seeds"));
    CHECK_THROWS_WITH(
        parse_config_text("[experiment]\nfamily = chain\nheterogeneity = 0.7\n"),
        ContainsSubstring("heterogeneity"));
    CHECK_THROWS_WITH(parse_config_text("[experiment]\nfamily = chain\n"
                                        "clients = 3\n[training]\n"
                                        "data_weights = 1,2\n"),
                      ContainsSubstring("data_weights"));
    CHECK_THROWS_AS(load_config("/nonexistent/path/exp.cfg"), ConfigError);
}

TEST_CASE("metrics rows: exact decimal round-trip and header enforcement",
          "[harness]") {
    CHECK(MetricsRow::csv_header() ==
          "trial_seed,round,variant,base_algo,mean_return,return_stderr,"
          "kappa,omega,stepwise_logdiff,linearization_error,critic_eval_error,"
          "wall_ms");

    MetricsRow row;
    row.trial_seed = 42;
    row.round = 17;
    row.variant = Variant::fedrac;
    row.base_algo = BaseAlgo::scaffold;
    row.mean_return = 1.0 / 3.0;
    row.return_stderr = 0.1;
    row.kappa = 1e-17;
    row.omega = 123456.789012345;
    row.stepwise_logdiff = 3.0e300;
    row.linearization_error = 5.0e-320; // subnormal
    row.critic_eval_error = 0.0;
    row.wall_ms = 987654321;

    const std::filesystem::path dir = fresh_dir("rows");
    write_file(dir / "m.csv",
               MetricsRow::csv_header() + "\n" + row.csv_row() + "\n");
    const std::vector<MetricsRow> parsed = parse_metrics_csv(dir / "m.csv");
    REQUIRE(parsed.size() == 1);
    // 17 significant digits reproduce every IEEE double bit-for-bit.
    CHECK(parsed[0].trial_seed == row.trial_seed);
    CHECK(parsed[0].round == row.round);
    CHECK(parsed[0].variant == row.variant);
    CHECK(parsed[0].base_algo == row.base_algo);
    CHECK(parsed[0].mean_return == row.mean_return);
    CHECK(parsed[0].return_stderr == row.return_stderr);
    CHECK(parsed[0].kappa == row.kappa);
    CHECK(parsed[0].omega == row.omega);
    CHECK(parsed[0].stepwise_logdiff == row.stepwise_logdiff);
    CHECK(parsed[0].linearization_error == row.linearization_error);
    CHECK(parsed[0].critic_eval_error == row.critic_eval_error);
    CHECK(parsed[0].wall_ms == row.wall_ms);

    write_file(dir / "bad_header.csv",
               "trial_seed,round,variant\n1,0,baseline\n");
    CHECK_THROWS_AS(parse_metrics_csv(dir / "bad_header.csv"), ConfigError);
    write_file(dir / "short_row.csv",
               MetricsRow::csv_header() + "\n1,0,baseline,fedavg\n");
    CHECK_THROWS_WITH(parse_metrics_csv(dir / "short_row.csv"),
                      ContainsSubstring("12 columns"));
    write_file(dir / "missing.csv", "");
    CHECK_THROWS_AS(parse_metrics_csv(dir / "missing.csv"), ConfigError);
}

TEST_CASE("runner: grid shape, row order, manifest, and summary", "[harness]") {
    const std::filesystem::path dir = fresh_dir("grid");
    const ExperimentConfig cfg = tiny_chain_config(dir / "main");
    const ExperimentResult result = run_experiment(cfg, fixed_clock_options());

    REQUIRE(std::filesystem::exists(result.metrics_path));
    REQUIRE(std::filesystem::exists(result.manifest_path));
    REQUIRE(std::filesystem::exists(result.summary_path));

    // One row per (seed, round, variant, algo); 2 × 2 × 2 × 1 cells.
    REQUIRE(result.rows.size() == 8);
    std::set<std::tuple<std::uint64_t, std::size_t, Variant, BaseAlgo>> cells;
    for (const MetricsRow& r : result.rows)
        cells.insert({r.trial_seed, r.round, r.variant, r.base_algo});
    CHECK(cells.size() == 8);

    // Rows are ordered by (seed, round), variants interleaved within rounds.
    for (std::size_t i = 1; i < result.rows.size(); ++i) {
        const auto key = [](const MetricsRow& r) {
            return std::make_pair(r.trial_seed, r.round);
        };
        CHECK(key(result.rows[i - 1]) <= key(result.rows[i]));
    }
    CHECK(result.rows.front().trial_seed == 1);
    CHECK(result.rows.back().trial_seed == 2);

    // The on-disk CSV matches what the runner returned.
    const std::vector<MetricsRow> reread = parse_metrics_csv(result.metrics_path);
    REQUIRE(reread.size() == result.rows.size());
    for (std::size_t i = 0; i < reread.size(); ++i) {
        CHECK(reread[i].mean_return == result.rows[i].mean_return);
        CHECK(reread[i].kappa == result.rows[i].kappa);
        CHECK(reread[i].wall_ms == result.rows[i].wall_ms);
    }

    // The fixed clock ticks once per round report, so every wall_ms is one step.
    for (const MetricsRow& r : result.rows) CHECK(r.wall_ms == 7);

    // Byte-identical rerun under the same fixed clock.
    ExperimentConfig rerun_cfg = cfg;
    rerun_cfg.out_dir = (dir / "rerun").string();
    const ExperimentResult rerun = run_experiment(rerun_cfg, fixed_clock_options());
    CHECK(read_file(result.metrics_path) == read_file(rerun.metrics_path));
    CHECK(read_file(result.summary_path) == read_file(rerun.summary_path));

    // Manifest: version, effective settings, every resolved knob, and the
    // per-seed client draws.
    const std::string manifest = read_file(result.manifest_path);
    CHECK(manifest.find("library_version = 0.1.0") != std::string::npos);
    CHECK(manifest.find("effective_seeds = 1,2") != std::string::npos);
    CHECK(manifest.find("effective_heterogeneity = " +
                        detail::format_double(0.2)) != std::string::npos);
    CHECK(manifest.find("lr = " + detail::format_double(0.05)) !=
          std::string::npos);
    CHECK(manifest.find("sigma_decay = " + detail::format_double(0.995)) !=
          std::string::npos);
    CHECK(manifest.find("kl_target = " + detail::format_double(0.01)) !=
          std::string::npos);
    CHECK(manifest.find("batch = 64") != std::string::npos);
    CHECK(manifest.find("[clients seed=1]") != std::string::npos);
    CHECK(manifest.find("[clients seed=2]") != std::string::npos);
    CHECK(manifest.find("env_seed") != std::string::npos);
    // The manifest's config block reloads to the exact same experiment.
    const std::size_t block = manifest.find("[experiment]");
    REQUIRE(block != std::string::npos);
    std::string config_block = manifest.substr(block);
    config_block.resize(config_block.find("\n[clients"));
    CHECK(parse_config_text(config_block) == cfg);

    // Summary: mean ± stderr of mean_return across the two seeds.
    const std::string summary = read_file(result.summary_path);
    const std::vector<std::string> lines = data_lines(summary);
    REQUIRE(lines.size() == 4); // 2 rounds × 2 variants × 1 algo
    std::size_t checked = 0;
    for (const std::string& line : lines) {
        const std::vector<std::string> f = fields(line);
        REQUIRE(f.size() == 6);
        const std::size_t round = std::stoul(f[0]);
        const Variant variant = parse_variant(f[1]);
        double a = 0.0, b = 0.0;
        for (const MetricsRow& r : result.rows) {
            if (r.round == round && r.variant == variant) {
                if (r.trial_seed == 1) a = r.mean_return;
                else b = r.mean_return;
            }
        }
        CHECK(std::stod(f[3]) == Approx((a + b) / 2.0).margin(1e-9));
        CHECK(std::stod(f[4]) == Approx(std::abs(a - b) / 2.0).margin(1e-9));
        CHECK(f[5] == "2");
        ++checked;
    }
    CHECK(checked == 4);
}

TEST_CASE("runner: seed offset and heterogeneity override", "[harness]") {
    const std::filesystem::path dir = fresh_dir("overrides");
    const ExperimentConfig cfg = tiny_chain_config(dir / "base");
    const ExperimentResult base = run_experiment(cfg, fixed_clock_options());

    // Seed offset shifts every trial seed and is recorded in the manifest.
    RunOptions offset = fixed_clock_options();
    offset.seed_offset = 10;
    offset.out_dir_override = (dir / "offset").string();
    const ExperimentResult shifted = run_experiment(cfg, offset);
    for (const MetricsRow& r : shifted.rows)
        CHECK((r.trial_seed == 11 || r.trial_seed == 12));
    CHECK(read_file(shifted.manifest_path).find("effective_seeds = 11,12") !=
          std::string::npos);

    // A heterogeneity override changes the environments (and hence the
    // numbers) without touching the config echo.
    RunOptions homog = fixed_clock_options();
    homog.heterogeneity_override = 0.0;
    homog.out_dir_override = (dir / "homog").string();
    const ExperimentResult level = run_experiment(cfg, homog);
    CHECK(read_file(level.manifest_path)
              .find("effective_heterogeneity = " + detail::format_double(0.0)) !=
          std::string::npos);
    REQUIRE(level.rows.size() == base.rows.size());
    bool any_differ = false;
    for (std::size_t i = 0; i < level.rows.size(); ++i)
        if (level.rows[i].mean_return != base.rows[i].mean_return)
            any_differ = true;
    CHECK(any_differ);
}

TEST_CASE("runner: completed trials survive a divergent one", "[harness]") {
    const std::filesystem::path dir = fresh_dir("partial");
    ExperimentConfig cfg = tiny_chain_config(dir / "run");
    RunOptions options = fixed_clock_options();
    options.population_factory = [](const ExperimentConfig& c,
                                    std::uint64_t seed) {
        if (seed == 1) {
            RngStream rng = RngStream::derive(seed, 0, "population", 0);
            return build_network(c.network_spec(), rng);
        }
        ClientPopulation pop;
        pop.envs.push_back(std::make_unique<NanRewardEnv>());
        pop.envs.push_back(std::make_unique<NanRewardEnv>());
        pop.data_weights = {1.0, 1.0};
        pop.q = {0.5, 0.5};
        return pop;
    };

    CHECK_THROWS_AS(run_experiment(cfg, options), DivergenceError);

    // Seed 1 finished before seed 2 diverged; its rows are on disk, intact.
    const std::vector<MetricsRow> rows =
        parse_metrics_csv(dir / "run" / "metrics.csv");
    REQUIRE(rows.size() == 4); // 2 rounds × 2 variants for seed 1
    for (const MetricsRow& r : rows) CHECK(r.trial_seed == 1);
    // The manifest was still written, covering both populations.
    CHECK(std::filesystem::exists(dir / "run" / "manifest.txt"));
}

TEST_CASE("plot data: 95% bands match the closed form", "[harness]") {
    const std::filesystem::path dir = fresh_dir("plot");

    // Synthetic three-seed series: kappa has sample sd exactly 0.25 in each
    // cell, mean_return is constant, omega varies with round.
    std::string csv = MetricsRow::csv_header() + "\n";
    for (std::uint64_t seed : {1, 2, 3}) {
        for (std::size_t round : {std::size_t{0}, std::size_t{1}}) {
            MetricsRow r;
            r.trial_seed = seed;
            r.round = round;
            r.variant = Variant::baseline;
            r.base_algo = BaseAlgo::fedavg;
            r.mean_return = 5.0;
            r.kappa = 2.0 + 0.25 * (static_cast<double>(seed) - 2.0);
            r.omega = static_cast<double>(round) + 0.125 * static_cast<double>(seed);
            csv += r.csv_row() + "\n";
        }
    }
    write_file(dir / "metrics.csv", csv);

    const std::vector<std::filesystem::path> files =
        emit_plot_data(dir / "metrics.csv", dir / "plots");
    REQUIRE(files.size() == 6);
    for (const std::filesystem::path& f : files) CHECK(std::filesystem::exists(f));
    CHECK(files[0].filename() == "plot_mean_return.csv");
    CHECK(files[1].filename() == "plot_kappa.csv");

    // Known variance: half-width = 1.96·σ/√n with σ = 0.25, n = 3.
    const double expected_half = 1.96 * 0.25 / std::sqrt(3.0);
    const std::vector<std::string> kappa_lines =
        data_lines(read_file(dir / "plots" / "plot_kappa.csv"));
    REQUIRE(kappa_lines.size() == 2);
    for (const std::string& line : kappa_lines) {
        const std::vector<std::string> f = fields(line);
        REQUIRE(f.size() == 6);
        CHECK(f[1] == "baseline");
        CHECK(f[2] == "fedavg");
        const double mean = std::stod(f[3]);
        CHECK(mean == 2.0); // (1.75 + 2 + 2.25)/3 is exact in binary
        CHECK(std::abs((mean - std::stod(f[4])) - expected_half) <= 1e-9);
        CHECK(std::abs((std::stod(f[5]) - mean) - expected_half) <= 1e-9);
    }

    // Constant series collapse to zero-width bands at the exact value.
    for (const std::string& line :
         data_lines(read_file(dir / "plots" / "plot_mean_return.csv"))) {
        const std::vector<std::string> f = fields(line);
        CHECK(f[3] == "5");
        CHECK(f[4] == "5");
        CHECK(f[5] == "5");
    }

    // A single seed collapses every band onto the mean.
    std::string single = MetricsRow::csv_header() + "\n";
    MetricsRow r;
    r.trial_seed = 9;
    r.round = 0;
    r.variant = Variant::fedrac;
    r.base_algo = BaseAlgo::scaffold;
    r.kappa = 0.875;
    r.omega = -1.5;
    single += r.csv_row() + "\n";
    write_file(dir / "single.csv", single);
    emit_plot_data(dir / "single.csv", dir / "single_plots");
    for (const auto& [name, member] : plot_metrics()) {
        const std::vector<std::string> lines = data_lines(
            read_file(dir / "single_plots" / ("plot_" + name + ".csv")));
        REQUIRE(lines.size() == 1);
        const std::vector<std::string> f = fields(lines[0]);
        CHECK(f[3] == f[4]);
        CHECK(f[3] == f[5]);
        CHECK(std::stod(f[3]) == r.*member);
    }

    // Missing columns are rejected up front.
    write_file(dir / "broken.csv",
               "trial_seed,round,variant,base_algo,mean_return\n");
    CHECK_THROWS_WITH(emit_plot_data(dir / "broken.csv", dir / "x"),
                      ContainsSubstring("header"));
}
