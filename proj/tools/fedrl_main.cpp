// SPDX-License-Identifier: MIT
// Command-line front end: config-driven federated training runs, variant
// grids, heterogeneity sweeps, plot-data extraction, and the numerical
// self-check suite.
//
// Exit codes: 0 success, 2 configuration error, 3 training divergence,
// 4 self-check failure under `verify`.
#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedrl/errors.hpp"
#include "fedrl/federation.hpp"
#include "fedrl/harness.hpp"
#include "fedrl/verification.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitVerifyFailure = 4;

struct CommonFlags {
    std::string config_path;
    std::uint64_t seed_offset = 0;
    std::string out_dir;
    int threads = 1;
    std::string variant; ///< baseline | fedrac | both | "" (keep config)
    std::string algo;    ///< fedavg | fedprox | scaffold | all | "" (keep config)
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "Experiment config file")
        ->required();
    cmd->add_option("--seed-offset", flags.seed_offset,
                    "Added to every trial seed");
    cmd->add_option("--out", flags.out_dir,
                    "Output directory (overrides the config)");
    cmd->add_option("--threads", flags.threads,
                    "Worker threads (results are identical for any value)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--variant", flags.variant,
                    "Restrict the update-order variant")
        ->check(CLI::IsMember({"baseline", "fedrac", "both"}));
    cmd->add_option("--algo", flags.algo, "Restrict the base algorithm")
        ->check(CLI::IsMember({"fedavg", "fedprox", "scaffold", "all"}));
}

fedrl::ExperimentConfig load_with_overrides(const CommonFlags& flags) {
    fedrl::ExperimentConfig cfg = fedrl::load_config(flags.config_path);
    if (flags.variant == "both")
        cfg.variants = {fedrl::Variant::baseline, fedrl::Variant::fedrac};
    else if (!flags.variant.empty())
        cfg.variants = {fedrl::parse_variant(flags.variant)};
    if (flags.algo == "all")
        cfg.algos = {fedrl::BaseAlgo::fedavg, fedrl::BaseAlgo::fedprox,
                     fedrl::BaseAlgo::scaffold};
    else if (!flags.algo.empty())
        cfg.algos = {fedrl::parse_base_algo(flags.algo)};
    cfg.validate();
    return cfg;
}

fedrl::RunOptions options_from(const CommonFlags& flags) {
    fedrl::RunOptions options;
    options.seed_offset = flags.seed_offset;
    if (!flags.out_dir.empty()) options.out_dir_override = flags.out_dir;
    options.threads = static_cast<std::size_t>(flags.threads);
    return options;
}

/// Final-round evaluation summary per (variant, algorithm) cell.
void print_summary(const fedrl::ExperimentConfig& cfg,
                   const fedrl::ExperimentResult& result) {
    std::printf("wrote %s\n", result.metrics_path.string().c_str());
    std::printf("wrote %s\n", result.manifest_path.string().c_str());
    std::printf("wrote %s\n", result.summary_path.string().c_str());
    if (cfg.rounds == 0) {
        std::printf("no rounds requested; metrics are empty\n");
        return;
    }
    const std::size_t last = cfg.rounds - 1;
    std::map<std::pair<std::string, std::string>, std::vector<double>> final_cells;
    for (const fedrl::MetricsRow& row : result.rows)
        if (row.round == last)
            final_cells[{to_string(row.variant), to_string(row.base_algo)}]
                .push_back(row.mean_return);
    std::map<std::string, double> by_variant;
    for (const auto& [key, values] : final_cells) {
        const auto [mean, se] = fedrl::detail::mean_and_stderr(values);
        std::printf("final round %zu  %-8s %-8s  mean return %.6g +/- %.3g  "
                    "(%zu seeds)\n",
                    last, key.first.c_str(), key.second.c_str(), mean, se,
                    values.size());
        by_variant[key.first] = mean;
    }
    if (by_variant.count("baseline") && by_variant.count("fedrac"))
        std::printf("fedrac minus baseline (final round means): %+.6g\n",
                    by_variant["fedrac"] - by_variant["baseline"]);
}

int run_train(const CommonFlags& flags) {
    fedrl::ExperimentConfig cfg = load_with_overrides(flags);
    // `train` executes exactly one (variant, algorithm) cell.
    if (flags.variant == "both" || flags.algo == "all")
        throw fedrl::ConfigError(
            "train runs a single cell; use `compare` for grids");
    if (cfg.variants.size() > 1) cfg.variants.resize(1);
    if (cfg.algos.size() > 1) cfg.algos.resize(1);
    std::printf("training cell: variant=%s algo=%s (%zu seeds)\n",
                to_string(cfg.variants.front()).c_str(),
                to_string(cfg.algos.front()).c_str(), cfg.seeds.size());
    const fedrl::ExperimentResult result =
        fedrl::run_experiment(cfg, options_from(flags));
    print_summary(cfg, result);
    return kExitOk;
}

int run_compare(const CommonFlags& flags) {
    const fedrl::ExperimentConfig cfg = load_with_overrides(flags);
    std::printf("comparing %zu variant(s) x %zu algorithm(s), %zu seeds\n",
                cfg.variants.size(), cfg.algos.size(), cfg.seeds.size());
    const fedrl::ExperimentResult result =
        fedrl::run_experiment(cfg, options_from(flags));
    print_summary(cfg, result);
    return kExitOk;
}

int run_sweep(const CommonFlags& flags, std::vector<double> levels) {
    const fedrl::ExperimentConfig cfg = load_with_overrides(flags);
    if (levels.empty()) levels = cfg.sweep_levels;
    if (levels.empty())
        throw fedrl::ConfigError(
            "sweep: no heterogeneity levels (set `sweep` in the config or "
            "pass --levels)");
    const std::filesystem::path root =
        flags.out_dir.empty() ? std::filesystem::path(cfg.out_dir)
                              : std::filesystem::path(flags.out_dir);
    for (const double level : levels) {
        char name[48];
        std::snprintf(name, sizeof name, "level_%g", level);
        fedrl::RunOptions options = options_from(flags);
        options.heterogeneity_override = level;
        options.out_dir_override = (root / name).string();
        std::printf("--- heterogeneity level %g -> %s\n", level,
                    options.out_dir_override->c_str());
        const fedrl::ExperimentResult result = fedrl::run_experiment(cfg, options);
        print_summary(cfg, result);
    }
    return kExitOk;
}

int run_verify(std::uint64_t seed) {
    bool ok = true;
    const auto print_report = [&ok](const char* title,
                                    const fedrl::VerificationReport& report) {
        std::printf("== %s ==\n", title);
        for (const fedrl::CheckResult& c : report.checks) {
            std::printf("%s  %s — %s\n", c.passed ? "PASS" : "FAIL",
                        c.name.c_str(), c.detail.c_str());
            ok = ok && c.passed;
        }
    };
    print_report("numerical property checks", fedrl::run_property_suite(seed));
    print_report("tabular solver checks", fedrl::run_tabular_suite(seed + 1));
    std::printf("%s\n", ok ? "all checks passed" : "CHECKS FAILED");
    return ok ? kExitOk : kExitVerifyFailure;
}

int run_plotdata(const std::string& metrics_path, const std::string& out_dir) {
    const std::vector<std::filesystem::path> files =
        fedrl::emit_plot_data(metrics_path, out_dir);
    for (const std::filesystem::path& f : files)
        std::printf("wrote %s\n", f.string().c_str());
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "fedrl — federated actor-critic simulation laboratory.\n"
        "Trains neural PPO clients under two intra-round update orders\n"
        "(critic-then-actor `baseline`, actor-then-critic `fedrac`) over\n"
        "FedAvg/FedProx/SCAFFOLD aggregation, and records heterogeneity and\n"
        "aggregation-error diagnostics."};
    app.require_subcommand(1);

    CommonFlags train_flags, compare_flags, sweep_flags;
    std::vector<double> sweep_levels;
    std::uint64_t verify_seed = 9001;
    std::string metrics_path, plot_out;

    CLI::App* train =
        app.add_subcommand("train", "Run one (variant, algorithm) cell");
    add_common_flags(train, train_flags);

    CLI::App* compare = app.add_subcommand(
        "compare", "Run the configured variant x algorithm grid");
    add_common_flags(compare, compare_flags);

    CLI::App* sweep = app.add_subcommand(
        "sweep", "Run the grid at several heterogeneity levels");
    add_common_flags(sweep, sweep_flags);
    sweep->add_option("--levels", sweep_levels,
                      "Heterogeneity levels (overrides the config's sweep list)")
        ->delimiter(',');

    CLI::App* verify = app.add_subcommand(
        "verify", "Run the numerical and tabular self-check suites");
    verify->add_option("--seed", verify_seed, "Seed for the randomized checks");

    CLI::App* plotdata = app.add_subcommand(
        "plotdata", "Convert a metrics CSV into per-metric curve files");
    plotdata->add_option("--metrics", metrics_path, "Metrics CSV to read")
        ->required();
    plotdata->add_option("--out", plot_out, "Directory for the plot files")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (train->parsed()) return run_train(train_flags);
        if (compare->parsed()) return run_compare(compare_flags);
        if (sweep->parsed()) return run_sweep(sweep_flags, sweep_levels);
        if (verify->parsed()) return run_verify(verify_seed);
        if (plotdata->parsed()) return run_plotdata(metrics_path, plot_out);
    } catch (const fedrl::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const fedrl::DivergenceError& e) {
        std::fprintf(stderr, "training diverged: %s\n", e.what());
        return kExitDivergence;
    } catch (const fedrl::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 1;
    }
    return kExitOk;
}
