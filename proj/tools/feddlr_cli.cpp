// Experiment runner: single runs, FedAvg/FedDLR comparisons, threshold
// sweeps and static MAC reports.
//
//   feddlr run     --config exp.cfg [--seed N] [--out DIR] [--quiet]
//   feddlr compare --config exp.cfg ...
//   feddlr sweep-e --config exp.cfg ...
//   feddlr macs    --layers 32,64,64,10 [--ranks 4,8,2]
//
// Exit status: 0 success, 1 configuration error, 2 runtime error.

#include "feddlr/config.hpp"
#include "feddlr/experiment.hpp"
#include "feddlr/metrics.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    bool quiet = false;
    std::vector<std::size_t> layers;
    std::vector<std::size_t> ranks;
};

feddlr::ExperimentConfig resolve(const Options& opt) {
    feddlr::ExperimentConfig cfg = feddlr::load_config(opt.config_path);
    if (opt.seed) cfg.train.seed = *opt.seed;
    if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
    cfg.validate();
    return cfg;
}

int report_macs(const Options& opt) {
    std::vector<std::size_t> layers = opt.layers;
    if (layers.empty()) {
        if (opt.config_path.empty()) throw feddlr::ConfigError("macs: give --layers or --config");
        layers = feddlr::load_config(opt.config_path).train.layers;
    }
    const auto report = opt.ranks.empty() ? feddlr::mac_count(layers)
                                          : feddlr::mac_count(layers, std::span<const std::size_t>(opt.ranks));
    nlohmann::json doc = {
        {"layers", layers},
        {"ranks", opt.ranks},
        {"dense_macs", report.dense_macs},
        {"lowrank_macs", report.lowrank_macs},
        {"params_dense", report.params_dense},
        {"params_lowrank", report.params_lowrank},
        {"mac_ratio", report.mac_ratio},
    };
    if (!opt.quiet) std::cout << doc.dump(2) << "\n";
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated learning with dual-side low-rank compression"};
    app.require_subcommand(1);
    Options opt;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config_path, "Experiment config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", opt.seed, "Override the config seed");
        sub->add_option("--out", opt.out_dir, "Override the output directory");
        sub->add_flag("--quiet", opt.quiet, "Suppress progress output");
    };
    auto* run = app.add_subcommand("run", "Train once and write metrics.csv and summary.json");
    add_common(run);
    auto* compare = app.add_subcommand("compare", "FedAvg and FedDLR with a shared seed");
    add_common(compare);
    auto* sweep = app.add_subcommand("sweep-e", "FedDLR over the config's sweep_e thresholds");
    add_common(sweep);
    auto* macs = app.add_subcommand("macs", "Static MAC and parameter report");
    macs->add_option("--layers", opt.layers, "Layer widths, input first")->delimiter(',');
    macs->add_option("--ranks", opt.ranks, "Per-layer ranks")->delimiter(',');
    macs->add_option("--config", opt.config_path, "Take layer widths from a config")->check(CLI::ExistingFile);
    macs->add_flag("--quiet", opt.quiet, "Suppress output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    const feddlr::Progress progress = [&](const std::string& line) {
        if (!opt.quiet) std::cerr << line << "\n";
    };

    try {
        if (macs->parsed()) return report_macs(opt);
        const auto cfg = resolve(opt);
        if (run->parsed()) {
            const auto result = feddlr::run_single(cfg, progress);
            progress("wrote " + (cfg.out_dir / "metrics.csv").string());
        } else if (compare->parsed()) {
            const auto c = feddlr::run_compare(cfg, progress);
            progress("feddlr rounds below fedavg: " + std::to_string(c.rounds_below) + "/" + std::to_string(c.rounds));
        } else if (sweep->parsed()) {
            const auto rows = feddlr::run_sweep(cfg, progress);
            progress("wrote " + (cfg.out_dir / "sweep_summary.csv").string());
        }
        return kOk;
    } catch (const feddlr::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::invalid_argument& e) {
        // Shape and range checks on user-provided values (e.g. --ranks).
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
}
