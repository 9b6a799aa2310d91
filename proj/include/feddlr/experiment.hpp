#pragma once

#include "feddlr/config.hpp"
#include "feddlr/federation.hpp"
#include "feddlr/metrics.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace feddlr {

using Progress = std::function<void(const std::string&)>;

// Paired FedAvg/FedDLR statistics over rounds both runs completed.
struct PairedComparison {
    std::size_t rounds = 0;
    std::size_t rounds_not_above = 0;  // FedDLR round params <= FedAvg
    std::size_t rounds_below = 0;      // FedDLR round params <  FedAvg
    std::optional<std::size_t> fedavg_params_to_target;
    std::optional<std::size_t> feddlr_params_to_target;

    double fraction_below() const {
        return rounds == 0 ? 0.0 : static_cast<double>(rounds_below) / static_cast<double>(rounds);
    }
};

PairedComparison compare_logs(const MetricsLog& fedavg, const MetricsLog& feddlr, double target_accuracy);

struct SweepRow {
    double e = 1.0;
    std::size_t rounds = 0;
    double final_accuracy = 0.0;
    std::size_t total_params = 0;
    double mean_round_params = 0.0;
    std::optional<std::size_t> params_to_target;
};

SweepRow sweep_row(double e, const MetricsLog& log, double target_accuracy);

// Summary document: config echo, final accuracy, communication totals, rank
// and λ diagnostics, MAC report for the final ranks and, when a trace was
// captured, the convergence-bound terms from empirical constants.
nlohmann::json summarize(const ExperimentConfig& cfg, const TrainingResult& result);

// Each writes metrics.csv and summary.json per run under `cfg.out_dir`.
TrainingResult run_single(const ExperimentConfig& cfg, const Progress& progress = {});
PairedComparison run_compare(const ExperimentConfig& cfg, const Progress& progress = {});
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const Progress& progress = {});

// The metrics CSV with its trailing wall-time column removed.
std::string strip_wall_time(const std::string& csv);

} // namespace feddlr
