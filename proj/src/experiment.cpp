#include "feddlr/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace feddlr {

namespace {

nlohmann::json optional_count(const std::optional<std::size_t>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

// JSON cannot hold NaN/inf; they become null.
nlohmann::json number(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

void write_run(const std::filesystem::path& dir, const ExperimentConfig& cfg, const TrainingResult& result) {
    std::filesystem::create_directories(dir);
    write_metrics_csv(result.log, dir / "metrics.csv");
    write_text(dir / "summary.json", summarize(cfg, result).dump(2) + "\n");
}

std::function<void(const RoundRecord&)> round_printer(const Progress& progress, const std::string& tag) {
    if (!progress) return {};
    return [progress, tag](const RoundRecord& r) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s round %zu: acc %.4f loss %.4f params %zu (cum %zu)", tag.c_str(), r.round,
                      r.test_accuracy, r.train_loss, r.round_params(), r.cum_params);
        progress(buf);
    };
}

std::string e_label(double e) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", e);
    return buf;
}

} // namespace

PairedComparison compare_logs(const MetricsLog& fedavg, const MetricsLog& feddlr, double target_accuracy) {
    PairedComparison c;
    c.rounds = std::min(fedavg.rounds.size(), feddlr.rounds.size());
    for (std::size_t h = 0; h < c.rounds; ++h) {
        const auto dense = fedavg.rounds[h].round_params();
        const auto compressed = feddlr.rounds[h].round_params();
        if (compressed <= dense) ++c.rounds_not_above;
        if (compressed < dense) ++c.rounds_below;
    }
    c.fedavg_params_to_target = fedavg.params_to_accuracy(target_accuracy);
    c.feddlr_params_to_target = feddlr.params_to_accuracy(target_accuracy);
    return c;
}

SweepRow sweep_row(double e, const MetricsLog& log, double target_accuracy) {
    SweepRow row;
    row.e = e;
    row.rounds = log.rounds.size();
    if (!log.rounds.empty()) {
        row.final_accuracy = log.rounds.back().test_accuracy;
        row.total_params = log.rounds.back().cum_params;
        row.mean_round_params = static_cast<double>(row.total_params) / static_cast<double>(row.rounds);
    }
    row.params_to_target = log.params_to_accuracy(target_accuracy);
    return row;
}

nlohmann::json summarize(const ExperimentConfig& cfg, const TrainingResult& result) {
    using nlohmann::json;
    const MetricsLog& log = result.log;
    json config = json::object();
    for (const auto& [key, value] : config_entries(cfg)) config[key] = value;

    json doc;
    doc["config"] = config;
    doc["rounds"] = log.rounds.size();
    doc["initial_train_loss"] = number(log.initial_train_loss);
    doc["target_accuracy"] = cfg.target_accuracy;
    doc["params_to_target"] = optional_count(log.params_to_accuracy(cfg.target_accuracy));
    if (log.rounds.empty()) return doc;

    const RoundRecord& last = log.rounds.back();
    doc["final_test_accuracy"] = number(last.test_accuracy);
    doc["final_test_loss"] = number(last.test_loss);
    doc["final_train_loss"] = number(last.train_loss);

    std::size_t uplink = 0;
    std::size_t downlink = 0;
    for (const auto& r : log.rounds) {
        uplink += r.comm.uplink_params;
        downlink += r.comm.downlink_params;
    }
    doc["communication"] = {
        {"total_params", last.cum_params},
        {"total_bytes", last.cum_bytes},
        {"uplink_params", uplink},
        {"downlink_params", downlink},
        {"broadcast_count", cfg.train.broadcast_count == BroadcastCount::once ? "once" : "per_client"},
    };

    const auto mono = check_rank_monotonicity(log);
    double lambda_max = std::numeric_limits<double>::quiet_NaN();
    for (const auto& r : log.rounds) {
        for (std::size_t l = 0; l < log.layer_count(); ++l) {
            const double v = r.lambda_max(l);
            if (!std::isnan(v) && (std::isnan(lambda_max) || v > lambda_max)) lambda_max = v;
        }
    }
    doc["ranks"] = {
        {"initial", log.initial_ranks},
        {"final_broadcast", last.broadcast_ranks},
        {"monotonicity_holds", mono.holds()},
        {"rounds_checked", mono.rounds_checked},
        {"violations", mono.violations},
        {"unchecked_increases", mono.unchecked_increases},
    };
    doc["lambda"] = {
        {"fraction_le_1", mono.fraction_lambda_ok()},
        {"triples", mono.triples},
        {"max", number(lambda_max)},
    };

    const auto widths = cfg.train.layers;
    const auto macs = mac_count(widths, std::span<const std::size_t>(last.broadcast_ranks));
    doc["macs"] = {
        {"dense_macs", macs.dense_macs},
        {"lowrank_macs", macs.lowrank_macs},
        {"params_dense", macs.params_dense},
        {"params_lowrank", macs.params_lowrank},
        {"mac_ratio", macs.mac_ratio},
        {"note", "multiply-accumulates per sample; biases are counted as parameters only"},
    };

    if (cfg.train.capture_trace && !result.trace.points.empty()) {
        ConvergenceConstants base;
        base.b = cfg.train.batch_size;
        base.K = cfg.train.clients;
        base.R = cfg.train.local_iters;
        base.T = cfg.train.total_iters;
        base.e = std::min(cfg.train.e_client, cfg.train.e_server);
        base.eta = cfg.train.lr.eta0;
        const auto c = estimate_constants(log, result.trace, base);
        const auto terms = bound_rhs(c, log.initial_train_loss);
        doc["convergence"] = {
            {"note", "constants are empirical lower estimates from the run trace"},
            {"constants",
             {{"L", c.L}, {"G1", c.G1}, {"G2", c.G2}, {"G3", c.G3}, {"delta", c.delta}, {"f_star", c.f_star},
              {"H", c.H}, {"b", c.b}, {"K", c.K}, {"R", c.R}, {"T", c.T}, {"e", c.e}, {"eta", c.eta}}},
            {"bound_terms",
             {{"initial_gap", number(terms.initial_gap)},
              {"sgd_noise", number(terms.sgd_noise)},
              {"client_drift", number(terms.client_drift)},
              {"compression", number(terms.compression)},
              {"total", number(terms.total)}}},
        };
    } else {
        doc["convergence"] = nullptr;
    }
    return doc;
}

TrainingResult run_single(const ExperimentConfig& cfg, const Progress& progress) {
    cfg.validate();
    TrainingResult result = run_training(cfg.train, round_printer(progress, "run"));
    write_run(cfg.out_dir, cfg, result);
    return result;
}

PairedComparison run_compare(const ExperimentConfig& cfg, const Progress& progress) {
    cfg.validate();
    ExperimentConfig avg = cfg;
    avg.train.mode = TrainMode::fedavg;
    avg.out_dir = cfg.out_dir / "fedavg";
    ExperimentConfig dlr = cfg;
    dlr.train.mode = TrainMode::feddlr;
    dlr.out_dir = cfg.out_dir / "feddlr";

    const TrainingResult a = run_training(avg.train, round_printer(progress, "fedavg"));
    write_run(avg.out_dir, avg, a);
    const TrainingResult d = run_training(dlr.train, round_printer(progress, "feddlr"));
    write_run(dlr.out_dir, dlr, d);

    const PairedComparison c = compare_logs(a.log, d.log, cfg.target_accuracy);
    nlohmann::json doc = {
        {"target_accuracy", cfg.target_accuracy},
        {"rounds", c.rounds},
        {"rounds_feddlr_not_above_fedavg", c.rounds_not_above},
        {"rounds_feddlr_below_fedavg", c.rounds_below},
        {"fraction_rounds_below", c.fraction_below()},
        {"fedavg_params_to_target", optional_count(c.fedavg_params_to_target)},
        {"feddlr_params_to_target", optional_count(c.feddlr_params_to_target)},
        {"fedavg_total_params", a.log.rounds.back().cum_params},
        {"feddlr_total_params", d.log.rounds.back().cum_params},
        {"fedavg_final_accuracy", a.log.rounds.back().test_accuracy},
        {"feddlr_final_accuracy", d.log.rounds.back().test_accuracy},
    };
    if (c.fedavg_params_to_target && c.feddlr_params_to_target) {
        doc["params_to_target_ratio"] =
            static_cast<double>(*c.feddlr_params_to_target) / static_cast<double>(*c.fedavg_params_to_target);
    }
    std::filesystem::create_directories(cfg.out_dir);
    write_text(cfg.out_dir / "comparison.json", doc.dump(2) + "\n");
    return c;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, const Progress& progress) {
    cfg.validate();
    if (cfg.sweep_e.empty()) throw ConfigError("config: sweep_e is empty");
    std::vector<SweepRow> rows;
    for (double e : cfg.sweep_e) {
        ExperimentConfig run = cfg;
        run.train.mode = TrainMode::feddlr;
        run.train.e_client = run.train.e_server = e;
        run.out_dir = cfg.out_dir / ("e_" + e_label(e));
        const TrainingResult result = run_training(run.train, round_printer(progress, "e=" + e_label(e)));
        write_run(run.out_dir, run, result);
        rows.push_back(sweep_row(e, result.log, cfg.target_accuracy));
    }
    std::ostringstream table;
    table << "e,rounds,final_test_acc,total_params,mean_round_params,params_to_target\n";
    for (const auto& row : rows) {
        table << format_double(row.e) << ',' << row.rounds << ',' << format_double(row.final_accuracy) << ','
              << row.total_params << ',' << format_double(row.mean_round_params) << ','
              << (row.params_to_target ? std::to_string(*row.params_to_target) : "") << '\n';
    }
    std::filesystem::create_directories(cfg.out_dir);
    write_text(cfg.out_dir / "sweep_summary.csv", table.str());
    return rows;
}

std::string strip_wall_time(const std::string& csv) {
    std::istringstream in(csv);
    std::string line;
    std::string out;
    while (std::getline(in, line)) {
        const auto comma = line.rfind(',');
        out += line.substr(0, comma) + "\n";
    }
    return out;
}

} // namespace feddlr
