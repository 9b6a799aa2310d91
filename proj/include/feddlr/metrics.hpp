#pragma once

#include "feddlr/compression.hpp"
#include "feddlr/matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace feddlr {

// How the server broadcast is charged: one message per round, or one copy
// per client.
enum class BroadcastCount { once, per_client };

struct CommCounts {
    std::vector<std::size_t> uplink_params_per_client;
    std::size_t uplink_params = 0;
    std::size_t downlink_params = 0;
    std::size_t uplink_bytes = 0;
    std::size_t downlink_bytes = 0;
};

CommCounts comm_accounting(std::span<const CompressedModel> uploads, const CompressedModel& broadcast,
                           BroadcastCount broadcast_count);

// Everything measured at one aggregation step.
struct RoundRecord {
    std::size_t round = 0;
    // Global iteration at which the aggregation happens, (t + 1) mod R == 0.
    std::uint64_t t = 0;
    std::vector<std::vector<std::size_t>> upload_ranks;  // [client][layer]
    std::vector<std::size_t> broadcast_ranks;            // [layer]
    CommCounts comm;
    std::size_t cum_params = 0;
    std::size_t cum_bytes = 0;
    double train_loss = 0.0;
    double test_accuracy = 0.0;
    double test_loss = 0.0;
    // [client][layer]; NaN where the diagnostic does not apply (e = 1, FedAvg).
    std::vector<std::vector<double>> lambda;
    // [client][layer]: max(‖w̃ - w_prev‖, ‖C₂(w̃) - w_prev‖), the G₃ witness.
    std::vector<std::vector<double>> weight_shift;
    double wall_seconds = 0.0;

    std::size_t round_params() const { return comm.uplink_params + comm.downlink_params; }
    std::size_t round_bytes() const { return comm.uplink_bytes + comm.downlink_bytes; }
    // Max over clients; NaN when no client has a value.
    double lambda_max(std::size_t layer) const;
};

struct MetricsLog {
    // Per-layer rank of the initial model w₀.
    std::vector<std::size_t> initial_ranks;
    double initial_train_loss = 0.0;
    std::vector<RoundRecord> rounds;

    std::size_t layer_count() const { return initial_ranks.size(); }
    // Cumulative parameters at the first round reaching `accuracy`, if any.
    std::optional<std::size_t> params_to_accuracy(double accuracy) const;
};

// Ratio of how far a client moved to the energy the compression may drop.
// λ ≤ 1 is the condition under which ranks cannot grow. Returns NaN per layer
// when e >= 1 and +inf (with a warning on stderr) on a zero denominator.
std::vector<double> lambda_diagnostic(std::span<const Matrix> w_tilde, std::span<const Matrix> w_prev,
                                      std::span<const Matrix> c2_w_tilde, std::span<const Matrix> avg_c2,
                                      double e);

// Per-sample inference cost. MACs count only weight multiplies; biases count
// as parameters.
struct MacReport {
    std::uint64_t dense_macs = 0;
    std::uint64_t lowrank_macs = 0;
    std::uint64_t params_dense = 0;
    std::uint64_t params_lowrank = 0;
    double mac_ratio = 1.0;
};

// widths = {in, h1, ..., out}; ranks (one per layer) are optional.
MacReport mac_count(std::span<const std::size_t> widths,
                    std::optional<std::span<const std::size_t>> ranks = std::nullopt);
double mac_ratio(double dense_macs, double lowrank_macs);

struct ConvergenceConstants {
    double L = 0.0;
    double G1 = 0.0;
    double G2 = 0.0;
    double G3 = 0.0;
    double delta = 0.0;
    double f_star = 0.0;
    std::size_t H = 0;
    std::size_t b = 1;
    std::size_t K = 1;
    std::size_t R = 1;
    std::size_t T = 1;
    double e = 1.0;
    double eta = 0.1;
};

struct BoundTerms {
    double initial_gap = 0.0;       // (f0 - f*) / (ηT)
    double sgd_noise = 0.0;         // ηLδ² / (bK)
    double client_drift = 0.0;      // 2η²L²G1²R²
    double compression = 0.0;       // 4(1 - e²)HL²G2² / T
    double total = 0.0;
};

BoundTerms bound_rhs(const ConvergenceConstants& c, double f0);

// One local SGD iteration as seen by the trace recorder.
struct TracePoint {
    std::size_t round = 0;
    std::size_t client = 0;
    std::uint64_t t = 0;
    double batch_loss = 0.0;
    double grad_norm = 0.0;       // ‖∇f_x(w_t)‖
    double grad_deviation = 0.0;  // ‖∇f_x(w_t) - ∇f(w_t)‖ against the full shard
    double weight_norm = 0.0;     // ‖w̃_{t+1}‖
    double lipschitz = std::numeric_limits<double>::quiet_NaN();  // ‖∇f(w_{t+1}) - ∇f(w_t)‖ / ‖w_{t+1} - w_t‖
};

struct RunTrace {
    std::vector<TracePoint> points;
    // ‖w₀‖; the weight-norm bound never drops below it.
    double initial_weight_norm = 0.0;
};

// ‖gy - gx‖ / ‖y - x‖, or NaN when y == x.
double lipschitz_ratio(std::span<const double> x, std::span<const double> y, std::span<const double> gx,
                       std::span<const double> gy);

// Empirical lower estimates of the assumption constants. `config` supplies
// b, K, R, T, e and η; every other field is measured. Throws when the trace is
// empty.
ConvergenceConstants estimate_constants(const MetricsLog& log, const RunTrace& trace,
                                        const ConvergenceConstants& config);

struct MonotonicityReport {
    std::size_t rounds = 0;
    // Rounds in which every (layer, client) λ ≤ 1; only these are asserted.
    std::size_t rounds_checked = 0;
    std::size_t triples = 0;
    std::size_t triples_lambda_ok = 0;
    // Rank increases seen in rounds with some λ > 1 (reported, not asserted).
    std::size_t unchecked_increases = 0;
    std::vector<std::string> violations;

    double fraction_lambda_ok() const {
        return triples == 0 ? 0.0 : static_cast<double>(triples_lambda_ok) / static_cast<double>(triples);
    }
    bool holds() const { return violations.empty(); }
};

MonotonicityReport check_rank_monotonicity(const MetricsLog& log);

// round,t,uplink_params,downlink_params,cum_params,uplink_bytes,downlink_bytes,
// train_loss,test_acc,rank_L{i}...,lambda_max_L{i}...,wall_time_s
std::string metrics_csv(const MetricsLog& log);
void write_metrics_csv(const MetricsLog& log, const std::filesystem::path& path);

// Round-trip text (%.17g) for a double; "nan"/"inf" for non-finite values.
std::string format_double(double v);

} // namespace feddlr
