#include "feddlr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

namespace feddlr {

CommCounts comm_accounting(std::span<const CompressedModel> uploads, const CompressedModel& broadcast,
                           BroadcastCount broadcast_count) {
    CommCounts c;
    for (const auto& upload : uploads) {
        const std::size_t params = transmitted_params(upload);
        c.uplink_params_per_client.push_back(params);
        c.uplink_params += params;
        c.uplink_bytes += serialized_size(upload);
    }
    const std::size_t copies = broadcast_count == BroadcastCount::once ? 1 : uploads.size();
    c.downlink_params = copies * transmitted_params(broadcast);
    c.downlink_bytes = copies * serialized_size(broadcast);
    return c;
}

double RoundRecord::lambda_max(std::size_t layer) const {
    double best = std::numeric_limits<double>::quiet_NaN();
    for (const auto& per_client : lambda) {
        const double v = per_client.at(layer);
        if (std::isnan(v)) continue;
        if (std::isnan(best) || v > best) best = v;
    }
    return best;
}

std::optional<std::size_t> MetricsLog::params_to_accuracy(double accuracy) const {
    for (const auto& r : rounds) {
        if (r.test_accuracy >= accuracy) return r.cum_params;
    }
    return std::nullopt;
}

std::vector<double> lambda_diagnostic(std::span<const Matrix> w_tilde, std::span<const Matrix> w_prev,
                                      std::span<const Matrix> c2_w_tilde, std::span<const Matrix> avg_c2,
                                      double e) {
    const std::size_t layers = w_tilde.size();
    if (w_prev.size() != layers || c2_w_tilde.size() != layers || avg_c2.size() != layers) {
        throw std::invalid_argument("lambda_diagnostic: inputs disagree on layer count");
    }
    std::vector<double> out(layers, std::numeric_limits<double>::quiet_NaN());
    if (e >= 1.0) return out;

    const double slack = std::sqrt(1.0 - e);
    for (std::size_t l = 0; l < layers; ++l) {
        require_same_shape(w_tilde[l], w_prev[l], "lambda_diagnostic");
        require_same_shape(w_tilde[l], c2_w_tilde[l], "lambda_diagnostic");
        require_same_shape(w_tilde[l], avg_c2[l], "lambda_diagnostic");
        const double shift = std::max(frobenius_norm(w_tilde[l] - w_prev[l]),
                                      frobenius_norm(c2_w_tilde[l] - w_prev[l]));
        const double denom = slack * std::min(frobenius_norm(w_tilde[l]), frobenius_norm(avg_c2[l]));
        if (denom == 0.0) {
            std::cerr << "warning: lambda_diagnostic: zero denominator at layer " << l << ", reporting +inf\n";
            out[l] = std::numeric_limits<double>::infinity();
        } else {
            out[l] = shift / denom;
        }
    }
    return out;
}

MacReport mac_count(std::span<const std::size_t> widths, std::optional<std::span<const std::size_t>> ranks) {
    if (widths.size() < 2) throw std::invalid_argument("mac_count: need at least input and output widths");
    const std::size_t layers = widths.size() - 1;
    if (ranks && ranks->size() != layers) {
        throw std::invalid_argument("mac_count: " + std::to_string(ranks->size()) + " ranks for " +
                                    std::to_string(layers) + " layers");
    }
    MacReport report;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::uint64_t n = widths[l];
        const std::uint64_t m = widths[l + 1];
        std::uint64_t cost = m * n;
        if (ranks) {
            const std::uint64_t r = (*ranks)[l];
            if (r < 1 || r > std::min(m, n)) {
                throw std::invalid_argument("mac_count: rank " + std::to_string(r) + " for " + std::to_string(m) +
                                            "x" + std::to_string(n) + " layer " + std::to_string(l) +
                                            " outside [1, " + std::to_string(std::min(m, n)) + "]");
            }
            if (factored_is_smaller(m, n, r)) cost = r * (m + n);
        }
        report.dense_macs += m * n;
        report.lowrank_macs += cost;
        report.params_dense += m * n + m;
        report.params_lowrank += cost + m;
    }
    report.mac_ratio = mac_ratio(static_cast<double>(report.dense_macs), static_cast<double>(report.lowrank_macs));
    return report;
}

double mac_ratio(double dense_macs, double lowrank_macs) {
    if (!(lowrank_macs > 0.0)) throw std::invalid_argument("mac_ratio: low-rank MACs must be positive");
    return dense_macs / lowrank_macs;
}

BoundTerms bound_rhs(const ConvergenceConstants& c, double f0) {
    const double eta = c.eta;
    const double T = static_cast<double>(c.T);
    const double L2 = c.L * c.L;
    BoundTerms b;
    b.initial_gap = (f0 - c.f_star) / (eta * T);
    b.sgd_noise = eta * c.L * c.delta * c.delta / (static_cast<double>(c.b) * static_cast<double>(c.K));
    b.client_drift = 2.0 * eta * eta * L2 * c.G1 * c.G1 * static_cast<double>(c.R) * static_cast<double>(c.R);
    b.compression = 4.0 * (1.0 - c.e * c.e) * static_cast<double>(c.H) * L2 * c.G2 * c.G2 / T;
    b.total = b.initial_gap + b.sgd_noise + b.client_drift + b.compression;
    return b;
}

double lipschitz_ratio(std::span<const double> x, std::span<const double> y, std::span<const double> gx,
                       std::span<const double> gy) {
    if (x.size() != y.size() || gx.size() != gy.size()) {
        throw std::invalid_argument("lipschitz_ratio: length mismatch");
    }
    double dx = 0.0;
    double dg = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) dx += (y[i] - x[i]) * (y[i] - x[i]);
    for (std::size_t i = 0; i < gx.size(); ++i) dg += (gy[i] - gx[i]) * (gy[i] - gx[i]);
    if (dx == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return std::sqrt(dg / dx);
}

ConvergenceConstants estimate_constants(const MetricsLog& log, const RunTrace& trace,
                                        const ConvergenceConstants& config) {
    if (trace.points.empty()) throw std::invalid_argument("estimate_constants: no trace captured");
    ConvergenceConstants c = config;
    c.L = 0.0;
    c.G1 = 0.0;
    c.G2 = trace.initial_weight_norm;
    c.G3 = 0.0;
    c.delta = 0.0;
    c.f_star = std::numeric_limits<double>::infinity();
    c.H = log.rounds.size();
    for (const auto& p : trace.points) {
        c.G1 = std::max(c.G1, p.grad_norm);
        c.G2 = std::max(c.G2, p.weight_norm);
        c.delta = std::max(c.delta, p.grad_deviation);
        if (std::isfinite(p.lipschitz)) c.L = std::max(c.L, p.lipschitz);
        c.f_star = std::min(c.f_star, p.batch_loss);
    }
    for (const auto& r : log.rounds) {
        c.f_star = std::min(c.f_star, r.train_loss);
        for (const auto& per_client : r.weight_shift) {
            for (double s : per_client) {
                if (std::isfinite(s)) c.G3 = std::max(c.G3, s);
            }
        }
    }
    return c;
}

MonotonicityReport check_rank_monotonicity(const MetricsLog& log) {
    MonotonicityReport report;
    std::vector<std::size_t> previous = log.initial_ranks;
    for (const auto& r : log.rounds) {
        ++report.rounds;
        bool all_ok = true;
        for (const auto& per_client : r.lambda) {
            for (double v : per_client) {
                ++report.triples;
                if (v <= 1.0) {
                    ++report.triples_lambda_ok;
                } else {
                    all_ok = false;  // also NaN
                }
            }
        }
        std::vector<std::string> problems;
        for (std::size_t l = 0; l < previous.size(); ++l) {
            if (r.broadcast_ranks[l] > previous[l]) {
                problems.push_back("round " + std::to_string(r.round) + " layer " + std::to_string(l) +
                                   ": broadcast rank " + std::to_string(r.broadcast_ranks[l]) + " > " +
                                   std::to_string(previous[l]));
            }
            for (std::size_t k = 0; k < r.upload_ranks.size(); ++k) {
                if (r.upload_ranks[k][l] > previous[l]) {
                    problems.push_back("round " + std::to_string(r.round) + " layer " + std::to_string(l) +
                                       " client " + std::to_string(k) + ": upload rank " +
                                       std::to_string(r.upload_ranks[k][l]) + " > " + std::to_string(previous[l]));
                }
            }
        }
        if (all_ok) {
            ++report.rounds_checked;
            report.violations.insert(report.violations.end(), problems.begin(), problems.end());
        } else {
            report.unchecked_increases += problems.size();
        }
        previous = r.broadcast_ranks;
    }
    return report;
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string metrics_csv(const MetricsLog& log) {
    std::ostringstream out;
    const std::size_t layers = log.layer_count();
    out << "round,t,uplink_params,downlink_params,cum_params,uplink_bytes,downlink_bytes,train_loss,test_acc";
    for (std::size_t l = 0; l < layers; ++l) out << ",rank_L" << l;
    for (std::size_t l = 0; l < layers; ++l) out << ",lambda_max_L" << l;
    out << ",wall_time_s\n";
    for (const auto& r : log.rounds) {
        out << r.round << ',' << r.t << ',' << r.comm.uplink_params << ',' << r.comm.downlink_params << ','
            << r.cum_params << ',' << r.comm.uplink_bytes << ',' << r.comm.downlink_bytes << ','
            << format_double(r.train_loss) << ',' << format_double(r.test_accuracy);
        for (std::size_t l = 0; l < layers; ++l) out << ',' << r.broadcast_ranks[l];
        for (std::size_t l = 0; l < layers; ++l) out << ',' << format_double(r.lambda_max(l));
        out << ',' << format_double(r.wall_seconds) << '\n';
    }
    return out.str();
}

void write_metrics_csv(const MetricsLog& log, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_metrics_csv: cannot open " + path.string());
    out << metrics_csv(log);
}

} // namespace feddlr
