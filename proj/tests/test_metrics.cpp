#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "feddlr/federation.hpp"
#include "feddlr/metrics.hpp"
#include "feddlr/svd.hpp"
#include "support.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

using namespace feddlr;
using testing::random_matrix;

TEST_CASE("lambda is zero when nothing moved") {
    Rng rng(1);
    const Matrix w = matmul(random_matrix(rng, 5, 1), random_matrix(rng, 1, 4));
    const Matrix c2 = reconstruct(lr_compress(w, 0.9));
    const std::vector<Matrix> a{w}, prev{w}, comp{c2}, avg{c2};
    const auto lambda = lambda_diagnostic(a, prev, comp, avg, 0.9);
    CHECK(lambda[0] <= 1e-14);
}

TEST_CASE("lambda on a hand-computed 2x2 case") {
    // Numerator max(1, 0) = 1; denominator sqrt(0.25)·min(sqrt 2, 2).
    const std::vector<Matrix> w_tilde{Matrix::from_rows({{1, 0}, {0, 1}})};
    const std::vector<Matrix> w_prev{Matrix::from_rows({{1, 0}, {0, 0}})};
    const std::vector<Matrix> c2{Matrix::from_rows({{1, 0}, {0, 0}})};
    const std::vector<Matrix> avg{Matrix::from_rows({{2, 0}, {0, 0}})};
    const auto lambda = lambda_diagnostic(w_tilde, w_prev, c2, avg, 0.75);
    CHECK(std::abs(lambda[0] - std::sqrt(2.0)) <= 1e-12);
}

TEST_CASE("lambda matches direct evaluation and is scale invariant") {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Matrix> a, b, c, d;
        for (int l = 0; l < 3; ++l) {
            a.push_back(random_matrix(rng, 4, 3));
            b.push_back(random_matrix(rng, 4, 3));
            c.push_back(random_matrix(rng, 4, 3));
            d.push_back(random_matrix(rng, 4, 3));
        }
        const double e = rng.uniform(0.5, 0.999);
        const auto lambda = lambda_diagnostic(a, b, c, d, e);
        for (int l = 0; l < 3; ++l) {
            const double num = std::max(frobenius_norm(a[l] - b[l]), frobenius_norm(c[l] - b[l]));
            const double den = std::sqrt(1 - e) * std::min(frobenius_norm(a[l]), frobenius_norm(d[l]));
            CHECK(std::abs(lambda[l] - num / den) <= 1e-12 * std::max(1.0, num / den));
        }
        const double s = rng.uniform(0.01, 100.0);
        for (auto* group : {&a, &b, &c, &d})
            for (auto& m : *group) m *= s;
        const auto scaled = lambda_diagnostic(a, b, c, d, e);
        for (int l = 0; l < 3; ++l) CHECK(std::abs(scaled[l] - lambda[l]) <= 1e-12 * std::max(1.0, lambda[l]));
    }
}

TEST_CASE("lambda is not applicable at e = 1 and infinite on a zero denominator") {
    const std::vector<Matrix> x{Matrix::from_rows({{1.0}})};
    const std::vector<Matrix> zero{Matrix(1, 1)};
    CHECK(std::isnan(lambda_diagnostic(x, x, x, x, 1.0)[0]));
    const double v = lambda_diagnostic(zero, x, x, zero, 0.9)[0];
    CHECK(std::isinf(v));
    CHECK(v > 0);
    const std::vector<Matrix> wrong{Matrix(2, 1)};
    CHECK_THROWS_AS(lambda_diagnostic(x, wrong, x, x, 0.9), std::invalid_argument);
}

TEST_CASE("MAC and parameter counts") {
    const std::vector<std::size_t> one{50, 100};
    CHECK(mac_count(one).dense_macs == 5000);
    const std::vector<std::size_t> r10{10};
    const auto single = mac_count(one, std::span<const std::size_t>(r10));
    CHECK(single.lowrank_macs == 1500);
    CHECK(single.params_lowrank == 1600);

    const std::vector<std::size_t> widths{32, 64, 64, 10};
    const std::vector<std::size_t> ranks{4, 8, 2};
    const auto ref = mac_count(widths, std::span<const std::size_t>(ranks));
    CHECK(ref.dense_macs == 32 * 64 + 64 * 64 + 64 * 10);
    CHECK(ref.dense_macs == 6784);
    CHECK(ref.lowrank_macs == 4 * 96 + 8 * 128 + 2 * 74);
    CHECK(ref.lowrank_macs == 1556);
    CHECK(ref.params_dense == 6922);
    CHECK(ref.params_lowrank == 1694);

    // A rank too large to pay off is charged dense.
    const std::vector<std::size_t> big{30, 40, 9};
    CHECK(mac_count(widths, std::span<const std::size_t>(big)).lowrank_macs == 2048 + 4096 + 640);

    CHECK(mac_ratio(153.75e6, 18.50e6) == doctest::Approx(8.31).epsilon(0.01 / 8.31));
    const std::vector<std::size_t> bad{4, 65, 2};
    CHECK_THROWS_AS(mac_count(widths, std::span<const std::size_t>(bad)), std::invalid_argument);
    const std::vector<std::size_t> short_ranks{4, 8};
    CHECK_THROWS_AS(mac_count(widths, std::span<const std::size_t>(short_ranks)), std::invalid_argument);
}

TEST_CASE("bound terms") {
    ConvergenceConstants c;
    c.L = 2.5;
    c.G1 = 1.5;
    c.G2 = 4.0;
    c.delta = 0.7;
    c.f_star = 0.1;
    c.H = 40;
    c.b = 20;
    c.K = 10;
    c.R = 25;
    c.T = 1000;
    c.eta = 0.01;
    c.e = 0.9;
    const double f0 = 2.3;

    const auto t = bound_rhs(c, f0);
    CHECK(t.initial_gap == doctest::Approx((2.3 - 0.1) / (0.01 * 1000)));
    CHECK(t.sgd_noise == doctest::Approx(0.01 * 2.5 * 0.49 / 200));
    CHECK(t.client_drift == doctest::Approx(2 * 1e-4 * 6.25 * 2.25 * 625));
    CHECK(t.compression == doctest::Approx(4 * (1 - 0.81) * 40 * 6.25 * 16 / 1000));
    CHECK(std::abs(t.total - (t.initial_gap + t.sgd_noise + t.client_drift + t.compression)) <= 1e-12);

    c.e = 1.0;
    CHECK(bound_rhs(c, f0).compression == 0.0);

    double previous = INFINITY;
    for (double e : {0.5, 0.9, 0.99, 1.0}) {
        c.e = e;
        const double term = bound_rhs(c, f0).compression;
        CHECK(term < previous);
        previous = term;
    }

    ConvergenceConstants flat;
    flat.eta = 0.05;
    flat.T = 200;
    flat.f_star = 0.2;
    flat.e = 0.5;
    flat.H = 8;
    const auto only_gap = bound_rhs(flat, 1.2);
    CHECK(only_gap.total == doctest::Approx(1.0 / (0.05 * 200)).epsilon(1e-15));
}

TEST_CASE("Lipschitz estimate on a quadratic with known curvature") {
    // f(x) = ½ xᵀAx with eigenvalues in [9.5, 10]; gradient descent iterates.
    Rng rng(3);
    const std::size_t n = 6;
    const Matrix q = svd(random_matrix(rng, n, n)).u;
    std::vector<double> eig(n);
    for (auto& v : eig) v = rng.uniform(9.5, 10.0);
    eig[0] = 10.0;
    const Matrix a = matmul(matmul(q, Matrix::diagonal(eig)), q.transposed());
    auto grad = [&](const std::vector<double>& x) {
        std::vector<double> g(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) g[i] += a(i, j) * x[j];
        return g;
    };

    RunTrace trace;
    std::vector<double> x(n);
    for (auto& v : x) v = rng.normal();
    for (int t = 0; t < 30; ++t) {
        const auto g = grad(x);
        std::vector<double> next = x;
        for (std::size_t i = 0; i < n; ++i) next[i] -= 0.01 * g[i];
        TracePoint p;
        p.t = static_cast<std::uint64_t>(t);
        p.lipschitz = lipschitz_ratio(x, next, g, grad(next));
        trace.points.push_back(p);
        x = next;
    }
    const auto c = estimate_constants(MetricsLog{}, trace, ConvergenceConstants{});
    CHECK(c.L <= 10.0 * (1 + 1e-12));
    CHECK(c.L >= 9.0);

    const std::vector<double> same{1.0, 2.0};
    CHECK(std::isnan(lipschitz_ratio(same, same, same, same)));
    CHECK_THROWS_AS(estimate_constants(MetricsLog{}, RunTrace{}, ConvergenceConstants{}), std::invalid_argument);
}

TEST_CASE("estimated constants from runs") {
    TrainConfig cfg;
    cfg.clients = 2;
    cfg.local_iters = 5;
    cfg.total_iters = 10;
    cfg.batch_size = 10;
    cfg.layers = {4, 6, 3};
    cfg.data.mixture = {3, 4, 10, 3.0};
    cfg.data.test_per_class = 5;
    cfg.capture_trace = true;

    SUBCASE("zero learning rate leaves the weight bound at the initial norm") {
        cfg.lr.eta0 = 0.0;
        const auto result = run_training(cfg);
        ConvergenceConstants base;
        const auto c = estimate_constants(result.log, result.trace, base);
        CHECK(c.L == 0.0);
        CHECK(c.H == 2);
        // Compression only moves the model at the server, which the trace does not see.
        CHECK(c.G2 >= result.trace.initial_weight_norm);
        cfg.mode = TrainMode::fedavg;
        const auto dense = run_training(cfg);
        const auto cd = estimate_constants(dense.log, dense.trace, base);
        CHECK(cd.G2 == doctest::Approx(dense.trace.initial_weight_norm).epsilon(1e-14));
        CHECK(cd.G3 == 0.0);
    }

    SUBCASE("a single client on full batches sees no sampling noise") {
        cfg.clients = 1;
        cfg.batch_size = 30;
        const auto result = run_training(cfg);
        const auto c = estimate_constants(result.log, result.trace, ConvergenceConstants{});
        CHECK(c.delta <= 1e-12);
        CHECK(c.G1 > 0.0);
        CHECK(c.L > 0.0);
        CHECK(c.f_star <= result.log.initial_train_loss);
    }
}

TEST_CASE("communication accounting") {
    Rng rng(4);
    const std::vector<std::size_t> widths{6, 8, 3};
    const MlpModel model = init_mlp(widths, rng);
    const std::size_t p = model.parameter_count();
    const std::vector<CompressedModel> uploads(5, encode_dense(model));

    const auto once = comm_accounting(uploads, encode_dense(model), BroadcastCount::once);
    CHECK(once.uplink_params == 5 * p);
    CHECK(once.downlink_params == p);
    CHECK(once.uplink_params_per_client == std::vector<std::size_t>(5, p));
    const std::size_t bytes = 2 * (19 + 4) + 8 * p;
    CHECK(once.downlink_bytes == bytes);
    CHECK(once.uplink_bytes == 5 * bytes);
    CHECK(serialize(uploads[0]).size() == bytes);

    const auto each = comm_accounting(uploads, encode_dense(model), BroadcastCount::per_client);
    CHECK(each.downlink_params == 5 * p);
    CHECK(each.downlink_bytes == 5 * bytes);

    MlpModel low = model;
    low.layers[0].weight = matmul(random_matrix(rng, 8, 1), random_matrix(rng, 1, 6));
    low.layers[1].weight = matmul(random_matrix(rng, 3, 1), random_matrix(rng, 1, 8));
    const CompressedModel c = compress_model(low, 0.999);
    const std::vector<CompressedModel> two{c, c};
    const auto counts = comm_accounting(two, c, BroadcastCount::once);
    const std::size_t per = (1 * (8 + 6) + 8) + (1 * (3 + 8) + 3);
    CHECK(counts.uplink_params == 2 * per);
    CHECK(counts.downlink_params == per);
    CHECK(counts.downlink_bytes == 2 * (19 + 4) + 8 * per);
}

TEST_CASE("rank monotonicity check") {
    MetricsLog log;
    log.initial_ranks = {5, 3};
    auto round = [](std::size_t h, std::vector<std::size_t> broadcast, std::vector<std::vector<std::size_t>> uploads,
                    double lambda) {
        RoundRecord r;
        r.round = h;
        r.broadcast_ranks = std::move(broadcast);
        r.upload_ranks = std::move(uploads);
        r.lambda.assign(r.upload_ranks.size(), std::vector<double>(2, lambda));
        return r;
    };
    log.rounds.push_back(round(0, {4, 3}, {{5, 3}, {4, 2}}, 0.5));
    log.rounds.push_back(round(1, {4, 2}, {{4, 3}, {3, 2}}, 0.9));
    auto report = check_rank_monotonicity(log);
    CHECK(report.holds());
    CHECK(report.rounds_checked == 2);
    CHECK(report.triples == 8);
    CHECK(report.fraction_lambda_ok() == 1.0);

    // An increase under λ > 1 is reported but not a violation.
    log.rounds.push_back(round(2, {5, 2}, {{5, 2}, {4, 2}}, 1.5));
    report = check_rank_monotonicity(log);
    CHECK(report.holds());
    CHECK(report.unchecked_increases == 2);
    CHECK(report.fraction_lambda_ok() == doctest::Approx(8.0 / 12.0));

    // The same increase under λ ≤ 1 is a violation.
    log.rounds.back().lambda.assign(2, std::vector<double>(2, 0.2));
    report = check_rank_monotonicity(log);
    CHECK_FALSE(report.holds());
    CHECK(report.violations.size() == 2);
}

TEST_CASE("metrics CSV layout") {
    MetricsLog log;
    log.initial_ranks = {3, 2};
    RoundRecord r;
    r.round = 0;
    r.t = 24;
    r.broadcast_ranks = {3, 1};
    r.upload_ranks = {{3, 2}};
    r.lambda = {{0.5, std::nan("")}};
    r.comm.uplink_params = 10;
    r.comm.downlink_params = 7;
    r.cum_params = 17;
    r.train_loss = 0.25;
    r.test_accuracy = 0.5;
    log.rounds.push_back(r);
    const std::string csv = metrics_csv(log);
    std::istringstream in(csv);
    std::string header, row, extra;
    std::getline(in, header);
    std::getline(in, row);
    CHECK_FALSE(std::getline(in, extra));
    CHECK(header ==
          "round,t,uplink_params,downlink_params,cum_params,uplink_bytes,downlink_bytes,train_loss,test_acc,"
          "rank_L0,rank_L1,lambda_max_L0,lambda_max_L1,wall_time_s");
    CHECK(row == "0,24,10,7,17,0,0,0.25,0.5,3,1,0.5,nan,0");
    CHECK(format_double(0.1) == "0.10000000000000001");
    CHECK(format_double(INFINITY) == "inf");
}
