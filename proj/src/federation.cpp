#include "feddlr/federation.hpp"

#include "feddlr/svd.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>

namespace feddlr {

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("config: " + msg); };
    if (clients < 1) fail("clients must be >= 1");
    if (local_iters < 1) fail("local_iters must be >= 1");
    if (total_iters < local_iters) fail("total_iters must be >= local_iters");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(e_client > 0.0 && e_client <= 1.0)) fail("e_client must be in (0, 1]");
    if (!(e_server > 0.0 && e_server <= 1.0)) fail("e_server must be in (0, 1]");
    if (layers.size() < 2) fail("layers needs at least an input and an output width");
    if (std::find(layers.begin(), layers.end(), std::size_t{0}) != layers.end()) fail("layer widths must be positive");
    if (threads < 1) fail("threads must be >= 1");
    try {
        lr.validate();
    } catch (const std::exception& ex) {
        fail(ex.what());
    }
    if (data.kind == DataSpec::Kind::synthetic) {
        const auto& mix = data.mixture;
        if (layers.front() != mix.dim) fail("layers must start with the data dimension " + std::to_string(mix.dim));
        if (layers.back() != mix.classes) fail("layers must end with the class count " + std::to_string(mix.classes));
        if (mix.classes < 2) fail("classes must be >= 2");
        if (!(mix.separation > 0.0)) fail("separation must be > 0");
        if (data.test_per_class < 1) fail("test_per_class must be >= 1");
        const std::size_t train = mix.classes * mix.per_class;
        if (train % clients != 0) {
            fail(std::to_string(train) + " training samples cannot be split evenly across " +
                 std::to_string(clients) + " clients");
        }
        if (batch_size > train / clients) {
            fail("batch_size " + std::to_string(batch_size) + " exceeds the shard size " +
                 std::to_string(train / clients));
        }
    } else if (data.train_csv.empty() || data.test_csv.empty()) {
        fail("csv data needs train_csv and test_csv");
    }
}

MlpModel local_train(const ClientState& client, const MlpModel& start, std::size_t iters, std::uint64_t t0,
                     const TrainConfig& cfg, std::vector<TracePoint>* trace) {
    const std::size_t shard = client.shard.size();
    if (cfg.batch_size > shard) {
        throw std::invalid_argument("local_train: batch size " + std::to_string(cfg.batch_size) +
                                    " exceeds shard size " + std::to_string(shard) + " of client " +
                                    std::to_string(client.id));
    }
    Rng rng(derive_seed(client.stream_seed, t0));
    std::vector<std::size_t> order;
    std::size_t cursor = shard;  // forces a shuffle on first use

    const Batch full = trace ? Batch::from(client.shard) : Batch{};
    std::vector<double> prev_w;
    std::vector<double> prev_full_grad;

    MlpModel w = start;
    for (std::size_t i = 0; i < iters; ++i) {
        if (cursor + cfg.batch_size > shard) {
            order = rng.permutation(shard);
            cursor = 0;
        }
        const Batch batch =
            Batch::from(client.shard, std::span<const std::size_t>(order).subspan(cursor, cfg.batch_size));
        cursor += cfg.batch_size;

        const std::uint64_t t = t0 + i;
        LossAndGrad step = forward_loss_grad(w, batch);
        if (trace) {
            const auto full_grad = flatten(forward_loss_grad(w, full).grads.layers);
            const auto grad = flatten(step.grads.layers);
            auto current_w = flatten(w.layers);
            double dev = 0.0;
            for (std::size_t k = 0; k < grad.size(); ++k) dev += (grad[k] - full_grad[k]) * (grad[k] - full_grad[k]);
            if (i > 0) {
                trace->back().lipschitz = lipschitz_ratio(prev_w, current_w, prev_full_grad, full_grad);
            }
            TracePoint p;
            p.client = client.id;
            p.t = t;
            p.batch_loss = step.loss;
            p.grad_norm = parameter_norm(step.grads.layers);
            p.grad_deviation = std::sqrt(dev);
            trace->push_back(p);
            prev_w = std::move(current_w);
            prev_full_grad = full_grad;
        }
        w = sgd_step(w, step.grads, lr_at(cfg.lr, t));
        if (trace) trace->back().weight_norm = parameter_norm(w.layers);
    }
    if (trace && iters > 0) {
        const auto full_grad = flatten(forward_loss_grad(w, full).grads.layers);
        trace->back().lipschitz = lipschitz_ratio(prev_w, flatten(w.layers), prev_full_grad, full_grad);
    }
    return w;
}

MlpModel aggregate(std::span<const CompressedModel> uploads) {
    if (uploads.empty()) throw std::invalid_argument("aggregate: no uploads");
    MlpModel sum = decompress(uploads.front());
    for (std::size_t k = 1; k < uploads.size(); ++k) {
        const MlpModel next = decompress(uploads[k]);
        if (next.layers.size() != sum.layers.size()) {
            throw std::invalid_argument("aggregate: upload " + std::to_string(k) + " has " +
                                        std::to_string(next.layers.size()) + " layers, expected " +
                                        std::to_string(sum.layers.size()));
        }
        for (std::size_t l = 0; l < sum.layers.size(); ++l) {
            auto& acc = sum.layers[l];
            const auto& add = next.layers[l];
            if (acc.weight.rows() != add.weight.rows() || acc.weight.cols() != add.weight.cols() ||
                acc.bias.size() != add.bias.size()) {
                throw std::invalid_argument("aggregate: upload " + std::to_string(k) + " layer " + std::to_string(l) +
                                            " is " + add.weight.shape() + ", expected " + acc.weight.shape());
            }
            acc.weight += add.weight;
            for (std::size_t i = 0; i < acc.bias.size(); ++i) acc.bias[i] += add.bias[i];
        }
    }
    const double count = static_cast<double>(uploads.size());
    for (auto& layer : sum.layers) {
        for (double& v : layer.weight.values()) v /= count;
        for (double& v : layer.bias) v /= count;
    }
    return sum;
}

namespace {

// Runs task(k) for k in [0, n) on up to `threads` workers. The first failure
// (lowest index) is rethrown.
template <typename Task>
void for_each_client(std::size_t n, std::size_t threads, Task&& task) {
    std::vector<std::exception_ptr> errors(n);
    auto guarded = [&](std::size_t k) {
        try {
            task(k);
        } catch (...) {
            errors[k] = std::current_exception();
        }
    };
    const std::size_t workers = std::min(threads, n);
    if (workers <= 1) {
        for (std::size_t k = 0; k < n; ++k) guarded(k);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t k = next++; k < n; k = next++) guarded(k);
            });
        }
    }
    for (const auto& err : errors) {
        if (err) std::rethrow_exception(err);
    }
}

std::vector<Matrix> weights_of(const MlpModel& model) {
    std::vector<Matrix> out;
    for (const auto& layer : model.layers) out.push_back(layer.weight);
    return out;
}

// The transmitted form of a model, as the receiver sees it.
CompressedModel over_the_wire(const CompressedModel& model, std::size_t& bytes) {
    const auto encoded = serialize(model);
    bytes = encoded.size();
    return deserialize(encoded);
}

struct ClientResult {
    MlpModel w_tilde;
    CompressedModel upload;
    std::size_t upload_bytes = 0;
    std::vector<TracePoint> trace;
};

} // namespace

RoundOutcome run_round(const ServerState& server, std::span<ClientState> clients, std::uint64_t t0,
                       const TrainConfig& cfg, RunTrace* trace) {
    if (clients.empty()) throw std::invalid_argument("run_round: no clients");
    const bool compress = cfg.mode == TrainMode::feddlr;
    const std::size_t iters = std::min<std::uint64_t>(cfg.local_iters, cfg.total_iters - t0);
    const std::size_t K = clients.size();

    std::vector<ClientResult> results(K);
    for_each_client(K, cfg.threads, [&](std::size_t k) {
        try {
            auto& out = results[k];
            out.w_tilde = local_train(clients[k], clients[k].model, iters, t0, cfg, trace ? &out.trace : nullptr);
            const CompressedModel upload =
                compress ? compress_model(out.w_tilde, cfg.e_client) : encode_dense(out.w_tilde);
            out.upload = over_the_wire(upload, out.upload_bytes);
        } catch (const std::exception& ex) {
            throw std::runtime_error("client " + std::to_string(clients[k].id) + ": " + ex.what());
        }
    });

    std::vector<CompressedModel> uploads;
    uploads.reserve(K);
    for (auto& r : results) uploads.push_back(r.upload);

    const MlpModel average = aggregate(uploads);
    std::size_t broadcast_bytes = 0;
    const CompressedModel broadcast =
        over_the_wire(compress ? compress_model(average, cfg.e_server) : encode_dense(average), broadcast_bytes);
    MlpModel global = decompress(broadcast);

    RoundOutcome out{server, {}, global};
    out.server.broadcast = broadcast;
    out.server.round = server.round + 1;
    out.server.aggregation_indices.push_back(t0 + iters - 1);

    RoundRecord& rec = out.record;
    rec.round = server.round;
    rec.t = t0 + iters - 1;
    for (const auto& layer : broadcast.layers) rec.broadcast_ranks.push_back(layer.rank);
    rec.comm = comm_accounting(uploads, broadcast, cfg.broadcast_count);
    std::size_t encoded_upload_bytes = 0;
    for (const auto& r : results) encoded_upload_bytes += r.upload_bytes;
    if (rec.comm.uplink_bytes != encoded_upload_bytes || serialized_size(broadcast) != broadcast_bytes) {
        throw std::logic_error("run_round: byte accounting disagrees with the encoder");
    }

    const auto avg_weights = weights_of(average);
    for (std::size_t k = 0; k < K; ++k) {
        const auto& r = results[k];
        std::vector<std::size_t> ranks;
        for (const auto& layer : r.upload.layers) ranks.push_back(layer.rank);
        rec.upload_ranks.push_back(std::move(ranks));

        const auto w_tilde = weights_of(r.w_tilde);
        const auto w_prev = weights_of(clients[k].model);
        const auto c2 = weights_of(decompress(r.upload));
        if (compress) {
            rec.lambda.push_back(lambda_diagnostic(w_tilde, w_prev, c2, avg_weights, cfg.e_client));
        } else {
            rec.lambda.emplace_back(w_tilde.size(), std::numeric_limits<double>::quiet_NaN());
        }
        std::vector<double> shift;
        for (std::size_t l = 0; l < w_tilde.size(); ++l) {
            shift.push_back(std::max(frobenius_norm(w_tilde[l] - w_prev[l]), frobenius_norm(c2[l] - w_prev[l])));
        }
        rec.weight_shift.push_back(std::move(shift));

        if (trace) {
            for (auto p : r.trace) {
                p.round = server.round;
                trace->points.push_back(p);
            }
        }
    }

    for (auto& client : clients) client.model = global;
    return out;
}

std::pair<Dataset, Dataset> load_data(const TrainConfig& cfg) {
    if (cfg.data.kind == DataSpec::Kind::csv) {
        const std::size_t classes = cfg.layers.back();
        return {load_csv(cfg.data.train_csv, classes), load_csv(cfg.data.test_csv, classes)};
    }
    MixtureSpec spec = cfg.data.mixture;
    const std::size_t train = spec.classes * spec.per_class;
    spec.per_class += cfg.data.test_per_class;
    return split_head(synth_gaussian_mixture(cfg.seed, spec), train);
}

namespace {

std::size_t numerical_rank(const Matrix& w) {
    const auto sigma = svd(w).sigma;
    return static_cast<std::size_t>(std::count_if(sigma.begin(), sigma.end(), [](double s) { return s > 0.0; }));
}

} // namespace

TrainingResult run_training(const TrainConfig& cfg, const std::function<void(const RoundRecord&)>& on_round) {
    cfg.validate();
    TrainingResult result;
    std::tie(result.train, result.test) = load_data(cfg);
    if (result.train.dim() != cfg.layers.front()) {
        throw std::invalid_argument("config: data has " + std::to_string(result.train.dim()) +
                                    " features but layers start with " + std::to_string(cfg.layers.front()));
    }
    if (result.test.dim() != result.train.dim()) throw std::invalid_argument("config: train/test dimension mismatch");

    const auto shards = partition_iid(result.train, cfg.clients, cfg.seed);
    if (cfg.batch_size > shards.front().size()) {
        throw std::invalid_argument("config: batch_size exceeds the shard size " + std::to_string(shards.front().size()));
    }

    Rng init_rng(derive_seed(cfg.seed, 0x696e6974ULL));
    const MlpModel w0 = init_mlp(cfg.layers, init_rng);

    std::vector<ClientState> clients;
    for (std::size_t k = 0; k < cfg.clients; ++k) {
        clients.push_back({k, shards[k], w0, derive_seed(cfg.seed, 0x636c6e74ULL, k)});
    }

    ServerState server{encode_dense(w0), 0, {}};
    MetricsLog& log = result.log;
    for (const auto& layer : w0.layers) log.initial_ranks.push_back(numerical_rank(layer.weight));
    log.initial_train_loss = evaluate(w0, result.train).mean_loss;
    result.trace.initial_weight_norm = parameter_norm(w0.layers);

    std::size_t cum_params = 0;
    std::size_t cum_bytes = 0;
    for (std::size_t h = 0; h < cfg.rounds(); ++h) {
        const auto started = std::chrono::steady_clock::now();
        const std::uint64_t t0 = h * cfg.local_iters;
        RoundOutcome outcome;
        try {
            outcome = run_round(server, clients, t0, cfg, cfg.capture_trace ? &result.trace : nullptr);
        } catch (const std::exception& ex) {
            throw std::runtime_error("round " + std::to_string(h) + ": " + ex.what());
        }
        RoundRecord& rec = outcome.record;
        cum_params += rec.round_params();
        cum_bytes += rec.round_bytes();
        rec.cum_params = cum_params;
        rec.cum_bytes = cum_bytes;
        rec.train_loss = evaluate(outcome.global, result.train).mean_loss;
        const Evaluation test = evaluate(outcome.global, result.test);
        rec.test_accuracy = test.accuracy;
        rec.test_loss = test.mean_loss;
        rec.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

        server = std::move(outcome.server);
        if (on_round) on_round(rec);
        log.rounds.push_back(std::move(rec));
        result.history.push_back(std::move(outcome.global));
    }
    return result;
}

} // namespace feddlr
