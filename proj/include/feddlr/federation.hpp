#pragma once

#include "feddlr/compression.hpp"
#include "feddlr/data.hpp"
#include "feddlr/metrics.hpp"
#include "feddlr/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace feddlr {

enum class TrainMode { fedavg, feddlr };

struct DataSpec {
    enum class Kind { synthetic, csv };
    Kind kind = Kind::synthetic;
    // Synthetic mixture; mixture.per_class counts training samples only.
    MixtureSpec mixture{10, 32, 200, 5.0};
    std::size_t test_per_class = 100;
    std::filesystem::path train_csv;
    std::filesystem::path test_csv;
};

struct TrainConfig {
    std::size_t clients = 10;       // K
    std::size_t local_iters = 25;   // R
    std::size_t total_iters = 1000; // T
    std::size_t batch_size = 20;    // b
    double e_client = 0.99;         // C₂ threshold
    double e_server = 0.99;         // C₁ threshold
    LrSchedule lr{};
    std::uint64_t seed = 1;
    std::vector<std::size_t> layers{32, 64, 64, 10};
    DataSpec data{};
    TrainMode mode = TrainMode::feddlr;
    BroadcastCount broadcast_count = BroadcastCount::once;
    // Worker threads for client-parallel rounds; results do not depend on it.
    std::size_t threads = 1;
    // Records per-iteration gradient statistics (costs a full-shard gradient
    // per step).
    bool capture_trace = false;

    std::size_t rounds() const { return (total_iters + local_iters - 1) / local_iters; }
    void validate() const;
};

struct ClientState {
    std::size_t id = 0;
    Dataset shard;
    // Reconstruction of the last broadcast; the starting point of local training.
    MlpModel model;
    // Mini-batch streams are keyed on (stream_seed, round start iteration).
    std::uint64_t stream_seed = 0;
};

struct ServerState {
    CompressedModel broadcast;
    std::size_t round = 0;
    std::vector<std::uint64_t> aggregation_indices;
};

// `iters` SGD steps from `start` with η = lr_at(t0 + i), mini-batches drawn
// without replacement and reshuffled when the shard is exhausted. Returns the
// pre-compression local model w̃.
MlpModel local_train(const ClientState& client, const MlpModel& start, std::size_t iters, std::uint64_t t0,
                     const TrainConfig& cfg, std::vector<TracePoint>* trace = nullptr);

// Uniform average of the reconstructed uploads.
MlpModel aggregate(std::span<const CompressedModel> uploads);

struct RoundOutcome {
    ServerState server;
    RoundRecord record;  // loss, accuracy and cumulative totals are left for the caller
    MlpModel global;
};

// One aggregation round starting at global iteration t0: local training,
// upload (compressed with e_client under FedDLR), averaging, broadcast
// (compressed with e_server under FedDLR). On return every client holds the
// reconstruction of the broadcast.
RoundOutcome run_round(const ServerState& server, std::span<ClientState> clients, std::uint64_t t0,
                       const TrainConfig& cfg, RunTrace* trace = nullptr);

struct TrainingResult {
    MetricsLog log;
    RunTrace trace;
    // Global model after each round.
    std::vector<MlpModel> history;
    Dataset train;
    Dataset test;
};

// The train and test sets a config describes.
std::pair<Dataset, Dataset> load_data(const TrainConfig& cfg);

// ⌈T/R⌉ rounds from a common w₀, evaluated on the test set after each round.
TrainingResult run_training(const TrainConfig& cfg,
                            const std::function<void(const RoundRecord&)>& on_round = {});

} // namespace feddlr
