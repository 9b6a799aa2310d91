#pragma once

#include "feddlr/federation.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace feddlr {

// Invalid configuration; the CLI maps it to exit status 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    TrainConfig train;
    std::filesystem::path out_dir = "out";
    // Thresholds for sweep-e; each run uses e_client = e_server = e.
    std::vector<double> sweep_e{0.9, 0.99, 0.999};
    // Accuracy used for "parameters to reach target" in summaries.
    double target_accuracy = 0.9;

    void validate() const;
};

// Flat `key = value` text, one entry per line, '#' starts a comment. Keys:
//   mode             fedavg | feddlr
//   clients, local_iters, total_iters, batch_size, threads
//   e                sets e_client and e_server
//   e_client, e_server
//   eta0, decay_base, decay_period, seed
//   layers           comma list of widths, e.g. 32,64,64,10
//   dataset          synthetic | csv
//   classes, dim     default to the last/first layer width
//   train_per_class, test_per_class, separation
//   train_csv, test_csv
//   broadcast_count  once | per_client
//   capture_trace    true | false
//   out_dir, sweep_e (comma list), target_accuracy
// Unknown or repeated keys are errors.
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

// Every key with its effective value, in a stable order. Parsing the
// rendered text reproduces the config exactly.
std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& cfg);
std::string format_config(const ExperimentConfig& cfg);

} // namespace feddlr
