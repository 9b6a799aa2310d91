#pragma once

#include "feddlr/data.hpp"
#include "feddlr/matrix.hpp"
#include "feddlr/rng.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace feddlr {

// y = W·x + b with W stored out×in.
struct DenseLayer {
    Matrix weight;
    std::vector<double> bias;

    std::size_t inputs() const noexcept { return weight.cols(); }
    std::size_t outputs() const noexcept { return weight.rows(); }

    friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

// Fully-connected classifier: rectifier between layers, softmax on the last.
struct MlpModel {
    std::vector<DenseLayer> layers;

    std::size_t input_dim() const { return layers.front().inputs(); }
    std::size_t num_classes() const { return layers.back().outputs(); }
    // Layer widths including the input, e.g. {32, 64, 64, 10}.
    std::vector<std::size_t> architecture() const;
    std::size_t parameter_count() const;
    void validate() const;

    friend bool operator==(const MlpModel&, const MlpModel&) = default;
};

// Per-layer dW and db; mirrors MlpModel's shape.
struct Gradients {
    std::vector<DenseLayer> layers;
};

struct Batch {
    Matrix inputs;
    std::vector<std::size_t> labels;

    static Batch from(const Dataset& data);
    static Batch from(const Dataset& data, std::span<const std::size_t> rows);
};

struct LossAndGrad {
    double loss = 0.0;
    Gradients grads;
};

// η_t = eta0 · decay_base^(t / decay_period)
struct LrSchedule {
    double eta0 = 0.1;
    double decay_base = 0.5;
    std::uint64_t decay_period = 10000;

    void validate() const;
};

struct Evaluation {
    double accuracy = 0.0;
    double mean_loss = 0.0;
};

// Uniform Glorot initialization, zero biases.
MlpModel init_mlp(std::span<const std::size_t> widths, Rng& rng);

// Class scores before softmax, one row per input row.
Matrix logits(const MlpModel& model, const Matrix& inputs);

// Mean cross-entropy over the batch and its exact gradient.
LossAndGrad forward_loss_grad(const MlpModel& model, const Batch& batch);

MlpModel sgd_step(const MlpModel& model, const Gradients& grads, double eta);

double lr_at(const LrSchedule& schedule, std::uint64_t t);

// Accuracy under argmax with ties to the lowest class index.
Evaluation evaluate(const MlpModel& model, const Dataset& data);

// All parameters of a model (or gradient), layer by layer: W then b.
std::vector<double> flatten(std::span<const DenseLayer> layers);
double parameter_norm(std::span<const DenseLayer> layers);
double max_abs_diff(const MlpModel& a, const MlpModel& b);

} // namespace feddlr
