#include "feddlr/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace feddlr {

std::vector<std::size_t> MlpModel::architecture() const {
    std::vector<std::size_t> widths;
    if (layers.empty()) return widths;
    widths.push_back(layers.front().inputs());
    for (const auto& layer : layers) widths.push_back(layer.outputs());
    return widths;
}

std::size_t MlpModel::parameter_count() const {
    std::size_t count = 0;
    for (const auto& layer : layers) count += layer.weight.size() + layer.bias.size();
    return count;
}

void MlpModel::validate() const {
    if (layers.empty()) throw std::invalid_argument("MlpModel: no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& layer = layers[i];
        if (layer.weight.empty()) throw std::invalid_argument("MlpModel: layer " + std::to_string(i) + " is empty");
        if (layer.bias.size() != layer.outputs()) {
            throw std::invalid_argument("MlpModel: layer " + std::to_string(i) + " bias length " +
                                        std::to_string(layer.bias.size()) + " does not match weight " +
                                        layer.weight.shape());
        }
        if (i > 0 && layers[i - 1].outputs() != layer.inputs()) {
            throw std::invalid_argument("MlpModel: layer " + std::to_string(i) + " expects " +
                                        std::to_string(layer.inputs()) + " inputs but layer " +
                                        std::to_string(i - 1) + " produces " +
                                        std::to_string(layers[i - 1].outputs()));
        }
    }
}

Batch Batch::from(const Dataset& data) { return Batch{data.features, data.labels}; }

Batch Batch::from(const Dataset& data, std::span<const std::size_t> rows) {
    Dataset picked = data.subset(rows);
    return Batch{std::move(picked.features), std::move(picked.labels)};
}

void LrSchedule::validate() const {
    if (!(eta0 >= 0.0) || !std::isfinite(eta0)) throw std::invalid_argument("LrSchedule: eta0 must be >= 0");
    if (!(decay_base > 0.0 && decay_base <= 1.0)) {
        throw std::invalid_argument("LrSchedule: decay_base must be in (0, 1]");
    }
    if (decay_period < 1) throw std::invalid_argument("LrSchedule: decay_period must be >= 1");
}

MlpModel init_mlp(std::span<const std::size_t> widths, Rng& rng) {
    if (widths.size() < 2) throw std::invalid_argument("init_mlp: need at least input and output widths");
    MlpModel model;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const std::size_t fan_in = widths[i];
        const std::size_t fan_out = widths[i + 1];
        if (fan_in == 0 || fan_out == 0) throw std::invalid_argument("init_mlp: zero layer width");
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Matrix w(fan_out, fan_in);
        for (double& v : w.values()) v = rng.uniform(-limit, limit);
        model.layers.push_back({std::move(w), std::vector<double>(fan_out, 0.0)});
    }
    return model;
}

namespace {

void check_batch(const MlpModel& model, const Matrix& inputs) {
    if (inputs.cols() != model.input_dim()) {
        throw std::invalid_argument("model expects " + std::to_string(model.input_dim()) +
                                    " input features, batch has " + std::to_string(inputs.cols()));
    }
}

// z = a·Wᵀ + b
Matrix affine(const Matrix& a, const DenseLayer& layer) {
    Matrix z = matmul_transpose_b(a, layer.weight);
    for (std::size_t i = 0; i < z.rows(); ++i) {
        auto row = z.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += layer.bias[j];
    }
    return z;
}

void relu_inplace(Matrix& z) {
    for (double& v : z.values()) v = std::max(v, 0.0);
}

// Row-wise log-sum-exp with max subtraction.
double log_sum_exp(std::span<const double> row) {
    const double peak = *std::max_element(row.begin(), row.end());
    double acc = 0.0;
    for (double v : row) acc += std::exp(v - peak);
    return peak + std::log(acc);
}

} // namespace

Matrix logits(const MlpModel& model, const Matrix& inputs) {
    check_batch(model, inputs);
    Matrix a = inputs;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        a = affine(a, model.layers[i]);
        if (i + 1 < model.layers.size()) relu_inplace(a);
    }
    return a;
}

LossAndGrad forward_loss_grad(const MlpModel& model, const Batch& batch) {
    check_batch(model, batch.inputs);
    const std::size_t n = batch.labels.size();
    if (n == 0 || batch.inputs.rows() != n) {
        throw std::invalid_argument("forward_loss_grad: batch has " + std::to_string(batch.inputs.rows()) +
                                    " rows and " + std::to_string(n) + " labels");
    }
    const std::size_t classes = model.num_classes();
    for (std::size_t label : batch.labels) {
        if (label >= classes) {
            throw std::invalid_argument("forward_loss_grad: label " + std::to_string(label) + " outside [0, " +
                                        std::to_string(classes) + ")");
        }
    }

    const std::size_t depth = model.layers.size();
    // activations[i] is the input of layer i; activations[depth] the logits.
    std::vector<Matrix> activations;
    activations.reserve(depth + 1);
    activations.push_back(batch.inputs);
    for (std::size_t i = 0; i < depth; ++i) {
        Matrix z = affine(activations.back(), model.layers[i]);
        if (i + 1 < depth) relu_inplace(z);
        activations.push_back(std::move(z));
    }

    const double inv_n = 1.0 / static_cast<double>(n);
    Matrix delta(n, classes);
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const auto z = activations.back().row(r);
        const double lse = log_sum_exp(z);
        loss += lse - z[batch.labels[r]];
        auto d = delta.row(r);
        for (std::size_t c = 0; c < classes; ++c) d[c] = std::exp(z[c] - lse) * inv_n;
        d[batch.labels[r]] -= inv_n;
    }

    LossAndGrad out;
    out.loss = loss * inv_n;
    out.grads.layers.resize(depth);
    for (std::size_t i = depth; i-- > 0;) {
        const Matrix& input = activations[i];
        auto& g = out.grads.layers[i];
        g.weight = matmul_transpose_a(delta, input);
        g.bias.assign(delta.cols(), 0.0);
        for (std::size_t r = 0; r < n; ++r) {
            const auto d = delta.row(r);
            for (std::size_t c = 0; c < d.size(); ++c) g.bias[c] += d[c];
        }
        if (i == 0) break;
        Matrix upstream = matmul(delta, model.layers[i].weight);
        // Rectifier subgradient is 0 at 0; input holds post-activation values.
        for (std::size_t k = 0; k < upstream.size(); ++k) {
            if (input.values()[k] <= 0.0) upstream.values()[k] = 0.0;
        }
        delta = std::move(upstream);
    }
    return out;
}

MlpModel sgd_step(const MlpModel& model, const Gradients& grads, double eta) {
    if (!(eta >= 0.0)) throw std::invalid_argument("sgd_step: eta must be >= 0");
    if (grads.layers.size() != model.layers.size()) {
        throw std::invalid_argument("sgd_step: gradient has " + std::to_string(grads.layers.size()) +
                                    " layers, model has " + std::to_string(model.layers.size()));
    }
    MlpModel next = model;
    for (std::size_t i = 0; i < next.layers.size(); ++i) {
        auto& layer = next.layers[i];
        const auto& g = grads.layers[i];
        require_same_shape(layer.weight, g.weight, "sgd_step");
        if (g.bias.size() != layer.bias.size()) throw std::invalid_argument("sgd_step: bias length mismatch");
        auto w = layer.weight.values();
        const auto gw = g.weight.values();
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= eta * gw[k];
        for (std::size_t k = 0; k < layer.bias.size(); ++k) layer.bias[k] -= eta * g.bias[k];
    }
    return next;
}

double lr_at(const LrSchedule& schedule, std::uint64_t t) {
    const double exponent = static_cast<double>(t) / static_cast<double>(schedule.decay_period);
    return schedule.eta0 * std::pow(schedule.decay_base, exponent);
}

Evaluation evaluate(const MlpModel& model, const Dataset& data) {
    if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    const Matrix z = logits(model, data.features);
    std::size_t correct = 0;
    double loss = 0.0;
    for (std::size_t r = 0; r < z.rows(); ++r) {
        const auto row = z.row(r);
        // max_element returns the first maximum, i.e. the lowest class index.
        const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        if (best == data.labels[r]) ++correct;
        loss += log_sum_exp(row) - row[data.labels[r]];
    }
    const double n = static_cast<double>(data.size());
    return {static_cast<double>(correct) / n, loss / n};
}

std::vector<double> flatten(std::span<const DenseLayer> layers) {
    std::vector<double> flat;
    for (const auto& layer : layers) {
        flat.insert(flat.end(), layer.weight.values().begin(), layer.weight.values().end());
        flat.insert(flat.end(), layer.bias.begin(), layer.bias.end());
    }
    return flat;
}

double parameter_norm(std::span<const DenseLayer> layers) {
    double acc = 0.0;
    for (const auto& layer : layers) {
        acc += squared_norm(layer.weight);
        for (double b : layer.bias) acc += b * b;
    }
    return std::sqrt(acc);
}

double max_abs_diff(const MlpModel& a, const MlpModel& b) {
    if (a.layers.size() != b.layers.size()) throw std::invalid_argument("max_abs_diff: layer count mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        worst = std::max(worst, max_abs_diff(a.layers[i].weight, b.layers[i].weight));
        if (a.layers[i].bias.size() != b.layers[i].bias.size()) {
            throw std::invalid_argument("max_abs_diff: bias length mismatch");
        }
        for (std::size_t k = 0; k < a.layers[i].bias.size(); ++k) {
            worst = std::max(worst, std::abs(a.layers[i].bias[k] - b.layers[i].bias[k]));
        }
    }
    return worst;
}

} // namespace feddlr
