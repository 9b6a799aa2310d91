#pragma once

#include "feddlr/matrix.hpp"
#include "feddlr/nn.hpp"
#include "feddlr/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

namespace testing {

inline feddlr::Matrix random_matrix(feddlr::Rng& rng, std::size_t m, std::size_t n, double scale = 1.0) {
    feddlr::Matrix a(m, n);
    for (double& x : a.values()) x = scale * rng.normal();
    return a;
}

inline Eigen::MatrixXd to_eigen(const feddlr::Matrix& a) {
    Eigen::MatrixXd out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
    return out;
}

inline feddlr::Matrix from_eigen(const Eigen::MatrixXd& a) {
    feddlr::Matrix out(a.rows(), a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
    return out;
}

// Singular values from Eigen's bidiagonal divide-and-conquer SVD.
inline std::vector<double> oracle_sigma(const feddlr::Matrix& a) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(to_eigen(a));
    const auto s = svd.singularValues();
    return {s.data(), s.data() + s.size()};
}

// Best rank-r approximation computed by Eigen.
inline feddlr::Matrix oracle_truncation(const feddlr::Matrix& a, std::size_t r) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(to_eigen(a), Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::Index k = static_cast<Eigen::Index>(r);
    Eigen::MatrixXd out = svd.matrixU().leftCols(k) * svd.singularValues().head(k).asDiagonal() *
                          svd.matrixV().leftCols(k).transpose();
    return from_eigen(out);
}

inline double relative_error(double got, double want) {
    return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

} // namespace testing

namespace testing {

// Central finite differences over every parameter of `model`.
// The relative error of an entry is |g - fd| / max(|g|, |fd|, floor); the floor
// keeps entries whose true value is zero (dead units) from dividing by noise.
struct GradCheck {
    double max_relative_error = 0.0;
    std::size_t entries = 0;
};

inline GradCheck finite_difference_check(const feddlr::MlpModel& model, const feddlr::Batch& batch,
                                         double step = 1e-5, double floor = 1e-6) {
    const auto analytic = feddlr::flatten(feddlr::forward_loss_grad(model, batch).grads.layers);
    GradCheck out;
    feddlr::MlpModel probe = model;
    std::size_t index = 0;
    auto visit = [&](double& p) {
        const double saved = p;
        p = saved + step;
        const double up = feddlr::forward_loss_grad(probe, batch).loss;
        p = saved - step;
        const double down = feddlr::forward_loss_grad(probe, batch).loss;
        p = saved;
        const double fd = (up - down) / (2.0 * step);
        const double g = analytic[index++];
        const double denom = std::max({std::abs(g), std::abs(fd), floor});
        out.max_relative_error = std::max(out.max_relative_error, std::abs(g - fd) / denom);
        ++out.entries;
    };
    for (auto& layer : probe.layers) {
        for (double& w : layer.weight.values()) visit(w);
        for (double& b : layer.bias) visit(b);
    }
    return out;
}

// A seeded model with non-zero biases and a matching random batch.
inline std::pair<feddlr::MlpModel, feddlr::Batch> random_problem(std::uint64_t seed,
                                                                 const std::vector<std::size_t>& widths,
                                                                 std::size_t batch_size) {
    feddlr::Rng rng(seed);
    feddlr::MlpModel model = feddlr::init_mlp(widths, rng);
    for (auto& layer : model.layers)
        for (double& b : layer.bias) b = 0.1 * rng.normal();
    feddlr::Batch batch{random_matrix(rng, batch_size, widths.front()), {}};
    for (std::size_t i = 0; i < batch_size; ++i) batch.labels.push_back(rng.index(widths.back()));
    return {std::move(model), std::move(batch)};
}

} // namespace testing
