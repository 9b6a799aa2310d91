#include "feddlr/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace feddlr {

namespace {

void require_finite(std::span<const double> values, const char* what) {
    if (!all_finite(values)) {
        throw std::domain_error(std::string(what) + ": non-finite matrix entry");
    }
}

} // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {
    if (!std::isfinite(fill)) {
        throw std::domain_error("Matrix: non-finite fill value");
    }
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
        throw std::invalid_argument("Matrix: " + std::to_string(values_.size()) +
                                    " values do not fill " + shape());
    }
    require_finite(values_, "Matrix");
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix Matrix::diagonal(std::span<const double> diag) {
    Matrix m(diag.size(), diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    require_finite(m.values_, "Matrix::diagonal");
    return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> values;
    values.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw std::invalid_argument("Matrix::from_rows: ragged rows");
        values.insert(values.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(values));
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
}

std::string Matrix::shape() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix& Matrix::operator+=(const Matrix& other) {
    require_same_shape(*this, other, "Matrix::operator+=");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    require_finite(values_, "Matrix::operator+=");
    return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
    require_same_shape(*this, other, "Matrix::operator-=");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
    require_finite(values_, "Matrix::operator-=");
    return *this;
}

Matrix& Matrix::operator*=(double s) {
    for (double& v : values_) v *= s;
    require_finite(values_, "Matrix::operator*=");
    return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(Matrix a, double s) { return a *= s; }
Matrix operator*(double s, Matrix a) { return a *= s; }

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape() +
                                    " vs " + b.shape());
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: cannot multiply " + a.shape() + " by " + b.shape());
    }
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto out = c.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            auto brow = b.row(k);
            for (std::size_t j = 0; j < out.size(); ++j) out[j] += aik * brow[j];
        }
    }
    require_finite(c.values(), "matmul");
    return c;
}

Matrix matmul_transpose_b(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.cols()) {
        throw std::invalid_argument("matmul_transpose_b: cannot multiply " + a.shape() +
                                    " by transpose of " + b.shape());
    }
    Matrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto arow = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            auto brow = b.row(j);
            double acc = 0.0;
            for (std::size_t k = 0; k < arow.size(); ++k) acc += arow[k] * brow[k];
            c(i, j) = acc;
        }
    }
    require_finite(c.values(), "matmul_transpose_b");
    return c;
}

Matrix matmul_transpose_a(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) {
        throw std::invalid_argument("matmul_transpose_a: cannot multiply transpose of " +
                                    a.shape() + " by " + b.shape());
    }
    Matrix c(a.cols(), b.cols());
    for (std::size_t k = 0; k < a.rows(); ++k) {
        auto arow = a.row(k);
        auto brow = b.row(k);
        for (std::size_t i = 0; i < arow.size(); ++i) {
            const double aki = arow[i];
            if (aki == 0.0) continue;
            auto out = c.row(i);
            for (std::size_t j = 0; j < brow.size(); ++j) out[j] += aki * brow[j];
        }
    }
    require_finite(c.values(), "matmul_transpose_a");
    return c;
}

double squared_norm(const Matrix& a) {
    double acc = 0.0;
    for (double v : a.values()) acc += v * v;
    return acc;
}

double frobenius_norm(const Matrix& a) { return std::sqrt(squared_norm(a)); }

double max_abs_diff(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "max_abs_diff");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
    }
    return worst;
}

bool all_finite(std::span<const double> values) {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

} // namespace feddlr
