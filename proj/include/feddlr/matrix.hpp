#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace feddlr {

// Dense row-major matrix of doubles. Every constructor and arithmetic
// operation rejects non-finite entries.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

    static Matrix identity(std::size_t n);
    static Matrix diagonal(std::span<const double> diag);
    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<double> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }

    Matrix transposed() const;
    std::string shape() const;

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double s);

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);

// a·b
Matrix matmul(const Matrix& a, const Matrix& b);
// a·bᵀ
Matrix matmul_transpose_b(const Matrix& a, const Matrix& b);
// aᵀ·b
Matrix matmul_transpose_a(const Matrix& a, const Matrix& b);

double frobenius_norm(const Matrix& a);
double squared_norm(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);
bool all_finite(std::span<const double> values);

void require_same_shape(const Matrix& a, const Matrix& b, const char* what);

} // namespace feddlr
