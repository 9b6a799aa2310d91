#include "feddlr/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace feddlr {

namespace {

// Column-major scratch storage: `count` columns of length `length`.
struct Columns {
    std::size_t length;
    std::size_t count;
    std::vector<double> data;

    double* col(std::size_t j) { return data.data() + j * length; }
    const double* col(std::size_t j) const { return data.data() + j * length; }
};

double dot(const double* x, const double* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void rotate(double* x, double* y, std::size_t n, double c, double s) {
    for (std::size_t i = 0; i < n; ++i) {
        const double xi = x[i];
        const double yi = y[i];
        x[i] = c * xi - s * yi;
        y[i] = s * xi + c * yi;
    }
}

// Unit vector orthogonal to the first `filled` columns of `basis`, built from
// the standard basis vector with the largest residual.
std::vector<double> orthogonal_complement(const Columns& basis, std::size_t filled) {
    const std::size_t m = basis.length;
    std::vector<double> best;
    double best_norm = -1.0;
    std::vector<double> r(m);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(r.begin(), r.end(), 0.0);
        r[i] = 1.0;
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t k = 0; k < filled; ++k) {
                const double proj = dot(basis.col(k), r.data(), m);
                for (std::size_t j = 0; j < m; ++j) r[j] -= proj * basis.col(k)[j];
            }
        }
        const double norm = std::sqrt(dot(r.data(), r.data(), m));
        if (norm > best_norm) {
            best_norm = norm;
            best = r;
        }
    }
    for (double& v : best) v /= best_norm;
    return best;
}

// Requires a.rows() >= a.cols().
SvdResult jacobi_tall(const Matrix& a, const SvdOptions& options) {
    const std::size_t m = a.rows();
    const std::size_t n = a.cols();

    Columns work{m, n, std::vector<double>(m * n)};
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) work.col(j)[i] = a(i, j);

    Columns right{n, n, std::vector<double>(n * n, 0.0)};
    for (std::size_t j = 0; j < n; ++j) right.col(j)[j] = 1.0;

    bool converged = false;
    for (int sweep = 0; sweep < options.max_sweeps && !converged; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double alpha = dot(work.col(p), work.col(p), m);
                const double beta = dot(work.col(q), work.col(q), m);
                const double gamma = dot(work.col(p), work.col(q), m);
                if (gamma == 0.0 || std::abs(gamma) <= options.tolerance * std::sqrt(alpha * beta)) {
                    continue;
                }
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
                const double c = 1.0 / std::hypot(1.0, t);
                const double s = c * t;
                rotate(work.col(p), work.col(q), m, c, s);
                rotate(right.col(p), right.col(q), n, c, s);
                rotated = true;
            }
        }
        converged = !rotated;
    }
    if (!converged) {
        throw std::runtime_error("svd: Jacobi iteration did not converge for " + a.shape() +
                                 " matrix after " + std::to_string(options.max_sweeps) + " sweeps");
    }

    std::vector<double> norms(n);
    for (std::size_t j = 0; j < n; ++j) norms[j] = std::sqrt(dot(work.col(j), work.col(j), m));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

    const double sigma_max = n == 0 ? 0.0 : norms[order.front()];
    const double floor = options.clamp * sigma_max;

    SvdResult out{Matrix(m, n), std::vector<double>(n, 0.0), Matrix(n, n)};
    Columns left{m, n, std::vector<double>(m * n, 0.0)};
    std::size_t kept = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = order[k];
        if (norms[j] == 0.0 || norms[j] < floor) break;
        out.sigma[k] = norms[j];
        for (std::size_t i = 0; i < m; ++i) left.col(k)[i] = work.col(j)[i] / norms[j];
        ++kept;
    }
    for (std::size_t k = kept; k < n; ++k) {
        const auto completion = orthogonal_complement(left, k);
        std::copy(completion.begin(), completion.end(), left.col(k));
    }

    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t j = order[k];
        const double* u = left.col(k);
        std::size_t lead = 0;
        for (std::size_t i = 1; i < m; ++i) {
            if (std::abs(u[i]) > std::abs(u[lead])) lead = i;
        }
        const double sign = u[lead] < 0.0 ? -1.0 : 1.0;
        for (std::size_t i = 0; i < m; ++i) out.u(i, k) = sign * u[i];
        for (std::size_t i = 0; i < n; ++i) out.v(i, k) = sign * right.col(j)[i];
    }
    return out;
}

} // namespace

SvdResult svd(const Matrix& a, const SvdOptions& options) {
    if (a.empty()) throw std::invalid_argument("svd: empty matrix " + a.shape());
    if (!all_finite(a.values())) {
        throw std::domain_error("svd: non-finite entry in " + a.shape() + " matrix");
    }
    if (a.rows() >= a.cols()) return jacobi_tall(a, options);

    // aᵀ = u'·Σ·v'ᵀ  =>  a = v'·Σ·u'ᵀ; re-sign with respect to the new u.
    SvdResult t = jacobi_tall(a.transposed(), options);
    SvdResult out{std::move(t.v), std::move(t.sigma), std::move(t.u)};
    for (std::size_t k = 0; k < out.sigma.size(); ++k) {
        std::size_t lead = 0;
        for (std::size_t i = 1; i < out.u.rows(); ++i) {
            if (std::abs(out.u(i, k)) > std::abs(out.u(lead, k))) lead = i;
        }
        if (out.u(lead, k) < 0.0) {
            for (std::size_t i = 0; i < out.u.rows(); ++i) out.u(i, k) = -out.u(i, k);
            for (std::size_t i = 0; i < out.v.rows(); ++i) out.v(i, k) = -out.v(i, k);
        }
    }
    return out;
}

} // namespace feddlr
