#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "feddlr/matrix.hpp"
#include "feddlr/rng.hpp"
#include "feddlr/svd.hpp"
#include "support.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

using namespace feddlr;
using testing::random_matrix;

namespace {

double orthonormality_defect(const Matrix& q) {
    const Matrix g = matmul_transpose_a(q, q);
    return max_abs_diff(g, Matrix::identity(q.cols()));
}

Matrix rebuild(const SvdResult& d) {
    Matrix us = d.u;
    for (std::size_t i = 0; i < us.rows(); ++i)
        for (std::size_t k = 0; k < us.cols(); ++k) us(i, k) *= d.sigma[k];
    return matmul_transpose_b(us, d.v);
}

} // namespace

TEST_CASE("matmul by identity returns the operand") {
    const Matrix a = Matrix::from_rows({{1, 2, 3}, {4, 5, 6}, {7, 8, 9}});
    CHECK(matmul(Matrix::identity(3), a) == a);
    CHECK(matmul(a, Matrix::identity(3)) == a);
}

TEST_CASE("matmul hand example") {
    const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
    const Matrix swap = Matrix::from_rows({{0, 1}, {1, 0}});
    CHECK(matmul(a, swap) == Matrix::from_rows({{2, 1}, {4, 3}}));
}

TEST_CASE("matmul is associative on random inputs") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix a = random_matrix(rng, 4, 3);
        const Matrix b = random_matrix(rng, 3, 5);
        const Matrix c = random_matrix(rng, 5, 2);
        CHECK(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) <= 1e-12);
    }
}

TEST_CASE("transposed products agree with explicit transposes") {
    Rng rng(12);
    const Matrix a = random_matrix(rng, 5, 3);
    const Matrix b = random_matrix(rng, 4, 3);
    const Matrix c = random_matrix(rng, 5, 2);
    CHECK(max_abs_diff(matmul_transpose_b(a, b), matmul(a, b.transposed())) <= 1e-14);
    CHECK(max_abs_diff(matmul_transpose_a(a, c), matmul(a.transposed(), c)) <= 1e-14);
}

TEST_CASE("matmul rejects mismatched shapes and names both") {
    const Matrix a(2, 3);
    const Matrix b(2, 3);
    try {
        (void)matmul(a, b);
        FAIL("expected an exception");
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
    }
    CHECK_THROWS_AS(a + Matrix(3, 2), std::invalid_argument);
}

TEST_CASE("non-finite entries are rejected") {
    CHECK_THROWS_AS(Matrix(1, 2, {1.0, std::numeric_limits<double>::quiet_NaN()}), std::domain_error);
    Matrix a = Matrix::from_rows({{1e308, 1e308}});
    CHECK_THROWS_AS(a *= 10.0, std::domain_error);
    CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>(3, 0.0)), std::invalid_argument);
}

TEST_CASE("frobenius norm examples") {
    CHECK(frobenius_norm(Matrix(3, 4)) == 0.0);
    CHECK(frobenius_norm(Matrix::from_rows({{3, 4}})) == doctest::Approx(5.0).epsilon(1e-15));

    Rng rng(13);
    const Matrix a = random_matrix(rng, 10, 10);
    long double sum = 0.0L;
    for (double x : a.values()) sum += static_cast<long double>(x) * x;
    CHECK(testing::relative_error(frobenius_norm(a), static_cast<double>(std::sqrt(sum))) <= 1e-14);
}

TEST_CASE("triangle inequality") {
    Rng rng(14);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t m = 1 + rng.index(8);
        const std::size_t n = 1 + rng.index(8);
        const Matrix a = random_matrix(rng, m, n);
        const Matrix b = random_matrix(rng, m, n, rng.uniform(0.01, 10.0));
        CHECK(frobenius_norm(a + b) <= frobenius_norm(a) + frobenius_norm(b) + 1e-12);
    }
}

TEST_CASE("svd of identity and diagonal matrices") {
    const auto eye = svd(Matrix::identity(3));
    CHECK(eye.sigma == std::vector<double>{1, 1, 1});

    const std::vector<double> diag{1, 3, 2};
    const auto d = svd(Matrix::diagonal(diag));
    REQUIRE(d.sigma.size() == 3);
    CHECK(d.sigma[0] == doctest::Approx(3.0).epsilon(1e-15));
    CHECK(d.sigma[1] == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(d.sigma[2] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("svd reconstructs, is orthonormal and sorted") {
    Rng rng(15);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t m = 1 + rng.index(20);
        const std::size_t n = 1 + rng.index(20);
        const Matrix a = random_matrix(rng, m, n);
        const SvdResult d = svd(a);
        const std::size_t s = std::min(m, n);
        REQUIRE(d.sigma.size() == s);
        CHECK(d.u.rows() == m);
        CHECK(d.u.cols() == s);
        CHECK(d.v.rows() == n);
        CHECK(d.v.cols() == s);
        CHECK(frobenius_norm(rebuild(d) - a) / frobenius_norm(a) <= 1e-10);
        CHECK(orthonormality_defect(d.u) <= 1e-10);
        CHECK(orthonormality_defect(d.v) <= 1e-10);
        for (std::size_t i = 0; i + 1 < s; ++i) CHECK(d.sigma[i] >= d.sigma[i + 1]);
        CHECK(d.sigma.back() >= 0.0);
    }
}

TEST_CASE("svd singular values match an independent decomposition") {
    Rng rng(16);
    for (int trial = 0; trial < 40; ++trial) {
        const Matrix a = random_matrix(rng, 1 + rng.index(16), 1 + rng.index(16));
        const auto want = testing::oracle_sigma(a);
        const auto got = svd(a).sigma;
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-12 * want[0]);
    }
}

TEST_CASE("energy identity: squared norm equals the sum of squared singular values") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix a = random_matrix(rng, 1 + rng.index(12), 1 + rng.index(12));
        double energy = 0.0;
        for (double s : svd(a).sigma) energy += s * s;
        CHECK(testing::relative_error(energy, squared_norm(a)) <= 1e-10);
    }
}

TEST_CASE("svd handles rank deficiency with clamped zeros and a full orthonormal basis") {
    Rng rng(18);
    const Matrix a = matmul(random_matrix(rng, 7, 2), random_matrix(rng, 2, 5));
    const SvdResult d = svd(a);
    CHECK(d.sigma[2] == 0.0);
    CHECK(d.sigma[4] == 0.0);
    CHECK(orthonormality_defect(d.u) <= 1e-10);
    CHECK(orthonormality_defect(d.v) <= 1e-10);
    CHECK(frobenius_norm(rebuild(d) - a) / frobenius_norm(a) <= 1e-10);

    const SvdResult z = svd(Matrix(3, 2));
    CHECK(z.sigma == std::vector<double>{0, 0});
    CHECK(orthonormality_defect(z.u) <= 1e-12);
}

TEST_CASE("svd is deterministic and follows the sign convention") {
    Rng rng(19);
    const Matrix a = random_matrix(rng, 9, 6);
    const SvdResult x = svd(a);
    const SvdResult y = svd(a);
    CHECK(x.u == y.u);
    CHECK(x.v == y.v);
    CHECK(x.sigma == y.sigma);
    for (std::size_t k = 0; k < x.u.cols(); ++k) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < x.u.rows(); ++i)
            if (std::abs(x.u(i, k)) > std::abs(x.u(best, k))) best = i;
        CHECK(x.u(best, k) > 0.0);
    }
    // Negating the input flips v but not u.
    const SvdResult neg = svd(-1.0 * a);
    CHECK(max_abs_diff(neg.u, x.u) <= 1e-12);
    CHECK(max_abs_diff(neg.v, -1.0 * x.v) <= 1e-12);
}

TEST_CASE("svd reports non-convergence with the shape") {
    Rng rng(20);
    SvdOptions opts;
    opts.max_sweeps = 1;
    try {
        (void)svd(random_matrix(rng, 12, 9), opts);
        FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("12x9") != std::string::npos);
    }
}

TEST_CASE("rng streams are reproducible and derived seeds differ") {
    Rng a(5);
    Rng b(5);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
    CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
    CHECK(derive_seed(1, 2, 3) != derive_seed(2, 2, 3));

    Rng c(6);
    double sum = 0.0;
    double sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = c.normal();
        sum += z;
        sq += z * z;
    }
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(std::abs(sq / n - 1.0) < 0.02);

    auto p = c.permutation(50);
    std::sort(p.begin(), p.end());
    for (std::size_t i = 0; i < 50; ++i) CHECK(p[i] == i);
}
