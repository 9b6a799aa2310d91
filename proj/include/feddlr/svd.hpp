#pragma once

#include "feddlr/matrix.hpp"

#include <vector>

namespace feddlr {

// Thin decomposition a = u·diag(sigma)·vᵀ with s = min(m, n) singular triplets.
// sigma is non-increasing; u is m×s and v is n×s, both column-orthonormal.
struct SvdResult {
    Matrix u;
    std::vector<double> sigma;
    Matrix v;
};

struct SvdOptions {
    int max_sweeps = 100;
    // Pair (p, q) counts as orthogonal once |a_p·a_q| <= tolerance·‖a_p‖‖a_q‖.
    double tolerance = 1e-12;
    // Singular values below clamp·σ_max are reported as exactly zero.
    double clamp = 1e-12;
};

// One-sided (Hestenes) Jacobi SVD. Output is bit-reproducible: each singular
// pair is signed so that the largest-magnitude entry of u_i is positive (the
// lowest such index wins ties). Throws std::runtime_error on non-convergence.
SvdResult svd(const Matrix& a, const SvdOptions& options = {});

} // namespace feddlr
