#pragma once

#include "feddlr/matrix.hpp"
#include "feddlr/nn.hpp"

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

namespace feddlr {

// Rank-r factorization W ≈ u·v where u = [σ_1 u_1, …, σ_r u_r] (m×r) and
// v = [v_1, …, v_r]ᵀ (r×n).
struct FactorPair {
    Matrix u;
    Matrix v;
    std::size_t rank = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
};

enum class LayerMode : std::uint8_t { dense = 0, factored = 1 };

// One layer as it travels over the wire. A factored payload is used only when
// r·(m+n) < m·n; otherwise the reconstruction is sent dense. `rank` is the
// selected energy rank in both modes (min(m, n) for uncompressed layers).
struct CompressedLayer {
    std::variant<Matrix, FactorPair> payload;
    std::size_t rank = 0;
    std::vector<double> bias;

    LayerMode mode() const noexcept {
        return std::holds_alternative<FactorPair>(payload) ? LayerMode::factored : LayerMode::dense;
    }
    std::size_t rows() const;
    std::size_t cols() const;
    Matrix weight() const;
};

struct CompressedModel {
    std::vector<CompressedLayer> layers;
};

// Smallest r with Σ_{i<=r} σ_i² >= e·Σ σ_i². Throws on an all-zero spectrum.
std::size_t energy_rank(std::span<const double> sigma, double e);

// Truncated SVD keeping energy fraction e. Throws on an all-zero matrix.
FactorPair lr_compress(const Matrix& w, double e);

Matrix reconstruct(const FactorPair& fp);

// True when a rank-r factorization is strictly smaller than the dense matrix.
bool factored_is_smaller(std::size_t rows, std::size_t cols, std::size_t rank);

std::size_t transmitted_params(const CompressedLayer& layer);
std::size_t transmitted_params(const CompressedModel& model);

CompressedLayer compress_layer(const DenseLayer& layer, double e);
// Applies lr_compress to every weight matrix; biases pass through dense.
CompressedModel compress_model(const MlpModel& model, double e);
// Uncompressed encoding used by FedAvg and for the initial broadcast.
CompressedModel encode_dense(const MlpModel& model);
MlpModel decompress(const CompressedModel& model);

// Wire format, per layer, little-endian:
//   "FDLR" | u16 version=1 | u32 m | u32 n | u32 r | u8 mode |
//   f64 payload (dense: m·n; factored: U then V, r·(m+n)) | u32 bias_len | f64 bias
// A model is its layer records back to back.
inline constexpr std::uint16_t kWireVersion = 1;
inline constexpr std::size_t kLayerHeaderBytes = 4 + 2 + 4 + 4 + 4 + 1;

std::size_t serialized_size(const CompressedLayer& layer);
std::size_t serialized_size(const CompressedModel& model);
std::vector<std::uint8_t> serialize(const CompressedModel& model);
CompressedModel deserialize(std::span<const std::uint8_t> bytes);

} // namespace feddlr
