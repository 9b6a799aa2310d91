#include "feddlr/compression.hpp"

#include "feddlr/svd.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <stdexcept>
#include <string>

namespace feddlr {

std::size_t CompressedLayer::rows() const {
    if (const auto* fp = std::get_if<FactorPair>(&payload)) return fp->rows;
    return std::get<Matrix>(payload).rows();
}

std::size_t CompressedLayer::cols() const {
    if (const auto* fp = std::get_if<FactorPair>(&payload)) return fp->cols;
    return std::get<Matrix>(payload).cols();
}

Matrix CompressedLayer::weight() const {
    if (const auto* fp = std::get_if<FactorPair>(&payload)) return reconstruct(*fp);
    return std::get<Matrix>(payload);
}

std::size_t energy_rank(std::span<const double> sigma, double e) {
    if (sigma.empty()) throw std::invalid_argument("energy_rank: empty spectrum");
    if (!(e > 0.0 && e <= 1.0)) throw std::invalid_argument("energy_rank: threshold must be in (0, 1]");
    double total = 0.0;
    for (double s : sigma) total += s * s;
    if (total == 0.0) throw std::invalid_argument("energy_rank: all singular values are zero");

    const double target = e * total;
    double kept = 0.0;
    std::size_t r = 0;
    while (r < sigma.size()) {
        kept += sigma[r] * sigma[r];
        ++r;
        if (kept >= target) break;
    }
    // Rounding can leave the full-energy target unmet; never keep zero σ.
    while (r > 1 && sigma[r - 1] == 0.0) --r;
    return r;
}

FactorPair lr_compress(const Matrix& w, double e) {
    if (squared_norm(w) == 0.0) {
        throw std::invalid_argument("lr_compress: " + w.shape() + " matrix is all zero");
    }
    const SvdResult d = svd(w);
    const std::size_t r = energy_rank(d.sigma, e);

    FactorPair fp{Matrix(w.rows(), r), Matrix(r, w.cols()), r, w.rows(), w.cols()};
    for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t k = 0; k < r; ++k) fp.u(i, k) = d.sigma[k] * d.u(i, k);
    for (std::size_t k = 0; k < r; ++k)
        for (std::size_t j = 0; j < w.cols(); ++j) fp.v(k, j) = d.v(j, k);
    return fp;
}

Matrix reconstruct(const FactorPair& fp) { return matmul(fp.u, fp.v); }

bool factored_is_smaller(std::size_t rows, std::size_t cols, std::size_t rank) {
    return rank * (rows + cols) < rows * cols;
}

std::size_t transmitted_params(const CompressedLayer& layer) {
    const std::size_t m = layer.rows();
    const std::size_t n = layer.cols();
    const std::size_t weights =
        layer.mode() == LayerMode::factored ? std::get<FactorPair>(layer.payload).rank * (m + n) : m * n;
    return weights + layer.bias.size();
}

std::size_t transmitted_params(const CompressedModel& model) {
    std::size_t total = 0;
    for (const auto& layer : model.layers) total += transmitted_params(layer);
    return total;
}

CompressedLayer compress_layer(const DenseLayer& layer, double e) {
    FactorPair fp = lr_compress(layer.weight, e);
    const std::size_t r = fp.rank;
    if (factored_is_smaller(fp.rows, fp.cols, r)) return {std::move(fp), r, layer.bias};
    return {reconstruct(fp), r, layer.bias};
}

CompressedModel compress_model(const MlpModel& model, double e) {
    CompressedModel out;
    out.layers.reserve(model.layers.size());
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        try {
            out.layers.push_back(compress_layer(model.layers[i], e));
        } catch (const std::exception& ex) {
            throw std::runtime_error("compress_model: layer " + std::to_string(i) + ": " + ex.what());
        }
    }
    return out;
}

CompressedModel encode_dense(const MlpModel& model) {
    CompressedModel out;
    for (const auto& layer : model.layers) {
        out.layers.push_back({layer.weight, std::min(layer.weight.rows(), layer.weight.cols()), layer.bias});
    }
    return out;
}

MlpModel decompress(const CompressedModel& model) {
    MlpModel out;
    out.layers.reserve(model.layers.size());
    for (const auto& layer : model.layers) out.layers.push_back({layer.weight(), layer.bias});
    return out;
}

std::size_t serialized_size(const CompressedLayer& layer) {
    const std::size_t weights = transmitted_params(layer) - layer.bias.size();
    return kLayerHeaderBytes + 8 * weights + 4 + 8 * layer.bias.size();
}

std::size_t serialized_size(const CompressedModel& model) {
    std::size_t total = 0;
    for (const auto& layer : model.layers) total += serialized_size(layer);
    return total;
}

namespace {

class Writer {
public:
    explicit Writer(std::vector<std::uint8_t>& out) : out_(out) {}

    void bytes(const char* s, std::size_t n) { out_.insert(out_.end(), s, s + n); }
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u16(std::uint16_t v) { little(v, 2); }
    void u32(std::size_t v) {
        if (v > 0xffffffffULL) throw std::length_error("serialize: dimension exceeds u32");
        little(v, 4);
    }
    void f64(std::span<const double> values) {
        for (double v : values) little(std::bit_cast<std::uint64_t>(v), 8);
    }

private:
    void little(std::uint64_t v, int width) {
        for (int i = 0; i < width; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t>& out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

    bool done() const { return pos_ == in_.size(); }
    std::uint64_t little(int width) {
        need(width);
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
        pos_ += width;
        return v;
    }
    void magic() {
        need(4);
        if (std::memcmp(in_.data() + pos_, "FDLR", 4) != 0) {
            throw std::runtime_error("deserialize: bad magic at byte " + std::to_string(pos_));
        }
        pos_ += 4;
    }
    std::vector<double> f64(std::size_t count) {
        std::vector<double> values(count);
        for (double& v : values) v = std::bit_cast<double>(little(8));
        return values;
    }

private:
    void need(std::size_t n) const {
        if (in_.size() - pos_ < n) throw std::runtime_error("deserialize: truncated input");
    }
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

} // namespace

std::vector<std::uint8_t> serialize(const CompressedModel& model) {
    std::vector<std::uint8_t> out;
    out.reserve(serialized_size(model));
    Writer w(out);
    for (const auto& layer : model.layers) {
        w.bytes("FDLR", 4);
        w.u16(kWireVersion);
        w.u32(layer.rows());
        w.u32(layer.cols());
        w.u32(layer.rank);
        w.u8(static_cast<std::uint8_t>(layer.mode()));
        if (const auto* fp = std::get_if<FactorPair>(&layer.payload)) {
            w.f64(fp->u.values());
            w.f64(fp->v.values());
        } else {
            w.f64(std::get<Matrix>(layer.payload).values());
        }
        w.u32(layer.bias.size());
        w.f64(layer.bias);
    }
    return out;
}

CompressedModel deserialize(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    CompressedModel model;
    while (!r.done()) {
        r.magic();
        const auto version = r.little(2);
        if (version != kWireVersion) throw std::runtime_error("deserialize: unsupported version " + std::to_string(version));
        const std::size_t m = r.little(4);
        const std::size_t n = r.little(4);
        const std::size_t rank = r.little(4);
        const auto mode = r.little(1);
        CompressedLayer layer;
        layer.rank = rank;
        if (mode == static_cast<std::uint8_t>(LayerMode::factored)) {
            if (rank == 0 || rank > std::min(m, n)) throw std::runtime_error("deserialize: invalid rank");
            FactorPair fp{Matrix(m, rank, r.f64(m * rank)), Matrix(rank, n, r.f64(rank * n)), rank, m, n};
            layer.payload = std::move(fp);
        } else if (mode == static_cast<std::uint8_t>(LayerMode::dense)) {
            layer.payload = Matrix(m, n, r.f64(m * n));
        } else {
            throw std::runtime_error("deserialize: unknown mode " + std::to_string(mode));
        }
        layer.bias = r.f64(r.little(4));
        model.layers.push_back(std::move(layer));
    }
    return model;
}

} // namespace feddlr
