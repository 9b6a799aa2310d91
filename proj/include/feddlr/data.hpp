#pragma once

#include "feddlr/matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace feddlr {

// Labelled feature rows. labels[i] is the class of features.row(i).
struct Dataset {
    Matrix features;
    std::vector<std::size_t> labels;
    std::size_t num_classes = 0;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dim() const noexcept { return features.cols(); }

    // Throws std::invalid_argument when the invariants do not hold.
    void validate() const;
    // Rows selected by `indices`, in that order.
    Dataset subset(std::span<const std::size_t> indices) const;
};

struct MixtureSpec {
    std::size_t classes = 10;
    std::size_t dim = 32;
    std::size_t per_class = 100;
    double separation = 4.0;
};

// C class means on an orthogonal frame (C <= d) or random sphere (C > d) with
// pairwise distance `separation` (exact in the orthogonal case), unit-variance
// Gaussian samples around each mean, exact class balance, features
// standardized per dimension, rows shuffled. Pure function of (seed, spec).
Dataset synth_gaussian_mixture(std::uint64_t seed, const MixtureSpec& spec);

// Deterministic shuffle followed by K contiguous equal shards.
std::vector<Dataset> partition_iid(const Dataset& data, std::size_t clients, std::uint64_t seed);

// First `count` rows and the remainder.
std::pair<Dataset, Dataset> split_head(const Dataset& data, std::size_t count);

// Comma-separated rows: feature columns then an integer label column.
Dataset load_csv(const std::filesystem::path& path, std::size_t num_classes);
void write_csv(const Dataset& data, const std::filesystem::path& path);

} // namespace feddlr
