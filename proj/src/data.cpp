#include "feddlr/data.hpp"

#include "feddlr/rng.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace feddlr {

void Dataset::validate() const {
    if (labels.empty()) throw std::invalid_argument("Dataset: no samples");
    if (features.rows() != labels.size()) {
        throw std::invalid_argument("Dataset: " + std::to_string(features.rows()) + " feature rows but " +
                                    std::to_string(labels.size()) + " labels");
    }
    if (num_classes == 0) throw std::invalid_argument("Dataset: num_classes must be positive");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes) {
            throw std::invalid_argument("Dataset: label " + std::to_string(labels[i]) + " at row " +
                                        std::to_string(i) + " outside [0, " + std::to_string(num_classes) + ")");
        }
    }
    if (!all_finite(features.values())) throw std::invalid_argument("Dataset: non-finite feature");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out{Matrix(indices.size(), dim()), std::vector<std::size_t>(indices.size()), num_classes};
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto src = features.row(indices[i]);
        std::copy(src.begin(), src.end(), out.features.row(i).begin());
        out.labels[i] = labels[indices[i]];
    }
    return out;
}

namespace {

std::vector<std::vector<double>> mixture_means(Rng& rng, const MixtureSpec& spec) {
    const double radius = spec.separation / std::sqrt(2.0);
    std::vector<std::vector<double>> means(spec.classes, std::vector<double>(spec.dim));
    for (auto& mean : means) {
        for (double& v : mean) v = rng.normal();
    }
    if (spec.classes <= spec.dim) {
        // Gram-Schmidt: orthonormal directions give equal pairwise distances.
        for (std::size_t c = 0; c < spec.classes; ++c) {
            for (int pass = 0; pass < 2; ++pass) {
                for (std::size_t k = 0; k < c; ++k) {
                    double proj = 0.0;
                    for (std::size_t j = 0; j < spec.dim; ++j) proj += means[c][j] * means[k][j];
                    for (std::size_t j = 0; j < spec.dim; ++j) means[c][j] -= proj * means[k][j];
                }
            }
            double norm = 0.0;
            for (double v : means[c]) norm += v * v;
            norm = std::sqrt(norm);
            for (double& v : means[c]) v /= norm;
        }
    } else {
        for (auto& mean : means) {
            double norm = 0.0;
            for (double v : mean) norm += v * v;
            norm = std::sqrt(norm);
            for (double& v : mean) v /= norm;
        }
    }
    for (auto& mean : means) {
        for (double& v : mean) v *= radius;
    }
    return means;
}

void standardize(Matrix& features) {
    const std::size_t n = features.rows();
    for (std::size_t j = 0; j < features.cols(); ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += features(i, j);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (features(i, j) - mean) * (features(i, j) - mean);
        var /= static_cast<double>(n);
        const double scale = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
        for (std::size_t i = 0; i < n; ++i) features(i, j) = (features(i, j) - mean) * scale;
    }
}

} // namespace

Dataset synth_gaussian_mixture(std::uint64_t seed, const MixtureSpec& spec) {
    if (spec.classes < 2 || spec.dim < 1 || spec.per_class < 1 || !(spec.separation > 0.0)) {
        throw std::invalid_argument("synth_gaussian_mixture: need classes >= 2, dim >= 1, per_class >= 1, separation > 0");
    }
    Rng rng(derive_seed(seed, 0x6d6978ULL));
    const auto means = mixture_means(rng, spec);

    const std::size_t n = spec.classes * spec.per_class;
    Matrix features(n, spec.dim);
    std::vector<std::size_t> labels(n);
    for (std::size_t c = 0; c < spec.classes; ++c) {
        for (std::size_t s = 0; s < spec.per_class; ++s) {
            const std::size_t row = c * spec.per_class + s;
            labels[row] = c;
            for (std::size_t j = 0; j < spec.dim; ++j) features(row, j) = means[c][j] + rng.normal();
        }
    }
    standardize(features);

    Dataset ordered{std::move(features), std::move(labels), spec.classes};
    const auto order = rng.permutation(n);
    return ordered.subset(order);
}

std::vector<Dataset> partition_iid(const Dataset& data, std::size_t clients, std::uint64_t seed) {
    if (clients == 0) throw std::invalid_argument("partition_iid: need at least one client");
    if (data.size() % clients != 0) {
        throw std::invalid_argument("partition_iid: " + std::to_string(data.size()) +
                                    " samples cannot be split into " + std::to_string(clients) +
                                    " equal shards");
    }
    Rng rng(derive_seed(seed, 0x70617274ULL));
    const auto order = rng.permutation(data.size());
    const std::size_t shard = data.size() / clients;
    std::vector<Dataset> shards;
    shards.reserve(clients);
    for (std::size_t k = 0; k < clients; ++k) {
        shards.push_back(data.subset(std::span(order).subspan(k * shard, shard)));
    }
    return shards;
}

std::pair<Dataset, Dataset> split_head(const Dataset& data, std::size_t count) {
    if (count == 0 || count >= data.size()) {
        throw std::invalid_argument("split_head: head size " + std::to_string(count) +
                                    " must be in [1, " + std::to_string(data.size()) + ")");
    }
    std::vector<std::size_t> head(count);
    std::vector<std::size_t> tail(data.size() - count);
    for (std::size_t i = 0; i < count; ++i) head[i] = i;
    for (std::size_t i = count; i < data.size(); ++i) tail[i - count] = i;
    return {data.subset(head), data.subset(tail)};
}

Dataset load_csv(const std::filesystem::path& path, std::size_t num_classes) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_csv: cannot open " + path.string());

    std::vector<double> values;
    std::vector<std::size_t> labels;
    std::size_t dim = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto where = path.string() + ":" + std::to_string(line_no);

        std::vector<std::string_view> fields;
        std::string_view rest(line);
        while (true) {
            const auto comma = rest.find(',');
            fields.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (fields.size() < 2) throw std::runtime_error("load_csv: " + where + ": need features and a label");
        if (dim == 0) {
            dim = fields.size() - 1;
        } else if (fields.size() - 1 != dim) {
            throw std::runtime_error("load_csv: " + where + ": expected " + std::to_string(dim + 1) +
                                     " columns, found " + std::to_string(fields.size()));
        }
        for (std::size_t j = 0; j < dim; ++j) {
            double v = 0.0;
            const auto f = fields[j];
            const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
            if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
                throw std::runtime_error("load_csv: " + where + ": bad feature '" + std::string(f) + "'");
            }
            values.push_back(v);
        }
        const auto f = fields.back();
        std::size_t label = 0;
        const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), label);
        if (ec != std::errc() || ptr != f.data() + f.size()) {
            throw std::runtime_error("load_csv: " + where + ": bad label '" + std::string(f) + "'");
        }
        if (label >= num_classes) {
            throw std::runtime_error("load_csv: " + where + ": label " + std::to_string(label) +
                                     " outside [0, " + std::to_string(num_classes) + ")");
        }
        labels.push_back(label);
    }
    if (labels.empty()) throw std::runtime_error("load_csv: " + path.string() + " has no rows");
    Dataset out{Matrix(labels.size(), dim, std::move(values)), std::move(labels), num_classes};
    out.validate();
    return out;
}

void write_csv(const Dataset& data, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_csv: cannot open " + path.string());
    char buf[32];
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (double v : data.features.row(i)) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << buf << ',';
        }
        out << data.labels[i] << '\n';
    }
}

} // namespace feddlr
