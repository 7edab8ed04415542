#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cocd/errors.hpp"
#include "cocd/rng.hpp"

namespace cocd {

// Row-major feature/target matrices with equal row counts.
struct Dataset {
    std::size_t n_features = 0;
    std::size_t n_targets = 0;
    std::vector<double> features;  // rows * n_features
    std::vector<double> targets;   // rows * n_targets

    std::size_t rows() const {
        return n_features ? features.size() / n_features
                          : (n_targets ? targets.size() / n_targets : 0);
    }
    const double* feature_row(std::size_t r) const { return features.data() + r * n_features; }
    const double* target_row(std::size_t r) const { return targets.data() + r * n_targets; }
};

// Row indices selecting a mini-batch.
struct BatchSpec {
    std::vector<std::size_t> indices;
};

// Comma-separated rows, features first then targets. `skip_header` drops one
// leading line. Ragged or non-numeric rows are rejected with row/column
// diagnostics.
inline Dataset load_csv_dataset(const std::string& path, std::size_t n_features,
                                std::size_t n_targets, bool skip_header = false) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open dataset file: " + path);
    Dataset ds;
    ds.n_features = n_features;
    ds.n_targets = n_targets;
    std::string line;
    std::size_t row = 0;
    bool first = true;
    while (std::getline(in, line)) {
        if (first && skip_header) {
            first = false;
            continue;
        }
        first = false;
        if (line.empty()) continue;
        std::vector<double> fields;
        std::stringstream ls(line);
        std::string tok;
        std::size_t col = 0;
        while (std::getline(ls, tok, ',')) {
            ++col;
            try {
                std::size_t used = 0;
                const double v = std::stod(tok, &used);
                while (used < tok.size() && std::isspace(static_cast<unsigned char>(tok[used])))
                    ++used;
                if (used != tok.size()) throw std::invalid_argument(tok);
                if (!std::isfinite(v)) throw std::invalid_argument(tok);
                fields.push_back(v);
            } catch (const std::exception&) {
                throw ConfigError("parse error in " + path + " at row " + std::to_string(row + 1) +
                                  ", column " + std::to_string(col) + ": '" + tok + "'");
            }
        }
        if (fields.size() != n_features + n_targets)
            throw ConfigError("ragged row " + std::to_string(row + 1) + " in " + path + ": got " +
                              std::to_string(fields.size()) + " fields, expected " +
                              std::to_string(n_features + n_targets));
        ds.features.insert(ds.features.end(), fields.begin(), fields.begin() + n_features);
        ds.targets.insert(ds.targets.end(), fields.begin() + n_features, fields.end());
        ++row;
    }
    return ds;
}

inline void save_csv_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    char buf[40];
    for (std::size_t r = 0; r < ds.rows(); ++r) {
        for (std::size_t c = 0; c < ds.n_features; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", ds.feature_row(r)[c]);
            out << (c ? "," : "") << buf;
        }
        for (std::size_t c = 0; c < ds.n_targets; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", ds.target_row(r)[c]);
            out << "," << buf;
        }
        out << '\n';
    }
}

enum class BatchMode { Sequential, Shuffle };

// Deterministic mini-batch scheduler. Sequential mode walks rows with
// wraparound; shuffle mode walks a seeded per-epoch permutation.
class MinibatchCursor {
public:
    MinibatchCursor(std::size_t rows, std::size_t batch_size, BatchMode mode = BatchMode::Sequential,
                    std::uint64_t seed = 0)
        : rows_(rows), batch_(std::min(batch_size == 0 ? 1 : batch_size, std::max<std::size_t>(rows, 1))),
          mode_(mode), seed_(seed) {
        if (mode_ == BatchMode::Shuffle) reshuffle();
    }

    BatchSpec next() {
        BatchSpec spec;
        if (rows_ == 0) return spec;
        spec.indices.reserve(batch_);
        for (std::size_t k = 0; k < batch_; ++k) {
            const std::size_t pos = (cursor_ + k) % rows_;
            spec.indices.push_back(mode_ == BatchMode::Shuffle ? perm_[pos] : pos);
        }
        const bool wrapped = cursor_ + batch_ >= rows_;
        cursor_ = (cursor_ + batch_) % rows_;
        if (mode_ == BatchMode::Shuffle && wrapped) reshuffle();
        return spec;
    }

    std::size_t batch_size() const { return batch_; }

private:
    void reshuffle() {
        perm_.resize(rows_);
        std::iota(perm_.begin(), perm_.end(), std::size_t{0});
        SplitMix64 rng(substream(seed_, 0x6d696e69, epoch_++));
        for (std::size_t i = rows_; i > 1; --i) {
            const std::size_t j = rng.next() % i;
            std::swap(perm_[i - 1], perm_[j]);
        }
    }

    std::size_t rows_;
    std::size_t batch_;
    BatchMode mode_;
    std::uint64_t seed_;
    std::size_t cursor_ = 0;
    std::uint64_t epoch_ = 0;
    std::vector<std::size_t> perm_;
};

// Seeded stand-in for a robot-dynamics regression set: targets come from a
// fixed single-hidden-layer tanh teacher plus Gaussian noise.
inline Dataset make_synthetic_regression(std::size_t rows, std::size_t n_features,
                                         std::size_t n_targets, std::uint64_t seed,
                                         double noise_std = 0.05, std::size_t teacher_hidden = 16) {
    Dataset ds;
    ds.n_features = n_features;
    ds.n_targets = n_targets;
    ds.features.resize(rows * n_features);
    ds.targets.resize(rows * n_targets);

    SplitMix64 wrng(substream(seed, 0x74656163));
    std::vector<double> w1(teacher_hidden * n_features), b1(teacher_hidden);
    std::vector<double> w2(n_targets * teacher_hidden), b2(n_targets);
    const double s1 = 1.5 / std::sqrt(static_cast<double>(n_features));
    const double s2 = 1.5 / std::sqrt(static_cast<double>(teacher_hidden));
    for (double& v : w1) v = wrng.uniform(-s1, s1);
    for (double& v : b1) v = wrng.uniform(-0.5, 0.5);
    for (double& v : w2) v = wrng.uniform(-s2, s2);
    for (double& v : b2) v = wrng.uniform(-0.1, 0.1);

    SplitMix64 xrng(substream(seed, 0x66656174));
    SplitMix64 nrng(substream(seed, 0x6e6f6973));
    std::vector<double> h(teacher_hidden);
    for (std::size_t r = 0; r < rows; ++r) {
        double* x = ds.features.data() + r * n_features;
        for (std::size_t c = 0; c < n_features; ++c) x[c] = xrng.uniform(-1.0, 1.0);
        for (std::size_t j = 0; j < teacher_hidden; ++j) {
            double acc = b1[j];
            for (std::size_t c = 0; c < n_features; ++c) acc += w1[j * n_features + c] * x[c];
            h[j] = std::tanh(acc);
        }
        double* y = ds.targets.data() + r * n_targets;
        for (std::size_t j = 0; j < n_targets; ++j) {
            double acc = b2[j];
            for (std::size_t k = 0; k < teacher_hidden; ++k) acc += w2[j * teacher_hidden + k] * h[k];
            y[j] = acc + noise_std * nrng.gaussian_pair().first;
        }
    }
    return ds;
}

}  // namespace cocd
