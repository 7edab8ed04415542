#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cocd/dataset.hpp"
#include "cocd/errors.hpp"
#include "cocd/objective.hpp"
#include "cocd/param_store.hpp"
#include "cocd/rng.hpp"

namespace cocd {

enum class Activation { Tanh, Relu };

// Fully connected layer widths input -> hidden... -> output. Tanh is the
// default for regression; relu breaks the smoothness assumed by the
// convergence analysis and is only provided for experimentation.
struct MlpSpec {
    std::vector<std::size_t> widths;
    Activation activation = Activation::Tanh;

    void validate() const {
        if (widths.size() < 2) throw ConfigError("mlp: need at least input and output widths");
        for (std::size_t w : widths)
            if (w == 0) throw ConfigError("mlp: layer widths must be >= 1");
    }

    std::size_t n_layers() const { return widths.size() - 1; }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l + 1 < widths.size(); ++l)
            n += widths[l] * widths[l + 1] + widths[l + 1];
        return n;
    }
};

// Layout: per layer, weight matrix [out x in] (row-major) then bias [out].
inline ParameterStore make_mlp_store(const MlpSpec& spec) {
    spec.validate();
    std::vector<ShapedParam> params;
    for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
        params.emplace_back(std::vector<std::size_t>{spec.widths[l + 1], spec.widths[l]});
        params.emplace_back(std::vector<std::size_t>{spec.widths[l + 1]});
    }
    return ParameterStore(std::move(params));
}

// Seeded uniform weights in [-s, s] with s = 1/sqrt(fan_in); biases zero.
inline void init_mlp_store(ParameterStore& store, const MlpSpec& spec, std::uint64_t seed) {
    SplitMix64 rng(substream(seed, 0x696e6974));
    for (std::size_t l = 0; l + 1 < spec.widths.size(); ++l) {
        const double s = 1.0 / std::sqrt(static_cast<double>(spec.widths[l]));
        for (double& v : store.param(2 * l).values) v = rng.uniform(-s, s);
        for (double& v : store.param(2 * l + 1).values) v = 0.0;
    }
}

// Mean squared error of the MLP forward pass over a batch (all rows when no
// batch is given): mean over rows of mean over targets of squared error.
// The last layer is linear. Scratch buffers are preallocated so evaluation
// performs no heap allocation; use one instance per thread.
class MlpRegressionObjective : public Objective {
public:
    MlpRegressionObjective(MlpSpec spec, Dataset dataset)
        : spec_(std::move(spec)), data_(std::move(dataset)) {
        spec_.validate();
        if (spec_.widths.front() != data_.n_features || spec_.widths.back() != data_.n_targets)
            throw ConfigError("mlp: spec widths (" + std::to_string(spec_.widths.front()) + "->" +
                              std::to_string(spec_.widths.back()) + ") do not match dataset (" +
                              std::to_string(data_.n_features) + "->" +
                              std::to_string(data_.n_targets) + ")");
        std::size_t wmax = 0;
        for (std::size_t w : spec_.widths) wmax = std::max(wmax, w);
        h_a_.resize(wmax);
        h_b_.resize(wmax);
    }

    std::size_t dimension() const override { return spec_.param_count(); }
    std::string name() const override { return "mlp"; }

    const MlpSpec& spec() const { return spec_; }
    const Dataset& dataset() const { return data_; }

private:
    double eval_impl(const ParameterStore& store, const BatchSpec* batch) override {
        if (store.total_params() != spec_.param_count())
            throw ConfigError("mlp: store has " + std::to_string(store.total_params()) +
                              " parameters, expected " + std::to_string(spec_.param_count()));
        const std::size_t rows = batch ? batch->indices.size() : data_.rows();
        if (rows == 0) return 0.0;
        double total = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t row = batch ? batch->indices[r] : r;
            const double* out = forward_row(store, data_.feature_row(row));
            const double* y = data_.target_row(row);
            double se = 0.0;
            for (std::size_t j = 0; j < data_.n_targets; ++j) {
                const double e = out[j] - y[j];
                se += e * e;
            }
            total += se / static_cast<double>(data_.n_targets);
        }
        return total / static_cast<double>(rows);
    }

    const double* forward_row(const ParameterStore& store, const double* x) {
        const std::size_t L = spec_.n_layers();
        double* cur = h_a_.data();
        for (std::size_t c = 0; c < spec_.widths[0]; ++c) cur[c] = x[c];
        double* nxt = h_b_.data();
        for (std::size_t l = 0; l < L; ++l) {
            const std::size_t in = spec_.widths[l];
            const std::size_t out = spec_.widths[l + 1];
            const double* W = store.param(2 * l).values.data();
            const double* b = store.param(2 * l + 1).values.data();
            for (std::size_t j = 0; j < out; ++j) {
                const double* wrow = W + j * in;
                double acc = b[j];
                for (std::size_t i = 0; i < in; ++i) acc += wrow[i] * cur[i];
                if (l + 1 < L) {
                    acc = spec_.activation == Activation::Tanh ? std::tanh(acc)
                                                               : (acc > 0.0 ? acc : 0.0);
                }
                nxt[j] = acc;
            }
            std::swap(cur, nxt);
        }
        return cur;
    }

    MlpSpec spec_;
    Dataset data_;
    std::vector<double> h_a_, h_b_;
};

}  // namespace cocd
