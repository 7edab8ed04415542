#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cocd/errors.hpp"

namespace cocd {

// One shaped tensor: row-major contiguous values.
struct ShapedParam {
    std::vector<std::size_t> dims;
    std::vector<double> values;

    ShapedParam() = default;
    explicit ShapedParam(std::vector<std::size_t> d, double fill = 0.0) : dims(std::move(d)) {
        std::size_t n = 1;
        for (std::size_t e : dims) {
            if (e == 0) throw ConfigError("ShapedParam: zero extent");
            n *= e;
        }
        values.assign(n, fill);
    }

    std::size_t numel() const { return values.size(); }
};

// Position of a flat index inside the tensor list.
struct FlatLocation {
    std::size_t param_idx = 0;
    std::size_t within_idx = 0;

    bool operator==(const FlatLocation&) const = default;
};

// Ordered collection of shaped tensors exposed as one virtual flat vector.
// Flattening is row-major within each tensor, tensors in declaration order.
// Single-writer; no internal synchronization.
class ParameterStore {
public:
    ParameterStore() = default;

    explicit ParameterStore(std::vector<ShapedParam> params) : params_(std::move(params)) {
        rebuild_offsets();
    }

    void add_param(ShapedParam p) {
        params_.push_back(std::move(p));
        rebuild_offsets();
    }

    std::size_t total_params() const { return total_; }
    std::size_t num_tensors() const { return params_.size(); }

    const std::vector<ShapedParam>& params() const { return params_; }
    ShapedParam& param(std::size_t i) { return params_.at(i); }
    const ShapedParam& param(std::size_t i) const { return params_.at(i); }
    std::size_t offset_of(std::size_t param_idx) const { return offsets_.at(param_idx); }

    // Flat index -> (tensor, element). O(log P); pass the previous result as a
    // hint for O(1) amortized sequential scans.
    FlatLocation locate(std::size_t flat_index) const {
        check_range(flat_index);
        // offsets_ has params_.size()+1 entries, last == total_
        std::size_t lo = 0, hi = params_.size();
        while (hi - lo > 1) {
            const std::size_t mid = (lo + hi) / 2;
            if (offsets_[mid] <= flat_index) lo = mid; else hi = mid;
        }
        return {lo, flat_index - offsets_[lo]};
    }

    FlatLocation locate(std::size_t flat_index, FlatLocation hint) const {
        check_range(flat_index);
        std::size_t p = hint.param_idx < params_.size() ? hint.param_idx : 0;
        if (offsets_[p] <= flat_index) {
            while (p + 1 < params_.size() && offsets_[p + 1] <= flat_index) ++p;
            return {p, flat_index - offsets_[p]};
        }
        return locate(flat_index);
    }

    double read_flat(std::size_t flat_index) const {
        const FlatLocation loc = locate(flat_index);
        return params_[loc.param_idx].values[loc.within_idx];
    }

    void write_flat(std::size_t flat_index, double value) {
        const FlatLocation loc = locate(flat_index);
        params_[loc.param_idx].values[loc.within_idx] = value;
    }

    // In-place additive perturbation of one coordinate.
    void perturb(std::size_t flat_index, double delta) {
        if (!std::isfinite(delta)) throw ConfigError("perturb: delta must be finite");
        const FlatLocation loc = locate(flat_index);
        params_[loc.param_idx].values[loc.within_idx] += delta;
    }

    // Walks `count` flat coordinates starting at start_flat as tensor-contiguous
    // chunks: fn(double* data, len, chunk_start_flat). Wraps modulo n only when
    // `wrap` is set; otherwise the span must fit inside [0, n).
    template <typename Fn>
    void chunk_walk(std::size_t start_flat, std::size_t count, bool wrap, Fn&& fn) {
        if (count == 0) return;
        if (!wrap && start_flat + count > total_)
            throw std::out_of_range("chunk span exceeds total parameter count");
        check_range(start_flat);
        FlatLocation loc = locate(start_flat);
        std::size_t flat = start_flat;
        std::size_t done = 0;
        while (done < count) {
            ShapedParam& p = params_[loc.param_idx];
            const std::size_t len = std::min(p.numel() - loc.within_idx, count - done);
            fn(p.values.data() + loc.within_idx, len, flat);
            done += len;
            loc.within_idx += len;
            flat += len;
            if (loc.within_idx >= p.numel()) {
                loc.within_idx = 0;
                ++loc.param_idx;
                if (loc.param_idx >= params_.size()) {
                    loc.param_idx = 0;
                    flat = 0;
                }
            }
        }
    }

    // x[start..start+k) -= scale * grads[k], crossing tensor boundaries in
    // place. No modular wraparound: callers wanting it split the span.
    void axpy_chunk(std::size_t start_flat, std::span<const double> grads, double scale) {
        if (grads.empty()) return;
        std::size_t k = 0;
        chunk_walk(start_flat, grads.size(), /*wrap=*/false,
                   [&](double* data, std::size_t len, std::size_t) {
                       for (std::size_t j = 0; j < len; ++j) data[j] -= scale * grads[k++];
                   });
    }

    // Copy of the full flat vector (diagnostics; not used by optimizer steps).
    std::vector<double> flat_copy() const {
        std::vector<double> out;
        out.reserve(total_);
        for (const auto& p : params_)
            out.insert(out.end(), p.values.begin(), p.values.end());
        return out;
    }

    void fill(double v) {
        for (auto& p : params_)
            for (double& x : p.values) x = v;
    }

    bool operator==(const ParameterStore& other) const {
        if (params_.size() != other.params_.size()) return false;
        for (std::size_t i = 0; i < params_.size(); ++i)
            if (params_[i].dims != other.params_[i].dims ||
                params_[i].values != other.params_[i].values)
                return false;
        return true;
    }

private:
    void rebuild_offsets() {
        offsets_.assign(1, 0);
        for (const auto& p : params_) offsets_.push_back(offsets_.back() + p.numel());
        total_ = offsets_.back();
    }

    void check_range(std::size_t flat_index) const {
        if (flat_index >= total_)
            throw std::out_of_range("flat index " + std::to_string(flat_index) +
                                    " out of range [0, " + std::to_string(total_) + ")");
    }

    std::vector<ShapedParam> params_;
    std::vector<std::size_t> offsets_{0};
    std::size_t total_ = 0;
};

namespace detail {
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace detail

// Checkpoint format: one scalar per line, plus a ".shape" manifest with one
// line of extents per tensor.
inline void save_store(const ParameterStore& store, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& p : store.params())
        for (double v : p.values) out << detail::format_double(v) << '\n';
    std::ofstream shp(path + ".shape");
    if (!shp) throw std::runtime_error("cannot write " + path + ".shape");
    for (const auto& p : store.params()) {
        for (std::size_t i = 0; i < p.dims.size(); ++i)
            shp << (i ? " " : "") << p.dims[i];
        shp << '\n';
    }
}

inline ParameterStore load_store(const std::string& path) {
    std::ifstream shp(path + ".shape");
    if (!shp) throw std::runtime_error("cannot read " + path + ".shape");
    std::vector<ShapedParam> params;
    std::string line;
    while (std::getline(shp, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::vector<std::size_t> dims;
        std::size_t d;
        while (ls >> d) dims.push_back(d);
        params.emplace_back(std::move(dims));
    }
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    for (auto& p : params)
        for (double& v : p.values)
            if (!(in >> v)) throw std::runtime_error("truncated store file " + path);
    return ParameterStore(std::move(params));
}

}  // namespace cocd
