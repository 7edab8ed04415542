#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cocd/dataset.hpp"
#include "cocd/errors.hpp"
#include "cocd/param_store.hpp"

namespace cocd {

// Query-counted scalar objective. evaluate() is deterministic given the store
// contents and batch; the counter increments exactly once per call and is
// atomic so concurrent evaluation of pure objectives stays well defined.
class Objective {
public:
    virtual ~Objective() = default;

    double evaluate(const ParameterStore& store, const BatchSpec* batch = nullptr) {
        queries_.fetch_add(1, std::memory_order_relaxed);
        return eval_impl(store, batch);
    }

    long long query_count() const { return queries_.load(std::memory_order_relaxed); }
    void reset_query_count() { queries_.store(0, std::memory_order_relaxed); }

    // Expected flat parameter count (0 = accepts any).
    virtual std::size_t dimension() const = 0;
    virtual std::string name() const = 0;

    // Analytic gradient for oracle use; objectives without one return false.
    virtual bool analytic_gradient(const ParameterStore&, std::span<double>) const { return false; }

private:
    virtual double eval_impl(const ParameterStore& store, const BatchSpec* batch) = 0;

    std::atomic<long long> queries_{0};
};

// f(x) = 1/2 * sum_i d_i (x_i - b_i)^2, d_i > 0. Smoothness L = max d_i and
// PL constant mu = min d_i are exact.
class QuadraticObjective : public Objective {
public:
    QuadraticObjective(std::vector<double> diag, std::vector<double> shift)
        : diag_(std::move(diag)), shift_(std::move(shift)) {
        if (diag_.empty() || diag_.size() != shift_.size())
            throw ConfigError("quadratic: diag and shift must be non-empty and equal length");
        for (double d : diag_)
            if (!(d > 0.0)) throw ConfigError("quadratic: all diagonal entries must be positive");
    }

    std::size_t dimension() const override { return diag_.size(); }
    std::string name() const override { return "quadratic"; }

    double lipschitz_L() const {
        double m = diag_[0];
        for (double d : diag_) m = std::max(m, d);
        return m;
    }
    double pl_mu() const {
        double m = diag_[0];
        for (double d : diag_) m = std::min(m, d);
        return m;
    }
    double f_star() const { return 0.0; }

    bool analytic_gradient(const ParameterStore& store, std::span<double> out) const override {
        std::size_t i = 0;
        for (const auto& p : store.params())
            for (double x : p.values) {
                out[i] = diag_[i] * (x - shift_[i]);
                ++i;
            }
        return true;
    }

private:
    double eval_impl(const ParameterStore& store, const BatchSpec*) override {
        if (store.total_params() != diag_.size())
            throw ConfigError("quadratic: store has " + std::to_string(store.total_params()) +
                              " parameters, expected " + std::to_string(diag_.size()));
        double acc = 0.0;
        std::size_t i = 0;
        for (const auto& p : store.params())
            for (double x : p.values) {
                const double r = x - shift_[i];
                acc += diag_[i] * r * r;
                ++i;
            }
        return 0.5 * acc;
    }

    std::vector<double> diag_;
    std::vector<double> shift_;
};

// Chained Rosenbrock, global minimum f(1,...,1) = 0.
class RosenbrockObjective : public Objective {
public:
    explicit RosenbrockObjective(std::size_t n) : n_(n) {
        if (n < 2) throw ConfigError("rosenbrock: n must be >= 2");
    }

    std::size_t dimension() const override { return n_; }
    std::string name() const override { return "rosenbrock"; }

private:
    double eval_impl(const ParameterStore& store, const BatchSpec*) override {
        double acc = 0.0;
        double prev = 0.0;
        bool have_prev = false;
        for (const auto& p : store.params())
            for (double x : p.values) {
                if (have_prev) {
                    const double a = x - prev * prev;
                    const double b = 1.0 - prev;
                    acc += 100.0 * a * a + b * b;
                }
                prev = x;
                have_prev = true;
            }
        return acc;
    }

    std::size_t n_;
};

// f(x) = 1/2 ||x||^2 + a * sum_i sin(w x_i). The sine ripple makes the raw
// landscape stiff (L = 1 + a w^2) while wide finite differences damp it.
class OscillatoryQuadraticObjective : public Objective {
public:
    OscillatoryQuadraticObjective(double amplitude, double frequency, std::size_t n)
        : amp_(amplitude), freq_(frequency), n_(n) {
        if (amp_ < 0.0) throw ConfigError("oscillatory: amplitude must be >= 0");
        if (!(freq_ > 0.0)) throw ConfigError("oscillatory: frequency must be > 0");
    }

    std::size_t dimension() const override { return n_; }
    std::string name() const override { return "oscillatory"; }

    double amplitude() const { return amp_; }
    double frequency() const { return freq_; }
    double lipschitz_L() const { return 1.0 + amp_ * freq_ * freq_; }

    bool analytic_gradient(const ParameterStore& store, std::span<double> out) const override {
        std::size_t i = 0;
        for (const auto& p : store.params())
            for (double x : p.values) {
                out[i] = x + amp_ * freq_ * std::cos(freq_ * x);
                ++i;
            }
        return true;
    }

private:
    double eval_impl(const ParameterStore& store, const BatchSpec*) override {
        double acc = 0.0;
        for (const auto& p : store.params())
            for (double x : p.values) acc += 0.5 * x * x + amp_ * std::sin(freq_ * x);
        return acc;
    }

    double amp_;
    double freq_;
    std::size_t n_;
};

// Convenience for tests and the harness: one flat tensor of length n.
inline ParameterStore make_flat_store(std::size_t n, double fill = 0.0) {
    return ParameterStore({ShapedParam({n}, fill)});
}

}  // namespace cocd
