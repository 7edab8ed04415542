#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cocd/errors.hpp"
#include "cocd/objective.hpp"
#include "cocd/optimizer.hpp"
#include "cocd/param_store.hpp"
#include "cocd/rng.hpp"

namespace cocd {

enum class ZoDistribution { Rademacher, Gaussian };

// Knobs for the randomized zeroth-order baselines. Probes are antithetic
// (two-sided), so queries per step = 2 * samples_q.
struct RandomizedZoConfig {
    double alpha = 1e-3;
    double epsilon = 1e-3;
    std::size_t samples_q = 1;
    std::uint64_t seed = 0;
    ZoDistribution dist = ZoDistribution::Rademacher;

    void validate() const {
        if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
        if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
        if (samples_q < 1) throw ConfigError("samples_q must be >= 1");
    }
};

// Per-method query accounting; cumulative excludes verification probes.
struct BudgetLedger {
    long long queries_per_step = 0;
    long long cumulative = 0;

    void record(long long used) { cumulative += used; }
};

namespace detail_zo {

// Direction stream for (seed, step, sample): independent of batch shuffling
// and of evaluation order.
inline void fill_direction(std::vector<double>& dir, ZoDistribution dist, std::uint64_t seed,
                           std::uint64_t step, std::uint64_t sample) {
    SplitMix64 rng(substream(seed, 0x64697273, step, sample));
    if (dist == ZoDistribution::Rademacher) {
        for (double& d : dir) d = rng.rademacher();
    } else {
        for (std::size_t i = 0; i + 1 < dir.size(); i += 2) {
            const auto [a, b] = rng.gaussian_pair();
            dir[i] = a;
            dir[i + 1] = b;
        }
        if (dir.size() % 2 == 1) dir.back() = rng.gaussian_pair().first;
    }
}

inline void write_all(ParameterStore& store, const std::vector<double>& flat) {
    std::size_t i = 0;
    for (std::size_t p = 0; p < store.num_tensors(); ++p)
        for (double& v : store.param(p).values) v = flat[i++];
}

inline double eval_at(ParameterStore& store, Objective& f, const std::vector<double>& base,
                      const std::vector<double>& dir, double scale, const BatchSpec* batch) {
    std::size_t i = 0;
    for (std::size_t p = 0; p < store.num_tensors(); ++p)
        for (double& v : store.param(p).values) {
            v = base[i] + scale * dir[i];
            ++i;
        }
    const double val = f.evaluate(store, batch);
    if (!std::isfinite(val)) {
        write_all(store, base);
        throw EvaluationError("non-finite objective at randomized probe");
    }
    return val;
}

}  // namespace detail_zo

// One antithetic estimate per direction: ghat_i = (f(x+eps*D)-f(x-eps*D)) /
// (2*eps*D_i) for Rademacher D, averaged over samples_q draws.
inline std::vector<double> spsa_gradient_estimate(Objective& f, ParameterStore& store,
                                                  double epsilon,
                                                  const std::vector<std::vector<double>>& deltas,
                                                  const BatchSpec* batch = nullptr) {
    const std::size_t n = store.total_params();
    const std::vector<double> base = store.flat_copy();
    std::vector<double> ghat(n, 0.0);
    for (const auto& delta : deltas) {
        const double fp = detail_zo::eval_at(store, f, base, delta, epsilon, batch);
        const double fm = detail_zo::eval_at(store, f, base, delta, -epsilon, batch);
        const double q = (fp - fm) / (2.0 * epsilon);
        for (std::size_t i = 0; i < n; ++i) ghat[i] += q / delta[i];
    }
    detail_zo::write_all(store, base);
    const double inv = 1.0 / static_cast<double>(deltas.size());
    for (double& g : ghat) g *= inv;
    return ghat;
}

// Gaussian-smoothing estimate: mean over samples of ((f(x+eps*u)-f(x-eps*u)) /
// (2*eps)) * u with unnormalized u ~ N(0, I).
inline std::vector<double> zo_sgd_gradient_estimate(Objective& f, ParameterStore& store,
                                                    double epsilon,
                                                    const std::vector<std::vector<double>>& dirs,
                                                    const BatchSpec* batch = nullptr) {
    const std::size_t n = store.total_params();
    const std::vector<double> base = store.flat_copy();
    std::vector<double> ghat(n, 0.0);
    for (const auto& u : dirs) {
        const double fp = detail_zo::eval_at(store, f, base, u, epsilon, batch);
        const double fm = detail_zo::eval_at(store, f, base, u, -epsilon, batch);
        const double q = (fp - fm) / (2.0 * epsilon);
        for (std::size_t i = 0; i < n; ++i) ghat[i] += q * u[i];
    }
    detail_zo::write_all(store, base);
    const double inv = 1.0 / static_cast<double>(dirs.size());
    for (double& g : ghat) g *= inv;
    return ghat;
}

namespace detail_zo {

inline StepTrace randomized_step(ParameterStore& store, Objective& f,
                                 const RandomizedZoConfig& cfg, const BatchSpec* batch,
                                 std::uint64_t step_index, bool trace_loss) {
    cfg.validate();
    const std::size_t n = store.total_params();
    std::vector<std::vector<double>> dirs(cfg.samples_q, std::vector<double>(n));
    for (std::size_t s = 0; s < cfg.samples_q; ++s)
        fill_direction(dirs[s], cfg.dist, cfg.seed, step_index, s);
    const std::vector<double> ghat =
        cfg.dist == ZoDistribution::Rademacher
            ? spsa_gradient_estimate(f, store, cfg.epsilon, dirs, batch)
            : zo_sgd_gradient_estimate(f, store, cfg.epsilon, dirs, batch);

    StepTrace trace;
    trace.step = static_cast<long long>(step_index) + 1;
    double sq = 0.0;
    std::size_t i = 0;
    for (std::size_t p = 0; p < store.num_tensors(); ++p)
        for (double& v : store.param(p).values) {
            const double old = v;
            const double nw = old - cfg.alpha * ghat[i++];
            if (!std::isfinite(nw))
                throw EvaluationError("non-finite parameter after randomized update");
            const double d = nw - old;
            sq += d * d;
            v = nw;
        }
    trace.step_norm = std::sqrt(sq);
    trace.queries_used = 2 * static_cast<long long>(cfg.samples_q);
    if (trace_loss) trace.loss = f.evaluate(store, batch);
    return trace;
}

}  // namespace detail_zo

inline StepTrace spsa_step(ParameterStore& store, Objective& f, const RandomizedZoConfig& cfg,
                           const BatchSpec* batch = nullptr, std::uint64_t step_index = 0,
                           bool trace_loss = true) {
    RandomizedZoConfig c = cfg;
    c.dist = ZoDistribution::Rademacher;
    return detail_zo::randomized_step(store, f, c, batch, step_index, trace_loss);
}

inline StepTrace zo_sgd_step(ParameterStore& store, Objective& f, const RandomizedZoConfig& cfg,
                             const BatchSpec* batch = nullptr, std::uint64_t step_index = 0,
                             bool trace_loss = true) {
    RandomizedZoConfig c = cfg;
    c.dist = ZoDistribution::Gaussian;
    return detail_zo::randomized_step(store, f, c, batch, step_index, trace_loss);
}

// Full coordinate-wise finite-difference descent (2n queries per step).
// Implemented as a single full-budget buffer update so the arithmetic is
// bit-identical to the cyclic optimizer at B = n, m = n.
inline StepTrace full_fd_gd_step(ParameterStore& store, Objective& f, const OptimizerConfig& cfg,
                                 const BatchSpec* batch = nullptr, std::uint64_t step_index = 0) {
    const std::size_t n = store.total_params();
    OptimizerConfig full = cfg;
    full.budget_B = n;
    full.memory_m = n;
    full.gamma = 1.0;  // irrelevant at B = n: every entry is overwritten
    GradientBuffer buf(n, n);
    StepTrace trace = step(buf, store, f, full, batch);
    trace.step = static_cast<long long>(step_index) + 1;
    trace.grad_diff = std::numeric_limits<double>::quiet_NaN();  // no persistent buffer
    return trace;
}

// Classical block cyclic coordinate descent: the cyclic optimizer with the
// buffer cleared each step (gamma = 0). The interval defaults to 1e-6, which
// works best for plain coordinate descent, unless explicitly overridden.
class BccdOptimizer {
public:
    BccdOptimizer(OptimizerConfig cfg, const ParameterStore& store,
                  std::optional<double> epsilon_override = std::nullopt)
        : cfg_(cfg) {
        cfg_.gamma = 0.0;
        cfg_.epsilon = epsilon_override.value_or(1e-6);
        cfg_ = cfg_.resolved(store.total_params());
        buf_.emplace(store.total_params(), cfg_.memory_m);
    }

    StepTrace step(ParameterStore& store, Objective& f, const BatchSpec* batch = nullptr) {
        return cocd::step(*buf_, store, f, cfg_, batch);
    }

    const GradientBuffer& state() const { return *buf_; }
    const OptimizerConfig& config() const { return cfg_; }

private:
    OptimizerConfig cfg_;
    std::optional<GradientBuffer> buf_;
};

}  // namespace cocd
