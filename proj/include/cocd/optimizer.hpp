#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "cocd/errors.hpp"
#include "cocd/objective.hpp"
#include "cocd/param_store.hpp"

namespace cocd {

enum class FdScheme { Central, Forward };

// Placement of the length-m descent window when m < n. Sliding keeps the
// window aligned with the refresh head so it always ends at the freshest
// entry; Fixed leaves the offsets at zero.
enum class DescentWindow { Sliding, Fixed };

struct OptimizerConfig {
    double alpha = 1e-3;        // learning rate
    double gamma = 1.0;         // buffer decay in [0, 1]
    double epsilon = 1e-3;      // finite-difference interval
    std::size_t budget_B = 1;   // coordinate refreshes per step
    std::size_t memory_m = 0;   // buffer length; 0 = full (n)
    FdScheme fd_scheme = FdScheme::Central;
    double weight_decay = 0.0;  // decoupled, applied inside the descent window
    DescentWindow descent_window = DescentWindow::Sliding;
    bool trace_loss = true;     // one diagnostic evaluation per step

    void validate() const {
        if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0");
        if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in [0,1]");
        if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
        if (budget_B < 1) throw ConfigError("budget must be >= 1");
        if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    }

    // Binds the config to a concrete dimension: fills m = n when unset,
    // clamps B to n (one full sweep is the maximum meaningful budget), and
    // checks 1 <= m <= n and B <= m.
    OptimizerConfig resolved(std::size_t n, std::vector<std::string>* warnings = nullptr) const {
        validate();
        if (n == 0) throw ConfigError("cannot optimize an empty parameter store");
        OptimizerConfig r = *this;
        if (r.budget_B > n) {
            if (warnings)
                warnings->push_back("budget " + std::to_string(r.budget_B) + " clamped to n = " +
                                    std::to_string(n));
            r.budget_B = n;
        }
        if (r.memory_m == 0) r.memory_m = n;
        if (r.memory_m > n) throw ConfigError("memory m must be <= n");
        if (r.budget_B > r.memory_m)
            throw ConfigError("budget B (" + std::to_string(r.budget_B) +
                              ") must not exceed memory m (" + std::to_string(r.memory_m) +
                              "): a step must not overwrite its own fresh entries");
        return r;
    }
};

// Per-step metrics. queries_used counts only the optimizer's own budget
// queries; the loss diagnostic and any verification probes are accounted
// separately by the caller.
struct StepTrace {
    long long step = 0;
    double loss = std::numeric_limits<double>::quiet_NaN();
    double step_norm = 0.0;
    long long queries_used = 0;
    double grad_diff = std::numeric_limits<double>::quiet_NaN();
    double staleness_error = std::numeric_limits<double>::quiet_NaN();
    double bound = std::numeric_limits<double>::quiet_NaN();
};

// 1-based cyclic successor of the active coordinate index. Internal pointer
// arithmetic is 0-based; this helper exists for the documented 1-based rule.
inline std::size_t advance_cycle(std::size_t i, std::size_t n) { return (i % n) + 1; }

// Coordinate-wise finite difference at one flat index. The store is restored
// bit-exactly afterwards. Central consumes 2 queries; forward consumes 1 when
// a cached base value is supplied, else 2.
inline double coordinate_fd(Objective& f, ParameterStore& store, std::size_t flat_index,
                            double epsilon, const BatchSpec* batch = nullptr,
                            FdScheme scheme = FdScheme::Central,
                            double base = std::numeric_limits<double>::quiet_NaN()) {
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
    const FlatLocation loc = store.locate(flat_index);
    double& x = store.param(loc.param_idx).values[loc.within_idx];
    const double v_old = x;
    if (scheme == FdScheme::Central) {
        x = v_old + epsilon;
        const double fp = f.evaluate(store, batch);
        x = v_old - epsilon;
        const double fm = f.evaluate(store, batch);
        x = v_old;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw EvaluationError("non-finite objective at probe of coordinate " +
                                  std::to_string(flat_index) + " (x = " +
                                  detail::format_double(v_old) + ", eps = " +
                                  detail::format_double(epsilon) + ")");
        return (fp - fm) / (2.0 * epsilon);
    }
    if (std::isnan(base)) base = f.evaluate(store, batch);
    x = v_old + epsilon;
    const double fp = f.evaluate(store, batch);
    x = v_old;
    if (!std::isfinite(fp) || !std::isfinite(base))
        throw EvaluationError("non-finite objective at probe of coordinate " +
                              std::to_string(flat_index));
    return (fp - base) / epsilon;
}

// Optimizer state: the circular gradient buffer plus the refresh pointers and
// descent offsets. Persistent storage is exactly m scalars and a fixed set of
// integer counters.
class GradientBuffer {
public:
    GradientBuffer(std::size_t n, std::size_t m) : n_(n), m_(m), values_(m, 0.0) {
        if (m == 0 || m > n) throw ConfigError("memory m must satisfy 1 <= m <= n");
    }

    static GradientBuffer for_store(const ParameterStore& store, const OptimizerConfig& cfg) {
        const OptimizerConfig r = cfg.resolved(store.total_params());
        return GradientBuffer(store.total_params(), r.memory_m);
    }

    std::size_t n() const { return n_; }
    std::size_t memory() const { return m_; }
    std::vector<double>& values() { return values_; }
    const std::vector<double>& values() const { return values_; }

    std::size_t cur_grad_idx() const { return cur_grad_idx_; }
    std::size_t cur_param_idx() const { return cur_param_idx_; }
    std::size_t cur_weight_idx() const { return cur_weight_idx_; }
    std::size_t grad_offset() const { return grad_offset_; }
    std::size_t param_offset() const { return param_offset_; }
    std::size_t weight_offset() const { return weight_offset_; }
    std::uint64_t step_count() const { return step_count_; }
    std::uint64_t refresh_count() const { return refresh_count_; }

    // State-size introspection: m scalars plus a constant number of integers.
    std::size_t scalar_state_size() const { return values_.size(); }
    static constexpr std::size_t integer_state_count() { return 10; }

    // The flat coordinate the next refresh will touch.
    std::size_t refresh_flat(const ParameterStore& store) const {
        return store.offset_of(cur_param_idx_) + cur_weight_idx_;
    }

    // Buffer slot s holds the estimate for flat coordinate (c mod n) where c
    // is the most recent refresh count with c mod m == s. Entries older than
    // the m most recent refreshes are logically zero.
    std::vector<double> logical_flat() const {
        std::vector<double> out(n_, 0.0);
        const std::uint64_t lo = refresh_count_ > m_ ? refresh_count_ - m_ : 0;
        for (std::uint64_t c = lo; c < refresh_count_; ++c)
            out[static_cast<std::size_t>(c % n_)] = values_[static_cast<std::size_t>(c % m_)];
        return out;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write " + path);
        out << m_ << '\n';
        for (double v : values_) out << detail::format_double(v) << '\n';
        out << cur_grad_idx_ << '\n' << cur_param_idx_ << '\n' << cur_weight_idx_ << '\n'
            << grad_offset_ << '\n' << param_offset_ << '\n' << weight_offset_ << '\n'
            << step_count_ << '\n' << refresh_count_ << '\n';
    }

    void load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot read " + path);
        std::size_t m = 0;
        if (!(in >> m) || m != m_)
            throw ConfigError("checkpoint memory length mismatch in " + path);
        for (double& v : values_)
            if (!(in >> v)) throw std::runtime_error("truncated checkpoint " + path);
        if (!(in >> cur_grad_idx_ >> cur_param_idx_ >> cur_weight_idx_ >> grad_offset_ >>
              param_offset_ >> weight_offset_ >> step_count_ >> refresh_count_))
            throw std::runtime_error("truncated checkpoint " + path);
    }

private:
    friend void decay(GradientBuffer&, double);
    template <typename Hook>
    friend void refresh_core(GradientBuffer&, Objective&, ParameterStore&, const OptimizerConfig&,
                             const BatchSpec*, Hook&&);
    friend double optimize(GradientBuffer&, ParameterStore&, const OptimizerConfig&);
    template <typename MidHook>
    friend StepTrace step_with_hook(GradientBuffer&, ParameterStore&, Objective&,
                                    const OptimizerConfig&, const BatchSpec*, MidHook&&);

    std::size_t n_;
    std::size_t m_;
    std::vector<double> values_;
    // refresh pointers (advance during the refresh phase)
    std::size_t cur_grad_idx_ = 0;
    std::size_t cur_param_idx_ = 0;
    std::size_t cur_weight_idx_ = 0;
    // descent-window offsets (recorded each optimize; advance by B per step)
    std::size_t grad_offset_ = 0;
    std::size_t param_offset_ = 0;
    std::size_t weight_offset_ = 0;
    std::uint64_t step_count_ = 0;
    std::uint64_t refresh_count_ = 0;
};

// ghat <- gamma * ghat, in place.
inline void decay(GradientBuffer& buf, double gamma) {
    for (double& v : buf.values_) v = gamma * v;
}

// Refreshes B coordinates in cyclic order starting at the current refresh
// pointers. hook(slot, old_value, fresh_value) fires before each overwrite.
// On a non-finite evaluation the perturbed coordinate is restored, pointers
// roll back to their values at entry, and the error propagates.
template <typename Hook>
void refresh_core(GradientBuffer& buf, Objective& f, ParameterStore& store,
                  const OptimizerConfig& cfg, const BatchSpec* batch, Hook&& hook) {
    if (store.total_params() != buf.n_)
        throw ConfigError("store dimension does not match optimizer state");
    const std::size_t saved_grad = buf.cur_grad_idx_;
    const std::size_t saved_param = buf.cur_param_idx_;
    const std::size_t saved_weight = buf.cur_weight_idx_;
    const std::uint64_t saved_count = buf.refresh_count_;
    double base = std::numeric_limits<double>::quiet_NaN();
    try {
        if (cfg.fd_scheme == FdScheme::Forward) {
            base = f.evaluate(store, batch);
            if (!std::isfinite(base)) throw EvaluationError("non-finite objective at base point");
        }
        for (std::size_t k = 0; k < cfg.budget_B; ++k) {
            double& x = store.param(buf.cur_param_idx_).values[buf.cur_weight_idx_];
            const double v_old = x;
            double fresh;
            if (cfg.fd_scheme == FdScheme::Central) {
                x = v_old + cfg.epsilon;
                const double fp = f.evaluate(store, batch);
                x = v_old - cfg.epsilon;
                const double fm = f.evaluate(store, batch);
                x = v_old;
                if (!std::isfinite(fp) || !std::isfinite(fm))
                    throw EvaluationError(
                        "non-finite objective at probe of coordinate " +
                        std::to_string(buf.refresh_flat(store)) + " (step " +
                        std::to_string(buf.step_count_) + ")");
                fresh = (fp - fm) / (2.0 * cfg.epsilon);
            } else {
                x = v_old + cfg.epsilon;
                const double fp = f.evaluate(store, batch);
                x = v_old;
                if (!std::isfinite(fp))
                    throw EvaluationError(
                        "non-finite objective at probe of coordinate " +
                        std::to_string(buf.refresh_flat(store)) + " (step " +
                        std::to_string(buf.step_count_) + ")");
                fresh = (fp - base) / cfg.epsilon;
            }
            hook(buf.cur_grad_idx_, buf.values_[buf.cur_grad_idx_], fresh);
            buf.values_[buf.cur_grad_idx_] = fresh;
            // pointer update: grad slot wraps mod m, weight/param walk tensors
            buf.cur_grad_idx_ = (buf.cur_grad_idx_ + 1) % buf.m_;
            buf.cur_weight_idx_ += 1;
            if (buf.cur_weight_idx_ >= store.param(buf.cur_param_idx_).numel()) {
                buf.cur_weight_idx_ = 0;
                buf.cur_param_idx_ = (buf.cur_param_idx_ + 1) % store.num_tensors();
            }
            buf.refresh_count_ += 1;
        }
    } catch (...) {
        buf.cur_grad_idx_ = saved_grad;
        buf.cur_param_idx_ = saved_param;
        buf.cur_weight_idx_ = saved_weight;
        buf.refresh_count_ = saved_count;
        throw;
    }
}

inline void refresh(GradientBuffer& buf, Objective& f, ParameterStore& store,
                    const OptimizerConfig& cfg, const BatchSpec* batch = nullptr) {
    refresh_core(buf, f, store, cfg, batch, [](std::size_t, double, double) {});
}

// Applies x <- x - alpha * (ghat + weight_decay * x) over the m-coordinate
// descent window, chunk-wise and in place. Returns ||x_new - x_old||.
inline double optimize(GradientBuffer& buf, ParameterStore& store, const OptimizerConfig& cfg) {
    if (store.total_params() != buf.n_)
        throw ConfigError("store dimension does not match optimizer state");
    std::size_t g_start, coord_start;
    if (cfg.descent_window == DescentWindow::Sliding) {
        // Window of the m most recent refreshes: starts at the oldest live
        // slot (== the refresh head) and ends at the freshest coordinate.
        g_start = buf.cur_grad_idx_;
        const std::size_t head = buf.refresh_flat(store);
        coord_start = (head + buf.n_ - (buf.m_ % buf.n_)) % buf.n_;
    } else {
        g_start = buf.grad_offset_;
        coord_start = (store.offset_of(buf.param_offset_) + buf.weight_offset_) % buf.n_;
    }

    const double alpha = cfg.alpha;
    const double lambda = cfg.weight_decay;
    double sq = 0.0;
    std::size_t g = g_start;
    store.chunk_walk(coord_start, buf.m_, /*wrap=*/true,
                     [&](double* data, std::size_t len, std::size_t chunk_flat) {
                         std::size_t done = 0;
                         while (done < len) {
                             const std::size_t seg = std::min(len - done, buf.m_ - g);
                             const double* gv = buf.values_.data() + g;
                             for (std::size_t j = 0; j < seg; ++j) {
                                 const double old = data[done + j];
                                 const double nw = old - alpha * (gv[j] + lambda * old);
                                 if (!std::isfinite(nw))
                                     throw EvaluationError(
                                         "non-finite parameter after update at coordinate " +
                                         std::to_string(chunk_flat + done + j));
                                 const double d = nw - old;
                                 sq += d * d;
                                 data[done + j] = nw;
                             }
                             g = (g + seg) % buf.m_;
                             done += seg;
                         }
                     });

    // record the window used so the checkpointed offsets advance by B per step
    const FlatLocation loc = store.locate(coord_start);
    buf.grad_offset_ = g_start;
    buf.param_offset_ = loc.param_idx;
    buf.weight_offset_ = loc.within_idx;
    return std::sqrt(sq);
}

// One full update: decay -> refresh -> descend, in that order. Decay of the
// slots about to be overwritten is folded into the refresh so the change
// ||ghat_t - ghat_{t-1}|| can be accumulated without a second buffer; the
// resulting state is identical to running the phases separately.
//
// mid(buf, store) fires between refresh and descent, when the buffer and the
// iterate refer to the same point; verification probes hook in here.
template <typename MidHook>
StepTrace step_with_hook(GradientBuffer& buf, ParameterStore& store, Objective& f,
                         const OptimizerConfig& raw_cfg, const BatchSpec* batch, MidHook&& mid) {
    const OptimizerConfig cfg = raw_cfg.resolved(store.total_params());
    if (cfg.memory_m != buf.m_) throw ConfigError("config memory m does not match buffer length");

    const std::size_t B = cfg.budget_B;
    const std::size_t m = buf.m_;
    const std::size_t start = buf.cur_grad_idx_;
    double gd2 = 0.0;

    // decay all slots outside the upcoming refresh range [start, start + B)
    for (std::size_t s = 0; s < m; ++s) {
        if ((s + m - start) % m < B) continue;  // will be overwritten below
        const double v = buf.values_[s];
        const double d = (cfg.gamma - 1.0) * v;
        gd2 += d * d;
        buf.values_[s] = cfg.gamma * v;
    }

    refresh_core(buf, f, store, cfg, batch, [&](std::size_t, double old, double fresh) {
        const double d = fresh - old;
        gd2 += d * d;
    });

    StepTrace trace;
    mid(const_cast<const GradientBuffer&>(buf), store, trace);
    trace.step_norm = optimize(buf, store, cfg);
    buf.step_count_ += 1;
    trace.step = static_cast<long long>(buf.step_count_);
    trace.grad_diff = std::sqrt(gd2);
    trace.queries_used = cfg.fd_scheme == FdScheme::Central
                             ? 2 * static_cast<long long>(B)
                             : static_cast<long long>(B) + 1;
    if (cfg.trace_loss) {
        trace.loss = f.evaluate(store, batch);
        if (!std::isfinite(trace.loss))
            throw EvaluationError("non-finite loss after step " + std::to_string(trace.step));
    }
    return trace;
}

inline StepTrace step(GradientBuffer& buf, ParameterStore& store, Objective& f,
                      const OptimizerConfig& raw_cfg, const BatchSpec* batch = nullptr) {
    return step_with_hook(buf, store, f, raw_cfg, batch,
                          [](const GradientBuffer&, ParameterStore&, StepTrace&) {});
}

inline long long queries_per_step(const OptimizerConfig& cfg, std::size_t n) {
    const OptimizerConfig r = cfg.resolved(n);
    return r.fd_scheme == FdScheme::Central ? 2 * static_cast<long long>(r.budget_B)
                                            : static_cast<long long>(r.budget_B) + 1;
}

}  // namespace cocd
