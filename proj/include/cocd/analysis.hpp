#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "cocd/errors.hpp"
#include "cocd/objective.hpp"
#include "cocd/optimizer.hpp"
#include "cocd/param_store.hpp"
#include "cocd/rng.hpp"

namespace cocd {

// Staleness bound on ||ghat_t - fd_grad(x_t)||: with K = floor(n/B) and
// r = n mod B, the error is at most (L_eps * delta / 2) * (B*K*(K-1) + 2*r*K).
// Zero at B = n, where the buffer is fully refreshed every step.
inline double error_bound(std::size_t n, std::size_t B, double L_eps, double delta) {
    if (B < 1 || B > n) throw ConfigError("error_bound requires 1 <= B <= n");
    if (L_eps < 0.0 || delta < 0.0) throw ConfigError("error_bound requires L_eps, delta >= 0");
    const double K = std::floor(static_cast<double>(n) / static_cast<double>(B));
    const double r = static_cast<double>(n % B);
    const double Bf = static_cast<double>(B);
    return 0.5 * L_eps * delta * (Bf * K * (K - 1.0) + 2.0 * r * K);
}

// tau = n/B - 1 when B divides n; otherwise ceil(n/B) - 1 with a
// divisibility warning via the out-flag.
inline double staleness_factor(std::size_t n, std::size_t B, bool* divisible = nullptr) {
    if (B < 1) throw ConfigError("staleness_factor requires B >= 1");
    const bool exact = (n % B) == 0;
    if (divisible) *divisible = exact;
    if (exact) return static_cast<double>(n / B) - 1.0;
    return static_cast<double>((n + B - 1) / B) - 1.0;
}

struct StabilityConstants {
    double c1 = 0.0;
    double c2 = 0.0;
};

// C1 = 1/alpha - (L/2)(1 + n*tau); C2 = 1/alpha^2 + L*n*tau/alpha
// + L^2 n^2 tau^2 / 4. Stable descent needs both positive.
inline StabilityConstants stability_constants(double alpha, double L, std::size_t n, double tau) {
    if (!(alpha > 0.0)) throw ConfigError("stability_constants requires alpha > 0");
    if (!(L > 0.0)) throw ConfigError("stability_constants requires L > 0");
    const double nt = static_cast<double>(n) * tau;
    StabilityConstants c;
    c.c1 = 1.0 / alpha - 0.5 * L * (1.0 + nt);
    c.c2 = 1.0 / (alpha * alpha) + L * nt / alpha + 0.25 * L * L * nt * nt;
    return c;
}

// Per-step contraction factor 1 - 2*mu*C1/C2 of the linear-convergence
// guarantee. C1 == 0 returns exactly 1 (no guaranteed progress); negative C1
// or non-positive C2 is an unstable configuration.
inline double convergence_rate(double mu, double c1, double c2) {
    if (!(mu > 0.0)) throw ConfigError("convergence_rate requires mu > 0");
    if (c1 < 0.0 || c2 <= 0.0)
        throw ConfigError("unstable configuration: requires C1 >= 0 and C2 > 0");
    if (c1 == 0.0) return 1.0;
    const double rate = 1.0 - 2.0 * mu * c1 / c2;
    if (rate <= 0.0)
        throw ConfigError("rate factor " + detail::format_double(rate) +
                          " outside (0, 1): inputs violate the guarantee's preconditions");
    return rate;
}

// Largest learning rate with C1 > 0: alpha < 2 / (L * (1 + n*tau)). The
// constants are conservative; practical runs often tolerate larger steps.
inline double max_stable_lr(double L, std::size_t n, double tau) {
    if (!(L > 0.0)) throw ConfigError("max_stable_lr requires L > 0");
    return 2.0 / (L * (1.0 + static_cast<double>(n) * tau));
}

struct SmoothnessEstimate {
    double L = 0.0;       // secant estimate of the gradient Lipschitz constant
    double L_eps = 0.0;   // same estimate for the interval-eps FD gradient
    std::size_t pairs = 0;
    double epsilon = 0.0;
};

namespace detail_an {

// Full coordinate-wise FD gradient (2n queries), store restored afterwards.
inline void full_fd_gradient(Objective& f, ParameterStore& store, double epsilon,
                             const BatchSpec* batch, std::vector<double>& out) {
    const std::size_t n = store.total_params();
    out.resize(n);
    std::size_t i = 0;
    for (std::size_t p = 0; p < store.num_tensors(); ++p) {
        auto& values = store.param(p).values;
        for (double& x : values) {
            const double v_old = x;
            x = v_old + epsilon;
            const double fp = f.evaluate(store, batch);
            x = v_old - epsilon;
            const double fm = f.evaluate(store, batch);
            x = v_old;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw EvaluationError("non-finite objective at verification probe, coordinate " +
                                      std::to_string(i));
            out[i++] = (fp - fm) / (2.0 * epsilon);
        }
    }
}

}  // namespace detail_an

inline std::vector<double> full_fd_gradient(Objective& f, ParameterStore& store, double epsilon,
                                            const BatchSpec* batch = nullptr) {
    std::vector<double> g;
    detail_an::full_fd_gradient(f, store, epsilon, batch, g);
    return g;
}

// Samples the coordinate-wise Lipschitz constant of the FD gradient inside a
// box around `center`: pairs differ in a single coordinate (log-uniform
// displacement), and the secant |fd_i(x) - fd_i(y)| / ||x - y|| is maximized
// over all coordinates i. A supremum sampled from below: the true constant is
// at least the returned value. The L field uses a near-zero interval as the
// exact-gradient proxy.
inline SmoothnessEstimate estimate_L_eps(Objective& f, const ParameterStore& center,
                                         double epsilon, std::size_t n_pairs, std::uint64_t seed,
                                         double box = 0.5, const BatchSpec* batch = nullptr,
                                         bool with_L = true, double l_proxy_epsilon = 1e-6) {
    if (n_pairs < 1) throw ConfigError("estimate_L_eps requires n_pairs >= 1");
    if (!(box > 0.0)) throw ConfigError("estimate_L_eps requires a positive box");
    const std::size_t n = center.total_params();
    ParameterStore x = center;
    SmoothnessEstimate est;
    est.pairs = n_pairs;
    est.epsilon = epsilon;
    std::vector<double> gx_eps, gy_eps, gx_0, gy_0;
    SplitMix64 rng(substream(seed, 0x6c657073));
    for (std::size_t p = 0; p < n_pairs; ++p) {
        // base point inside the box
        for (std::size_t t = 0; t < x.num_tensors(); ++t) {
            auto& vals = x.param(t).values;
            const auto& cvals = center.param(t).values;
            for (std::size_t j = 0; j < vals.size(); ++j)
                vals[j] = cvals[j] + rng.uniform(-box, box);
        }
        // single-coordinate displacement, log-uniform magnitude
        const std::size_t coord = static_cast<std::size_t>(rng.next() % n);
        const double mag = box * std::exp(rng.uniform(std::log(1e-3), 0.0));
        const double t_disp = rng.rademacher() * mag;
        if (t_disp == 0.0) continue;  // degenerate pair, resample

        detail_an::full_fd_gradient(f, x, epsilon, batch, gx_eps);
        if (with_L) detail_an::full_fd_gradient(f, x, l_proxy_epsilon, batch, gx_0);
        x.perturb(coord, t_disp);
        detail_an::full_fd_gradient(f, x, epsilon, batch, gy_eps);
        if (with_L) detail_an::full_fd_gradient(f, x, l_proxy_epsilon, batch, gy_0);
        x.perturb(coord, -t_disp);

        const double dist = std::abs(t_disp);
        for (std::size_t i = 0; i < n; ++i) {
            est.L_eps = std::max(est.L_eps, std::abs(gx_eps[i] - gy_eps[i]) / dist);
            if (with_L) est.L = std::max(est.L, std::abs(gx_0[i] - gy_0[i]) / dist);
        }
    }
    return est;
}

// ||logical buffer - fresh full FD gradient at the current point||, the gap
// the staleness bound controls. Costs 2n verification queries.
inline double measure_staleness_error(const GradientBuffer& buf, Objective& f,
                                      ParameterStore& store, double epsilon,
                                      const BatchSpec* batch = nullptr) {
    const std::vector<double> logical = buf.logical_flat();
    const std::vector<double> fd = full_fd_gradient(f, store, epsilon, batch);
    double sq = 0.0;
    for (std::size_t i = 0; i < logical.size(); ++i) {
        const double d = logical[i] - fd[i];
        sq += d * d;
    }
    return std::sqrt(sq);
}

// Euclidean distance between two flat gradient estimates.
inline double grad_diff(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ConfigError("grad_diff: length mismatch");
    double sq = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sq += d * d;
    }
    return std::sqrt(sq);
}

struct CoherenceWindow {
    std::size_t window = 0;
    double delta = 0.0;  // max step norm over the window
};

// delta over the last k steps (k = 0 or k >= history: full history).
inline CoherenceWindow track_delta(const std::vector<double>& step_norms, std::size_t k = 0) {
    if (step_norms.empty()) throw ConfigError("track_delta: empty history");
    const std::size_t len = (k == 0 || k > step_norms.size()) ? step_norms.size() : k;
    CoherenceWindow w;
    w.window = len;
    for (std::size_t i = step_norms.size() - len; i < step_norms.size(); ++i)
        w.delta = std::max(w.delta, step_norms[i]);
    return w;
}

struct StabilityReport {
    double tau = 0.0;
    double c1 = 0.0;
    double c2 = 0.0;
    double rate = std::numeric_limits<double>::quiet_NaN();
    double max_alpha = 0.0;
    double mu = 0.0;
    bool stable = false;
};

inline StabilityReport stability_report(double alpha, double L, double mu, std::size_t n,
                                        std::size_t B) {
    StabilityReport rep;
    rep.tau = staleness_factor(n, B);
    const StabilityConstants c = stability_constants(alpha, L, n, rep.tau);
    rep.c1 = c.c1;
    rep.c2 = c.c2;
    rep.mu = mu;
    rep.max_alpha = max_stable_lr(L, n, rep.tau);
    rep.stable = c.c1 > 0.0 && c.c2 > 0.0;
    if (rep.stable) rep.rate = convergence_rate(mu, c.c1, c.c2);
    return rep;
}

struct BoundAuditRow {
    long long step = 0;
    double measured_error = 0.0;
    double bound = 0.0;
    double L_eps_hat = 0.0;
    double delta_hat = 0.0;
    bool satisfied = false;
};

inline void write_bound_audit(const std::vector<BoundAuditRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "step,measured_error,bound,L_eps_hat,delta_hat,satisfied\n";
    for (const auto& r : rows)
        out << r.step << ',' << detail::format_double(r.measured_error) << ','
            << detail::format_double(r.bound) << ',' << detail::format_double(r.L_eps_hat) << ','
            << detail::format_double(r.delta_hat) << ',' << (r.satisfied ? 1 : 0) << '\n';
}

}  // namespace cocd
