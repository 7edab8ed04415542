#pragma once

// Built-in invariant suite behind the CLI `verify` subcommand: a fast sanity
// pass over the core contracts, independent of the unit-test binaries.

#include <cmath>
#include <functional>
#include <iostream>
#include <sstream>
#include <vector>

#include "cocd/analysis.hpp"
#include "cocd/baselines.hpp"
#include "cocd/objective.hpp"
#include "cocd/optimizer.hpp"
#include "cocd/param_store.hpp"

namespace cocd {

inline bool run_selftest(std::ostream& os) {
    struct Check {
        const char* name;
        std::function<bool()> fn;
    };

    const std::vector<Check> checks = {
        {"flat view: locate round-trips over every index",
         [] {
             ParameterStore s;
             s.add_param(ShapedParam({3, 2}));
             s.add_param(ShapedParam({4}));
             s.add_param(ShapedParam({2, 2, 2}));
             for (std::size_t i = 0; i < s.total_params(); ++i) {
                 const FlatLocation loc = s.locate(i);
                 if (s.offset_of(loc.param_idx) + loc.within_idx != i) return false;
             }
             return s.total_params() == 18;
         }},
        {"full budget recovers the exact finite-difference gradient",
         [] {
             const std::size_t n = 24;
             std::vector<double> d(n), b(n);
             for (std::size_t i = 0; i < n; ++i) {
                 d[i] = 0.5 + 0.1 * static_cast<double>(i % 7);
                 b[i] = 0.05 * static_cast<double>(i);
             }
             QuadraticObjective f(d, b);
             ParameterStore x = make_flat_store(n, 1.0);
             ParameterStore probe = x;
             const std::vector<double> expect = full_fd_gradient(f, probe, 1e-3);
             OptimizerConfig cfg;
             cfg.budget_B = n;
             GradientBuffer buf(n, n);
             refresh(buf, f, x, cfg.resolved(n));
             for (std::size_t i = 0; i < n; ++i)
                 if (buf.values()[i] != expect[i]) return false;
             return true;
         }},
        {"gamma = 0 updates exactly the refreshed block",
         [] {
             const std::size_t n = 9, B = 3;
             QuadraticObjective f(std::vector<double>(n, 1.0), std::vector<double>(n, 0.0));
             ParameterStore x = make_flat_store(n, 1.0);
             OptimizerConfig cfg;
             cfg.budget_B = B;
             cfg.gamma = 0.0;
             cfg.alpha = 0.05;
             GradientBuffer buf(n, n);
             for (std::size_t t = 0; t < 6; ++t) {
                 const std::vector<double> before = x.flat_copy();
                 step(buf, x, f, cfg);
                 const std::vector<double> after = x.flat_copy();
                 for (std::size_t i = 0; i < n; ++i) {
                     const bool in_block = (i + n - (t * B) % n) % n < B;
                     if (in_block != (before[i] != after[i])) return false;
                 }
             }
             return true;
         }},
        {"cyclic pointers wrap across steps",
         [] {
             QuadraticObjective f({1, 1, 1, 1}, {0, 0, 0, 0});
             ParameterStore x = make_flat_store(4, 1.0);
             OptimizerConfig cfg;
             cfg.budget_B = 3;
             GradientBuffer buf(4, 4);
             step(buf, x, f, cfg);
             if (buf.cur_grad_idx() != 3) return false;
             step(buf, x, f, cfg);
             return buf.cur_grad_idx() == 2 && buf.refresh_count() == 6;
         }},
        {"bound formulas reproduce the reference values",
         [] {
             const bool a = std::abs(error_bound(4, 2, 1.0, 0.1) - 0.2) < 1e-12;
             const bool b = std::abs(error_bound(5, 2, 1.0, 1.0) - 4.0) < 1e-12;
             const bool c = error_bound(8, 8, 2.0, 3.0) == 0.0;
             const bool d = staleness_factor(10, 5) == 1.0 && staleness_factor(10, 10) == 0.0;
             const StabilityConstants sc = stability_constants(0.1, 1.0, 10, 1.0);
             const bool e = std::abs(sc.c1 - 4.5) < 1e-12 && std::abs(sc.c2 - 225.0) < 1e-12;
             const bool f = std::abs(convergence_rate(1.0, 4.5, 225.0) - 0.96) < 1e-12;
             const bool g = std::abs(max_stable_lr(1.0, 64, 7.0) - 2.0 / 449.0) < 1e-15;
             return a && b && c && d && e && f && g;
         }},
        {"central differences consume exactly 2B queries per step",
         [] {
             QuadraticObjective f({1, 1, 1, 1, 1}, {0, 0, 0, 0, 0});
             ParameterStore x = make_flat_store(5, 1.0);
             OptimizerConfig cfg;
             cfg.budget_B = 2;
             cfg.trace_loss = false;
             GradientBuffer buf(5, 5);
             const long long before = f.query_count();
             const StepTrace tr = step(buf, x, f, cfg);
             return tr.queries_used == 4 && f.query_count() - before == 4;
         }},
        {"the store is restored bit-exactly after probing",
         [] {
             QuadraticObjective f({2, 3}, {0.1, 0.2});
             ParameterStore x = make_flat_store(2);
             x.write_flat(0, 0.1234567890123);
             x.write_flat(1, -9.87654321e-3);
             const ParameterStore before = x;
             OptimizerConfig cfg;
             cfg.budget_B = 2;
             GradientBuffer buf(2, 2);
             refresh(buf, f, x, cfg.resolved(2));
             return x == before;
         }},
        {"runs are deterministic bit-for-bit",
         [] {
             auto run = [] {
                 QuadraticObjective f({1, 2, 3}, {0, 0, 0});
                 ParameterStore x = make_flat_store(3, 1.0);
                 OptimizerConfig cfg;
                 cfg.budget_B = 1;
                 cfg.alpha = 0.05;
                 GradientBuffer buf(3, 3);
                 std::ostringstream ss;
                 for (int t = 0; t < 12; ++t) ss << detail::format_double(step(buf, x, f, cfg).loss) << ';';
                 return ss.str();
             };
             return run() == run();
         }},
    };

    bool all = true;
    for (const auto& c : checks) {
        bool ok = false;
        try {
            ok = c.fn();
        } catch (const std::exception& e) {
            os << "[FAIL] " << c.name << " (exception: " << e.what() << ")\n";
            all = false;
            continue;
        }
        os << (ok ? "[PASS] " : "[FAIL] ") << c.name << '\n';
        all = all && ok;
    }
    return all;
}

}  // namespace cocd
