#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <set>

#include "cocd/analysis.hpp"
#include "cocd/objective.hpp"
#include "cocd/optimizer.hpp"
#include "oracles.hpp"

using namespace cocd;

namespace {

// x^2 and x^3 in one dimension for the finite-difference spot checks
class PowerObjective : public Objective {
public:
    explicit PowerObjective(int p) : p_(p) {}
    std::size_t dimension() const override { return 1; }
    std::string name() const override { return "power"; }

private:
    double eval_impl(const ParameterStore& s, const BatchSpec*) override {
        const double x = s.read_flat(0);
        double v = 1.0;
        for (int i = 0; i < p_; ++i) v *= x;
        return v;
    }
    int p_;
};

// unit quadratic that returns NaN after a set number of queries
class PoisonObjective : public Objective {
public:
    PoisonObjective(std::size_t n, long long poison_at)
        : inner_(std::vector<double>(n, 1.0), std::vector<double>(n, 0.0)), poison_at_(poison_at) {}
    std::size_t dimension() const override { return inner_.dimension(); }
    std::string name() const override { return "poison"; }

private:
    double eval_impl(const ParameterStore& s, const BatchSpec* b) override {
        if (++calls_ >= poison_at_) return std::numeric_limits<double>::quiet_NaN();
        return inner_.evaluate(s, b);
    }
    QuadraticObjective inner_;
    long long poison_at_;
    long long calls_ = 0;
};

std::vector<std::size_t> changed_coords(const std::vector<double>& before,
                                        const std::vector<double>& after) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < before.size(); ++i)
        if (before[i] != after[i]) out.push_back(i);
    return out;
}

}  // namespace

TEST_CASE("coordinate_fd spot values") {
    ParameterStore x = make_flat_store(1, 3.0);
    PowerObjective sq(2);
    CHECK(coordinate_fd(sq, x, 0, 0.1) == Catch::Approx(6.0).epsilon(1e-12));
    CHECK(x.read_flat(0) == 3.0);  // restored bit-exactly
    CHECK(sq.query_count() == 2);

    ParameterStore y = make_flat_store(1, 1.0);
    PowerObjective cube(3);
    CHECK(coordinate_fd(cube, y, 0, 0.1) == Catch::Approx(3.01).epsilon(1e-12));

    PowerObjective sq2(2);
    ParameterStore z = make_flat_store(1, 3.0);
    CHECK(coordinate_fd(sq2, z, 0, 0.1, nullptr, FdScheme::Forward) ==
          Catch::Approx(6.1).epsilon(1e-12));
}

TEST_CASE("coordinate_fd surfaces non-finite evaluations with the probe point") {
    PoisonObjective bad(2, 1);
    ParameterStore x = make_flat_store(2, 1.0);
    CHECK_THROWS_AS(coordinate_fd(bad, x, 1, 0.1), EvaluationError);
    CHECK(x.read_flat(1) == 1.0);
}

TEST_CASE("advance_cycle follows the 1-based cyclic rule") {
    CHECK(advance_cycle(1, 7) == 2);
    CHECK(advance_cycle(7, 7) == 1);
    for (std::size_t n : {1u, 2u, 5u, 9u})
        for (std::size_t start = 1; start <= n; ++start) {
            std::size_t i = start;
            for (std::size_t k = 0; k < n; ++k) i = advance_cycle(i, n);
            CHECK(i == start);
        }
}

TEST_CASE("decay scales the whole buffer in place") {
    GradientBuffer buf(2, 2);
    buf.values() = {2.0, -4.0};
    decay(buf, 0.5);
    CHECK(buf.values() == std::vector<double>{1.0, -2.0});
    decay(buf, 1.0);
    CHECK(buf.values() == std::vector<double>{1.0, -2.0});
    decay(buf, 0.0);
    CHECK(buf.values() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("refresh overwrites exactly the scheduled entries") {
    QuadraticObjective q({1, 1, 1}, {0, 0, 0});
    ParameterStore x = make_flat_store(3, 2.0);
    OptimizerConfig cfg;
    cfg.budget_B = 1;
    cfg.epsilon = 1e-3;
    cfg.memory_m = 3;
    GradientBuffer buf(3, 3);
    buf.values() = {10.0, 20.0, 30.0};
    const double gamma = 0.5;
    decay(buf, gamma);
    refresh(buf, q, x, cfg.resolved(3));
    // coordinate 0 got a fresh central difference (= 2.0 for this quadratic)
    CHECK(buf.values()[0] == Catch::Approx(2.0).epsilon(1e-10));
    CHECK(buf.values()[1] == 10.0);
    CHECK(buf.values()[2] == 15.0);
}

TEST_CASE("full-budget refresh reproduces the full finite-difference gradient") {
    QuadraticObjective q({1.0, 2.0, 3.0, 4.0}, {0.5, -0.5, 1.0, 0.0});
    ParameterStore x = make_flat_store(4);
    for (std::size_t i = 0; i < 4; ++i) x.write_flat(i, 0.3 * static_cast<double>(i) - 0.4);
    OptimizerConfig cfg;
    cfg.budget_B = 4;
    cfg.memory_m = 4;
    cfg.epsilon = 1e-3;
    GradientBuffer buf(4, 4);
    buf.values() = {9, 9, 9, 9};  // any prior contents
    ParameterStore probe = x;
    const std::vector<double> expect = full_fd_gradient(q, probe, cfg.epsilon);
    refresh(buf, q, x, cfg.resolved(4));
    for (std::size_t i = 0; i < 4; ++i) CHECK(buf.values()[i] == expect[i]);
}

TEST_CASE("refresh order continues the cycle across steps: n=4, B=3") {
    QuadraticObjective q({1, 2, 3, 4}, {0, 0, 0, 0});
    ParameterStore x = make_flat_store(4, 1.0);
    OptimizerConfig cfg;
    cfg.budget_B = 3;
    cfg.memory_m = 4;
    cfg.alpha = 1e-9;  // keep the iterate essentially fixed
    GradientBuffer buf(4, 4);

    oracle::ReferenceSim sim({1, 1, 1, 1}, 4, oracle::quadratic_fn({1, 2, 3, 4}, {0, 0, 0, 0}));
    sim.budget = 3;
    sim.alpha = 1e-9;
    sim.eps = cfg.epsilon;

    CHECK(sim.next_refresh_coords() == std::vector<std::size_t>{0, 1, 2});
    step(buf, x, q, cfg);
    sim.step();
    CHECK(buf.refresh_count() == 3);
    CHECK(buf.cur_grad_idx() == 3);

    CHECK(sim.next_refresh_coords() == std::vector<std::size_t>{3, 0, 1});
    step(buf, x, q, cfg);
    sim.step();
    CHECK(buf.refresh_count() == 6);
    CHECK(buf.cur_grad_idx() == 2);
    for (std::size_t i = 0; i < 4; ++i) CHECK(buf.values()[i] == sim.g[i]);
}

TEST_CASE("descent applies the buffer in place") {
    SECTION("unit quadratic, full budget") {
        QuadraticObjective q({1, 1}, {0, 0});
        ParameterStore x = make_flat_store(2, 1.0);
        OptimizerConfig cfg;
        cfg.alpha = 0.5;
        cfg.budget_B = 2;
        cfg.memory_m = 2;
        cfg.epsilon = 1e-3;
        GradientBuffer buf(2, 2);
        step(buf, x, q, cfg);
        CHECK(x.read_flat(0) == Catch::Approx(0.5).epsilon(1e-12));
        CHECK(x.read_flat(1) == Catch::Approx(0.5).epsilon(1e-12));
    }
    SECTION("zero buffer leaves the store unchanged") {
        ParameterStore x = make_flat_store(3, 2.0);
        const ParameterStore before = x;
        OptimizerConfig cfg;
        cfg.budget_B = 1;
        cfg.memory_m = 3;
        GradientBuffer buf(3, 3);
        optimize(buf, x, cfg.resolved(3));
        CHECK(x == before);
    }
}

TEST_CASE("reduced memory touches exactly the window coordinates") {
    const std::size_t n = 8, m = 4, B = 2;
    QuadraticObjective q(std::vector<double>(n, 1.0), std::vector<double>(n, 0.0));
    ParameterStore x = make_flat_store(n);
    for (std::size_t i = 0; i < n; ++i) x.write_flat(i, 1.0 + 0.1 * static_cast<double>(i));

    OptimizerConfig cfg;
    cfg.budget_B = B;
    cfg.memory_m = m;
    cfg.alpha = 0.01;
    GradientBuffer buf(n, m);

    std::vector<double> sx = x.flat_copy();
    oracle::ReferenceSim sim(sx, m, oracle::quadratic_fn(std::vector<double>(n, 1.0),
                                                         std::vector<double>(n, 0.0)));
    sim.budget = B;
    sim.alpha = 0.01;
    sim.eps = cfg.epsilon;

    for (int t = 0; t < 10; ++t) {
        const std::vector<double> before = x.flat_copy();
        const std::vector<std::size_t> window = sim.next_window_coords();
        step(buf, x, q, cfg);
        sim.step();
        const std::vector<double> after = x.flat_copy();
        // every changed coordinate lies in the window, and after warm-up the
        // whole window moves
        const std::vector<std::size_t> touched = changed_coords(before, after);
        CHECK(touched.size() <= m);
        const std::set<std::size_t> wset(window.begin(), window.end());
        for (std::size_t c : touched) CHECK(wset.count(c) == 1);
        if (t >= 2) CHECK(touched.size() == m);
        for (std::size_t i = 0; i < n; ++i) CHECK(after[i] == sim.x[i]);
    }
}

TEST_CASE("gamma = 0 supports the update only on the refreshed block") {
    const std::size_t n = 6, B = 2;
    QuadraticObjective q(std::vector<double>(n, 2.0), std::vector<double>(n, 0.0));
    ParameterStore x = make_flat_store(n, 1.0);
    OptimizerConfig cfg;
    cfg.budget_B = B;
    cfg.gamma = 0.0;
    cfg.alpha = 0.01;
    GradientBuffer buf(n, n);
    for (int t = 0; t < 12; ++t) {
        const std::vector<double> before = x.flat_copy();
        step(buf, x, q, cfg);
        const std::vector<std::size_t> touched = changed_coords(before, x.flat_copy());
        std::vector<std::size_t> expect;
        for (std::size_t k = 0; k < B; ++k)
            expect.push_back((static_cast<std::size_t>(t) * B + k) % n);
        CHECK(touched == expect);
        // consecutive blocks are disjoint while B <= n/2
        if (t > 0) {
            std::set<std::size_t> prev;
            for (std::size_t k = 0; k < B; ++k)
                prev.insert((static_cast<std::size_t>(t - 1) * B + k) % n);
            for (std::size_t c : touched) CHECK(prev.count(c) == 0);
        }
    }
}

TEST_CASE("steps are deterministic bit-for-bit") {
    auto run = [] {
        QuadraticObjective q({1, 2, 3, 4, 5}, {0, 0, 0, 0, 0});
        ParameterStore x = make_flat_store(5, 1.0);
        OptimizerConfig cfg;
        cfg.budget_B = 2;
        cfg.memory_m = 5;
        cfg.alpha = 0.05;
        GradientBuffer buf(5, 5);
        std::vector<double> losses;
        for (int t = 0; t < 20; ++t) losses.push_back(step(buf, x, q, cfg).loss);
        return losses;
    };
    CHECK(run() == run());
}

TEST_CASE("ten steps match the straight-line reference simulation exactly") {
    for (double gamma : {0.0, 0.5, 1.0}) {
        QuadraticObjective q({1, 2, 3, 4}, {0, 0, 0, 0});
        ParameterStore x = make_flat_store(4, 1.0);
        OptimizerConfig cfg;
        cfg.budget_B = 1;
        cfg.memory_m = 4;
        cfg.alpha = 0.1;
        cfg.gamma = gamma;
        cfg.epsilon = 1e-3;
        GradientBuffer buf(4, 4);

        oracle::ReferenceSim sim({1, 1, 1, 1}, 4, oracle::quadratic_fn({1, 2, 3, 4}, {0, 0, 0, 0}));
        sim.budget = 1;
        sim.alpha = 0.1;
        sim.gamma = gamma;
        sim.eps = 1e-3;

        for (int t = 0; t < 10; ++t) {
            step(buf, x, q, cfg);
            sim.step();
            const std::vector<double> flat = x.flat_copy();
            for (std::size_t i = 0; i < 4; ++i) {
                CHECK(flat[i] == sim.x[i]);
                CHECK(buf.values()[i] == sim.g[i]);
            }
        }
    }
}

TEST_CASE("buffer entries equal decayed snapshots of historical differences") {
    // with m = n, the entry for a coordinate refreshed tau steps ago holds
    // gamma^tau times the difference computed at the historical iterate
    const std::size_t n = 4;
    const double gamma = 0.5;
    QuadraticObjective q({1, 2, 3, 4}, {0, 0, 0, 0});
    ParameterStore x = make_flat_store(n, 1.0);
    OptimizerConfig cfg;
    cfg.budget_B = 1;
    cfg.gamma = gamma;
    cfg.alpha = 0.05;
    GradientBuffer buf(n, n);

    std::vector<std::vector<double>> history;  // x before each step's refresh
    for (int t = 0; t < 8; ++t) {
        history.push_back(x.flat_copy());
        step(buf, x, q, cfg);
    }
    // after 8 steps with B=1: coordinate c was refreshed at step s where
    // s % n == c, most recently s = 4 + c (0-based), i.e. tau = 7 - s
    for (std::size_t c = 0; c < n; ++c) {
        const std::size_t s = 4 + c;
        const std::size_t tau = 7 - s;
        ParameterStore hist = make_flat_store(n);
        for (std::size_t i = 0; i < n; ++i) hist.write_flat(i, history[s][i]);
        const double fd = coordinate_fd(q, hist, c, cfg.epsilon);
        const double expect = std::pow(gamma, static_cast<double>(tau)) * fd;
        CHECK(buf.values()[c] == Catch::Approx(expect).epsilon(1e-13));
    }
}

TEST_CASE("query accounting") {
    QuadraticObjective q({1, 1, 1, 1}, {0, 0, 0, 0});
    ParameterStore x = make_flat_store(4, 1.0);
    OptimizerConfig cfg;
    cfg.budget_B = 3;
    GradientBuffer buf(4, 4);
    const long long before = q.query_count();
    const StepTrace tr = step(buf, x, q, cfg);
    CHECK(tr.queries_used == 6);
    CHECK(q.query_count() - before == 7);  // 2B probes + 1 loss diagnostic

    OptimizerConfig fwd = cfg;
    fwd.fd_scheme = FdScheme::Forward;
    fwd.trace_loss = false;
    GradientBuffer buf2(4, 4);
    ParameterStore y = make_flat_store(4, 1.0);
    const long long b2 = q.query_count();
    const StepTrace tr2 = step(buf2, y, q, fwd);
    CHECK(tr2.queries_used == 4);  // B + 1 cached base
    CHECK(q.query_count() - b2 == 4);
}

TEST_CASE("the store is bit-identical after a refresh") {
    QuadraticObjective q({1, 2, 3}, {0.2, 0.4, 0.6});
    ParameterStore x = make_flat_store(3);
    x.write_flat(0, 0.123456789);
    x.write_flat(1, -0.987654321);
    x.write_flat(2, 3.141592653589793);
    const ParameterStore before = x;
    OptimizerConfig cfg;
    cfg.budget_B = 3;
    GradientBuffer buf(3, 3);
    refresh(buf, q, x, cfg.resolved(3));
    CHECK(x == before);
}

TEST_CASE("cyclic coverage and staleness horizon") {
    const std::size_t n = 12, B = 5;  // non-divisible on purpose
    QuadraticObjective q(std::vector<double>(n, 1.0), std::vector<double>(n, 0.0));
    ParameterStore x = make_flat_store(n, 1.0);
    OptimizerConfig cfg;
    cfg.budget_B = B;
    cfg.alpha = 0.01;
    GradientBuffer buf(n, n);
    const std::size_t horizon = (n + B - 1) / B;  // ceil(n/B)
    std::vector<long long> last_refreshed(n, -1);
    for (long long t = 0; t < 30; ++t) {
        for (std::size_t k = 0; k < B; ++k)
            last_refreshed[(static_cast<std::size_t>(t) * B + k) % n] = t;
        step(buf, x, q, cfg);
        if (t + 1 >= static_cast<long long>(horizon)) {
            for (std::size_t i = 0; i < n; ++i) {
                REQUIRE(last_refreshed[i] >= 0);
                CHECK(t - last_refreshed[i] < static_cast<long long>(horizon));
            }
        }
    }
}

TEST_CASE("checkpointed state resumes bit-exactly") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "cocd_state_test.txt").string();
    QuadraticObjective q({1, 2, 3, 4, 5, 6}, {0, 0, 0, 0, 0, 0});
    OptimizerConfig cfg;
    cfg.budget_B = 2;
    cfg.memory_m = 4;
    cfg.alpha = 0.03;
    cfg.gamma = 0.9;

    ParameterStore xa = make_flat_store(6, 1.0);
    GradientBuffer a(6, 4);
    for (int t = 0; t < 7; ++t) step(a, xa, q, cfg);
    a.save(path);
    save_store(xa, path + ".params");

    GradientBuffer b(6, 4);
    b.load(path);
    ParameterStore xb = load_store(path + ".params");
    for (int t = 0; t < 5; ++t) {
        const StepTrace ta = step(a, xa, q, cfg);
        const StepTrace tb = step(b, xb, q, cfg);
        CHECK(ta.loss == tb.loss);
        CHECK(ta.step_norm == tb.step_norm);
    }
    CHECK(xa == xb);
    for (const std::string suffix : {"", ".params", ".params.shape"})
        std::remove((path + suffix).c_str());
}

TEST_CASE("evaluation failures roll pointers back and leave the store intact") {
    PoisonObjective bad(4, 5);  // fails mid-refresh
    ParameterStore x = make_flat_store(4, 1.0);
    const ParameterStore before = x;
    OptimizerConfig cfg;
    cfg.budget_B = 4;
    GradientBuffer buf(4, 4);
    CHECK_THROWS_AS(step(buf, x, bad, cfg), EvaluationError);
    CHECK(x == before);
    CHECK(buf.cur_grad_idx() == 0);
    CHECK(buf.refresh_count() == 0);
    CHECK(buf.step_count() == 0);
}

TEST_CASE("config validation and clamping") {
    OptimizerConfig cfg;
    cfg.budget_B = 100;
    std::vector<std::string> warnings;
    const OptimizerConfig r = cfg.resolved(8, &warnings);
    CHECK(r.budget_B == 8);
    CHECK(warnings.size() == 1);

    OptimizerConfig bad;
    bad.budget_B = 4;
    bad.memory_m = 2;
    CHECK_THROWS_AS(bad.resolved(8), ConfigError);

    OptimizerConfig g;
    g.gamma = 1.5;
    CHECK_THROWS_AS(g.validate(), ConfigError);
    g.gamma = -0.1;
    CHECK_THROWS_AS(g.validate(), ConfigError);
}

TEST_CASE("state introspection: m scalars plus fixed integer bookkeeping") {
    GradientBuffer buf(10, 6);
    CHECK(buf.scalar_state_size() == 6);
    CHECK(GradientBuffer::integer_state_count() == 10);
}
