#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cocd/harness.hpp"
#include "oracles.hpp"

using namespace cocd;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const char* kMinimalQuadratic = R"({
  "objective": {"kind": "quadratic", "n": 8},
  "optimizer": {"kind": "cocd", "budget": 2},
  "steps": 10
})";

ExperimentConfig small_mlp_config() {
    ExperimentConfig cfg = parse_config(R"({
      "objective": {
        "kind": "mlp",
        "layers": [4, 8, 2],
        "dataset": {"kind": "synthetic", "rows": 24, "val_rows": 8, "data_seed": 3}
      },
      "optimizer": {"kind": "cocd", "alpha": 0.01, "epsilon": 0.1, "budget": 4},
      "steps": 6,
      "batch_size": 8
    })");
    return cfg;
}

}  // namespace

TEST_CASE("parse_config applies defaults and rejects bad inputs") {
    SECTION("minimal config fills defaults") {
        const ExperimentConfig cfg = parse_config(kMinimalQuadratic);
        CHECK(cfg.objective.kind == "quadratic");
        CHECK(cfg.objective.n == 8);
        CHECK(cfg.optimizer.base.gamma == 1.0);
        CHECK(cfg.optimizer.base.fd_scheme == FdScheme::Central);
        CHECK(cfg.optimizer.base.descent_window == DescentWindow::Sliding);
        CHECK(cfg.steps == 10);
        CHECK(cfg.verify_every == 0);
        // echo carries the resolved values
        const json echo = config_to_json(cfg);
        CHECK(echo["optimizer"]["gamma"] == 1.0);
        CHECK(echo["optimizer"]["fd_scheme"] == "central");
    }
    SECTION("gamma outside [0,1] is rejected with the documented message") {
        try {
            parse_config(R"({"objective": {"kind": "quadratic", "n": 4},
                             "optimizer": {"kind": "cocd", "gamma": 1.5}})");
            FAIL("expected rejection");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("gamma must lie in [0,1]") != std::string::npos);
        }
    }
    SECTION("unknown keys are rejected") {
        CHECK_THROWS_AS(parse_config(R"({"objective": {"kind": "quadratic", "n": 4},
                                         "optimizer": {"kind": "cocd"},
                                         "stepz": 5})"),
                        ConfigError);
        CHECK_THROWS_AS(parse_config(R"({"objective": {"kind": "quadratic", "n": 4, "foo": 1},
                                         "optimizer": {"kind": "cocd"}})"),
                        ConfigError);
    }
    SECTION("syntax errors carry diagnostics") {
        CHECK_THROWS_AS(parse_config("{not json"), ConfigError);
    }
    SECTION("B > m is named explicitly") {
        try {
            ExperimentConfig cfg = parse_config(R"({
                "objective": {"kind": "quadratic", "n": 16},
                "optimizer": {"kind": "cocd", "budget": 8, "memory": 4}})");
            build_experiment(cfg);
            FAIL("expected rejection");
        } catch (const ConfigError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("budget B") != std::string::npos);
            CHECK(msg.find("memory m") != std::string::npos);
        }
    }
    SECTION("a modest budget on a 13k-parameter model echoes its percentage") {
        ExperimentConfig cfg = parse_config(R"({
          "objective": {"kind": "mlp", "layers": [21, 74, 74, 74, 7],
                        "dataset": {"kind": "synthetic", "rows": 8}},
          "optimizer": {"kind": "cocd", "budget": 64},
          "steps": 0})");
        const Experiment ex = build_experiment(cfg);
        REQUIRE(ex.n > 12800);  // ~13k parameters
        bool found = false;
        for (const auto& line : ex.echo)
            if (line.find("0.5% of") != std::string::npos) found = true;
        CHECK(found);
    }
}

TEST_CASE("run_experiment is deterministic at the byte level") {
    const std::string out1 = tmp_path("cocd_run_a.csv");
    const std::string out2 = tmp_path("cocd_run_b.csv");
    ExperimentConfig cfg = parse_config(kMinimalQuadratic);
    cfg.out = out1;
    run_experiment(cfg);
    cfg.out = out2;
    run_experiment(cfg);
    CHECK(slurp(out1) == slurp(out2));
    for (const std::string& p : std::initializer_list<std::string>{out1, out2}) {
        std::remove(p.c_str());
        std::remove((p + ".config.json").c_str());
    }
}

TEST_CASE("zero steps produce a record with the initial loss only") {
    ExperimentConfig cfg = parse_config(kMinimalQuadratic);
    cfg.steps = 0;
    const RunRecord rec = run_experiment(cfg);
    CHECK(rec.traces.empty());
    CHECK(std::isfinite(rec.initial_loss));
    CHECK(rec.budget_queries == 0);
}

TEST_CASE("metrics CSV layout") {
    ExperimentConfig cfg = parse_config(kMinimalQuadratic);
    cfg.steps = 3;
    const std::string out = tmp_path("cocd_emit.csv");
    cfg.out = out;
    const RunRecord rec = run_experiment(cfg);

    SECTION("3-step run emits 4 data rows with the fixed header") {
        std::ifstream in(out);
        std::string line;
        std::getline(in, line);
        CHECK(line == kMetricsHeader);
        int rows = 0;
        while (std::getline(in, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 4);
    }
    SECTION("verification disabled leaves the diagnostic cells empty") {
        std::ifstream in(out);
        std::string line;
        std::getline(in, line);
        std::getline(in, line);  // step 0
        std::getline(in, line);  // step 1
        // columns: step,loss,step_norm,queries,oracle,staleness,bound,grad_diff
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string tok;
        while (std::getline(ls, tok, ',')) cells.push_back(tok);
        cells.resize(8);
        CHECK(cells[5].empty());
        CHECK(cells[6].empty());
        CHECK_FALSE(cells[7].empty());  // cyclic methods always track grad_diff
    }
    SECTION("re-emission of a loaded record is byte-identical") {
        const std::string out2 = tmp_path("cocd_emit2.csv");
        const RunRecord loaded = load_record(out);
        emit_metrics(loaded, out2);
        CHECK(slurp(out) == slurp(out2));
        std::remove(out2.c_str());
    }
    SECTION("emitting the in-memory record reproduces the incremental file") {
        const std::string out3 = tmp_path("cocd_emit3.csv");
        emit_metrics(rec, out3);
        CHECK(slurp(out) == slurp(out3));
        std::remove(out3.c_str());
    }
    std::remove(out.c_str());
    std::remove((out + ".config.json").c_str());
}

TEST_CASE("ledger conservation") {
    ExperimentConfig cfg = small_mlp_config();
    const RunRecord rec = run_experiment(cfg);
    const Experiment probe = build_experiment(cfg);
    CHECK(rec.budget_queries == cfg.steps * probe.queries_per_step);
    // per-step loss diagnostics + initial/final evaluations live elsewhere
    CHECK(rec.diagnostic_queries >= cfg.steps);
}

TEST_CASE("verification cadence fills staleness and bound columns") {
    ExperimentConfig cfg = parse_config(R"({
      "objective": {"kind": "quadratic", "n": 12, "x0": 1.0},
      "optimizer": {"kind": "cocd", "alpha": 0.01, "budget": 3},
      "steps": 12,
      "verify_every": 4,
      "verification": {"l_eps_pairs": 8}
    })");
    const RunRecord rec = run_experiment(cfg);
    REQUIRE(rec.audit.size() == 3);
    CHECK(std::isfinite(rec.l_eps_hat));
    for (const auto& row : rec.audit) {
        CHECK(row.step % 4 == 0);
        CHECK(row.measured_error >= 0.0);
        CHECK(row.bound >= 0.0);
        CHECK(row.satisfied);
    }
    for (const auto& tr : rec.traces) {
        if (tr.step % 4 == 0)
            CHECK(std::isfinite(tr.staleness_error));
        else
            CHECK(std::isnan(tr.staleness_error));
    }
}

TEST_CASE("sweeps") {
    ExperimentConfig base = parse_config(kMinimalQuadratic);
    SECTION("single-value sweep equals run_experiment") {
        const SweepRecord s = sweep(base, SweepAxis::Gamma, {1.0});
        const RunRecord r = run_experiment(base);
        REQUIRE(s.runs.size() == 1);
        REQUIRE(s.runs[0].traces.size() == r.traces.size());
        for (std::size_t i = 0; i < r.traces.size(); ++i)
            CHECK(s.runs[0].traces[i].loss == r.traces[i].loss);
    }
    SECTION("gamma sweep produces one record per value") {
        const SweepRecord s = sweep(base, SweepAxis::Gamma, {0.0, 0.5, 0.9, 0.95, 1.0});
        CHECK(s.runs.size() == 5);
        // gamma = 0 descends slowest on this quadratic
        for (std::size_t i = 1; i < s.runs.size(); ++i)
            CHECK(s.runs[0].final_train_loss >= s.runs[i].final_train_loss);
    }
    SECTION("memory sweep accepts fractions and converges throughout") {
        ExperimentConfig mem = base;
        mem.steps = 120;
        mem.optimizer.base.alpha = 0.05;
        const SweepRecord s = sweep(mem, SweepAxis::Memory, {0.25, 0.5, 1.0});
        CHECK(s.runs.size() == 3);
        for (const auto& run : s.runs) CHECK(run.final_train_loss < run.initial_loss);
    }
    SECTION("invalid axis values abort before any run") {
        CHECK_THROWS_AS(sweep(base, SweepAxis::Memory, {0.5, 1.5}), ConfigError);
        CHECK_THROWS_AS(sweep(base, SweepAxis::Gamma, {0.5, -0.1}), ConfigError);
    }
    SECTION("sweep emission has one loss column per run") {
        const SweepRecord s = sweep(base, SweepAxis::Gamma, {0.0, 1.0});
        const std::string path = tmp_path("cocd_sweep.csv");
        emit_sweep(s, path);
        std::ifstream in(path);
        std::string header;
        std::getline(in, header);
        CHECK(header == "step,loss_gamma=0,loss_gamma=1");
        std::remove(path.c_str());
    }
}

TEST_CASE("budget-matched comparison") {
    const char* base = R"({
      "objective": {"kind": "quadratic", "n": 64, "x0": 1.0},
      "optimizer": {"kind": "cocd", "alpha": 0.01, "budget": 32},
      "steps": 5
    })";
    ExperimentConfig cocd_cfg = parse_config(base);
    ExperimentConfig spsa_cfg = parse_config(base);
    spsa_cfg.optimizer.kind = "spsa";
    spsa_cfg.optimizer.samples = 32;

    SECTION("matched ledgers are accepted") {
        const ComparisonRecord rec = compare_budget_matched({cocd_cfg, spsa_cfg});
        CHECK(rec.queries_per_step == 64);
        CHECK(rec.labels == std::vector<std::string>{"cocd", "spsa"});
        for (const auto& run : rec.runs)
            for (const auto& tr : run.traces) CHECK(tr.queries_used == 64);
    }
    SECTION("mismatched ledgers are refused naming the offender") {
        ExperimentConfig bad = spsa_cfg;
        bad.optimizer.samples = 33;
        try {
            compare_budget_matched({cocd_cfg, bad});
            FAIL("expected mismatch rejection");
        } catch (const ConfigError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("spsa") != std::string::npos);
            CHECK(msg.find("66") != std::string::npos);
        }
    }
}

TEST_CASE("budget error study") {
    ExperimentConfig cfg = parse_config(R"({
      "objective": {"kind": "quadratic", "n": 32, "x0": 1.0},
      "optimizer": {"kind": "cocd", "alpha": 0.005},
      "steps": 40,
      "verify_every": 10,
      "verification": {"l_eps_pairs": 4}
    })");
    SECTION("two budgets: slope equals the two-point secant") {
        const BudgetStudyRecord rec = budget_error_study(cfg, {4, 16});
        REQUIRE(rec.points.size() == 2);
        const double secant = (rec.points[1].mean_staleness_error -
                               rec.points[0].mean_staleness_error) /
                              (std::log2(16.0) - std::log2(4.0));
        CHECK(rec.slope == Catch::Approx(secant).epsilon(1e-12));
        CHECK(rec.slope < 0.0);
    }
    SECTION("the full-refresh budget is excluded from the fit") {
        const BudgetStudyRecord rec = budget_error_study(cfg, {4, 8, 32});
        REQUIRE(rec.points.size() == 3);
        CHECK(rec.points[0].in_fit);
        CHECK(rec.points[1].in_fit);
        CHECK_FALSE(rec.points[2].in_fit);
        CHECK(rec.points[2].mean_staleness_error <= 1e-10);
    }
    SECTION("non-ascending budgets are rejected") {
        CHECK_THROWS_AS(budget_error_study(cfg, {16, 8}), ConfigError);
    }
}

TEST_CASE("deterministic methods ignore the stream seed") {
    ExperimentConfig cfg = small_mlp_config();
    cfg.seed = 1;
    const RunRecord a = run_experiment(cfg);
    cfg.seed = 99;
    const RunRecord b = run_experiment(cfg);
    REQUIRE(a.traces.size() == b.traces.size());
    for (std::size_t i = 0; i < a.traces.size(); ++i) CHECK(a.traces[i].loss == b.traces[i].loss);

    ExperimentConfig z = cfg;
    z.optimizer.kind = "zosgd";
    z.optimizer.samples = 4;
    z.seed = 1;
    const RunRecord c = run_experiment(z);
    z.seed = 99;
    const RunRecord d = run_experiment(z);
    bool differs = false;
    for (std::size_t i = 0; i < c.traces.size(); ++i)
        if (c.traces[i].loss != d.traces[i].loss) differs = true;
    CHECK(differs);
}

TEST_CASE("mid-run evaluation failure flushes the rows written so far") {
    // one absurd step sends rosenbrock's quartic term past the double range
    ExperimentConfig cfg = parse_config(R"({
      "objective": {"kind": "rosenbrock", "n": 4, "x0": 2.0},
      "optimizer": {"kind": "cocd", "alpha": 1e150, "budget": 4},
      "steps": 200
    })");
    const std::string out = tmp_path("cocd_fail.csv");
    cfg.out = out;
    CHECK_THROWS_AS(run_experiment(cfg), EvaluationError);
    std::ifstream in(out);
    REQUIRE(in);
    std::string header;
    std::getline(in, header);
    CHECK(header == kMetricsHeader);
    int rows = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows >= 1);  // at least the initial row reached the disk
    std::remove(out.c_str());
    std::remove((out + ".config.json").c_str());
}
