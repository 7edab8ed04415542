#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cocd/analysis.hpp"
#include "cocd/baselines.hpp"
#include "cocd/dataset.hpp"
#include "cocd/errors.hpp"
#include "cocd/mlp.hpp"
#include "cocd/objective.hpp"
#include "cocd/optimizer.hpp"
#include "cocd/param_store.hpp"

namespace cocd {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// experiment configuration
// ---------------------------------------------------------------------------

struct DatasetSpec {
    std::string kind = "synthetic";  // synthetic | csv
    // synthetic
    std::size_t rows = 512;
    std::size_t val_rows = 0;
    std::uint64_t data_seed = 1;
    double noise_std = 0.05;
    std::size_t teacher_hidden = 16;
    // csv
    std::string path;
    std::string val_path;
    bool header = false;
};

struct ObjectiveSpec {
    std::string kind;  // quadratic | rosenbrock | oscillatory | mlp
    std::size_t n = 0;
    std::vector<double> diag;  // quadratic, optional
    std::optional<std::pair<double, double>> diag_linspace;
    double shift = 0.0;
    double amplitude = 0.5;   // oscillatory
    double frequency = 50.0;  // oscillatory
    double x0 = 1.0;
    std::optional<std::pair<double, double>> x0_range;
    std::uint64_t x0_seed = 0;
    std::vector<std::size_t> layers;  // mlp
    Activation activation = Activation::Tanh;
    std::uint64_t init_seed = 1;
    DatasetSpec dataset;
};

struct OptimizerSpec {
    std::string kind = "cocd";  // cocd | bccd | spsa | zosgd | fullfd
    OptimizerConfig base;
    bool epsilon_given = false;
    std::optional<double> memory_fraction;
    std::size_t samples = 32;  // randomized baselines
};

struct VerificationConfig {
    std::size_t l_eps_pairs = 8;
    double l_eps_box = 0.5;
    double safety_factor = 2.0;
    std::size_t delta_window = 0;  // 0 = ceil(n/B)
};

struct ExperimentConfig {
    ObjectiveSpec objective;
    OptimizerSpec optimizer;
    long long steps = 100;
    std::size_t batch_size = 64;
    BatchMode batch_mode = BatchMode::Sequential;
    long long verify_every = 0;
    std::uint64_t seed = 0;
    std::string out;
    VerificationConfig verification;
};

namespace detail_cfg {

inline void reject_unknown(const json& j, const std::vector<std::string>& allowed,
                           const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& k : allowed)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError("bad value for key '" + key + "': " + e.what());
    }
}

inline std::pair<double, double> get_range(const json& j, const std::string& key) {
    const auto arr = j.at(key);
    if (!arr.is_array() || arr.size() != 2)
        throw ConfigError("key '" + key + "' must be a [lo, hi] pair");
    return {arr[0].get<double>(), arr[1].get<double>()};
}

}  // namespace detail_cfg

inline DatasetSpec parse_dataset_spec(const json& j) {
    using namespace detail_cfg;
    DatasetSpec d;
    d.kind = get_or<std::string>(j, "kind", "synthetic");
    if (d.kind == "synthetic") {
        reject_unknown(j, {"kind", "rows", "val_rows", "data_seed", "noise_std", "teacher_hidden"},
                       "objective.dataset");
        d.rows = get_or<std::size_t>(j, "rows", d.rows);
        d.val_rows = get_or<std::size_t>(j, "val_rows", d.val_rows);
        d.data_seed = get_or<std::uint64_t>(j, "data_seed", d.data_seed);
        d.noise_std = get_or<double>(j, "noise_std", d.noise_std);
        d.teacher_hidden = get_or<std::size_t>(j, "teacher_hidden", d.teacher_hidden);
    } else if (d.kind == "csv") {
        reject_unknown(j, {"kind", "path", "val_path", "header"}, "objective.dataset");
        if (!j.contains("path")) throw ConfigError("csv dataset requires 'path'");
        d.path = j.at("path").get<std::string>();
        d.val_path = get_or<std::string>(j, "val_path", "");
        d.header = get_or<bool>(j, "header", false);
    } else {
        throw ConfigError("unknown dataset kind '" + d.kind + "'");
    }
    return d;
}

inline ObjectiveSpec parse_objective_spec(const json& j) {
    using namespace detail_cfg;
    ObjectiveSpec o;
    if (!j.contains("kind")) throw ConfigError("objective requires 'kind'");
    o.kind = j.at("kind").get<std::string>();
    if (o.kind == "quadratic") {
        reject_unknown(j, {"kind", "n", "diag", "diag_linspace", "shift", "x0", "x0_range",
                           "x0_seed"},
                       "objective");
        o.n = get_or<std::size_t>(j, "n", 0);
        if (j.contains("diag")) o.diag = j.at("diag").get<std::vector<double>>();
        if (j.contains("diag_linspace")) o.diag_linspace = get_range(j, "diag_linspace");
        o.shift = get_or<double>(j, "shift", 0.0);
        if (o.n == 0 && o.diag.empty()) throw ConfigError("quadratic requires 'n' or 'diag'");
        if (o.n == 0) o.n = o.diag.size();
        if (!o.diag.empty() && o.diag.size() != o.n)
            throw ConfigError("quadratic: 'diag' length must equal n");
    } else if (o.kind == "rosenbrock") {
        reject_unknown(j, {"kind", "n", "x0", "x0_range", "x0_seed"}, "objective");
        o.n = get_or<std::size_t>(j, "n", 0);
        o.x0 = 0.0;
        if (o.n < 2) throw ConfigError("rosenbrock requires n >= 2");
    } else if (o.kind == "oscillatory") {
        reject_unknown(j, {"kind", "n", "amplitude", "frequency", "x0", "x0_range", "x0_seed"},
                       "objective");
        o.n = get_or<std::size_t>(j, "n", 0);
        o.amplitude = get_or<double>(j, "amplitude", o.amplitude);
        o.frequency = get_or<double>(j, "frequency", o.frequency);
        if (o.n == 0) throw ConfigError("oscillatory requires 'n'");
    } else if (o.kind == "mlp") {
        reject_unknown(j, {"kind", "layers", "activation", "init_seed", "dataset"}, "objective");
        if (!j.contains("layers")) throw ConfigError("mlp requires 'layers'");
        o.layers = j.at("layers").get<std::vector<std::size_t>>();
        const std::string act = get_or<std::string>(j, "activation", "tanh");
        if (act == "tanh")
            o.activation = Activation::Tanh;
        else if (act == "relu")
            o.activation = Activation::Relu;
        else
            throw ConfigError("activation must be 'tanh' or 'relu'");
        o.init_seed = get_or<std::uint64_t>(j, "init_seed", o.init_seed);
        if (!j.contains("dataset")) throw ConfigError("mlp requires 'dataset'");
        o.dataset = parse_dataset_spec(j.at("dataset"));
        MlpSpec spec{o.layers, o.activation};
        spec.validate();
        o.n = spec.param_count();
    } else {
        throw ConfigError("unknown objective kind '" + o.kind + "'");
    }
    if (j.contains("x0")) o.x0 = j.at("x0").get<double>();
    if (j.contains("x0_range")) o.x0_range = get_range(j, "x0_range");
    o.x0_seed = get_or<std::uint64_t>(j, "x0_seed", 0);
    return o;
}

inline OptimizerSpec parse_optimizer_spec(const json& j) {
    using namespace detail_cfg;
    OptimizerSpec s;
    reject_unknown(j, {"kind", "alpha", "gamma", "epsilon", "budget", "memory", "memory_fraction",
                       "fd_scheme", "weight_decay", "descent_window", "samples"},
                   "optimizer");
    s.kind = get_or<std::string>(j, "kind", "cocd");
    if (s.kind != "cocd" && s.kind != "bccd" && s.kind != "spsa" && s.kind != "zosgd" &&
        s.kind != "fullfd")
        throw ConfigError("unknown optimizer kind '" + s.kind + "'");
    s.base.alpha = get_or<double>(j, "alpha", s.base.alpha);
    s.base.gamma = get_or<double>(j, "gamma", s.base.gamma);
    if (j.contains("epsilon")) {
        s.base.epsilon = j.at("epsilon").get<double>();
        s.epsilon_given = true;
    }
    s.base.budget_B = get_or<std::size_t>(j, "budget", 64);
    s.base.memory_m = get_or<std::size_t>(j, "memory", 0);
    if (j.contains("memory_fraction")) {
        const double f = j.at("memory_fraction").get<double>();
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("memory_fraction must lie in (0, 1]");
        s.memory_fraction = f;
    }
    const std::string scheme = get_or<std::string>(j, "fd_scheme", "central");
    if (scheme == "central")
        s.base.fd_scheme = FdScheme::Central;
    else if (scheme == "forward")
        s.base.fd_scheme = FdScheme::Forward;
    else
        throw ConfigError("fd_scheme must be 'central' or 'forward'");
    s.base.weight_decay = get_or<double>(j, "weight_decay", 0.0);
    const std::string window = get_or<std::string>(j, "descent_window", "sliding");
    if (window == "sliding")
        s.base.descent_window = DescentWindow::Sliding;
    else if (window == "fixed")
        s.base.descent_window = DescentWindow::Fixed;
    else
        throw ConfigError("descent_window must be 'sliding' or 'fixed'");
    s.samples = get_or<std::size_t>(j, "samples", 32);
    if (s.samples < 1) throw ConfigError("samples must be >= 1");
    s.base.validate();  // alpha/gamma/epsilon ranges
    return s;
}

inline ExperimentConfig parse_config_json(const json& j) {
    using namespace detail_cfg;
    reject_unknown(j, {"objective", "optimizer", "steps", "batch_size", "batch_mode",
                       "verify_every", "seed", "out", "verification"},
                   "config");
    ExperimentConfig cfg;
    if (!j.contains("objective")) throw ConfigError("config requires 'objective'");
    if (!j.contains("optimizer")) throw ConfigError("config requires 'optimizer'");
    cfg.objective = parse_objective_spec(j.at("objective"));
    cfg.optimizer = parse_optimizer_spec(j.at("optimizer"));
    cfg.steps = get_or<long long>(j, "steps", 100);
    if (cfg.steps < 0) throw ConfigError("steps must be >= 0");
    cfg.batch_size = get_or<std::size_t>(j, "batch_size", 64);
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    const std::string mode = get_or<std::string>(j, "batch_mode", "sequential");
    if (mode == "sequential")
        cfg.batch_mode = BatchMode::Sequential;
    else if (mode == "shuffle")
        cfg.batch_mode = BatchMode::Shuffle;
    else
        throw ConfigError("batch_mode must be 'sequential' or 'shuffle'");
    cfg.verify_every = get_or<long long>(j, "verify_every", 0);
    if (cfg.verify_every < 0) throw ConfigError("verify_every must be >= 0");
    cfg.seed = get_or<std::uint64_t>(j, "seed", 0);
    cfg.out = get_or<std::string>(j, "out", "");
    if (j.contains("verification")) {
        const json& v = j.at("verification");
        reject_unknown(v, {"l_eps_pairs", "l_eps_box", "safety_factor", "delta_window"},
                       "verification");
        cfg.verification.l_eps_pairs =
            get_or<std::size_t>(v, "l_eps_pairs", cfg.verification.l_eps_pairs);
        cfg.verification.l_eps_box = get_or<double>(v, "l_eps_box", cfg.verification.l_eps_box);
        cfg.verification.safety_factor =
            get_or<double>(v, "safety_factor", cfg.verification.safety_factor);
        cfg.verification.delta_window =
            get_or<std::size_t>(v, "delta_window", cfg.verification.delta_window);
    }
    return cfg;
}

inline ExperimentConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return parse_config_json(j);
}

inline ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

// Resolved-config echo, also used as the sidecar format.
inline json config_to_json(const ExperimentConfig& cfg) {
    json o;
    o["kind"] = cfg.objective.kind;
    if (cfg.objective.kind == "quadratic") {
        o["n"] = cfg.objective.n;
        if (!cfg.objective.diag.empty()) o["diag"] = cfg.objective.diag;
        if (cfg.objective.diag_linspace)
            o["diag_linspace"] = {cfg.objective.diag_linspace->first,
                                  cfg.objective.diag_linspace->second};
        o["shift"] = cfg.objective.shift;
    } else if (cfg.objective.kind == "rosenbrock") {
        o["n"] = cfg.objective.n;
    } else if (cfg.objective.kind == "oscillatory") {
        o["n"] = cfg.objective.n;
        o["amplitude"] = cfg.objective.amplitude;
        o["frequency"] = cfg.objective.frequency;
    } else if (cfg.objective.kind == "mlp") {
        o["layers"] = cfg.objective.layers;
        o["activation"] = cfg.objective.activation == Activation::Tanh ? "tanh" : "relu";
        o["init_seed"] = cfg.objective.init_seed;
        json d;
        d["kind"] = cfg.objective.dataset.kind;
        if (cfg.objective.dataset.kind == "synthetic") {
            d["rows"] = cfg.objective.dataset.rows;
            d["val_rows"] = cfg.objective.dataset.val_rows;
            d["data_seed"] = cfg.objective.dataset.data_seed;
            d["noise_std"] = cfg.objective.dataset.noise_std;
            d["teacher_hidden"] = cfg.objective.dataset.teacher_hidden;
        } else {
            d["path"] = cfg.objective.dataset.path;
            if (!cfg.objective.dataset.val_path.empty())
                d["val_path"] = cfg.objective.dataset.val_path;
            d["header"] = cfg.objective.dataset.header;
        }
        o["dataset"] = d;
    }
    if (cfg.objective.kind != "mlp") {
        if (cfg.objective.x0_range)
            o["x0_range"] = {cfg.objective.x0_range->first, cfg.objective.x0_range->second};
        else
            o["x0"] = cfg.objective.x0;
        o["x0_seed"] = cfg.objective.x0_seed;
    }

    json p;
    p["kind"] = cfg.optimizer.kind;
    p["alpha"] = cfg.optimizer.base.alpha;
    p["gamma"] = cfg.optimizer.base.gamma;
    p["epsilon"] = cfg.optimizer.base.epsilon;
    p["budget"] = cfg.optimizer.base.budget_B;
    p["memory"] = cfg.optimizer.base.memory_m;
    if (cfg.optimizer.memory_fraction) p["memory_fraction"] = *cfg.optimizer.memory_fraction;
    p["fd_scheme"] = cfg.optimizer.base.fd_scheme == FdScheme::Central ? "central" : "forward";
    p["weight_decay"] = cfg.optimizer.base.weight_decay;
    p["descent_window"] =
        cfg.optimizer.base.descent_window == DescentWindow::Sliding ? "sliding" : "fixed";
    if (cfg.optimizer.kind == "spsa" || cfg.optimizer.kind == "zosgd")
        p["samples"] = cfg.optimizer.samples;

    json root;
    root["objective"] = o;
    root["optimizer"] = p;
    root["steps"] = cfg.steps;
    root["batch_size"] = cfg.batch_size;
    root["batch_mode"] = cfg.batch_mode == BatchMode::Sequential ? "sequential" : "shuffle";
    root["verify_every"] = cfg.verify_every;
    root["seed"] = cfg.seed;
    root["out"] = cfg.out;
    json v;
    v["l_eps_pairs"] = cfg.verification.l_eps_pairs;
    v["l_eps_box"] = cfg.verification.l_eps_box;
    v["safety_factor"] = cfg.verification.safety_factor;
    v["delta_window"] = cfg.verification.delta_window;
    root["verification"] = v;
    return root;
}

// ---------------------------------------------------------------------------
// experiment assembly
// ---------------------------------------------------------------------------

struct Experiment {
    ExperimentConfig config;
    std::unique_ptr<Objective> objective;
    std::unique_ptr<Objective> val_objective;
    ParameterStore store;
    std::optional<MinibatchCursor> cursor;
    std::optional<GradientBuffer> buffer;  // cocd / bccd
    OptimizerConfig ocfg;                  // resolved, cyclic methods
    RandomizedZoConfig zcfg;               // randomized methods
    std::size_t n = 0;
    long long queries_per_step = 0;
    std::vector<std::string> echo;
};

namespace detail_cfg {

inline std::vector<double> resolve_diag(const ObjectiveSpec& o) {
    if (!o.diag.empty()) return o.diag;
    if (o.diag_linspace) {
        std::vector<double> d(o.n);
        for (std::size_t i = 0; i < o.n; ++i)
            d[i] = o.diag_linspace->first +
                   (o.diag_linspace->second - o.diag_linspace->first) *
                       (o.n > 1 ? static_cast<double>(i) / static_cast<double>(o.n - 1) : 0.0);
        return d;
    }
    return std::vector<double>(o.n, 1.0);
}

inline void fill_x0(ParameterStore& store, const ObjectiveSpec& o) {
    if (o.x0_range) {
        SplitMix64 rng(substream(o.x0_seed, 0x78302020));
        for (std::size_t p = 0; p < store.num_tensors(); ++p)
            for (double& v : store.param(p).values)
                v = rng.uniform(o.x0_range->first, o.x0_range->second);
    } else {
        store.fill(o.x0);
    }
}

inline std::string percent_note(std::size_t B, std::size_t n) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "budget %zu = %.1f%% of %zu parameters", B,
                  100.0 * static_cast<double>(B) / static_cast<double>(n), n);
    return buf;
}

}  // namespace detail_cfg

inline Experiment build_experiment(const ExperimentConfig& cfg) {
    Experiment ex;
    ex.config = cfg;
    const ObjectiveSpec& o = cfg.objective;

    if (o.kind == "quadratic") {
        const std::vector<double> d = detail_cfg::resolve_diag(o);
        ex.objective = std::make_unique<QuadraticObjective>(d, std::vector<double>(o.n, o.shift));
        ex.store = make_flat_store(o.n);
        detail_cfg::fill_x0(ex.store, o);
    } else if (o.kind == "rosenbrock") {
        ex.objective = std::make_unique<RosenbrockObjective>(o.n);
        ex.store = make_flat_store(o.n);
        detail_cfg::fill_x0(ex.store, o);
    } else if (o.kind == "oscillatory") {
        ex.objective = std::make_unique<OscillatoryQuadraticObjective>(o.amplitude, o.frequency, o.n);
        ex.store = make_flat_store(o.n);
        detail_cfg::fill_x0(ex.store, o);
    } else if (o.kind == "mlp") {
        MlpSpec spec{o.layers, o.activation};
        Dataset train, val;
        if (o.dataset.kind == "synthetic") {
            const std::size_t total = o.dataset.rows + o.dataset.val_rows;
            Dataset all = make_synthetic_regression(total, spec.widths.front(), spec.widths.back(),
                                                    o.dataset.data_seed, o.dataset.noise_std,
                                                    o.dataset.teacher_hidden);
            train.n_features = val.n_features = all.n_features;
            train.n_targets = val.n_targets = all.n_targets;
            const std::size_t nf = all.n_features, nt = all.n_targets, r = o.dataset.rows;
            train.features.assign(all.features.begin(), all.features.begin() + r * nf);
            train.targets.assign(all.targets.begin(), all.targets.begin() + r * nt);
            val.features.assign(all.features.begin() + r * nf, all.features.end());
            val.targets.assign(all.targets.begin() + r * nt, all.targets.end());
        } else {
            train = load_csv_dataset(o.dataset.path, spec.widths.front(), spec.widths.back(),
                                     o.dataset.header);
            if (!o.dataset.val_path.empty())
                val = load_csv_dataset(o.dataset.val_path, spec.widths.front(),
                                       spec.widths.back(), o.dataset.header);
        }
        if (train.rows() == 0) throw ConfigError("mlp training dataset is empty");
        ex.cursor.emplace(train.rows(), cfg.batch_size, cfg.batch_mode, cfg.seed);
        ex.objective = std::make_unique<MlpRegressionObjective>(spec, std::move(train));
        if (val.rows() > 0)
            ex.val_objective = std::make_unique<MlpRegressionObjective>(spec, std::move(val));
        ex.store = make_mlp_store(spec);
        init_mlp_store(ex.store, spec, o.init_seed);
    } else {
        throw ConfigError("unknown objective kind '" + o.kind + "'");
    }

    ex.n = ex.store.total_params();
    const OptimizerSpec& s = cfg.optimizer;
    if (s.kind == "cocd" || s.kind == "bccd" || s.kind == "fullfd") {
        OptimizerConfig base = s.base;
        if (s.kind == "bccd") {
            base.gamma = 0.0;
            if (!s.epsilon_given) base.epsilon = 1e-6;
        }
        if (s.kind == "fullfd") {
            base.budget_B = ex.n;
            base.memory_m = ex.n;
        }
        if (s.memory_fraction) {
            const double m = std::round(*s.memory_fraction * static_cast<double>(ex.n));
            base.memory_m = std::max<std::size_t>(1, static_cast<std::size_t>(m));
        }
        ex.ocfg = base.resolved(ex.n, &ex.echo);
        if (s.kind != "fullfd") ex.buffer.emplace(ex.n, ex.ocfg.memory_m);
        ex.queries_per_step = queries_per_step(ex.ocfg, ex.n);
        ex.echo.push_back(detail_cfg::percent_note(ex.ocfg.budget_B, ex.n));
    } else {
        ex.zcfg.alpha = s.base.alpha;
        ex.zcfg.epsilon = s.epsilon_given ? s.base.epsilon : 1e-3;
        ex.zcfg.samples_q = s.samples;
        ex.zcfg.seed = cfg.seed;
        ex.zcfg.dist = s.kind == "spsa" ? ZoDistribution::Rademacher : ZoDistribution::Gaussian;
        ex.zcfg.validate();
        ex.queries_per_step = 2 * static_cast<long long>(s.samples);
        if (cfg.verify_every > 0)
            ex.echo.push_back("verification cadence ignored for randomized optimizer '" + s.kind +
                              "'");
    }
    return ex;
}

// ---------------------------------------------------------------------------
// run records and CSV emission
// ---------------------------------------------------------------------------

struct RunRecord {
    ExperimentConfig config;
    std::vector<StepTrace> traces;
    double initial_loss = std::numeric_limits<double>::quiet_NaN();
    std::vector<long long> oracle_cum;  // diagnostic queries after row i (row 0 = initial)
    double final_train_loss = std::numeric_limits<double>::quiet_NaN();
    double final_val_loss = std::numeric_limits<double>::quiet_NaN();
    double wall_seconds = 0.0;
    long long budget_queries = 0;
    long long diagnostic_queries = 0;
    double l_eps_hat = std::numeric_limits<double>::quiet_NaN();
    std::vector<BoundAuditRow> audit;
};

inline const char* kMetricsHeader =
    "step,loss,step_norm,queries_cum,oracle_queries_cum,staleness_error,bound,grad_diff";

namespace detail_csv {

inline std::string cell(double v) { return std::isnan(v) ? "" : detail::format_double(v); }

inline std::string metrics_row(long long step, double loss, double step_norm, long long q_cum,
                               long long o_cum, double staleness, double bound, double gd) {
    std::string row = std::to_string(step);
    row += ',';
    row += cell(loss);
    row += ',';
    row += cell(step_norm);
    row += ',';
    row += std::to_string(q_cum);
    row += ',';
    row += std::to_string(o_cum);
    row += ',';
    row += cell(staleness);
    row += ',';
    row += cell(bound);
    row += ',';
    row += cell(gd);
    return row;
}

// q_cum must equal the budget-query total through row i
inline std::string record_row(const RunRecord& rec, std::size_t i, long long q_cum) {
    if (i == 0)
        return metrics_row(0, rec.initial_loss, std::numeric_limits<double>::quiet_NaN(), 0,
                           rec.oracle_cum.empty() ? 0 : rec.oracle_cum[0],
                           std::numeric_limits<double>::quiet_NaN(),
                           std::numeric_limits<double>::quiet_NaN(),
                           std::numeric_limits<double>::quiet_NaN());
    const StepTrace& t = rec.traces[i - 1];
    return metrics_row(t.step, t.loss, t.step_norm, q_cum,
                       i < rec.oracle_cum.size() ? rec.oracle_cum[i] : 0, t.staleness_error,
                       t.bound, t.grad_diff);
}

}  // namespace detail_csv

inline void emit_metrics(const RunRecord& rec, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << kMetricsHeader << '\n';
    long long q_cum = 0;
    for (std::size_t i = 0; i <= rec.traces.size(); ++i) {
        if (i > 0) q_cum += rec.traces[i - 1].queries_used;
        out << detail_csv::record_row(rec, i, q_cum) << '\n';
    }
    if (!out) throw std::runtime_error("write failure on " + path);
}

inline void emit_config_sidecar(const ExperimentConfig& cfg, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << config_to_json(cfg).dump(2) << '\n';
}

// Parses a metrics CSV back into a record (enough for re-emission and
// plotting; config and final metrics are not part of the CSV).
inline RunRecord load_record(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader)
        throw ConfigError("unrecognized metrics header in " + path);
    RunRecord rec;
    long long prev_q = 0;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string tok;
        while (std::getline(ls, tok, ',')) cells.push_back(tok);
        cells.resize(8);
        auto num = [](const std::string& s) {
            return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
        };
        if (first) {
            rec.initial_loss = num(cells[1]);
            rec.oracle_cum.push_back(cells[4].empty() ? 0 : std::stoll(cells[4]));
            first = false;
            continue;
        }
        StepTrace t;
        t.step = std::stoll(cells[0]);
        t.loss = num(cells[1]);
        t.step_norm = num(cells[2]);
        const long long q_cum = cells[3].empty() ? prev_q : std::stoll(cells[3]);
        t.queries_used = q_cum - prev_q;
        prev_q = q_cum;
        rec.oracle_cum.push_back(cells[4].empty() ? 0 : std::stoll(cells[4]));
        t.staleness_error = num(cells[5]);
        t.bound = num(cells[6]);
        t.grad_diff = num(cells[7]);
        rec.traces.push_back(t);
    }
    rec.budget_queries = prev_q;
    if (!rec.oracle_cum.empty()) rec.diagnostic_queries = rec.oracle_cum.back();
    return rec;
}

// ---------------------------------------------------------------------------
// the run loop
// ---------------------------------------------------------------------------

inline RunRecord run_experiment(const ExperimentConfig& cfg_in,
                                std::vector<std::string>* echo_out = nullptr) {
    Experiment ex = build_experiment(cfg_in);
    const ExperimentConfig& cfg = ex.config;
    if (echo_out) *echo_out = ex.echo;

    RunRecord rec;
    rec.config = cfg;
    const auto t_start = std::chrono::steady_clock::now();

    std::ofstream csv;
    if (!cfg.out.empty()) {
        csv.open(cfg.out);
        if (!csv) throw std::runtime_error("cannot write " + cfg.out);
        csv << kMetricsHeader << '\n';
        emit_config_sidecar(cfg, cfg.out + ".config.json");
    }

    const bool cyclic = static_cast<bool>(ex.buffer);
    const bool verify = cfg.verify_every > 0 && cyclic;

    // pinned batch for smoothness estimation: the first scheduled batch
    std::optional<BatchSpec> l_eps_batch;
    if (verify) {
        if (ex.cursor) {
            MinibatchCursor peek = *ex.cursor;
            l_eps_batch = peek.next();
        }
        const SmoothnessEstimate est = estimate_L_eps(
            *ex.objective, ex.store, ex.ocfg.epsilon, cfg.verification.l_eps_pairs, cfg.seed,
            cfg.verification.l_eps_box, l_eps_batch ? &*l_eps_batch : nullptr, /*with_L=*/false);
        rec.l_eps_hat = est.L_eps;
    }

    rec.initial_loss = ex.objective->evaluate(ex.store, nullptr);
    rec.oracle_cum.push_back(ex.objective->query_count() - rec.budget_queries);
    if (csv.is_open()) csv << detail_csv::record_row(rec, 0, 0) << '\n' << std::flush;

    BudgetLedger ledger;
    ledger.queries_per_step = ex.queries_per_step;
    std::vector<double> step_norms;
    step_norms.reserve(static_cast<std::size_t>(cfg.steps));

    try {
        for (long long t = 1; t <= cfg.steps; ++t) {
            BatchSpec batch_storage;
            const BatchSpec* batch = nullptr;
            if (ex.cursor) {
                batch_storage = ex.cursor->next();
                batch = &batch_storage;
            }
            StepTrace trace;
            const bool verify_now = verify && (t % cfg.verify_every == 0);
            if (cyclic) {
                trace = step_with_hook(
                    *ex.buffer, ex.store, *ex.objective, ex.ocfg, batch,
                    [&](const GradientBuffer& b, ParameterStore& s, StepTrace& tr) {
                        if (!verify_now) return;
                        tr.staleness_error =
                            measure_staleness_error(b, *ex.objective, s, ex.ocfg.epsilon, batch);
                        const std::size_t horizon =
                            cfg.verification.delta_window > 0
                                ? cfg.verification.delta_window
                                : (ex.n + ex.ocfg.budget_B - 1) / ex.ocfg.budget_B;
                        const double delta =
                            step_norms.empty() ? 0.0 : track_delta(step_norms, horizon).delta;
                        tr.bound = error_bound(ex.n, ex.ocfg.budget_B,
                                               cfg.verification.safety_factor * rec.l_eps_hat,
                                               delta);
                        BoundAuditRow row;
                        row.step = t;
                        row.measured_error = tr.staleness_error;
                        row.bound = tr.bound;
                        row.L_eps_hat = rec.l_eps_hat;
                        row.delta_hat = delta;
                        row.satisfied = tr.staleness_error <= tr.bound;
                        rec.audit.push_back(row);
                    });
            } else if (cfg.optimizer.kind == "fullfd") {
                trace = full_fd_gd_step(ex.store, *ex.objective, ex.ocfg, batch,
                                        static_cast<std::uint64_t>(t - 1));
            } else if (ex.zcfg.dist == ZoDistribution::Rademacher) {
                trace = spsa_step(ex.store, *ex.objective, ex.zcfg, batch,
                                  static_cast<std::uint64_t>(t - 1));
            } else {
                trace = zo_sgd_step(ex.store, *ex.objective, ex.zcfg, batch,
                                    static_cast<std::uint64_t>(t - 1));
            }
            trace.step = t;
            ledger.record(trace.queries_used);
            rec.budget_queries = ledger.cumulative;
            rec.traces.push_back(trace);
            rec.oracle_cum.push_back(ex.objective->query_count() - rec.budget_queries);
            step_norms.push_back(trace.step_norm);
            if (csv.is_open())
                csv << detail_csv::record_row(rec, rec.traces.size(), rec.budget_queries) << '\n'
                    << std::flush;
        }
    } catch (...) {
        // flushed rows up to the failure point remain on disk
        rec.diagnostic_queries = rec.oracle_cum.back();
        throw;
    }

    rec.final_train_loss = ex.objective->evaluate(ex.store, nullptr);
    if (ex.val_objective) rec.final_val_loss = ex.val_objective->evaluate(ex.store, nullptr);
    rec.diagnostic_queries = ex.objective->query_count() - rec.budget_queries;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    if (!cfg.out.empty() && !rec.audit.empty()) write_bound_audit(rec.audit, cfg.out + ".audit.csv");
    return rec;
}

// ---------------------------------------------------------------------------
// sweeps, budget-matched comparisons, budget-vs-error studies
// ---------------------------------------------------------------------------

enum class SweepAxis { Epsilon, Gamma, Budget, Memory };

inline SweepAxis parse_axis(const std::string& name) {
    if (name == "epsilon") return SweepAxis::Epsilon;
    if (name == "gamma") return SweepAxis::Gamma;
    if (name == "budget") return SweepAxis::Budget;
    if (name == "memory") return SweepAxis::Memory;
    throw ConfigError("sweep axis must be one of epsilon|gamma|budget|memory");
}

inline ExperimentConfig apply_axis(const ExperimentConfig& base, SweepAxis axis, double value) {
    ExperimentConfig cfg = base;
    cfg.out.clear();
    switch (axis) {
        case SweepAxis::Epsilon:
            if (!(value > 0.0)) throw ConfigError("epsilon values must be > 0");
            cfg.optimizer.base.epsilon = value;
            cfg.optimizer.epsilon_given = true;
            break;
        case SweepAxis::Gamma:
            if (!(value >= 0.0 && value <= 1.0)) throw ConfigError("gamma must lie in [0,1]");
            cfg.optimizer.base.gamma = value;
            break;
        case SweepAxis::Budget:
            if (!(value >= 1.0)) throw ConfigError("budget values must be >= 1");
            cfg.optimizer.base.budget_B = static_cast<std::size_t>(value);
            break;
        case SweepAxis::Memory:
            if (!(value > 0.0 && value <= 1.0))
                throw ConfigError("memory values are fractions in (0, 1]");
            cfg.optimizer.memory_fraction = value;
            cfg.optimizer.base.memory_m = 0;
            break;
    }
    return cfg;
}

inline std::string axis_name(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::Epsilon: return "epsilon";
        case SweepAxis::Gamma: return "gamma";
        case SweepAxis::Budget: return "budget";
        case SweepAxis::Memory: return "memory";
    }
    return "?";
}

struct SweepRecord {
    SweepAxis axis = SweepAxis::Gamma;
    std::vector<double> values;
    std::vector<RunRecord> runs;
};

// One run per axis value, shared seed, base config untouched. All values are
// validated before any run starts.
inline SweepRecord sweep(const ExperimentConfig& base, SweepAxis axis,
                         const std::vector<double>& values) {
    if (values.empty()) throw ConfigError("sweep requires at least one value");
    std::vector<ExperimentConfig> configs;
    for (double v : values) {
        ExperimentConfig cfg = apply_axis(base, axis, v);
        build_experiment(cfg);  // validate eagerly, abort before launching runs
        configs.push_back(std::move(cfg));
    }
    SweepRecord rec;
    rec.axis = axis;
    rec.values = values;
    for (const auto& cfg : configs) rec.runs.push_back(run_experiment(cfg));
    return rec;
}

inline void emit_sweep(const SweepRecord& rec, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "step";
    for (double v : rec.values) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), ",loss_%s=%g", axis_name(rec.axis).c_str(), v);
        out << buf;
    }
    out << '\n';
    std::size_t max_rows = 0;
    for (const auto& run : rec.runs) max_rows = std::max(max_rows, run.traces.size());
    for (std::size_t i = 0; i <= max_rows; ++i) {
        out << i;
        for (const auto& run : rec.runs) {
            out << ',';
            if (i == 0)
                out << detail_csv::cell(run.initial_loss);
            else if (i <= run.traces.size())
                out << detail_csv::cell(run.traces[i - 1].loss);
        }
        out << '\n';
    }
}

struct ComparisonRecord {
    std::vector<std::string> labels;
    long long queries_per_step = 0;
    std::vector<RunRecord> runs;
};

// Budget-matched comparison: refuses configs whose per-step ledgers differ.
inline ComparisonRecord compare_budget_matched(const std::vector<ExperimentConfig>& configs) {
    if (configs.empty()) throw ConfigError("compare requires at least one config");
    ComparisonRecord rec;
    std::vector<Experiment> built;
    for (const auto& cfg : configs) built.push_back(build_experiment(cfg));
    rec.queries_per_step = built.front().queries_per_step;
    for (std::size_t i = 0; i < built.size(); ++i) {
        if (built[i].queries_per_step != rec.queries_per_step)
            throw ConfigError("budget mismatch: '" + configs[i].optimizer.kind + "' uses " +
                              std::to_string(built[i].queries_per_step) +
                              " queries/step, expected " + std::to_string(rec.queries_per_step));
        std::string label = configs[i].optimizer.kind;
        for (std::size_t k = 0; k < i; ++k)
            if (rec.labels[k] == label) label += "_" + std::to_string(i);
        rec.labels.push_back(label);
    }
    for (const auto& cfg : configs) rec.runs.push_back(run_experiment(cfg));
    return rec;
}

inline void emit_comparison(const ComparisonRecord& rec, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "step,queries_cum";
    for (const auto& l : rec.labels) out << ",loss_" << l;
    out << '\n';
    std::size_t max_rows = 0;
    for (const auto& run : rec.runs) max_rows = std::max(max_rows, run.traces.size());
    for (std::size_t i = 0; i <= max_rows; ++i) {
        out << i << ',' << (static_cast<long long>(i) * rec.queries_per_step);
        for (const auto& run : rec.runs) {
            out << ',';
            if (i == 0)
                out << detail_csv::cell(run.initial_loss);
            else if (i <= run.traces.size())
                out << detail_csv::cell(run.traces[i - 1].loss);
        }
        out << '\n';
    }
}

struct BudgetStudyPoint {
    std::size_t budget = 0;
    double mean_staleness_error = 0.0;
    bool in_fit = true;
};

struct BudgetStudyRecord {
    std::vector<BudgetStudyPoint> points;
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

// Mean staleness error per budget, with a least-squares fit of mean error
// against log2(budget). The exact-refresh point B = n is excluded from the
// fit: its error is identically zero and does not belong to the trend.
inline BudgetStudyRecord budget_error_study(const ExperimentConfig& base,
                                            const std::vector<std::size_t>& budgets) {
    if (budgets.empty()) throw ConfigError("bound-check requires at least one budget");
    for (std::size_t i = 1; i < budgets.size(); ++i)
        if (budgets[i] <= budgets[i - 1]) throw ConfigError("budgets must be ascending");
    BudgetStudyRecord rec;
    for (std::size_t B : budgets) {
        ExperimentConfig cfg = base;
        cfg.out.clear();
        cfg.optimizer.base.budget_B = B;
        if (cfg.verify_every <= 0) cfg.verify_every = 10;
        Experiment probe = build_experiment(cfg);
        if (B > probe.n) throw ConfigError("budget " + std::to_string(B) + " exceeds n");
        const RunRecord run = run_experiment(cfg);
        if (run.audit.empty())
            throw ConfigError("budget study produced no verification checkpoints");
        double mean = 0.0;
        for (const auto& row : run.audit) mean += row.measured_error;
        mean /= static_cast<double>(run.audit.size());
        BudgetStudyPoint pt;
        pt.budget = B;
        pt.mean_staleness_error = mean;
        pt.in_fit = B < probe.n;
        rec.points.push_back(pt);
    }
    // least-squares fit on the in-fit points
    double mx = 0.0, my = 0.0;
    std::size_t cnt = 0;
    for (const auto& p : rec.points)
        if (p.in_fit) {
            mx += std::log2(static_cast<double>(p.budget));
            my += p.mean_staleness_error;
            ++cnt;
        }
    if (cnt < 2) throw ConfigError("budget study needs at least two budgets below n for the fit");
    mx /= static_cast<double>(cnt);
    my /= static_cast<double>(cnt);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (const auto& p : rec.points)
        if (p.in_fit) {
            const double dx = std::log2(static_cast<double>(p.budget)) - mx;
            const double dy = p.mean_staleness_error - my;
            sxx += dx * dx;
            sxy += dx * dy;
            syy += dy * dy;
        }
    rec.slope = sxy / sxx;
    rec.intercept = my - rec.slope * mx;
    double ssres = 0.0;
    for (const auto& p : rec.points)
        if (p.in_fit) {
            const double r = p.mean_staleness_error -
                             (rec.intercept + rec.slope * std::log2(static_cast<double>(p.budget)));
            ssres += r * r;
        }
    rec.r2 = syy > 0.0 ? 1.0 - ssres / syy : 1.0;
    return rec;
}

inline void emit_budget_study(const BudgetStudyRecord& rec, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "budget,log2_budget,mean_staleness_error,in_fit\n";
    for (const auto& p : rec.points)
        out << p.budget << ',' << detail::format_double(std::log2(static_cast<double>(p.budget)))
            << ',' << detail::format_double(p.mean_staleness_error) << ',' << (p.in_fit ? 1 : 0)
            << '\n';
}

}  // namespace cocd
