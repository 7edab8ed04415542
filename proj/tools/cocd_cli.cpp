// Command-line experiment runner: seeded training runs, hyperparameter
// sweeps, budget-matched method comparisons, budget-vs-error studies, and a
// built-in invariant suite. Exit codes: 0 success, 2 config error, 3 runtime
// evaluation failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cocd/harness.hpp"
#include "cocd/selftest.hpp"

namespace {

void apply_overrides(cocd::ExperimentConfig& cfg, const std::optional<std::uint64_t>& seed,
                     const std::optional<std::string>& out,
                     const std::optional<long long>& verify_every, bool header) {
    if (seed) cfg.seed = *seed;
    if (out) cfg.out = *out;
    if (verify_every) cfg.verify_every = *verify_every;
    if (header) cfg.objective.dataset.header = true;
}

void print_echo(const std::vector<std::string>& echo) {
    for (const auto& line : echo) std::cout << "note: " << line << '\n';
}

void print_final(const cocd::RunRecord& rec) {
    std::printf("steps: %zu  queries: %lld (+%lld diagnostic)  wall: %.2fs\n", rec.traces.size(),
                rec.budget_queries, rec.diagnostic_queries, rec.wall_seconds);
    std::printf("final train loss: %.6g\n", rec.final_train_loss);
    if (!std::isnan(rec.final_val_loss))
        std::printf("final validation loss: %.6g\n", rec.final_val_loss);
}

std::vector<double> parse_values(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        out.push_back(std::stod(tok));
    }
    if (out.empty()) throw cocd::ConfigError("--values must contain at least one number");
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cocd - budget-aware zeroth-order optimization toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> config_paths;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<long long> verify_every;
    bool header = false;
    std::string axis_name_arg;
    std::string values_arg;
    std::string budgets_arg;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed, "override the stream seed");
        cmd->add_option("--out", out, "override the output CSV path");
        cmd->add_option("--verify-every", verify_every,
                        "verification cadence in steps (0 disables)");
        cmd->add_flag("--header", header, "dataset CSV files carry a header line");
    };

    CLI::App* run_cmd = app.add_subcommand("run", "execute one experiment");
    run_cmd->add_option("config", config_path, "experiment config (JSON)")->required();
    add_common(run_cmd);

    CLI::App* sweep_cmd = app.add_subcommand("sweep", "one run per axis value");
    sweep_cmd->add_option("config", config_path, "base experiment config")->required();
    sweep_cmd->add_option("--axis", axis_name_arg, "epsilon|gamma|budget|memory")->required();
    sweep_cmd->add_option("--values", values_arg, "comma-separated values")->required();
    add_common(sweep_cmd);

    CLI::App* compare_cmd = app.add_subcommand("compare", "budget-matched method comparison");
    compare_cmd->add_option("configs", config_paths, "experiment configs")->required();
    add_common(compare_cmd);

    CLI::App* bound_cmd = app.add_subcommand("bound-check", "staleness error vs compute budget");
    bound_cmd->add_option("config", config_path, "base experiment config")->required();
    bound_cmd->add_option("--budgets", budgets_arg, "comma-separated ascending budgets")
        ->required();
    add_common(bound_cmd);

    app.add_subcommand("verify", "run the built-in invariant suite");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) {
            cocd::ExperimentConfig cfg = cocd::load_config_file(config_path);
            apply_overrides(cfg, seed, out, verify_every, header);
            std::vector<std::string> echo;
            const cocd::RunRecord rec = cocd::run_experiment(cfg, &echo);
            print_echo(echo);
            print_final(rec);
            if (!cfg.out.empty()) std::cout << "metrics: " << cfg.out << '\n';
        } else if (sweep_cmd->parsed()) {
            cocd::ExperimentConfig cfg = cocd::load_config_file(config_path);
            apply_overrides(cfg, seed, {}, verify_every, header);
            const cocd::SweepAxis axis = cocd::parse_axis(axis_name_arg);
            const cocd::SweepRecord rec = cocd::sweep(cfg, axis, parse_values(values_arg));
            for (std::size_t i = 0; i < rec.runs.size(); ++i) {
                std::printf("%s=%g  final train loss: %.6g", axis_name_arg.c_str(), rec.values[i],
                            rec.runs[i].final_train_loss);
                if (!std::isnan(rec.runs[i].final_val_loss))
                    std::printf("  val: %.6g", rec.runs[i].final_val_loss);
                std::printf("\n");
            }
            const std::string path = out.value_or("sweep_" + axis_name_arg + ".csv");
            cocd::emit_sweep(rec, path);
            std::cout << "comparison CSV: " << path << '\n';
        } else if (compare_cmd->parsed()) {
            std::vector<cocd::ExperimentConfig> cfgs;
            for (const auto& p : config_paths) {
                cocd::ExperimentConfig cfg = cocd::load_config_file(p);
                apply_overrides(cfg, seed, {}, verify_every, header);
                cfg.out.clear();
                cfgs.push_back(std::move(cfg));
            }
            const cocd::ComparisonRecord rec = cocd::compare_budget_matched(cfgs);
            std::printf("matched budget: %lld queries/step\n", rec.queries_per_step);
            for (std::size_t i = 0; i < rec.runs.size(); ++i)
                std::printf("%-8s final train loss: %.6g\n", rec.labels[i].c_str(),
                            rec.runs[i].final_train_loss);
            const std::string path = out.value_or("compare.csv");
            cocd::emit_comparison(rec, path);
            std::cout << "comparison CSV: " << path << '\n';
        } else if (bound_cmd->parsed()) {
            cocd::ExperimentConfig cfg = cocd::load_config_file(config_path);
            apply_overrides(cfg, seed, {}, verify_every, header);
            std::vector<std::size_t> budgets;
            for (double v : parse_values(budgets_arg))
                budgets.push_back(static_cast<std::size_t>(v));
            const cocd::BudgetStudyRecord rec = cocd::budget_error_study(cfg, budgets);
            for (const auto& p : rec.points)
                std::printf("B=%-6zu mean staleness error: %.6g%s\n", p.budget,
                            p.mean_staleness_error, p.in_fit ? "" : "  (excluded from fit)");
            std::printf("fit vs log2(B): slope %.6g  intercept %.6g  R^2 %.4f\n", rec.slope,
                        rec.intercept, rec.r2);
            const std::string path = out.value_or("bound_check.csv");
            cocd::emit_budget_study(rec, path);
            std::cout << "study CSV: " << path << '\n';
        } else {
            return cocd::run_selftest(std::cout) ? 0 : 1;
        }
    } catch (const cocd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const cocd::EvaluationError& e) {
        std::cerr << "evaluation failure: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
