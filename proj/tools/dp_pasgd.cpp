// dp_pasgd: plan, train, sweep, compare and grid-search DP-PASGD runs.
//
// Exit codes: 0 success, 2 configuration or infeasible budgets, 3 numerical
// divergence.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "dppasgd/errors.hpp"
#include "dppasgd/experiment.hpp"

namespace {

using dppasgd::ExperimentConfig;

// Flags left unset do not override the config file.
struct Flags {
    std::optional<std::string> config;
    std::optional<std::string> dataset, label_col, positive_label, partition, kernel, out, axis, mode;
    std::optional<std::vector<std::string>> categorical_cols, feature_cols;
    std::optional<std::size_t> devices, tau, iters, batch, eval_every, jobs, probe_draws, tau_min, tau_max, k_min,
        k_stride;
    std::optional<double> l2, clip, c1, c2, cth, eps, delta, eta, tau_cap;
    std::optional<std::uint64_t> seed;
    std::optional<std::vector<std::uint64_t>> seeds;
    std::optional<std::vector<double>> values, eps_values, eta_grid;
};

void add_common(CLI::App* app, Flags& f) {
    app->add_option("--config", f.config, "JSON config or manifest to start from (flags win)");
    app->add_option("--dataset", f.dataset, "CSV file with a header row");
    app->add_option("--label-col", f.label_col, "binary label column");
    app->add_option("--positive-label", f.positive_label, "label value mapped to +1");
    app->add_option("--categorical-cols", f.categorical_cols, "columns to one-hot encode")->delimiter(',');
    app->add_option("--feature-cols", f.feature_cols, "columns used as features (default: all)")->delimiter(',');
    app->add_option("--partition", f.partition, "iid | attr:<column>");
    app->add_option("--devices", f.devices, "device count M");
    app->add_option("--kernel", f.kernel, "logistic | svm");
    app->add_option("--l2", f.l2, "L2 regularizer (strong convexity constant)");
    app->add_option("--clip", f.clip, "per-sample gradient clip norm G");
    app->add_option("--c1", f.c1, "communication cost per aggregation");
    app->add_option("--c2", f.c2, "computation cost per local step");
    app->add_option("--cth", f.cth, "resource budget C_th");
    app->add_option("--eps", f.eps, "privacy budget epsilon_th");
    app->add_option("--delta", f.delta, "privacy failure probability");
    app->add_option("--tau", f.tau, "aggregation period (default: planner)");
    app->add_option("--iters", f.iters, "total iterations K (default: fill C_th)");
    app->add_option("--eta", f.eta, "learning rate (default: 0.9 * max rate at --tau-cap)");
    app->add_option("--tau-cap", f.tau_cap, "largest tau the default learning rate must admit");
    app->add_option("--eta-grid", f.eta_grid, "training learning rates to select from on validation accuracy")
        ->delimiter(',');
    app->add_option("--batch", f.batch, "mini-batch size per device");
    app->add_option("--seed", f.seed, "root seed (default: $DP_PASGD_SEED or 0)");
    app->add_option("--seeds", f.seeds, "training seeds")->delimiter(',');
    app->add_option("--eval-every", f.eval_every, "iterations between trace rows (0: endpoints)");
    app->add_option("--jobs", f.jobs, "parallel training jobs");
    app->add_option("--probe-draws", f.probe_draws, "mini-batch draws for the variance probe");
    app->add_option("--out", f.out, "output directory");
}

template <class T, class U>
void apply(const std::optional<T>& flag, U& field) {
    if (flag) field = *flag;
}

ExperimentConfig resolve(const Flags& f) {
    ExperimentConfig cfg;
    if (const char* env = std::getenv("DP_PASGD_SEED")) {
        try {
            cfg.seed = std::stoull(env);
        } catch (const std::exception&) {
            throw dppasgd::ConfigError(std::string("DP_PASGD_SEED is not an unsigned integer: ") + env);
        }
    }
    if (f.config) {
        std::ifstream in(*f.config);
        if (!in) throw dppasgd::ConfigError("cannot open config " + *f.config);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw dppasgd::ConfigError("config " + *f.config + " is not valid JSON: " + e.what());
        }
        cfg = ExperimentConfig::from_json(j);
    }
    apply(f.dataset, cfg.dataset);
    apply(f.label_col, cfg.label_col);
    apply(f.positive_label, cfg.positive_label);
    apply(f.categorical_cols, cfg.categorical_cols);
    apply(f.feature_cols, cfg.feature_cols);
    apply(f.partition, cfg.partition);
    apply(f.devices, cfg.devices);
    apply(f.kernel, cfg.kernel);
    apply(f.l2, cfg.l2);
    apply(f.clip, cfg.clip);
    apply(f.c1, cfg.budgets.c1);
    apply(f.c2, cfg.budgets.c2);
    apply(f.cth, cfg.budgets.C_th);
    apply(f.eps, cfg.budgets.epsilon_th);
    apply(f.delta, cfg.budgets.delta);
    apply(f.tau, cfg.tau);
    apply(f.iters, cfg.iters);
    apply(f.eta, cfg.eta);
    apply(f.tau_cap, cfg.tau_cap);
    apply(f.eta_grid, cfg.eta_grid);
    apply(f.batch, cfg.batch);
    apply(f.seed, cfg.seed);
    apply(f.seeds, cfg.seeds);
    apply(f.eval_every, cfg.eval_every);
    apply(f.jobs, cfg.jobs);
    apply(f.probe_draws, cfg.probe_draws);
    apply(f.out, cfg.out);
    apply(f.axis, cfg.axis);
    apply(f.values, cfg.values);
    apply(f.eps_values, cfg.eps_values);
    apply(f.mode, cfg.grid_mode);
    apply(f.tau_min, cfg.grid_tau_min);
    apply(f.tau_max, cfg.grid_tau_max);
    apply(f.k_min, cfg.grid_k_min);
    apply(f.k_stride, cfg.grid_k_stride);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"DP-PASGD federated learning simulator and configuration planner"};
    app.require_subcommand(1);
    Flags flags;

    auto* plan = app.add_subcommand("plan", "choose tau, K and per-device noise for the budgets");
    auto* train = app.add_subcommand("train", "plan (or take --tau/--iters) and train over the seeds");
    auto* sweep = app.add_subcommand("sweep", "plan and train across a budget axis");
    auto* compare = app.add_subcommand("compare", "DP-PASGD at --tau (default 10) against DP-SGD");
    auto* grid = app.add_subcommand("gridsearch", "exhaustive (tau, K) search by bound or validation accuracy");
    for (auto* sub : {plan, train, sweep, compare, grid}) add_common(sub, flags);
    sweep->add_option("--axis", flags.axis, "privacy | resource | tau-grid");
    sweep->add_option("--values", flags.values, "budget values, ascending (C_th for tau-grid)")->delimiter(',');
    sweep->add_option("--eps-values", flags.eps_values, "epsilon_th values for tau-grid")->delimiter(',');
    grid->add_option("--mode", flags.mode, "bound | empirical");
    grid->add_option("--tau-min", flags.tau_min, "smallest tau");
    grid->add_option("--tau-max", flags.tau_max, "largest tau");
    grid->add_option("--k-min", flags.k_min, "smallest K");
    grid->add_option("--k-stride", flags.k_stride, "try every n-th multiple of tau");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        const ExperimentConfig cfg = resolve(flags);
        dppasgd::CommandResult result;
        if (*plan) result = dppasgd::cmd_plan(cfg, std::cout);
        else if (*train) result = dppasgd::cmd_train(cfg, std::cout);
        else if (*sweep) result = dppasgd::cmd_sweep(cfg, std::cout);
        else if (*compare) result = dppasgd::cmd_compare(cfg, std::cout);
        else result = dppasgd::cmd_gridsearch(cfg, std::cout);
        return result.exit_code;
    } catch (const dppasgd::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const dppasgd::DivergenceError& e) {
        std::cerr << "diverged: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
