#pragma once
// Experiment driver behind the `dp_pasgd` command line: configuration,
// federation setup, and the plan/train/sweep/compare/gridsearch commands.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dppasgd/datasets.hpp"
#include "dppasgd/engine.hpp"
#include "dppasgd/models.hpp"
#include "dppasgd/planner.hpp"

namespace dppasgd {

std::string artifact_version();

struct ExperimentConfig {
    std::string dataset;
    std::string label_col = "income";
    std::vector<std::string> categorical_cols;
    std::vector<std::string> feature_cols;
    std::string positive_label;
    std::string partition = "iid";
    std::size_t devices = 16;

    std::string kernel = "logistic";
    double l2 = 0.001;
    double clip = 1.0;
    Budgets budgets;

    // 0 lets the planner choose tau and K. With tau set and iters 0, K is the
    // largest multiple of tau that fits C_th.
    std::size_t tau = 0;
    std::size_t iters = 0;
    // 0 selects 0.9 * max_learning_rate(L, tau_cap).
    double eta = 0.0;
    double tau_cap = 20.0;
    // Training learning rates tried by train/sweep/compare/empirical
    // gridsearch; the one with the best mean validation accuracy is kept.
    // Empty trains at the plan's eta.
    std::vector<double> eta_grid;
    std::size_t batch = 64;

    // Root seed for partitioning, splitting and the constant probe.
    std::uint64_t seed = 0;
    // Training seeds; empty means five seeds seed+1 .. seed+5.
    std::vector<std::uint64_t> seeds;
    std::size_t eval_every = 0;
    std::size_t jobs = 1;
    std::string out = "out";

    std::size_t probe_draws = 256;
    // Inline constants skip the dataset-based estimate.
    std::optional<ProblemConstants> constants;

    // sweep: "privacy" or "resource" plan and train at each value; "tau-grid"
    // only plans, over values (C_th) x eps_values (epsilon_th).
    std::string axis = "privacy";
    std::vector<double> values;
    std::vector<double> eps_values;

    // gridsearch
    std::string grid_mode = "bound";
    std::size_t grid_tau_min = 1;
    std::size_t grid_tau_max = 20;
    std::size_t grid_k_min = 1;
    std::size_t grid_k_stride = 1;

    std::vector<std::uint64_t> resolved_seeds() const;
    // Throws ConfigError on the first invalid field.
    void validate() const;
    nlohmann::json to_json() const;
    // Accepts either a bare config object or a manifest with a "config" key.
    static ExperimentConfig from_json(const nlohmann::json& j);
};

struct Federation {
    std::vector<DeviceDataset> devices;
    std::size_t rows = 0;
    std::size_t dropped_rows = 0;
    std::size_t features = 0;
    std::string positive_label;
};

Federation load_federation(const ExperimentConfig& cfg);

LossKernel make_kernel(const ExperimentConfig& cfg);

ProblemConstants resolve_constants(const ExperimentConfig& cfg, const Federation* fed);

double resolve_eta(const ExperimentConfig& cfg, const ProblemConstants& c, std::size_t tau);

// Mean over devices of the accuracy on the validation (or test) split.
double mean_split_accuracy(const LossKernel& kernel, const ModelParams& theta, std::span<const DeviceDataset> devices,
                           bool validation);

struct SeedResult {
    std::uint64_t seed = 0;
    TrainTrace trace;
    double final_test_accuracy = 0.0;
    double best_test_accuracy = 0.0;
    double final_val_accuracy = 0.0;
};

// Runs one engine job per seed, up to `jobs` at a time. Results come back in
// seed order regardless of scheduling.
std::vector<SeedResult> run_seeds(const Federation& fed, const LossKernel& kernel, const RunConfig& base,
                                  const std::vector<std::uint64_t>& seeds, std::size_t jobs);

// Writes `content` to `path` through a temporary file and a rename.
void write_atomic(const std::filesystem::path& path, const std::string& content);

struct CommandResult {
    int exit_code = 0;
    nlohmann::json manifest;
};

CommandResult cmd_plan(const ExperimentConfig& cfg, std::ostream& log);
CommandResult cmd_train(const ExperimentConfig& cfg, std::ostream& log);
CommandResult cmd_sweep(const ExperimentConfig& cfg, std::ostream& log);
CommandResult cmd_compare(const ExperimentConfig& cfg, std::ostream& log);
CommandResult cmd_gridsearch(const ExperimentConfig& cfg, std::ostream& log);

}  // namespace dppasgd
