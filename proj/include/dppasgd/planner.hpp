#pragma once
// Resource cost model, convergence bound, and the (tau, K, sigma) planner.
//
// The learning rate is a fixed input of the bound. Tying it to tau makes the
// bound decrease without limit in tau, so the planner holds eta fixed and
// treats eta*L + eta^2 L^2 tau (tau - 1) <= 1 as a cap on tau.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dppasgd/models.hpp"

namespace dppasgd {

struct Budgets {
    double C_th = 1000.0;
    double epsilon_th = 10.0;
    double delta = 1e-4;
    double c1 = 100.0;
    double c2 = 1.0;

    // Throws ConfigError naming the violated requirement.
    void validate() const;
    nlohmann::json to_json() const;
};

// c1 K / tau + c2 K
double resource_cost(double K, double tau, double c1, double c2);

// Largest eta with eta L + eta^2 L^2 tau (tau - 1) <= 1, lowered if needed so
// that eta * lambda < 1. lambda <= 0 skips the cap.
double max_learning_rate(double L, double tau, double lambda = 0.0);

// Largest tau admitted by the learning-rate condition at this eta.
double max_tau_for_learning_rate(double L, double eta);

double learning_rate_residual(double L, double eta, double tau);

// Default planner learning rate: 0.9 * max_learning_rate(L, tau_cap).
double default_learning_rate(const ProblemConstants& c, double tau_cap);

double bound_B(const ProblemConstants& c, double eta, double tau, std::span<const double> sigma);

// (1 - eta lambda)^K (alpha - B) / K + B. Requires 0 < eta lambda < 1, K >= 1.
double bound_F(const ProblemConstants& c, double eta, double tau, double K, std::span<const double> sigma);

// c1 K / (C_th - c2 K); throws ConfigError when c2 K >= C_th.
double optimal_tau(double K, const Budgets& b);

// Per-device sigma that makes the K-iteration privacy loss equal epsilon_th.
std::vector<double> optimal_sigma(double K, const ProblemConstants& c, const Budgets& b);

struct KInterval {
    double lo = 0.0;
    double hi = 0.0;
    bool empty() const { return !(lo <= hi); }
};

// Real K for which 1 <= tau*(K) <= min(K, tau_max(eta)).
KInterval feasible_k_interval(const ProblemConstants& c, const Budgets& b, double eta);

// The relaxed objective in K alone, with tau and sigma at their optima.
// nullopt marks K outside the feasible interval.
std::optional<double> objective_in_K(double K, const ProblemConstants& c, const Budgets& b, double eta);

// Relaxed objective over the whole search range [1, hi]: below
// C_th / (c1 + c2) the budget does not bind, tau* = 1 and the value is
// bound_F at tau = 1; above it equals objective_in_K.
std::optional<double> relaxed_objective(double K, const ProblemConstants& c, const Budgets& b, double eta);

struct Feasibility {
    bool cost_within_budget = false;
    bool privacy_tight = false;
    bool learning_rate_ok = false;
    bool all() const { return cost_within_budget && privacy_tight && learning_rate_ok; }
};

struct Plan {
    std::size_t tau = 1;
    std::size_t K = 1;
    double eta = 0.0;
    std::vector<double> sigma;
    std::vector<double> epsilon;
    double predicted_F = 0.0;
    double cost = 0.0;
    // Relaxed optimum before rounding (solve only).
    double relaxed_K = 0.0;
    double relaxed_tau = 0.0;
    Feasibility feasibility;

    nlohmann::json to_json() const;
};

// Fills eta, sigma, epsilon, F, cost and feasibility for an integer (tau, K).
Plan evaluate_plan(const ProblemConstants& c, const Budgets& b, double eta, std::size_t tau, std::size_t K);

struct SolveOptions {
    // Learning rate; zero selects default_learning_rate(c, tau_cap).
    double eta = 0.0;
    double tau_cap = 20.0;
    std::size_t starts = 8;
    std::size_t max_steps = 200;
};

Plan solve(const ProblemConstants& c, const Budgets& b, const SolveOptions& options = {});

// Scores an integer (tau, K); larger is better.
using PlanScorer = std::function<double(std::size_t tau, std::size_t K)>;

struct GridSpec {
    std::size_t tau_min = 1;
    std::size_t tau_max = 50;
    // Smallest K tried; K runs over multiples of tau from here.
    std::size_t K_min = 1;
    // Every K_stride-th multiple of tau is tried (the largest feasible one always is).
    std::size_t K_stride = 1;
};

// Exhaustive search over feasible integer pairs: K a multiple of tau, cost
// within budget, learning-rate condition holding. A null scorer ranks by
// predicted_F. Throws ConfigError when no pair is feasible.
Plan grid_search(const ProblemConstants& c, const Budgets& b, const GridSpec& grid, double eta,
                 const PlanScorer& scorer = nullptr);

}  // namespace dppasgd
