#include "dppasgd/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dppasgd/errors.hpp"
#include "dppasgd/privacy.hpp"

namespace dppasgd {

void Budgets::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("budget check failed: " + what);
    };
    require(C_th > 0, "C_th > 0");
    require(epsilon_th > 0, "epsilon_th > 0");
    require(delta > 0 && delta < 1, "0 < delta < 1");
    require(c1 >= 0, "c1 >= 0");
    require(c2 > 0, "c2 > 0");
    require(C_th >= c1 + c2, "C_th >= c1 + c2 (one aggregated iteration must fit the resource budget; C_th=" +
                                 std::to_string(C_th) + ", c1 + c2=" + std::to_string(c1 + c2) + ")");
}

nlohmann::json Budgets::to_json() const {
    return {{"C_th", C_th}, {"epsilon_th", epsilon_th}, {"delta", delta}, {"c1", c1}, {"c2", c2}};
}

double resource_cost(double K, double tau, double c1, double c2) {
    DPPASGD_REQUIRE(tau >= 1, "aggregation period must be at least 1");
    DPPASGD_REQUIRE(K >= 0, "iteration count must be non-negative");
    return c1 * K / tau + c2 * K;
}

double max_learning_rate(double L, double tau, double lambda) {
    DPPASGD_REQUIRE(L > 0 && tau >= 1, "max_learning_rate needs L > 0 and tau >= 1");
    const double a = tau * (tau - 1.0);
    // Positive root of a x^2 + x - 1 = 0 in x = eta L; the rationalized form
    // stays accurate as a -> 0.
    const double x = a == 0.0 ? 1.0 : 2.0 / (1.0 + std::sqrt(1.0 + 4.0 * a));
    double eta = x / L;
    if (lambda > 0 && eta * lambda >= 1.0) eta = std::nextafter(1.0 / lambda, 0.0);
    return eta;
}

double max_tau_for_learning_rate(double L, double eta) {
    const double x = eta * L;
    if (!(x > 0) || x > 1.0) return 0.0;
    return 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * (1.0 - x) / (x * x)));
}

double learning_rate_residual(double L, double eta, double tau) {
    return eta * L + eta * eta * L * L * tau * (tau - 1.0);
}

double default_learning_rate(const ProblemConstants& c, double tau_cap) {
    return 0.9 * max_learning_rate(c.L, std::max(1.0, tau_cap), c.lambda);
}

double bound_B(const ProblemConstants& c, double eta, double tau, std::span<const double> sigma) {
    DPPASGD_REQUIRE(sigma.size() == c.M, "one sigma per device");
    double sigma_sq = 0.0;
    for (double s : sigma) sigma_sq += s * s;
    const double M = static_cast<double>(c.M);
    const double lead = (eta * c.L + eta * eta * c.L * c.L * (tau - 1.0) * M) / (2.0 * c.lambda * M);
    return lead * (c.xi_sq + static_cast<double>(c.d) / M * sigma_sq);
}

double bound_F(const ProblemConstants& c, double eta, double tau, double K, std::span<const double> sigma) {
    DPPASGD_REQUIRE(eta * c.lambda > 0 && eta * c.lambda < 1, "bound needs 0 < eta * lambda < 1");
    DPPASGD_REQUIRE(K >= 1, "bound needs K >= 1");
    const double B = bound_B(c, eta, tau, sigma);
    return std::pow(1.0 - eta * c.lambda, K) * (c.alpha - B) / K + B;
}

double optimal_tau(double K, const Budgets& b) {
    const double slack = b.C_th - b.c2 * K;
    if (!(slack > 0)) {
        throw ConfigError("K=" + std::to_string(K) + " leaves no resource budget for communication (c2 K >= C_th)");
    }
    return b.c1 * K / slack;
}

std::vector<double> optimal_sigma(double K, const ProblemConstants& c, const Budgets& b) {
    DPPASGD_REQUIRE(K > 0, "optimal_sigma needs K > 0");
    const double z = calibration_denominator(b.epsilon_th, b.delta);
    std::vector<double> sigma;
    for (std::size_t x : c.batch_sizes) {
        const double X = static_cast<double>(x);
        sigma.push_back(std::sqrt(2.0 * K * c.G * c.G / (X * X * z)));
    }
    return sigma;
}

KInterval feasible_k_interval(const ProblemConstants& c, const Budgets& b, double eta) {
    KInterval in;
    in.lo = b.C_th / (b.c1 + b.c2);
    in.hi = (b.C_th - b.c1) / b.c2;
    const double tau_max = max_tau_for_learning_rate(c.L, eta);
    if (tau_max < 1.0 || !(eta * c.lambda < 1.0)) return {1.0, 0.0};
    in.hi = std::min(in.hi, tau_max * b.C_th / (b.c1 + b.c2 * tau_max));
    return in;
}

std::optional<double> objective_in_K(double K, const ProblemConstants& c, const Budgets& b, double eta) {
    const KInterval in = feasible_k_interval(c, b, eta);
    if (in.empty() || K < in.lo || K > in.hi || K < 1.0) return std::nullopt;
    const double tau = b.c1 * K / (b.C_th - b.c2 * K);
    const double z = calibration_denominator(b.epsilon_th, b.delta);
    const double M = static_cast<double>(c.M);
    double inv_batch_sq = 0.0;
    for (std::size_t x : c.batch_sizes) inv_batch_sq += 1.0 / (static_cast<double>(x) * static_cast<double>(x));
    const double decay = std::pow(1.0 - eta * c.lambda, K);
    const double rate = eta * c.L / (2.0 * c.lambda * M) + eta * eta * c.L * c.L * (tau - 1.0) / (2.0 * c.lambda);
    const double variance = c.xi_sq + 2.0 * K * static_cast<double>(c.d) * c.G * c.G / (M * z) * inv_batch_sq;
    return c.alpha * decay / K + (1.0 - decay / K) * rate * variance;
}

std::optional<double> relaxed_objective(double K, const ProblemConstants& c, const Budgets& b, double eta) {
    const KInterval in = feasible_k_interval(c, b, eta);
    if (in.empty() || K < 1.0 || K > in.hi) return std::nullopt;
    if (K >= in.lo) return objective_in_K(K, c, b, eta);
    return bound_F(c, eta, 1.0, K, optimal_sigma(K, c, b));
}

nlohmann::json Plan::to_json() const {
    return {{"tau", tau},
            {"K", K},
            {"eta", eta},
            {"sigma", sigma},
            {"epsilon", epsilon},
            {"predicted_F", predicted_F},
            {"cost", cost},
            {"relaxed_K", relaxed_K},
            {"relaxed_tau", relaxed_tau},
            {"feasibility",
             {{"cost_within_budget", feasibility.cost_within_budget},
              {"privacy_tight", feasibility.privacy_tight},
              {"learning_rate_ok", feasibility.learning_rate_ok}}}};
}

Plan evaluate_plan(const ProblemConstants& c, const Budgets& b, double eta, std::size_t tau, std::size_t K) {
    DPPASGD_REQUIRE(tau >= 1 && K >= 1 && K % tau == 0, "plan needs K a positive multiple of tau");
    Plan p;
    p.tau = tau;
    p.K = K;
    p.eta = eta;
    const auto noise = calibrate_noise(K, c.G, c.batch_sizes, b.epsilon_th, b.delta);
    p.sigma = noise.sigma;
    bool tight = true;
    for (std::size_t m = 0; m < c.M; ++m) {
        const double eps = total_epsilon(K, c.G, static_cast<double>(c.batch_sizes[m]), p.sigma[m], b.delta);
        p.epsilon.push_back(eps);
        tight = tight && std::abs(eps - b.epsilon_th) <= 1e-9 * b.epsilon_th;
    }
    p.cost = resource_cost(static_cast<double>(K), static_cast<double>(tau), b.c1, b.c2);
    p.predicted_F = bound_F(c, eta, static_cast<double>(tau), static_cast<double>(K), p.sigma);
    p.feasibility.cost_within_budget = p.cost <= b.C_th * (1.0 + 1e-12);
    p.feasibility.privacy_tight = tight;
    p.feasibility.learning_rate_ok =
        learning_rate_residual(c.L, eta, static_cast<double>(tau)) <= 1.0 + 1e-12 && eta * c.lambda < 1.0;
    return p;
}

namespace {

// Rounds so that K/tau rounds fit the budget; tolerates representation error
// in C_th / (c1 + c2 tau).
std::size_t max_rounds(const Budgets& b, std::size_t tau) {
    const double per_round = b.c1 + b.c2 * static_cast<double>(tau);
    auto rounds = static_cast<std::size_t>(std::floor(b.C_th / per_round * (1.0 + 1e-12)));
    while (rounds > 0 && static_cast<double>(rounds) * per_round > b.C_th * (1.0 + 1e-12)) --rounds;
    return rounds;
}

double descend(const std::function<double(double)>& f, double start, double lo, double hi, std::size_t max_steps) {
    double k = start;
    double fk = f(k);
    double step = (hi - lo) / 8.0;
    for (std::size_t it = 0; it < max_steps; ++it) {
        const double h = std::max(1e-6, 1e-4 * std::abs(k));
        const double a = std::max(lo, k - h);
        const double c = std::min(hi, k + h);
        if (c <= a) break;
        const double slope = (f(c) - f(a)) / (c - a);
        if (slope == 0.0) break;
        // Normalized step with backtracking: move `step` units downhill.
        double next = std::clamp(k - std::copysign(step, slope), lo, hi);
        double fn = f(next);
        while (fn >= fk && step >= 0.25) {
            step *= 0.5;
            next = std::clamp(k - std::copysign(step, slope), lo, hi);
            fn = f(next);
        }
        if (fn >= fk) break;
        const double moved = std::abs(next - k);
        k = next;
        fk = fn;
        if (moved < 0.5) break;
        step = std::min(step * 2.0, (hi - lo) / 2.0);
    }
    return k;
}

}  // namespace

Plan solve(const ProblemConstants& c, const Budgets& b, const SolveOptions& options) {
    b.validate();
    c.validate();
    const double eta = options.eta > 0 ? options.eta : default_learning_rate(c, options.tau_cap);
    if (!(eta * c.lambda < 1.0)) throw ConfigError("learning rate violates eta * lambda < 1");
    const double tau_limit = max_tau_for_learning_rate(c.L, eta);
    if (tau_limit < 1.0) throw ConfigError("learning rate violates eta L + eta^2 L^2 tau (tau - 1) <= 1 even at tau = 1");
    const KInterval in = feasible_k_interval(c, b, eta);
    if (in.empty()) throw ConfigError("no K satisfies both the resource budget and the learning-rate condition");

    auto f = [&](double K) {
        auto v = relaxed_objective(K, c, b, eta);
        return v ? *v : std::numeric_limits<double>::infinity();
    };
    const double lo = 1.0;
    const double hi = in.hi;
    double best_k = lo;
    double best_f = f(lo);
    for (double edge : {in.lo, hi}) {
        if (f(edge) < best_f) {
            best_k = edge;
            best_f = f(edge);
        }
    }
    const std::size_t starts = std::max<std::size_t>(1, options.starts);
    for (std::size_t s = 1; s <= starts; ++s) {
        const double start = lo + (hi - lo) * static_cast<double>(s) / static_cast<double>(starts + 1);
        const double k = descend(f, start, lo, hi, options.max_steps);
        if (f(k) < best_f) {
            best_k = k;
            best_f = f(k);
        }
    }

    const double relaxed_tau = std::max(1.0, optimal_tau(best_k, b));
    auto tau = static_cast<std::size_t>(std::max(1.0, std::round(relaxed_tau)));
    tau = std::min(tau, static_cast<std::size_t>(std::floor(tau_limit)));
    tau = std::max<std::size_t>(tau, 1);
    while (tau > 1 && max_rounds(b, tau) == 0) --tau;
    const auto rounded_k = static_cast<std::size_t>(std::max(1.0, std::round(best_k)));
    std::size_t rounds = std::min(rounded_k / tau, max_rounds(b, tau));
    rounds = std::max<std::size_t>(rounds, 1);

    Plan plan = evaluate_plan(c, b, eta, tau, rounds * tau);
    plan.relaxed_K = best_k;
    plan.relaxed_tau = relaxed_tau;
    return plan;
}

Plan grid_search(const ProblemConstants& c, const Budgets& b, const GridSpec& grid, double eta,
                 const PlanScorer& scorer) {
    b.validate();
    c.validate();
    DPPASGD_REQUIRE(grid.tau_min >= 1 && grid.tau_min <= grid.tau_max, "grid needs 1 <= tau_min <= tau_max");
    std::optional<Plan> best;
    double best_score = -std::numeric_limits<double>::infinity();
    const std::size_t stride = std::max<std::size_t>(1, grid.K_stride);
    for (std::size_t tau = grid.tau_min; tau <= grid.tau_max; ++tau) {
        if (learning_rate_residual(c.L, eta, static_cast<double>(tau)) > 1.0 + 1e-12) continue;
        const std::size_t rounds = max_rounds(b, tau);
        std::vector<std::size_t> candidates;
        for (std::size_t r = 1; r <= rounds; ++r) {
            const std::size_t K = r * tau;
            if (K < grid.K_min && r != rounds) continue;
            if ((r - 1) % stride == 0 || r == rounds) candidates.push_back(K);
        }
        for (std::size_t K : candidates) {
            const double score = scorer ? scorer(tau, K)
                                        : -bound_F(c, eta, static_cast<double>(tau), static_cast<double>(K),
                                                   optimal_sigma(static_cast<double>(K), c, b));
            if (!best || score > best_score) {
                best = evaluate_plan(c, b, eta, tau, K);
                best_score = score;
            }
        }
    }
    if (!best) throw ConfigError("grid search found no feasible (tau, K) pair");
    return *best;
}

}  // namespace dppasgd
