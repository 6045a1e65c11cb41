#include "dppasgd/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include "dppasgd/errors.hpp"
#include "dppasgd/privacy.hpp"
#include "dppasgd/simd.hpp"

#ifndef DPPASGD_VERSION
#define DPPASGD_VERSION "unknown"
#endif

namespace dppasgd {

std::string artifact_version() { return DPPASGD_VERSION; }

namespace {

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct Stats {
    double mean = 0.0;
    double std = 0.0;
};

Stats stats(const std::vector<double>& v) {
    Stats s;
    if (v.empty()) return s;
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return s;
}

}  // namespace

std::vector<std::uint64_t> ExperimentConfig::resolved_seeds() const {
    if (!seeds.empty()) return seeds;
    std::vector<std::uint64_t> s;
    for (std::uint64_t i = 1; i <= 5; ++i) s.push_back(seed + i);
    return s;
}

void ExperimentConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("invalid configuration: " + what);
    };
    require(devices >= 1, "--devices must be at least 1");
    parse_loss_kind(kernel);
    parse_partition(partition, devices, seed);
    require(l2 >= 0, "--l2 must be non-negative");
    require(clip > 0, "--clip must be positive");
    require(batch >= 1, "--batch must be at least 1");
    require(eta >= 0, "--eta must be non-negative");
    require(tau_cap >= 1, "--tau-cap must be at least 1");
    require(std::all_of(eta_grid.begin(), eta_grid.end(), [](double e) { return e > 0; }),
            "--eta-grid values must be positive");
    require(jobs >= 1, "--jobs must be at least 1");
    require(!(iters > 0 && tau > 0 && iters % tau != 0), "--iters must be a multiple of --tau");
    require(axis == "privacy" || axis == "resource" || axis == "tau-grid",
            "--axis must be 'privacy', 'resource' or 'tau-grid'");
    require(std::is_sorted(eps_values.begin(), eps_values.end()), "--eps-values must be sorted ascending");
    require(grid_mode == "bound" || grid_mode == "empirical", "--mode must be 'bound' or 'empirical'");
    require(grid_tau_min >= 1 && grid_tau_min <= grid_tau_max, "grid tau range must satisfy 1 <= min <= max");
    require(std::is_sorted(values.begin(), values.end()), "--values must be sorted ascending");
    budgets.validate();
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j{{"dataset", dataset},
                     {"label_col", label_col},
                     {"categorical_cols", categorical_cols},
                     {"feature_cols", feature_cols},
                     {"positive_label", positive_label},
                     {"partition", partition},
                     {"devices", devices},
                     {"kernel", kernel},
                     {"l2", l2},
                     {"clip", clip},
                     {"budgets", budgets.to_json()},
                     {"tau", tau},
                     {"iters", iters},
                     {"eta", eta},
                     {"tau_cap", tau_cap},
                     {"eta_grid", eta_grid},
                     {"batch", batch},
                     {"seed", seed},
                     {"seeds", resolved_seeds()},
                     {"eval_every", eval_every},
                     {"jobs", jobs},
                     {"out", out},
                     {"probe_draws", probe_draws},
                     {"axis", axis},
                     {"values", values},
                     {"eps_values", eps_values},
                     {"grid", {{"mode", grid_mode},
                               {"tau_min", grid_tau_min},
                               {"tau_max", grid_tau_max},
                               {"k_min", grid_k_min},
                               {"k_stride", grid_k_stride}}}};
    j["constants"] = constants ? constants->to_json() : nlohmann::json(nullptr);
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& in) {
    const nlohmann::json& j = in.contains("config") && in["config"].is_object() ? in["config"] : in;
    ExperimentConfig c;
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key) && !j[key].is_null()) j.at(key).get_to(field);
        };
        get("dataset", c.dataset);
        get("label_col", c.label_col);
        get("categorical_cols", c.categorical_cols);
        get("feature_cols", c.feature_cols);
        get("positive_label", c.positive_label);
        get("partition", c.partition);
        get("devices", c.devices);
        get("kernel", c.kernel);
        get("l2", c.l2);
        get("clip", c.clip);
        get("tau", c.tau);
        get("iters", c.iters);
        get("eta", c.eta);
        get("tau_cap", c.tau_cap);
        get("eta_grid", c.eta_grid);
        get("batch", c.batch);
        get("seed", c.seed);
        get("seeds", c.seeds);
        get("eval_every", c.eval_every);
        get("jobs", c.jobs);
        get("out", c.out);
        get("probe_draws", c.probe_draws);
        get("axis", c.axis);
        get("values", c.values);
        get("eps_values", c.eps_values);
        if (j.contains("budgets")) {
            const auto& b = j["budgets"];
            c.budgets.C_th = b.value("C_th", c.budgets.C_th);
            c.budgets.epsilon_th = b.value("epsilon_th", c.budgets.epsilon_th);
            c.budgets.delta = b.value("delta", c.budgets.delta);
            c.budgets.c1 = b.value("c1", c.budgets.c1);
            c.budgets.c2 = b.value("c2", c.budgets.c2);
        }
        if (j.contains("grid")) {
            const auto& g = j["grid"];
            c.grid_mode = g.value("mode", c.grid_mode);
            c.grid_tau_min = g.value("tau_min", c.grid_tau_min);
            c.grid_tau_max = g.value("tau_max", c.grid_tau_max);
            c.grid_k_min = g.value("k_min", c.grid_k_min);
            c.grid_k_stride = g.value("k_stride", c.grid_k_stride);
        }
        if (j.contains("constants") && j["constants"].is_object())
            c.constants = ProblemConstants::from_json(j["constants"]);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed configuration JSON: ") + e.what());
    }
    return c;
}

Federation load_federation(const ExperimentConfig& cfg) {
    if (cfg.dataset.empty()) throw ConfigError("--dataset is required for this command");
    CsvOptions opt;
    opt.label_column = cfg.label_col;
    opt.categorical_columns = cfg.categorical_cols;
    opt.feature_columns = cfg.feature_cols;
    opt.positive_label = cfg.positive_label;
    Table table = with_bias_feature(normalize_unit_ball(load_csv(cfg.dataset, opt)));

    Federation fed;
    fed.rows = table.rows();
    fed.dropped_rows = table.dropped_rows;
    fed.features = table.dim();
    fed.positive_label = table.positive_label;
    auto devices = partition(table, parse_partition(cfg.partition, cfg.devices, cfg.seed));
    for (auto& d : devices) fed.devices.push_back(split_train_val_test(std::move(d), cfg.seed));
    assign_batch_sizes(fed.devices, cfg.batch);
    return fed;
}

LossKernel make_kernel(const ExperimentConfig& cfg) { return {parse_loss_kind(cfg.kernel), cfg.l2}; }

ProblemConstants resolve_constants(const ExperimentConfig& cfg, const Federation* fed) {
    ProblemConstants c;
    if (cfg.constants) {
        c = *cfg.constants;
        if (fed && c.batch_sizes.size() != fed->devices.size()) {
            c.M = fed->devices.size();
            c.batch_sizes.clear();
            for (const auto& d : fed->devices) c.batch_sizes.push_back(d.batch_size);
        }
    } else {
        if (!fed) throw ConfigError("problem constants need either --dataset or inline constants");
        ProbeConfig probe;
        probe.clip = cfg.clip;
        probe.draws = cfg.probe_draws;
        probe.seed = cfg.seed;
        c = estimate_constants(make_kernel(cfg), fed->devices, probe);
    }
    c.validate();
    return c;
}

double resolve_eta(const ExperimentConfig& cfg, const ProblemConstants& c, std::size_t tau) {
    if (cfg.eta > 0) return cfg.eta;
    return default_learning_rate(c, std::max(cfg.tau_cap, static_cast<double>(tau)));
}

double mean_split_accuracy(const LossKernel& kernel, const ModelParams& theta, std::span<const DeviceDataset> devices,
                           bool validation) {
    double total = 0.0;
    std::size_t counted = 0;
    for (const auto& d : devices) {
        const SampleSet& s = validation ? d.val : d.test;
        if (s.empty()) continue;
        total += accuracy(kernel, theta, s);
        ++counted;
    }
    return counted ? total / static_cast<double>(counted) : 0.0;
}

std::vector<SeedResult> run_seeds(const Federation& fed, const LossKernel& kernel, const RunConfig& base,
                                  const std::vector<std::uint64_t>& seeds, std::size_t jobs) {
    std::vector<SeedResult> results(seeds.size());
    std::vector<std::exception_ptr> errors(seeds.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < seeds.size(); i = next++) {
            try {
                RunConfig cfg = base;
                cfg.seed = seeds[i];
                SeedResult r;
                r.seed = seeds[i];
                r.trace = run_dp_pasgd(fed.devices, kernel, cfg);
                r.final_test_accuracy = r.trace.last().mean_test_accuracy;
                r.best_test_accuracy = mean_split_accuracy(kernel, r.trace.best, fed.devices, false);
                r.final_val_accuracy = mean_split_accuracy(kernel, r.trace.final_model, fed.devices, true);
                results[i] = std::move(r);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t n = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(1, seeds.size()));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return results;
}

void write_atomic(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + tmp.string());
        out << content;
        if (!out) throw ConfigError("failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

namespace {

struct Setup {
    ExperimentConfig cfg;
    std::optional<Federation> fed;
    LossKernel kernel;
    ProblemConstants constants;
};

Setup prepare(const ExperimentConfig& cfg, bool need_data) {
    cfg.validate();
    Setup s{cfg, std::nullopt, make_kernel(cfg), {}};
    if (need_data || !cfg.constants) s.fed = load_federation(cfg);
    s.constants = resolve_constants(cfg, s.fed ? &*s.fed : nullptr);
    return s;
}

nlohmann::json base_manifest(const Setup& s, const std::string& command) {
    nlohmann::json m{{"tool", "dp_pasgd"},
                     {"version", artifact_version()},
                     {"command", command},
                     {"simd_backend", std::string(simd::backend_name(simd::active().backend))},
                     {"config", s.cfg.to_json()},
                     {"constants", s.constants.to_json()},
                     {"assumptions",
                      {"per-iteration sensitivity 2G/X_m charged on every resampled mini-batch (no amplification)",
                       "natural logarithms in the zCDP to (epsilon, delta) conversion",
                       "theta0 = 0 on every device; full participation each round"}}};
    if (s.fed) {
        m["dataset"] = {{"rows", s.fed->rows},
                        {"dropped_rows", s.fed->dropped_rows},
                        {"features", s.fed->features},
                        {"positive_label", s.fed->positive_label},
                        {"partition", partition_manifest(s.fed->devices)}};
    }
    return m;
}

std::size_t budget_rounds(const Budgets& b, std::size_t tau) {
    const double per_round = b.c1 + b.c2 * static_cast<double>(tau);
    auto r = static_cast<std::size_t>(std::floor(b.C_th / per_round * (1.0 + 1e-12)));
    while (r > 0 && static_cast<double>(r) * per_round > b.C_th * (1.0 + 1e-12)) --r;
    return r;
}

// Plan for a fixed tau: K from `iters` or the largest multiple of tau within C_th.
Plan fixed_tau_plan(const Setup& s, const Budgets& b, std::size_t tau, double eta, std::size_t iters) {
    std::size_t K = iters;
    if (K == 0) {
        K = tau * budget_rounds(b, tau);
        if (K == 0)
            throw ConfigError("C_th=" + num(b.C_th) + " does not fit one round of tau=" + std::to_string(tau) +
                              " steps (c1 + c2 tau)");
    }
    return evaluate_plan(s.constants, b, eta, tau, K);
}

Plan choose_plan(const Setup& s, const Budgets& b) {
    if (s.cfg.tau > 0) return fixed_tau_plan(s, b, s.cfg.tau, resolve_eta(s.cfg, s.constants, s.cfg.tau), s.cfg.iters);
    SolveOptions opt;
    opt.eta = s.cfg.eta;
    opt.tau_cap = s.cfg.tau_cap;
    return solve(s.constants, b, opt);
}

RunConfig run_config(const Setup& s, const Plan& p, const Budgets& b) {
    RunConfig rc;
    rc.tau = p.tau;
    rc.K = p.K;
    rc.eta = p.eta;
    rc.noise.sigma = p.sigma;
    for (const auto& d : s.fed->devices) rc.noise.sensitivity.push_back(clipped_mean_sensitivity(s.cfg.clip, d.batch_size));
    rc.eval_every = s.cfg.eval_every;
    rc.clip = s.cfg.clip;
    rc.delta = b.delta;
    rc.c1 = b.c1;
    rc.c2 = b.c2;
    return rc;
}

struct TunedRuns {
    double eta = 0.0;
    std::vector<SeedResult> results;
    nlohmann::json selection = nlohmann::json::array();
};

double mean_val_accuracy(const std::vector<SeedResult>& results) {
    double total = 0.0;
    for (const auto& r : results) total += r.trace.diverged ? 0.0 : r.final_val_accuracy;
    return results.empty() ? 0.0 : total / static_cast<double>(results.size());
}

// Trains at the plan's eta, or at each eta_grid entry keeping the best mean
// validation accuracy (first wins ties).
TunedRuns tuned_runs(const Setup& s, const Plan& plan, const Budgets& b, const std::vector<std::uint64_t>& seeds) {
    RunConfig rc = run_config(s, plan, b);
    TunedRuns best;
    if (s.cfg.eta_grid.empty()) {
        best.eta = rc.eta;
        best.results = run_seeds(*s.fed, s.kernel, rc, seeds, s.cfg.jobs);
        return best;
    }
    double best_score = -1.0;
    for (double eta : s.cfg.eta_grid) {
        rc.eta = eta;
        auto results = run_seeds(*s.fed, s.kernel, rc, seeds, s.cfg.jobs);
        const double score = mean_val_accuracy(results);
        best.selection.push_back({{"eta", eta}, {"mean_val_accuracy", score}});
        if (score > best_score) {
            best_score = score;
            best.eta = eta;
            best.results = std::move(results);
        }
    }
    return best;
}

std::string trace_csv(const TrainTrace& t) {
    std::ostringstream os;
    write_trace_csv(os, t);
    return os.str();
}

nlohmann::json run_summary(const SeedResult& r) {
    return {{"seed", r.seed},
            {"final_test_accuracy", r.final_test_accuracy},
            {"best_model_test_accuracy", r.best_test_accuracy},
            {"best_iteration", r.trace.best_iteration},
            {"final_global_loss", r.trace.last().global_loss},
            {"diverged", r.trace.diverged},
            {"diagnostic", r.trace.diagnostic}};
}

void print_plan(std::ostream& log, const Plan& p) {
    log << std::left << std::setw(14) << "tau" << p.tau << '\n'
        << std::setw(14) << "K" << p.K << '\n'
        << std::setw(14) << "eta" << p.eta << '\n'
        << std::setw(14) << "sigma[0]" << (p.sigma.empty() ? 0.0 : p.sigma.front()) << '\n'
        << std::setw(14) << "epsilon[0]" << (p.epsilon.empty() ? 0.0 : p.epsilon.front()) << '\n'
        << std::setw(14) << "cost" << p.cost << '\n'
        << std::setw(14) << "predicted_F" << p.predicted_F << '\n'
        << std::setw(14) << "feasible" << (p.feasibility.all() ? "yes" : "no") << '\n';
}

}  // namespace

CommandResult cmd_plan(const ExperimentConfig& cfg, std::ostream& log) {
    Setup s = prepare(cfg, false);
    const Plan plan = choose_plan(s, s.cfg.budgets);
    auto m = base_manifest(s, "plan");
    m["budgets"] = s.cfg.budgets.to_json();
    m["plan"] = plan.to_json();
    // Top-level copies of the plan fields for direct consumption.
    for (const char* key : {"tau", "K", "eta", "sigma", "predicted_F", "feasibility"}) m[key] = m["plan"][key];
    write_atomic(std::filesystem::path(s.cfg.out) / "plan.json", m.dump(2) + "\n");
    print_plan(log, plan);
    return {0, m};
}

CommandResult cmd_train(const ExperimentConfig& cfg, std::ostream& log) {
    Setup s = prepare(cfg, true);
    const Budgets& b = s.cfg.budgets;
    const Plan plan = choose_plan(s, b);
    RunConfig rc = run_config(s, plan, b);
    const auto seeds = s.cfg.resolved_seeds();
    auto tuned = tuned_runs(s, plan, b, seeds);
    rc.eta = tuned.eta;
    auto& results = tuned.results;

    const std::filesystem::path out(s.cfg.out);
    std::ostringstream summary;
    summary << "seed,final_test_accuracy,best_model_test_accuracy,best_iteration,final_global_loss,diverged\n";
    std::vector<double> finals;
    bool diverged = false;
    auto m = base_manifest(s, "train");
    m["plan"] = plan.to_json();
    m["run"] = rc.to_json();
    m["eta_selection"] = tuned.selection;
    for (const auto& r : results) {
        write_atomic(out / ("trace_seed" + std::to_string(r.seed) + ".csv"), trace_csv(r.trace));
        summary << r.seed << ',' << num(r.final_test_accuracy) << ',' << num(r.best_test_accuracy) << ','
                << r.trace.best_iteration << ',' << num(r.trace.last().global_loss) << ',' << r.trace.diverged << '\n';
        finals.push_back(r.final_test_accuracy);
        diverged = diverged || r.trace.diverged;
        m["runs"].push_back(run_summary(r));
    }
    const Stats st = stats(finals);
    summary << "mean," << num(st.mean) << ",,,,\n" << "std," << num(st.std) << ",,,,\n";
    m["final_test_accuracy"] = {{"mean", st.mean}, {"std", st.std}};
    write_atomic(out / "train_summary.csv", summary.str());
    write_atomic(out / "train_manifest.json", m.dump(2) + "\n");

    print_plan(log, plan);
    log << "final test accuracy " << st.mean << " +/- " << st.std << " over " << seeds.size() << " seeds\n";
    return {diverged ? 3 : 0, m};
}

namespace {

// Planner-only grid over (C_th, epsilon_th): which tau the solver picks.
CommandResult tau_grid(const ExperimentConfig& cfg, std::ostream& log) {
    if (cfg.eps_values.empty()) throw ConfigError("tau-grid sweep needs --eps-values");
    Setup s = prepare(cfg, false);
    std::ostringstream csv;
    csv << "C_th,epsilon_th,tau,K,eta,predicted_F,status\n";
    auto m = base_manifest(s, "sweep");
    for (double C : s.cfg.values) {
        for (double eps : s.cfg.eps_values) {
            Budgets b = s.cfg.budgets;
            b.C_th = C;
            b.epsilon_th = eps;
            nlohmann::json point{{"C_th", C}, {"epsilon_th", eps}};
            try {
                const Plan p = choose_plan(s, b);
                csv << num(C) << ',' << num(eps) << ',' << p.tau << ',' << p.K << ',' << num(p.eta) << ','
                    << num(p.predicted_F) << ",ok\n";
                point["plan"] = p.to_json();
                log << "C_th=" << C << " eps=" << eps << " tau=" << p.tau << " K=" << p.K << '\n';
            } catch (const std::exception& e) {
                csv << num(C) << ',' << num(eps) << ",,,,,error\n";
                point["error"] = e.what();
            }
            m["points"].push_back(std::move(point));
        }
    }
    const std::filesystem::path out(s.cfg.out);
    write_atomic(out / "tau_grid.csv", csv.str());
    write_atomic(out / "sweep_manifest.json", m.dump(2) + "\n");
    return {0, m};
}

}  // namespace

CommandResult cmd_sweep(const ExperimentConfig& cfg, std::ostream& log) {
    if (cfg.values.empty()) throw ConfigError("sweep needs --values");
    if (cfg.axis == "tau-grid") return tau_grid(cfg, log);
    Setup s = prepare(cfg, true);
    const auto seeds = s.cfg.resolved_seeds();
    std::ostringstream csv;
    csv << "axis,budget,C_th,epsilon_th,tau,K,eta,mean_acc,std_acc,status\n";
    auto m = base_manifest(s, "sweep");
    for (double v : s.cfg.values) {
        Budgets b = s.cfg.budgets;
        (s.cfg.axis == "resource" ? b.C_th : b.epsilon_th) = v;
        nlohmann::json point{{"budget", v}};
        try {
            b.validate();
            const Plan plan = choose_plan(s, b);
            const auto tuned = tuned_runs(s, plan, b, seeds);
            const auto& results = tuned.results;
            std::vector<double> acc;
            bool diverged = false;
            for (const auto& r : results) {
                acc.push_back(r.final_test_accuracy);
                diverged = diverged || r.trace.diverged;
                point["runs"].push_back(run_summary(r));
            }
            const Stats st = stats(acc);
            const char* status = diverged ? "diverged" : "ok";
            csv << s.cfg.axis << ',' << num(v) << ',' << num(b.C_th) << ',' << num(b.epsilon_th) << ',' << plan.tau
                << ',' << plan.K << ',' << num(tuned.eta) << ',' << num(st.mean) << ',' << num(st.std) << ',' << status
                << '\n';
            point["plan"] = plan.to_json();
            point["train_eta"] = tuned.eta;
            point["eta_selection"] = tuned.selection;
            point["status"] = status;
            log << s.cfg.axis << '=' << v << " tau=" << plan.tau << " K=" << plan.K << " acc=" << st.mean << '\n';
        } catch (const std::exception& e) {
            csv << s.cfg.axis << ',' << num(v) << ',' << num(b.C_th) << ',' << num(b.epsilon_th) << ",,,,,,error\n";
            point["status"] = "error";
            point["error"] = e.what();
            log << s.cfg.axis << '=' << v << " failed: " << e.what() << '\n';
        }
        m["points"].push_back(std::move(point));
    }
    const std::filesystem::path out(s.cfg.out);
    write_atomic(out / "sweep.csv", csv.str());
    write_atomic(out / "sweep_manifest.json", m.dump(2) + "\n");
    return {0, m};
}

CommandResult cmd_compare(const ExperimentConfig& cfg, std::ostream& log) {
    Setup s = prepare(cfg, true);
    const Budgets& b = s.cfg.budgets;
    const std::size_t tau = s.cfg.tau > 0 ? s.cfg.tau : 10;
    // One learning rate for both schemes, valid for the larger period.
    const double eta = resolve_eta(s.cfg, s.constants, tau);
    const Plan pasgd = fixed_tau_plan(s, b, tau, eta, 0);
    const Plan sgd = fixed_tau_plan(s, b, 1, eta, 0);
    const auto seeds = s.cfg.resolved_seeds();

    std::ostringstream tidy, summary;
    tidy << "scheme,seed,iteration,global_loss,mean_test_accuracy,cumulative_cost,epsilon_spent\n";
    summary << "scheme,seed,tau,K,final_test_accuracy,best_model_test_accuracy,diverged\n";
    auto m = base_manifest(s, "compare");
    bool diverged = false;
    for (const auto& [name, plan] : {std::pair{"dp-pasgd", pasgd}, std::pair{"dp-sgd", sgd}}) {
        const auto tuned = tuned_runs(s, plan, b, seeds);
        const auto& results = tuned.results;
        std::vector<double> acc;
        for (const auto& r : results) {
            for (const auto& snap : r.trace.snapshots) {
                const double eps = *std::max_element(snap.epsilon.begin(), snap.epsilon.end());
                tidy << name << ',' << r.seed << ',' << snap.iteration << ',' << num(snap.global_loss) << ','
                     << num(snap.mean_test_accuracy) << ',' << num(snap.cumulative_cost) << ',' << num(eps) << '\n';
            }
            summary << name << ',' << r.seed << ',' << plan.tau << ',' << plan.K << ',' << num(r.final_test_accuracy)
                    << ',' << num(r.best_test_accuracy) << ',' << r.trace.diverged << '\n';
            acc.push_back(r.final_test_accuracy);
            diverged = diverged || r.trace.diverged;
        }
        const Stats st = stats(acc);
        m["schemes"][name] = {{"plan", plan.to_json()},
                              {"train_eta", tuned.eta},
                              {"eta_selection", tuned.selection},
                              {"mean_final_test_accuracy", st.mean},
                              {"std", st.std}};
        log << name << " tau=" << plan.tau << " K=" << plan.K << " eta=" << tuned.eta << " final acc " << st.mean << " +/- " << st.std << '\n';
    }
    const std::filesystem::path out(s.cfg.out);
    write_atomic(out / "compare.csv", tidy.str());
    write_atomic(out / "compare_summary.csv", summary.str());
    write_atomic(out / "compare_manifest.json", m.dump(2) + "\n");
    return {diverged ? 3 : 0, m};
}

CommandResult cmd_gridsearch(const ExperimentConfig& cfg, std::ostream& log) {
    const bool empirical = cfg.grid_mode == "empirical";
    Setup s = prepare(cfg, empirical);
    const Budgets& b = s.cfg.budgets;
    GridSpec grid{s.cfg.grid_tau_min, s.cfg.grid_tau_max, s.cfg.grid_k_min, s.cfg.grid_k_stride};
    const double eta = resolve_eta(s.cfg, s.constants, 1);

    std::ostringstream csv;
    PlanScorer scorer;
    if (empirical) {
        csv << "tau,K,mean_val_acc,mean_test_acc,predicted_F\n";
        const auto seeds = s.cfg.resolved_seeds();
        scorer = [&](std::size_t tau, std::size_t K) {
            const Plan p = evaluate_plan(s.constants, b, eta, tau, K);
            const auto results = tuned_runs(s, p, b, seeds).results;
            std::vector<double> val, test;
            for (const auto& r : results) {
                val.push_back(r.trace.diverged ? 0.0 : r.final_val_accuracy);
                test.push_back(r.final_test_accuracy);
            }
            const double v = stats(val).mean;
            csv << tau << ',' << K << ',' << num(v) << ',' << num(stats(test).mean) << ',' << num(p.predicted_F) << '\n';
            return v;
        };
    } else {
        csv << "tau,K,predicted_F\n";
        scorer = [&](std::size_t tau, std::size_t K) {
            const double F = bound_F(s.constants, eta, static_cast<double>(tau), static_cast<double>(K),
                                     optimal_sigma(static_cast<double>(K), s.constants, b));
            csv << tau << ',' << K << ',' << num(F) << '\n';
            return -F;
        };
    }
    const Plan best = grid_search(s.constants, b, grid, eta, scorer);
    SolveOptions opt;
    opt.eta = eta;
    const Plan solved = solve(s.constants, b, opt);

    auto m = base_manifest(s, "gridsearch");
    m["grid_best"] = best.to_json();
    m["solver"] = solved.to_json();
    m["solver_over_grid_F"] = solved.predicted_F / best.predicted_F;
    const std::filesystem::path out(s.cfg.out);
    write_atomic(out / "gridsearch.csv", csv.str());
    write_atomic(out / "gridsearch_manifest.json", m.dump(2) + "\n");
    log << "grid best tau=" << best.tau << " K=" << best.K << " F=" << best.predicted_F << '\n'
        << "solver    tau=" << solved.tau << " K=" << solved.K << " F=" << solved.predicted_F << '\n';
    return {0, m};
}

}  // namespace dppasgd
