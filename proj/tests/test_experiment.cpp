#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "dppasgd/errors.hpp"
#include "dppasgd/experiment.hpp"

using namespace dppasgd;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Scratch directory with a small synthetic dataset.
struct Workspace {
    fs::path root;
    fs::path csv;

    explicit Workspace(const std::string& name) {
        root = fs::temp_directory_path() / ("dppasgd_" + name + "_" + std::to_string(::getpid()));
        fs::remove_all(root);
        fs::create_directories(root);
        csv = root / "toy.csv";
        std::ofstream out(csv);
        out << "a,b,group,label\n";
        std::mt19937_64 rng(17);
        std::normal_distribution<double> g;
        for (int i = 0; i < 480; ++i) {
            const double a = g(rng), b = g(rng);
            const int grp = static_cast<int>(rng() % 4);
            const bool pos = a - 0.5 * b + 0.3 * grp + 0.3 * g(rng) > 0.4;
            out << a << ',' << b << ",g" << grp << ',' << (pos ? "hi" : "lo") << '\n';
        }
    }
    ~Workspace() { fs::remove_all(root); }

    ExperimentConfig config(const std::string& out) const {
        ExperimentConfig c;
        c.dataset = csv.string();
        c.label_col = "label";
        c.categorical_cols = {"group"};
        c.devices = 4;
        c.batch = 16;
        c.seed = 3;
        c.seeds = {11, 12};
        c.probe_draws = 32;
        c.budgets.C_th = 600;
        c.out = (root / out).string();
        return c;
    }
};

int run_cli(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " \"" + std::string(DPPASGD_CLI) + "\" " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::vector<double>> numeric_rows(const std::string& csv) {
    std::vector<std::vector<double>> rows;
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::vector<double> r;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) r.push_back(std::stod(cell));
        rows.push_back(r);
    }
    return rows;
}

}  // namespace

TEST_CASE("config json round trip and validation") {
    Workspace ws("config");
    auto cfg = ws.config("o");
    cfg.tau = 5;
    cfg.values = {1, 2};
    ProblemConstants c;
    c.L = 0.3;
    c.lambda = 0.01;
    c.alpha = 0.7;
    c.d = 3;
    c.M = 4;
    c.batch_sizes = {8, 8, 8, 8};
    cfg.constants = c;
    const auto j = cfg.to_json();
    const auto back = ExperimentConfig::from_json(j);
    CHECK(back.to_json() == j);
    CHECK(ExperimentConfig::from_json(nlohmann::json{{"config", j}}).to_json() == j);

    auto bad = cfg;
    bad.kernel = "ridge";
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.devices = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK(ws.config("o").resolved_seeds() == std::vector<std::uint64_t>{11, 12});
    ExperimentConfig d;
    d.seed = 100;
    CHECK(d.resolved_seeds() == std::vector<std::uint64_t>{101, 102, 103, 104, 105});
}

TEST_CASE("plan is deterministic and embeds the config") {
    Workspace ws("plan");
    std::ostringstream log;
    auto cfg = ws.config("p1");
    const auto r1 = cmd_plan(cfg, log);
    cfg.out = (ws.root / "p2").string();
    cmd_plan(cfg, log);
    const auto a = slurp(ws.root / "p1" / "plan.json");
    auto b = slurp(ws.root / "p2" / "plan.json");
    // Only the output directory differs between the two runs.
    const auto pos = b.find("/p2\"");
    REQUIRE(pos != std::string::npos);
    b.replace(pos, 4, "/p1\"");
    CHECK(a == b);
    CHECK(r1.exit_code == 0);
    CHECK(r1.manifest["feasibility"]["cost_within_budget"] == true);
    CHECK(r1.manifest["feasibility"]["privacy_tight"] == true);
    CHECK(r1.manifest["feasibility"]["learning_rate_ok"] == true);
    CHECK(r1.manifest["config"]["dataset"] == ws.csv.string());
    CHECK(r1.manifest.contains("version"));

    cfg.budgets.C_th = 50;
    CHECK_THROWS_AS(cmd_plan(cfg, log), ConfigError);
}

TEST_CASE("train writes one trace per seed with the expected rows, independent of --jobs") {
    Workspace ws("train");
    std::ostringstream log;
    auto cfg = ws.config("serial");
    cfg.tau = 5;
    cfg.iters = 50;
    cfg.eval_every = 10;
    const auto r = cmd_train(cfg, log);
    CHECK(r.exit_code == 0);
    const auto trace = slurp(ws.root / "serial" / "trace_seed11.csv");
    const auto rows = numeric_rows(trace);
    REQUIRE(rows.size() == 50 / 10 + 1);
    CHECK(rows.front()[0] == 0);
    CHECK(rows.back()[0] == 50);
    for (const auto& row : rows) {
        const double k = row[0];
        CHECK(row[3] == cfg.budgets.c1 * std::floor(k / 5) + cfg.budgets.c2 * k);
    }
    CHECK(rows.back()[4] == doctest::Approx(cfg.budgets.epsilon_th).epsilon(1e-9));
    CHECK(fs::exists(ws.root / "serial" / "trace_seed12.csv"));
    CHECK(fs::exists(ws.root / "serial" / "train_summary.csv"));

    cfg.jobs = 8;
    cfg.out = (ws.root / "parallel").string();
    cmd_train(cfg, log);
    for (const char* f : {"trace_seed11.csv", "trace_seed12.csv", "train_summary.csv"})
        CHECK(slurp(ws.root / "serial" / f) == slurp(ws.root / "parallel" / f));
}

TEST_CASE("compare emits paired traces with exact costs") {
    Workspace ws("compare");
    std::ostringstream log;
    auto cfg = ws.config("cmp");
    cfg.tau = 4;
    cfg.eval_every = 4;
    const auto r = cmd_compare(cfg, log);
    CHECK(r.exit_code == 0);
    std::istringstream in(slurp(ws.root / "cmp" / "compare.csv"));
    std::string line;
    std::getline(in, line);
    CHECK(line == "scheme,seed,iteration,global_loss,mean_test_accuracy,cumulative_cost,epsilon_spent");
    std::size_t pasgd = 0, sgd = 0;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string scheme, cell;
        std::getline(ls, scheme, ',');
        std::vector<double> v;
        while (std::getline(ls, cell, ',')) v.push_back(std::stod(cell));
        const double k = v[1];
        const double tau = scheme == "dp-pasgd" ? 4 : 1;
        CHECK(v[4] == cfg.budgets.c1 * std::floor(k / tau) + cfg.budgets.c2 * k);
        CHECK(v[4] <= cfg.budgets.C_th);
        (scheme == "dp-pasgd" ? pasgd : sgd)++;
    }
    CHECK(pasgd > 0);
    CHECK(sgd > 0);
    CHECK(r.manifest["schemes"]["dp-pasgd"]["plan"]["tau"] == 4);
    CHECK(r.manifest["schemes"]["dp-sgd"]["plan"]["tau"] == 1);
}

TEST_CASE("gridsearch and sweep outputs") {
    Workspace ws("grid");
    std::ostringstream log;
    auto cfg = ws.config("g");
    cfg.grid_tau_max = 6;
    const auto g = cmd_gridsearch(cfg, log);
    CHECK(g.exit_code == 0);
    CHECK(fs::exists(ws.root / "g" / "gridsearch.csv"));

    cfg.out = (ws.root / "s").string();
    cfg.axis = "privacy";
    cfg.values = {1, 10};
    cfg.seeds = {5};
    const auto s = cmd_sweep(cfg, log);
    CHECK(s.exit_code == 0);
    const auto text = slurp(ws.root / "s" / "sweep.csv");
    CHECK(text.rfind("axis,budget,C_th,epsilon_th,tau,K,eta,mean_acc,std_acc,status\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}

TEST_CASE("command line: exit codes and SIMD-independent results") {
    Workspace ws("cli");
    const std::string common = "--dataset " + ws.csv.string() +
                               " --label-col label --categorical-cols group --devices 4 --batch 16 --seed 3"
                               " --seeds 11 --probe-draws 32 --cth 600 --tau 5 --iters 60 --eval-every 20";
    CHECK(run_cli("train " + common + " --out " + (ws.root / "simd").string()) == 0);
    CHECK(run_cli("train " + common + " --out " + (ws.root / "scalar").string(), "DP_PASGD_SIMD=scalar") == 0);
    const auto a = numeric_rows(slurp(ws.root / "simd" / "trace_seed11.csv"));
    const auto b = numeric_rows(slurp(ws.root / "scalar" / "trace_seed11.csv"));
    REQUIRE(a.size() == 4);
    REQUIRE(b.size() == a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) CHECK(a[i][j] == doctest::Approx(b[i][j]).epsilon(1e-9));

    CHECK(run_cli("plan " + common + " --cth 50 --out " + (ws.root / "bad").string()) == 2);
    CHECK(run_cli("plan --dataset /nonexistent.csv --out " + (ws.root / "bad").string()) == 2);
    CHECK(run_cli("plan --no-such-flag") == 2);
    CHECK(run_cli("plan " + common + " --out " + (ws.root / "ok").string()) == 0);
}

TEST_CASE("eta grid keeps the learning rate with the best validation accuracy") {
    Workspace ws("etagrid");
    std::ostringstream log;
    auto cfg = ws.config("e");
    cfg.tau = 5;
    cfg.iters = 40;
    cfg.eta_grid = {1e-4, 2.0};
    const auto r = cmd_train(cfg, log);
    const auto& sel = r.manifest["eta_selection"];
    REQUIRE(sel.size() == 2);
    const double best = std::max(sel[0]["mean_val_accuracy"].get<double>(), sel[1]["mean_val_accuracy"].get<double>());
    const double chosen = r.manifest["run"]["eta"].get<double>();
    for (const auto& e : sel)
        if (e["eta"].get<double>() == chosen) CHECK(e["mean_val_accuracy"].get<double>() == best);
    CHECK((chosen == 1e-4 || chosen == 2.0));
}
