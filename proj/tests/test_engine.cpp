#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "dppasgd/engine.hpp"
#include "dppasgd/errors.hpp"
#include "fixtures.hpp"

using namespace dppasgd;

namespace {

const LossKernel kLogit{LossKind::Logistic, 0.01};

std::vector<DeviceDataset> toy_federation(std::size_t M = 4, std::size_t n = 160, std::size_t batch = 8) {
    return fixtures::toy_devices(fixtures::toy_samples(n, 5, 21), M, batch);
}

RunConfig noisy_config(std::size_t M, std::size_t tau, std::size_t K, double sigma = 0.05) {
    RunConfig cfg;
    cfg.tau = tau;
    cfg.K = K;
    cfg.eta = 0.5;
    cfg.seed = 77;
    cfg.noise.sigma.assign(M, sigma);
    return cfg;
}

}  // namespace

TEST_CASE("local update: zero gradient and no noise is a fixed point") {
    DeviceDataset dev;
    dev.train.dim = 3;
    dev.train.push_back(std::vector<double>{0.0, 0.0, 0.0}, 1.0, 0);
    const std::vector<std::size_t> batch{0};
    const ModelParams theta(3);
    auto rng = Stream::derive(1, 0, 1, StreamPurpose::Noise);
    // Logistic gradient at a zero row is zero when l2 = 0.
    CHECK(local_update(dev, {LossKind::Logistic, 0.0}, theta, 0.3, 1.0, 0.0, batch, rng) == theta);
}

TEST_CASE("local update is theta - eta (clipped gradient + noise)") {
    auto devices = toy_federation(1, 40);
    const auto& dev = devices[0];
    const std::vector<std::size_t> batch{1, 5, 5, 30};
    const std::vector<double> theta{0.2, -0.1, 0.4, 0.0, 1.0};
    auto rng = Stream::derive(3, 0, 1, StreamPurpose::Noise);
    const auto out = local_update(dev, kLogit, ModelParams(theta), 0.7, 0.5, 0.3, batch, rng);

    auto rng2 = Stream::derive(3, 0, 1, StreamPurpose::Noise);
    const auto noise = sample_noise(rng2, 5, 0.3);
    std::vector<double> g(5, 0.0);
    for (std::size_t i : batch) {
        auto gi = fixtures::loop_gradient(kLogit.kind, kLogit.l2_reg, theta, dev.train.row(i), dev.train.y[i]);
        const double n = fixtures::l2_norm(gi);
        const double f = n > 0.5 ? 0.5 / n : 1.0;
        for (std::size_t j = 0; j < 5; ++j) g[j] += f * gi[j] / 4.0;
    }
    for (std::size_t j = 0; j < 5; ++j) CHECK(out.theta[j] == doctest::Approx(theta[j] - 0.7 * (g[j] + noise[j])).epsilon(1e-13));

    auto again = Stream::derive(3, 0, 1, StreamPurpose::Noise);
    CHECK(local_update(dev, kLogit, ModelParams(theta), 0.7, 0.5, 0.3, batch, again) == out);
}

TEST_CASE("global aggregate") {
    const ModelParams a(std::vector<double>{1.0, -2.0, 3.0});
    const std::vector<ModelParams> same(5, a);
    CHECK(global_aggregate(same) == a);
    const std::vector<ModelParams> opposite{a, ModelParams(std::vector<double>{-1.0, 2.0, -3.0})};
    CHECK(global_aggregate(opposite) == ModelParams(3));

    std::mt19937_64 rng(4);
    std::normal_distribution<double> g;
    for (int t = 0; t < 20; ++t) {
        const std::size_t M = 1 + rng() % 9, d = 1 + rng() % 40;
        std::vector<ModelParams> models(M, ModelParams(d));
        for (auto& m : models)
            for (auto& v : m.theta) v = g(rng);
        const auto mean = global_aggregate(models);
        for (std::size_t j = 0; j < d; ++j) {
            double s = 0.0;
            for (const auto& m : models) s += m.theta[j];
            CHECK(mean.theta[j] == doctest::Approx(s / static_cast<double>(M)).epsilon(1e-13));
        }
    }
    const std::vector<ModelParams> mismatch{ModelParams(2), ModelParams(3)};
    CHECK_THROWS_AS(global_aggregate(mismatch), ContractViolation);
}

TEST_CASE("tau = 1 without noise reproduces distributed SGD") {
    const auto devices = toy_federation(3, 90, 6);
    RunConfig cfg;
    cfg.tau = 1;
    cfg.eta = 0.8;
    cfg.clip = 0.4;
    cfg.seed = 5;
    std::vector<double> theta(5, 0.0);
    for (std::size_t K = 1; K <= 12; ++K) {
        std::vector<std::vector<std::size_t>> batches;
        for (const auto& d : devices) batches.push_back(draw_batch(cfg.seed, d.device_id, K, d.train.size(), d.batch_size));
        theta = fixtures::distributed_sgd_step(kLogit.kind, kLogit.l2_reg, cfg.clip, theta, devices, batches, cfg.eta);
        cfg.K = K;
        const auto trace = run_dp_pasgd(devices, kLogit, cfg);
        for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(trace.final_model.theta[j] - theta[j]) <= 1e-10);
    }
}

TEST_CASE("single device: aggregation is the identity") {
    const auto devices = toy_federation(1, 50, 5);
    auto cfg = noisy_config(1, 20, 20);
    const auto trace = run_dp_pasgd(devices, kLogit, cfg);

    ModelParams theta(5);
    for (std::size_t k = 1; k <= 20; ++k) {
        const auto idx = draw_batch(cfg.seed, 0, k, devices[0].train.size(), devices[0].batch_size);
        auto rng = Stream::derive(cfg.seed, 0, k, StreamPurpose::Noise);
        theta = local_update(devices[0], kLogit, theta, cfg.eta, cfg.clip, 0.05, idx, rng);
    }
    CHECK(trace.final_model == theta);
}

TEST_CASE("cost and privacy bookkeeping") {
    const auto devices = toy_federation();
    auto cfg = noisy_config(4, 10, 10);
    cfg.eval_every = 10;
    cfg.c1 = 100.0;
    cfg.c2 = 1.0;
    const auto trace = run_dp_pasgd(devices, kLogit, cfg);
    REQUIRE(trace.snapshots.size() == 2);
    CHECK(trace.last().cumulative_cost == 110.0);

    cfg.tau = 5;
    cfg.K = 40;
    cfg.eval_every = 4;
    const auto t2 = run_dp_pasgd(devices, kLogit, cfg);
    REQUIRE(t2.snapshots.size() == 11);
    double prev = -1.0;
    for (const auto& s : t2.snapshots) {
        CHECK(s.cumulative_cost == cfg.c1 * static_cast<double>(s.iteration / 5) + cfg.c2 * static_cast<double>(s.iteration));
        for (std::size_t m = 0; m < 4; ++m) {
            CHECK(s.epsilon[m] <= total_epsilon(40, 1.0, 8, 0.05, cfg.delta) * (1 + 1e-15));
            CHECK(s.epsilon[m] >= prev);
        }
        prev = s.epsilon[0];
    }
    CHECK(t2.last().epsilon[2] == total_epsilon(40, 1.0, 8, 0.05, cfg.delta));
}

TEST_CASE("baseline equals tau = 1 and pays a round every step") {
    const auto devices = toy_federation();
    auto cfg = noisy_config(4, 1, 30);
    cfg.eval_every = 10;
    const auto a = run_dp_pasgd(devices, kLogit, cfg);
    cfg.tau = 10;
    const auto b = run_dp_sgd_baseline(devices, kLogit, cfg);
    CHECK(a.final_model == b.final_model);
    CHECK(b.last().cumulative_cost == (cfg.c1 + cfg.c2) * 30);
}

TEST_CASE("invalid configurations") {
    const auto devices = toy_federation();
    auto cfg = noisy_config(4, 3, 10);
    CHECK_THROWS_AS(run_dp_pasgd(devices, kLogit, cfg), ConfigError);
    cfg = noisy_config(3, 2, 10);
    CHECK_THROWS_AS(run_dp_pasgd(devices, kLogit, cfg), ConfigError);
    cfg = noisy_config(4, 2, 10);
    cfg.eta = 0.0;
    CHECK_THROWS_AS(run_dp_pasgd(devices, kLogit, cfg), ConfigError);
    CHECK_THROWS_AS(run_dp_pasgd(std::span<const DeviceDataset>{}, kLogit, noisy_config(0, 1, 1)), ConfigError);
}

TEST_CASE("runs are deterministic, order-independent and thread-independent") {
    const auto devices = toy_federation(6, 240, 8);
    auto cfg = noisy_config(6, 4, 40, 0.2);
    cfg.eval_every = 8;
    const auto a = run_dp_pasgd(devices, kLogit, cfg);
    const auto b = run_dp_pasgd(devices, kLogit, cfg);
    cfg.threads = 4;
    const auto c = run_dp_pasgd(devices, kLogit, cfg);
    std::ostringstream sa, sb, sc;
    write_trace_csv(sa, a);
    write_trace_csv(sb, b);
    write_trace_csv(sc, c);
    CHECK(sa.str() == sb.str());
    CHECK(sa.str() == sc.str());
    CHECK(a.final_model == c.final_model);

    // Devices keep their ids, so reordering only changes summation order.
    auto shuffled = devices;
    std::reverse(shuffled.begin(), shuffled.end());
    std::swap(shuffled[1], shuffled[3]);
    cfg.threads = 1;
    const auto p = run_dp_pasgd(shuffled, kLogit, cfg);
    for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(p.final_model.theta[j] - a.final_model.theta[j]) <= 1e-12);
    for (const auto& dm : p.device_models) CHECK(fixtures::l2_distance(dm.theta, a.final_model.theta) <= 1e-12);
}

TEST_CASE("trace snapshots and best model") {
    const auto devices = toy_federation();
    auto cfg = noisy_config(4, 5, 50, 0.0);
    cfg.noise.sigma.clear();
    cfg.eval_every = 10;
    const auto trace = run_dp_pasgd(devices, kLogit, cfg);
    REQUIRE(trace.snapshots.size() == 6);
    CHECK(trace.snapshots[0].global_loss == doctest::Approx(std::log(2.0)));
    CHECK(std::isinf(trace.last().epsilon[0]));
    CHECK(trace.best_iteration >= 10);
    double min_loss = 1e300;
    for (std::size_t i = 1; i < trace.snapshots.size(); ++i) min_loss = std::min(min_loss, trace.snapshots[i].global_loss);
    CHECK(trace.best_loss == min_loss);
    CHECK(trace.last().global_loss < trace.snapshots[0].global_loss);

    std::ostringstream csv;
    write_trace_csv(csv, trace);
    std::string line;
    std::istringstream in(csv.str());
    std::getline(in, line);
    CHECK(line == "iteration,global_loss,mean_test_accuracy,cumulative_cost,epsilon_spent");
    std::size_t rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 6);
}

TEST_CASE("divergence is reported, not silently continued") {
    const auto devices = toy_federation();
    auto cfg = noisy_config(4, 2, 40, 1e9);
    const auto trace = run_dp_pasgd(devices, kLogit, cfg);
    CHECK(trace.diverged);
    CHECK(trace.diagnostic.find("iteration 1") != std::string::npos);
}

TEST_CASE("batch draws are uniform with replacement and keyed") {
    const auto a = draw_batch(1, 2, 3, 10, 10000);
    CHECK(a == draw_batch(1, 2, 3, 10, 10000));
    CHECK(a != draw_batch(1, 2, 4, 10, 10000));
    std::vector<int> counts(10, 0);
    for (auto i : a) ++counts.at(i);
    for (int c : counts) CHECK(std::abs(c - 1000) < 150);
}
