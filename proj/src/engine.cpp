#include "dppasgd/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <thread>

#include "dppasgd/errors.hpp"
#include "dppasgd/rng.hpp"
#include "dppasgd/simd.hpp"

namespace dppasgd {

nlohmann::json RunConfig::to_json() const {
    return {{"tau", tau},     {"K", K},       {"eta", eta},       {"sigma", noise.sigma},
            {"seed", seed},   {"eval_every", eval_every},         {"clip", clip},
            {"delta", delta}, {"c1", c1},     {"c2", c2},         {"batch_sizes", batch_sizes}};
}

std::vector<std::size_t> draw_batch(std::uint64_t seed, std::size_t device, std::size_t iteration, std::size_t n,
                                    std::size_t batch) {
    DPPASGD_REQUIRE(n > 0, "cannot draw a mini-batch from an empty split");
    auto rng = Stream::derive(seed, device, iteration, StreamPurpose::Batch);
    std::vector<std::size_t> idx(batch);
    for (auto& i : idx) i = rng.below(n);
    return idx;
}

namespace {

constexpr double kDivergenceLimit = 1e8;

void check_finite(const ModelParams& theta, std::size_t device) {
    for (double v : theta.theta) {
        if (!std::isfinite(v) || std::abs(v) > kDivergenceLimit) {
            throw DivergenceError("device " + std::to_string(device) +
                                  ": parameters left the finite range (|theta_i| > 1e8); lower the learning rate");
        }
    }
}

}  // namespace

ModelParams local_update(const DeviceDataset& device, const LossKernel& kernel, const ModelParams& theta_in, double eta,
                         double clip, double sigma, std::span<const std::size_t> batch, Stream& noise_stream) {
    std::vector<double> step(theta_in.dim());
    clipped_minibatch_gradient(kernel, theta_in, device.train, batch, clip, step);
    if (sigma > 0) {
        std::vector<double> noise(theta_in.dim());
        sample_noise_into(noise_stream, sigma, noise);
        simd::axpy(1.0, noise, step);
    }
    ModelParams out = theta_in;
    simd::axpy(-eta, step, out.view());
    check_finite(out, device.device_id);
    return out;
}

ModelParams global_aggregate(std::span<const ModelParams> models) {
    DPPASGD_REQUIRE(!models.empty(), "aggregation over no models");
    ModelParams mean(models.front().dim());
    for (const auto& m : models) {
        DPPASGD_REQUIRE(m.dim() == mean.dim(), "aggregated models differ in dimension");
        simd::axpy(1.0, m.view(), mean.view());
    }
    simd::scale(1.0 / static_cast<double>(models.size()), mean.view());
    return mean;
}

namespace {

void validate(std::span<const DeviceDataset> devices, const RunConfig& cfg) {
    if (devices.empty()) throw ConfigError("federation has no devices");
    if (cfg.tau < 1) throw ConfigError("aggregation period tau must be at least 1");
    if (cfg.K < 1) throw ConfigError("iteration count K must be at least 1");
    if (cfg.K % cfg.tau != 0)
        throw ConfigError("K=" + std::to_string(cfg.K) + " is not a multiple of tau=" + std::to_string(cfg.tau));
    if (!(cfg.eta > 0)) throw ConfigError("learning rate must be positive");
    if (!(cfg.clip > 0)) throw ConfigError("clip norm must be positive");
    if (!cfg.noise.sigma.empty() && cfg.noise.sigma.size() != devices.size())
        throw ConfigError("noise vector has " + std::to_string(cfg.noise.sigma.size()) + " entries for " +
                          std::to_string(devices.size()) + " devices");
    if (!cfg.batch_sizes.empty() && cfg.batch_sizes.size() != devices.size())
        throw ConfigError("batch size list does not match the device count");
    for (const auto& d : devices) {
        if (d.train.empty()) throw ConfigError("device " + std::to_string(d.device_id) + " has no training data");
        if (d.train.dim != devices.front().train.dim) throw ConfigError("devices disagree on feature dimension");
    }
}

struct Evaluator {
    std::span<const DeviceDataset> devices;
    const LossKernel& kernel;
    const RunConfig& cfg;
    std::vector<const SampleSet*> train_sets;

    Snapshot operator()(std::size_t k, const ModelParams& theta) const {
        Snapshot s;
        s.iteration = k;
        s.global_loss = global_loss(kernel, theta, train_sets);
        double acc = 0.0;
        std::size_t counted = 0;
        for (const auto& d : devices) {
            if (d.test.empty()) continue;
            acc += accuracy(kernel, theta, d.test);
            ++counted;
        }
        s.mean_test_accuracy = counted ? acc / static_cast<double>(counted) : 0.0;
        s.cumulative_cost = cfg.c1 * static_cast<double>(k / cfg.tau) + cfg.c2 * static_cast<double>(k);
        for (std::size_t m = 0; m < devices.size(); ++m) {
            const double sigma = cfg.noise.sigma.empty() ? 0.0 : cfg.noise.sigma[m];
            const double batch = static_cast<double>(cfg.batch_sizes.empty() ? devices[m].batch_size : cfg.batch_sizes[m]);
            if (k == 0) {
                s.epsilon.push_back(0.0);
            } else if (sigma > 0) {
                s.epsilon.push_back(total_epsilon(k, cfg.clip, batch, sigma, cfg.delta));
            } else {
                s.epsilon.push_back(std::numeric_limits<double>::infinity());
            }
        }
        return s;
    }
};

}  // namespace

TrainTrace run_dp_pasgd(std::span<const DeviceDataset> devices, const LossKernel& kernel, const RunConfig& cfg) {
    validate(devices, cfg);
    const std::size_t M = devices.size();
    const std::size_t d = devices.front().train.dim;
    const std::size_t eval_every = cfg.eval_every == 0 ? cfg.K : cfg.eval_every;

    Evaluator eval{devices, kernel, cfg, {}};
    for (const auto& dev : devices) eval.train_sets.push_back(&dev.train);

    TrainTrace trace;
    trace.eval_every = eval_every;
    std::vector<ModelParams> local(M, ModelParams(d));
    trace.snapshots.push_back(eval(0, local.front()));

    auto record = [&](std::size_t k) {
        ModelParams avg = global_aggregate(local);
        Snapshot s = eval(k, avg);
        if (s.global_loss < trace.best_loss) {
            trace.best_loss = s.global_loss;
            trace.best = avg;
            trace.best_iteration = k;
        }
        trace.snapshots.push_back(std::move(s));
    };

    // Runs iterations [first, last] for device m.
    auto run_device = [&](std::size_t m, std::size_t first, std::size_t last) {
        const auto& dev = devices[m];
        const std::size_t batch = std::min(cfg.batch_sizes.empty() ? dev.batch_size : cfg.batch_sizes[m], dev.train.size());
        const double sigma = cfg.noise.sigma.empty() ? 0.0 : cfg.noise.sigma[m];
        for (std::size_t k = first; k <= last; ++k) {
            const auto idx = draw_batch(cfg.seed, dev.device_id, k, dev.train.size(), batch);
            auto noise_rng = Stream::derive(cfg.seed, dev.device_id, k, StreamPurpose::Noise);
            local[m] = local_update(dev, kernel, local[m], cfg.eta, cfg.clip, sigma, idx, noise_rng);
        }
    };

    std::size_t k = 0;
    try {
        while (k < cfg.K) {
            // Advance to the next aggregation point or snapshot, whichever is first.
            const std::size_t next_agg = (k / cfg.tau + 1) * cfg.tau;
            const std::size_t next_eval = (k / eval_every + 1) * eval_every;
            const std::size_t stop = std::min({next_agg, next_eval, cfg.K});

            std::vector<std::exception_ptr> errors(M);
            auto work = [&](std::size_t begin, std::size_t end) {
                for (std::size_t m = begin; m < end; ++m) {
                    try {
                        run_device(m, k + 1, stop);
                    } catch (...) {
                        errors[m] = std::current_exception();
                    }
                }
            };
            const std::size_t threads = std::clamp<std::size_t>(cfg.threads, 1, M);
            if (threads == 1) {
                work(0, M);
            } else {
                std::vector<std::jthread> pool;
                const std::size_t chunk = (M + threads - 1) / threads;
                for (std::size_t t = 0; t < threads; ++t)
                    pool.emplace_back(work, t * chunk, std::min(M, (t + 1) * chunk));
            }
            for (auto& e : errors)
                if (e) std::rethrow_exception(e);

            k = stop;
            if (k % cfg.tau == 0) {
                const ModelParams global = global_aggregate(local);
                std::fill(local.begin(), local.end(), global);
            }
            if (k % eval_every == 0 || k == cfg.K) record(k);
        }
    } catch (const DivergenceError& e) {
        trace.diverged = true;
        trace.diagnostic = "iteration " + std::to_string(k + 1) + ": " + e.what();
    }
    trace.final_model = global_aggregate(local);
    trace.device_models = std::move(local);
    if (trace.best.theta.empty()) trace.best = trace.final_model;
    return trace;
}

TrainTrace run_dp_sgd_baseline(std::span<const DeviceDataset> devices, const LossKernel& kernel, RunConfig config) {
    config.tau = 1;
    return run_dp_pasgd(devices, kernel, config);
}

namespace {

std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

void write_trace_csv(std::ostream& out, const TrainTrace& trace) {
    out << "iteration,global_loss,mean_test_accuracy,cumulative_cost,epsilon_spent\n";
    for (const auto& s : trace.snapshots) {
        const double eps = s.epsilon.empty() ? 0.0 : *std::max_element(s.epsilon.begin(), s.epsilon.end());
        out << s.iteration << ',' << fmt(s.global_loss) << ',' << fmt(s.mean_test_accuracy) << ','
            << fmt(s.cumulative_cost) << ',' << fmt(eps) << '\n';
    }
}

}  // namespace dppasgd
