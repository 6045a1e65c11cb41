#pragma once
// Single-process simulator of DP-PASGD: every device runs tau noisy local
// SGD steps, then the server replaces all local models by their mean.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dppasgd/datasets.hpp"
#include "dppasgd/models.hpp"
#include "dppasgd/privacy.hpp"

namespace dppasgd {

struct RunConfig {
    std::size_t tau = 1;
    std::size_t K = 1;
    double eta = 0.1;
    // sigma[m] per device; an empty vector means no noise.
    NoiseSpec noise;
    std::uint64_t seed = 0;
    // Overrides the devices' batch sizes when non-empty.
    std::vector<std::size_t> batch_sizes;
    // Snapshot cadence; 0 means only the endpoints.
    std::size_t eval_every = 0;
    double clip = 1.0;
    double delta = 1e-4;
    double c1 = 100.0;
    double c2 = 1.0;
    // Worker threads for the per-device phase of a round.
    std::size_t threads = 1;

    nlohmann::json to_json() const;
};

struct Snapshot {
    std::size_t iteration = 0;
    double global_loss = 0.0;
    double mean_test_accuracy = 0.0;
    double cumulative_cost = 0.0;
    // Privacy loss spent so far, per device.
    std::vector<double> epsilon;
};

struct TrainTrace {
    std::vector<Snapshot> snapshots;
    std::size_t eval_every = 0;
    // Snapshot model with the lowest global loss over iterations >= 1.
    ModelParams best;
    std::size_t best_iteration = 0;
    double best_loss = std::numeric_limits<double>::infinity();
    ModelParams final_model;
    std::vector<ModelParams> device_models;
    bool diverged = false;
    std::string diagnostic;

    const Snapshot& last() const { return snapshots.back(); }
};

// Uniform draw of `batch` row indices with replacement from [0, n), keyed by
// (seed, device, iteration).
std::vector<std::size_t> draw_batch(std::uint64_t seed, std::size_t device, std::size_t iteration, std::size_t n,
                                    std::size_t batch);

// One noisy local step: theta - eta * (clipped minibatch gradient + noise).
// Throws DivergenceError on non-finite or exploding parameters.
ModelParams local_update(const DeviceDataset& device, const LossKernel& kernel, const ModelParams& theta_in, double eta,
                         double clip, double sigma, std::span<const std::size_t> batch, Stream& noise_stream);

// Coordinate-wise unweighted mean.
ModelParams global_aggregate(std::span<const ModelParams> models);

// Throws ConfigError for an invalid configuration (K not a multiple of tau,
// mismatched noise vector, ...). Divergence is reported in the trace.
TrainTrace run_dp_pasgd(std::span<const DeviceDataset> devices, const LossKernel& kernel, const RunConfig& config);

// DP-SGD: the same protocol with tau forced to 1.
TrainTrace run_dp_sgd_baseline(std::span<const DeviceDataset> devices, const LossKernel& kernel, RunConfig config);

// iteration,global_loss,mean_test_accuracy,cumulative_cost,epsilon_spent
// epsilon_spent is the largest per-device loss.
void write_trace_csv(std::ostream& out, const TrainTrace& trace);

}  // namespace dppasgd
