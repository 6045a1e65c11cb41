#pragma once
// Loss and gradient kernels for the two linear tasks, per-sample clipping,
// and estimation of the constants the planner consumes.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dppasgd/datasets.hpp"

namespace dppasgd {

struct ModelParams {
    std::vector<double> theta;

    ModelParams() = default;
    explicit ModelParams(std::size_t d) : theta(d, 0.0) {}
    explicit ModelParams(std::vector<double> t) : theta(std::move(t)) {}

    std::size_t dim() const { return theta.size(); }
    std::span<const double> view() const { return theta; }
    std::span<double> view() { return theta; }
    bool operator==(const ModelParams&) const = default;
};

enum class LossKind { Logistic, Hinge };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& text);

struct LossKernel {
    LossKind kind = LossKind::Logistic;
    double l2_reg = 0.0;
};

struct ProblemConstants {
    double G = 1.0;
    double L = 1.0;
    double lambda = 0.0;
    double xi_sq = 0.0;
    double alpha = 0.0;
    std::size_t d = 0;
    std::size_t M = 0;
    std::vector<std::size_t> batch_sizes;

    // Throws ConfigError naming the first violated requirement.
    void validate() const;
    nlohmann::json to_json() const;
    static ProblemConstants from_json(const nlohmann::json& j);
};

// Mean per-sample loss plus (l2_reg / 2) * ||theta||^2.
double loss(const LossKernel& kernel, const ModelParams& theta, const SampleSet& samples);

// Regularized loss summed over several sets, weighted by sample count.
double global_loss(const LossKernel& kernel, const ModelParams& theta, std::span<const SampleSet* const> sets);

// Gradient of the regularized per-sample loss, written to `out`. Hinge uses
// the active branch at margin exactly one.
void per_sample_gradient(const LossKernel& kernel, const ModelParams& theta, std::span<const double> x, double y,
                         std::span<double> out);

// Mean over `batch` rows of per-sample gradients, each clipped to norm G.
void clipped_minibatch_gradient(const LossKernel& kernel, const ModelParams& theta, const SampleSet& samples,
                                std::span<const std::size_t> batch, double G, std::span<double> out);

// Unclipped mean gradient of the regularized loss over all rows.
void full_gradient(const LossKernel& kernel, const ModelParams& theta, const SampleSet& samples, std::span<double> out);

// Fraction of rows whose sign prediction matches the label; a zero score
// predicts +1.
double accuracy(const LossKernel& kernel, const ModelParams& theta, const SampleSet& samples);

// Concatenates every device's training rows.
SampleSet pooled_train(std::span<const DeviceDataset> devices);

// Minimizes the regularized loss on `samples` with full-batch gradient
// descent at step 1/L. Returns the final parameters.
ModelParams centralized_minimize(const LossKernel& kernel, const SampleSet& samples, double L, std::size_t iterations);

// Curvature scale: max ||x||^2 / 4 + l2 for logistic, max ||x||^2 + l2 for hinge.
double smoothness_bound(const LossKernel& kernel, std::span<const DeviceDataset> devices);

struct ProbeConfig {
    double clip = 1.0;
    std::size_t draws = 256;
    std::uint64_t seed = 0;
    // Without replacement, a batch as large as the split reproduces the
    // full-batch gradient and the probe reports zero variance.
    bool with_replacement = true;
    // Subtract a centralized optimum estimate from the initial loss.
    bool subtract_optimum = false;
    std::size_t optimum_iterations = 10000;
};

ProblemConstants estimate_constants(const LossKernel& kernel, std::span<const DeviceDataset> devices,
                                    const ProbeConfig& probe);

}  // namespace dppasgd
