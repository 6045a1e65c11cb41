#include "dppasgd/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dppasgd/errors.hpp"
#include "dppasgd/rng.hpp"
#include "dppasgd/simd.hpp"

namespace dppasgd {

std::string to_string(LossKind kind) { return kind == LossKind::Logistic ? "logistic" : "svm"; }

LossKind parse_loss_kind(const std::string& text) {
    if (text == "logistic") return LossKind::Logistic;
    if (text == "svm" || text == "hinge") return LossKind::Hinge;
    throw ConfigError("kernel must be 'logistic' or 'svm', got '" + text + "'");
}

void ProblemConstants::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw ConfigError(std::string("problem constant check failed: ") + what);
    };
    require(G > 0, "G > 0");
    require(L > 0, "L > 0");
    require(lambda > 0, "lambda > 0 (set a positive L2 regularizer)");
    require(lambda <= L, "lambda <= L");
    require(xi_sq >= 0, "xi_sq >= 0");
    require(alpha > 0, "alpha > 0");
    require(d > 0, "d > 0");
    require(M > 0, "M > 0");
    require(batch_sizes.size() == M, "one batch size per device");
    require(std::all_of(batch_sizes.begin(), batch_sizes.end(), [](std::size_t x) { return x > 0; }), "X_m > 0");
}

nlohmann::json ProblemConstants::to_json() const {
    return {{"G", G}, {"L", L}, {"lambda", lambda}, {"xi_sq", xi_sq}, {"alpha", alpha},
            {"d", d}, {"M", M}, {"batch_sizes", batch_sizes}};
}

ProblemConstants ProblemConstants::from_json(const nlohmann::json& j) {
    ProblemConstants c;
    c.G = j.at("G").get<double>();
    c.L = j.at("L").get<double>();
    c.lambda = j.at("lambda").get<double>();
    c.xi_sq = j.at("xi_sq").get<double>();
    c.alpha = j.at("alpha").get<double>();
    c.d = j.at("d").get<std::size_t>();
    c.M = j.at("M").get<std::size_t>();
    if (j.contains("batch_sizes") && j["batch_sizes"].is_array()) {
        c.batch_sizes = j["batch_sizes"].get<std::vector<std::size_t>>();
    } else {
        c.batch_sizes.assign(c.M, j.value("batch_size", std::size_t{64}));
    }
    return c;
}

namespace {

// log(1 + exp(-m)) without overflow.
double logistic_loss(double margin) {
    return margin > 0 ? std::log1p(std::exp(-margin)) : -margin + std::log1p(std::exp(margin));
}

// d/dz of the per-sample data loss at score z, label y.
double score_derivative(LossKind kind, double z, double y) {
    const double margin = y * z;
    if (kind == LossKind::Logistic) {
        // -y * sigmoid(-margin)
        const double s = margin > 0 ? std::exp(-margin) / (1.0 + std::exp(-margin)) : 1.0 / (1.0 + std::exp(margin));
        return -y * s;
    }
    return margin <= 1.0 ? -y : 0.0;
}

double data_loss(LossKind kind, double z, double y) {
    const double margin = y * z;
    return kind == LossKind::Logistic ? logistic_loss(margin) : std::max(0.0, 1.0 - margin);
}

void check_dim(const ModelParams& theta, std::size_t dim) {
    DPPASGD_REQUIRE(theta.dim() == dim, "parameter dimension " + std::to_string(theta.dim()) +
                                            " does not match sample dimension " + std::to_string(dim));
}

}  // namespace

double loss(const LossKernel& kernel, const ModelParams& theta, const SampleSet& samples) {
    check_dim(theta, samples.dim);
    DPPASGD_REQUIRE(!samples.empty(), "loss over an empty sample set");
    double total = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i)
        total += data_loss(kernel.kind, simd::dot(theta.view(), samples.row(i)), samples.y[i]);
    return total / static_cast<double>(samples.size()) + 0.5 * kernel.l2_reg * simd::norm_sq(theta.view());
}

double global_loss(const LossKernel& kernel, const ModelParams& theta, std::span<const SampleSet* const> sets) {
    double total = 0.0;
    std::size_t count = 0;
    for (const SampleSet* s : sets) {
        check_dim(theta, s->dim);
        for (std::size_t i = 0; i < s->size(); ++i)
            total += data_loss(kernel.kind, simd::dot(theta.view(), s->row(i)), s->y[i]);
        count += s->size();
    }
    DPPASGD_REQUIRE(count > 0, "global loss over no samples");
    return total / static_cast<double>(count) + 0.5 * kernel.l2_reg * simd::norm_sq(theta.view());
}

void per_sample_gradient(const LossKernel& kernel, const ModelParams& theta, std::span<const double> x, double y,
                         std::span<double> out) {
    check_dim(theta, x.size());
    DPPASGD_REQUIRE(out.size() == x.size(), "gradient buffer has the wrong size");
    const double c = score_derivative(kernel.kind, simd::dot(theta.view(), x), y);
    std::copy(theta.theta.begin(), theta.theta.end(), out.begin());
    simd::axpby(kernel.l2_reg, x, c, out);
}

void clipped_minibatch_gradient(const LossKernel& kernel, const ModelParams& theta, const SampleSet& samples,
                                std::span<const std::size_t> batch, double G, std::span<double> out) {
    check_dim(theta, samples.dim);
    DPPASGD_REQUIRE(!batch.empty(), "clipped gradient of an empty mini-batch");
    DPPASGD_REQUIRE(out.size() == samples.dim, "gradient buffer has the wrong size");
    DPPASGD_REQUIRE(G > 0, "clip norm must be positive");
    std::fill(out.begin(), out.end(), 0.0);

    // Each per-sample gradient is c * x + l2 * theta, so its norm follows from
    // ||x||^2, <x, theta> and ||theta||^2 without materializing it.
    const double lam = kernel.l2_reg;
    const double theta_sq = simd::norm_sq(theta.view());
    double theta_weight = 0.0;
    for (std::size_t idx : batch) {
        DPPASGD_REQUIRE(idx < samples.size(), "mini-batch index out of range");
        const auto x = samples.row(idx);
        const double z = simd::dot(theta.view(), x);
        const double c = score_derivative(kernel.kind, z, samples.y[idx]);
        const double norm_sq = std::max(0.0, c * c * simd::norm_sq(x) + 2.0 * c * lam * z + lam * lam * theta_sq);
        const double norm = std::sqrt(norm_sq);
        const double f = norm > G ? G / norm : 1.0;
        if (c != 0.0) simd::axpy(f * c, x, out);
        theta_weight += f;
    }
    const double inv = 1.0 / static_cast<double>(batch.size());
    simd::axpby(inv, theta.view(), inv * lam * theta_weight, out);
}

void full_gradient(const LossKernel& kernel, const ModelParams& theta, const SampleSet& samples, std::span<double> out) {
    check_dim(theta, samples.dim);
    DPPASGD_REQUIRE(!samples.empty(), "gradient over an empty sample set");
    DPPASGD_REQUIRE(out.size() == samples.dim, "gradient buffer has the wrong size");
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto x = samples.row(i);
        const double c = score_derivative(kernel.kind, simd::dot(theta.view(), x), samples.y[i]);
        if (c != 0.0) simd::axpy(c, x, out);
    }
    simd::axpby(1.0 / static_cast<double>(samples.size()), theta.view(), kernel.l2_reg, out);
}

double accuracy(const LossKernel&, const ModelParams& theta, const SampleSet& samples) {
    check_dim(theta, samples.dim);
    DPPASGD_REQUIRE(!samples.empty(), "accuracy over an empty sample set");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double predicted = simd::dot(theta.view(), samples.row(i)) >= 0.0 ? 1.0 : -1.0;
        correct += predicted == samples.y[i];
    }
    return static_cast<double>(correct) / static_cast<double>(samples.size());
}

SampleSet pooled_train(std::span<const DeviceDataset> devices) {
    DPPASGD_REQUIRE(!devices.empty(), "no devices");
    SampleSet all;
    all.dim = devices.front().train.dim;
    for (const auto& d : devices) {
        DPPASGD_REQUIRE(d.train.dim == all.dim, "devices disagree on feature dimension");
        all.x.insert(all.x.end(), d.train.x.begin(), d.train.x.end());
        all.y.insert(all.y.end(), d.train.y.begin(), d.train.y.end());
        all.origin.insert(all.origin.end(), d.train.origin.begin(), d.train.origin.end());
    }
    return all;
}

ModelParams centralized_minimize(const LossKernel& kernel, const SampleSet& samples, double L, std::size_t iterations) {
    ModelParams theta(samples.dim);
    std::vector<double> g(samples.dim);
    const double step = 1.0 / L;
    for (std::size_t k = 0; k < iterations; ++k) {
        full_gradient(kernel, theta, samples, g);
        simd::axpy(-step, g, theta.view());
    }
    return theta;
}

double smoothness_bound(const LossKernel& kernel, std::span<const DeviceDataset> devices) {
    double max_sq = 0.0;
    for (const auto& d : devices)
        for (const SampleSet* s : {&d.train, &d.val, &d.test})
            for (std::size_t i = 0; i < s->size(); ++i) max_sq = std::max(max_sq, simd::norm_sq(s->row(i)));
    const double curvature = kernel.kind == LossKind::Logistic ? max_sq / 4.0 : max_sq;
    return curvature + kernel.l2_reg;
}

namespace {

double probe_variance(const LossKernel& kernel, const DeviceDataset& device, const ModelParams& theta,
                      const ProbeConfig& probe) {
    const auto& train = device.train;
    const std::size_t n = train.size();
    const std::size_t batch = std::min(device.batch_size, n);
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), 0);
    std::vector<double> mean(train.dim), g(train.dim);
    clipped_minibatch_gradient(kernel, theta, train, all, probe.clip, mean);

    std::vector<std::size_t> idx(batch);
    double total = 0.0;
    for (std::size_t draw = 0; draw < probe.draws; ++draw) {
        auto rng = Stream::derive(probe.seed, device.device_id, draw, StreamPurpose::Probe);
        if (probe.with_replacement) {
            for (auto& i : idx) i = rng.below(n);
        } else {
            std::vector<std::size_t> pool = all;
            for (std::size_t j = 0; j < batch; ++j) std::swap(pool[j], pool[j + rng.below(n - j)]);
            std::copy_n(pool.begin(), batch, idx.begin());
            std::sort(idx.begin(), idx.end());
        }
        clipped_minibatch_gradient(kernel, theta, train, idx, probe.clip, g);
        simd::axpy(-1.0, mean, g);
        total += simd::norm_sq(g);
    }
    return probe.draws ? total / static_cast<double>(probe.draws) : 0.0;
}

}  // namespace

ProblemConstants estimate_constants(const LossKernel& kernel, std::span<const DeviceDataset> devices,
                                    const ProbeConfig& probe) {
    if (!(kernel.l2_reg > 0))
        throw ConfigError("planner constants need a positive L2 regularizer (strong convexity constant)");
    if (devices.empty()) throw ConfigError("no devices to estimate constants from");
    if (!(probe.clip > 0)) throw ConfigError("clip norm must be positive");

    ProblemConstants c;
    c.G = probe.clip;
    c.L = smoothness_bound(kernel, devices);
    c.lambda = kernel.l2_reg;
    c.d = devices.front().train.dim;
    c.M = devices.size();
    const ModelParams theta0(c.d);
    for (const auto& d : devices) {
        if (d.train.empty()) throw ConfigError("device " + std::to_string(d.device_id) + " has no training data");
        c.batch_sizes.push_back(d.batch_size);
        c.xi_sq = std::max(c.xi_sq, probe_variance(kernel, d, theta0, probe));
    }
    std::vector<const SampleSet*> sets;
    for (const auto& d : devices) sets.push_back(&d.train);
    c.alpha = global_loss(kernel, theta0, sets);
    if (probe.subtract_optimum) {
        const SampleSet pooled = pooled_train(devices);
        const ModelParams best = centralized_minimize(kernel, pooled, c.L, probe.optimum_iterations);
        c.alpha -= loss(kernel, best, pooled);
    }
    return c;
}

}  // namespace dppasgd
