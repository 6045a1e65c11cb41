#pragma once
// Shared test data and independent oracles. Nothing here calls into the
// code paths it is used to check.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dppasgd/datasets.hpp"
#include "dppasgd/models.hpp"

namespace fixtures {

// n samples in the unit ball with labels from a noisy linear rule.
inline dppasgd::SampleSet toy_samples(std::size_t n, std::size_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> w(dim);
    for (auto& v : w) v = gauss(rng);
    dppasgd::SampleSet s;
    s.dim = dim;
    std::vector<double> x(dim);
    for (std::size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        for (auto& v : x) {
            v = gauss(rng);
            norm += v * v;
        }
        const double r = unif(rng) / std::sqrt(norm);
        double score = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            x[j] *= r;
            score += w[j] * x[j];
        }
        const double y = (score + 0.1 * gauss(rng)) >= 0 ? 1.0 : -1.0;
        s.push_back(x, y, i);
    }
    return s;
}

// Splits a sample set round-robin over M devices (everything in train),
// with a copy of each device's rows as its test split.
inline std::vector<dppasgd::DeviceDataset> toy_devices(const dppasgd::SampleSet& all, std::size_t M, std::size_t batch) {
    std::vector<dppasgd::DeviceDataset> devices(M);
    for (std::size_t m = 0; m < M; ++m) {
        devices[m].device_id = m;
        devices[m].train.dim = devices[m].test.dim = devices[m].val.dim = all.dim;
        devices[m].batch_size = batch;
    }
    for (std::size_t i = 0; i < all.size(); ++i) {
        auto& d = devices[i % M];
        d.train.push_back(all.row(i), all.y[i], all.origin[i]);
        d.test.push_back(all.row(i), all.y[i], all.origin[i]);
        d.val.push_back(all.row(i), all.y[i], all.origin[i]);
    }
    for (auto& d : devices) d.batch_size = std::min(d.batch_size, d.train.size());
    return devices;
}

// Per-sample regularized loss written out directly from its definition.
inline double sample_loss(dppasgd::LossKind kind, double l2, const std::vector<double>& theta, std::span<const double> x,
                          double y) {
    double z = 0.0, sq = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) {
        z += theta[j] * x[j];
        sq += theta[j] * theta[j];
    }
    const double data = kind == dppasgd::LossKind::Logistic ? std::log(1.0 + std::exp(-y * z)) : std::max(0.0, 1.0 - y * z);
    return data + 0.5 * l2 * sq;
}

// Central finite-difference gradient of sample_loss.
inline std::vector<double> fd_gradient(dppasgd::LossKind kind, double l2, std::vector<double> theta,
                                       std::span<const double> x, double y, double h = 1e-5) {
    std::vector<double> g(theta.size());
    for (std::size_t j = 0; j < theta.size(); ++j) {
        const double keep = theta[j];
        theta[j] = keep + h;
        const double up = sample_loss(kind, l2, theta, x, y);
        theta[j] = keep - h;
        const double down = sample_loss(kind, l2, theta, x, y);
        theta[j] = keep;
        g[j] = (up - down) / (2.0 * h);
    }
    return g;
}

inline double l2_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

inline double l2_norm(std::span<const double> a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return std::sqrt(s);
}

// Unclipped-or-clipped per-sample gradient computed by loops, used as an
// oracle for the minibatch kernel.
inline std::vector<double> loop_gradient(dppasgd::LossKind kind, double l2, const std::vector<double>& theta,
                                         std::span<const double> x, double y) {
    double z = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) z += theta[j] * x[j];
    double c;
    if (kind == dppasgd::LossKind::Logistic) {
        c = -y / (1.0 + std::exp(y * z));
    } else {
        c = y * z <= 1.0 ? -y : 0.0;
    }
    std::vector<double> g(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) g[j] = c * x[j] + l2 * theta[j];
    return g;
}

// Direct distributed SGD: theta <- theta - eta * mean_m clipped g_m(theta),
// written with plain loops.
inline std::vector<double> distributed_sgd_step(dppasgd::LossKind kind, double l2, double clip,
                                                const std::vector<double>& theta,
                                                const std::vector<dppasgd::DeviceDataset>& devices,
                                                const std::vector<std::vector<std::size_t>>& batches, double eta) {
    const std::size_t d = theta.size();
    std::vector<double> avg(d, 0.0);
    for (std::size_t m = 0; m < devices.size(); ++m) {
        std::vector<double> gm(d, 0.0);
        for (std::size_t idx : batches[m]) {
            auto g = loop_gradient(kind, l2, theta, devices[m].train.row(idx), devices[m].train.y[idx]);
            const double n = l2_norm(g);
            const double f = n > clip ? clip / n : 1.0;
            for (std::size_t j = 0; j < d; ++j) gm[j] += f * g[j] / static_cast<double>(batches[m].size());
        }
        for (std::size_t j = 0; j < d; ++j) avg[j] += gm[j] / static_cast<double>(devices.size());
    }
    std::vector<double> next(theta);
    for (std::size_t j = 0; j < d; ++j) next[j] -= eta * avg[j];
    return next;
}

}  // namespace fixtures
