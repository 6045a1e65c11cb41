#pragma once
// zCDP accounting for the per-iteration Gaussian mechanism.
//
// All logarithms are natural. Each iteration is charged the full
// clipped-gradient sensitivity 2G/X_m; no subsampling amplification.

#include <cstddef>
#include <span>
#include <vector>

#include "dppasgd/rng.hpp"

namespace dppasgd {

struct ZcdpBudget {
    double rho = 0.0;
};

struct DpGuarantee {
    double epsilon = 0.0;
    double delta = 0.0;
};

struct NoiseSpec {
    std::vector<double> sigma;        // per-device Gaussian std-dev
    std::vector<double> sensitivity;  // 2G / X_m per device
};

// L2 sensitivity of a mean of X_m gradients clipped to norm G.
double clipped_mean_sensitivity(double G, std::size_t batch);

// rho = sensitivity^2 / (2 sigma^2)
ZcdpBudget gaussian_step_rho(double sensitivity, double sigma);

ZcdpBudget compose(std::span<const ZcdpBudget> budgets);

// epsilon = rho + 2 sqrt(rho ln(1/delta))
DpGuarantee zcdp_to_dp(ZcdpBudget rho, double delta);

// Closed-form (epsilon) after K noisy iterations of one device. sigma may be
// +infinity (no privacy loss).
double total_epsilon(std::size_t K, double G, double batch, double sigma, double delta);

// Z = (sqrt(ln(1/delta) + eps) - sqrt(ln(1/delta)))^2, so that
// sigma^2 = 2 K G^2 / (X^2 Z) spends exactly eps. The other root of the
// quadratic, eps + 2 ln(1/delta) + 2 sqrt(ln(1/delta)^2 + eps ln(1/delta)),
// overshoots the budget by an order of magnitude.
double calibration_denominator(double epsilon_th, double delta);

// Smallest sigma whose K-iteration loss equals epsilon_th.
double calibrate_sigma(std::size_t K, double G, double batch, double epsilon_th, double delta);

NoiseSpec calibrate_noise(std::size_t K, double G, std::span<const std::size_t> batch_sizes, double epsilon_th,
                          double delta);

// d iid N(0, sigma^2) draws by Box-Muller. sigma == 0 yields zeros without
// consuming the stream.
std::vector<double> sample_noise(Stream& stream, std::size_t d, double sigma);
void sample_noise_into(Stream& stream, double sigma, std::span<double> out);

}  // namespace dppasgd
