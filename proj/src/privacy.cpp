#include "dppasgd/privacy.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "dppasgd/errors.hpp"

namespace dppasgd {

double clipped_mean_sensitivity(double G, std::size_t batch) {
    DPPASGD_REQUIRE(G > 0 && batch > 0, "sensitivity needs G > 0 and a non-empty batch");
    return 2.0 * G / static_cast<double>(batch);
}

ZcdpBudget gaussian_step_rho(double sensitivity, double sigma) {
    DPPASGD_REQUIRE(sensitivity > 0 && sigma > 0, "gaussian mechanism needs positive sensitivity and sigma");
    return {sensitivity * sensitivity / (2.0 * sigma * sigma)};
}

ZcdpBudget compose(std::span<const ZcdpBudget> budgets) {
    double rho = 0.0;
    for (const auto& b : budgets) rho += b.rho;
    return {rho};
}

DpGuarantee zcdp_to_dp(ZcdpBudget rho, double delta) {
    DPPASGD_REQUIRE(delta > 0 && delta < 1, "delta must lie in (0, 1)");
    DPPASGD_REQUIRE(rho.rho >= 0, "rho must be non-negative");
    return {rho.rho + 2.0 * std::sqrt(rho.rho * std::log(1.0 / delta)), delta};
}

double total_epsilon(std::size_t K, double G, double batch, double sigma, double delta) {
    DPPASGD_REQUIRE(G > 0 && batch > 0 && sigma > 0, "total_epsilon needs positive G, batch and sigma");
    DPPASGD_REQUIRE(delta > 0 && delta < 1, "delta must lie in (0, 1)");
    if (K == 0 || std::isinf(sigma)) return 0.0;
    const double k = static_cast<double>(K);
    const double ratio = G / (batch * sigma);
    return 2.0 * k * ratio * ratio + 2.0 * ratio * std::sqrt(2.0 * k * std::log(1.0 / delta));
}

double calibration_denominator(double epsilon_th, double delta) {
    DPPASGD_REQUIRE(epsilon_th > 0, "privacy budget must be positive");
    DPPASGD_REQUIRE(delta > 0 && delta < 1, "delta must lie in (0, 1)");
    // Solving eps = a^2 + 2 a sqrt(l) for a = sqrt(2K) G / (X sigma) gives
    // a^2 = (sqrt(l + eps) - sqrt(l))^2, evaluated without cancellation.
    const double l = std::log(1.0 / delta);
    const double conjugate = epsilon_th + 2.0 * l + 2.0 * std::sqrt(l * l + epsilon_th * l);
    return epsilon_th * epsilon_th / conjugate;
}

double calibrate_sigma(std::size_t K, double G, double batch, double epsilon_th, double delta) {
    DPPASGD_REQUIRE(K >= 1 && G > 0 && batch > 0, "calibrate_sigma needs K >= 1, G > 0, batch > 0");
    const double z = calibration_denominator(epsilon_th, delta);
    return std::sqrt(2.0 * static_cast<double>(K) * G * G / (batch * batch * z));
}

NoiseSpec calibrate_noise(std::size_t K, double G, std::span<const std::size_t> batch_sizes, double epsilon_th,
                          double delta) {
    NoiseSpec spec;
    for (std::size_t x : batch_sizes) {
        spec.sigma.push_back(calibrate_sigma(K, G, static_cast<double>(x), epsilon_th, delta));
        spec.sensitivity.push_back(clipped_mean_sensitivity(G, x));
    }
    return spec;
}

void sample_noise_into(Stream& stream, double sigma, std::span<double> out) {
    DPPASGD_REQUIRE(sigma >= 0, "noise sigma must be non-negative");
    if (sigma == 0.0) {
        std::fill(out.begin(), out.end(), 0.0);
        return;
    }
    std::size_t i = 0;
    while (i < out.size()) {
        // u1 in (0, 1] keeps the log finite.
        const double u1 = 1.0 - stream.uniform();
        const double u2 = stream.uniform();
        const double r = sigma * std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        out[i++] = r * std::cos(a);
        if (i < out.size()) out[i++] = r * std::sin(a);
    }
}

std::vector<double> sample_noise(Stream& stream, std::size_t d, double sigma) {
    std::vector<double> out(d);
    sample_noise_into(stream, sigma, out);
    return out;
}

}  // namespace dppasgd
