#pragma once
// Dense vector kernels used by the loss, noise, and aggregation inner loops.
//
// Every kernel exists as a scalar reference and, where the target supports
// it, an AVX2+FMA (x86-64) or NEON (aarch64) variant. The active table is
// picked once per process from CPU detection and can be pinned with the
// DP_PASGD_SIMD environment variable ("scalar", "avx2", "neon").

#include <cstddef>
#include <span>
#include <string_view>

namespace dppasgd::simd {

enum class Backend { Scalar, Avx2, Neon };

std::string_view backend_name(Backend b);

struct KernelTable {
    Backend backend;
    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*norm_sq)(const double* a, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // x *= alpha
    void (*scale)(double alpha, double* x, std::size_t n);
    // y = a * y + b * x
    void (*axpby)(double a, const double* x, double b, double* y, std::size_t n);
};

const KernelTable& scalar_kernels();
// nullptr when the variant is not compiled in or the CPU lacks the ISA.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

// Table selected for this process (first call fixes the choice).
const KernelTable& active();

// Convenience wrappers over active().
inline double dot(std::span<const double> a, std::span<const double> b) {
    return active().dot(a.data(), b.data(), a.size());
}
inline double norm_sq(std::span<const double> a) { return active().norm_sq(a.data(), a.size()); }
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    active().axpy(alpha, x.data(), y.data(), x.size());
}
inline void scale(double alpha, std::span<double> x) { active().scale(alpha, x.data(), x.size()); }
inline void axpby(double a, std::span<const double> x, double b, std::span<double> y) {
    active().axpby(a, x.data(), b, y.data(), x.size());
}

}  // namespace dppasgd::simd
