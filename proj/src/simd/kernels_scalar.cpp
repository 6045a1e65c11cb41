#include "dppasgd/simd.hpp"

namespace dppasgd::simd {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double norm_sq_scalar(const double* a, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * a[i];
    return s;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale_scalar(double alpha, double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

void axpby_scalar(double a, const double* x, double b, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = a * y[i] + b * x[i];
}

}  // namespace

const KernelTable& scalar_kernels() {
    static const KernelTable table{Backend::Scalar, dot_scalar,   norm_sq_scalar,
                                   axpy_scalar,     scale_scalar, axpby_scalar};
    return table;
}

}  // namespace dppasgd::simd
