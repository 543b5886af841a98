#include "basil/kernels.hpp"

namespace basil::kernels {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void reparam(const double* mu, const double* sigma, const double* eps, double* theta,
             std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) theta[i] = mu[i] + sigma[i] * eps[i];
}

void mul_acc(const double* a, const double* b, double* acc, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) acc[i] += a[i] * b[i];
}

void dense_forward(const double* x, std::size_t rows, std::size_t in, const double* w,
                   const double* bias, std::size_t out, double* y) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * in;
        double* yr = y + r * out;
        for (std::size_t o = 0; o < out; ++o) yr[o] = bias[o] + dot(w + o * in, xr, in);
    }
}

void dense_backward_params(const double* dy, const double* x, std::size_t rows, std::size_t in,
                           std::size_t out, double* dw, double* db) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* dyr = dy + r * out;
        const double* xr = x + r * in;
        for (std::size_t o = 0; o < out; ++o) {
            const double g = dyr[o];
            if (g == 0.0) continue;
            db[o] += g;
            axpy(g, xr, dw + o * in, in);
        }
    }
}

void dense_backward_input(const double* dy, const double* w, std::size_t rows, std::size_t in,
                          std::size_t out, double* dx) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* dyr = dy + r * out;
        double* dxr = dx + r * in;
        for (std::size_t i = 0; i < in; ++i) dxr[i] = 0.0;
        for (std::size_t o = 0; o < out; ++o) {
            if (dyr[o] == 0.0) continue;
            axpy(dyr[o], w + o * in, dxr, in);
        }
    }
}

constexpr KernelTable kScalar{
    "scalar", dot, axpy, reparam, mul_acc, dense_forward, dense_backward_params,
    dense_backward_input,
};

} // namespace

const KernelTable& scalar_table() noexcept { return kScalar; }

} // namespace basil::kernels
