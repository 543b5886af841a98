#pragma once

#include <cstddef>
#include <string_view>

namespace basil::kernels {

// Data-parallel inner loops of the classifier head. Every table computes the
// same mathematical result; variants differ only in summation order, so they
// agree to rounding (see tests/test_kernels.cpp). Matrices are row-major.
struct KernelTable {
    const char* name;

    // sum_i a[i] * b[i]
    double (*dot)(const double* a, const double* b, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // theta = mu + sigma * eps
    void (*reparam)(const double* mu, const double* sigma, const double* eps, double* theta,
                    std::size_t n);
    // acc += a * b
    void (*mul_acc)(const double* a, const double* b, double* acc, std::size_t n);

    // y[r, o] = bias[o] + sum_i w[o, i] * x[r, i]
    //   x: rows x in, w: out x in, y: rows x out
    void (*dense_forward)(const double* x, std::size_t rows, std::size_t in, const double* w,
                          const double* bias, std::size_t out, double* y);
    // dw[o, i] += sum_r dy[r, o] * x[r, i];  db[o] += sum_r dy[r, o]
    void (*dense_backward_params)(const double* dy, const double* x, std::size_t rows,
                                  std::size_t in, std::size_t out, double* dw, double* db);
    // dx[r, i] = sum_o dy[r, o] * w[o, i]
    void (*dense_backward_input)(const double* dy, const double* w, std::size_t rows,
                                 std::size_t in, std::size_t out, double* dx);
};

const KernelTable& scalar_table() noexcept;

/// AVX2+FMA variant, or nullptr when it was not compiled in or the running
/// CPU lacks the instructions.
const KernelTable* avx2_table() noexcept;

/// Table used by the library. Chosen once: the widest supported variant,
/// unless the BASIL_KERNELS environment variable names "scalar" or "avx2".
const KernelTable& active() noexcept;

/// Overrides the active table (tests and benchmarks). Not thread-safe with
/// respect to concurrent kernel calls.
void set_active(const KernelTable& table) noexcept;

/// Looks a table up by name ("scalar", "avx2"); nullptr if unavailable.
const KernelTable* find_table(std::string_view name) noexcept;

} // namespace basil::kernels
