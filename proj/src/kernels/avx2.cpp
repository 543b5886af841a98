// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.
#include "basil/kernels.hpp"

#include <immintrin.h>

namespace basil::kernels {
namespace {

inline double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* a, const double* b, std::size_t n) {
    __m256d s0 = _mm256_setzero_pd();
    __m256d s1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
        s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), s1);
    }
    for (; i + 4 <= n; i += 4)
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
    double s = hsum(_mm256_add_pd(s0, s1));
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void reparam(const double* mu, const double* sigma, const double* eps, double* theta,
             std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_fmadd_pd(_mm256_loadu_pd(sigma + i), _mm256_loadu_pd(eps + i),
                                          _mm256_loadu_pd(mu + i));
        _mm256_storeu_pd(theta + i, v);
    }
    for (; i < n; ++i) theta[i] = mu[i] + sigma[i] * eps[i];
}

void mul_acc(const double* a, const double* b, double* acc, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                                          _mm256_loadu_pd(acc + i));
        _mm256_storeu_pd(acc + i, v);
    }
    for (; i < n; ++i) acc[i] += a[i] * b[i];
}

// 2 rows x 4 outputs register block.
inline void forward_block_2x4(const double* x0, const double* x1, const double* w, std::size_t in,
                              const double* bias, double* y0, double* y1) {
    const double* w0 = w;
    const double* w1 = w + in;
    const double* w2 = w + 2 * in;
    const double* w3 = w + 3 * in;
    __m256d a00 = _mm256_setzero_pd(), a01 = _mm256_setzero_pd();
    __m256d a02 = _mm256_setzero_pd(), a03 = _mm256_setzero_pd();
    __m256d a10 = _mm256_setzero_pd(), a11 = _mm256_setzero_pd();
    __m256d a12 = _mm256_setzero_pd(), a13 = _mm256_setzero_pd();
    std::size_t k = 0;
    for (; k + 4 <= in; k += 4) {
        const __m256d vx0 = _mm256_loadu_pd(x0 + k);
        const __m256d vx1 = _mm256_loadu_pd(x1 + k);
        __m256d vw = _mm256_loadu_pd(w0 + k);
        a00 = _mm256_fmadd_pd(vx0, vw, a00);
        a10 = _mm256_fmadd_pd(vx1, vw, a10);
        vw = _mm256_loadu_pd(w1 + k);
        a01 = _mm256_fmadd_pd(vx0, vw, a01);
        a11 = _mm256_fmadd_pd(vx1, vw, a11);
        vw = _mm256_loadu_pd(w2 + k);
        a02 = _mm256_fmadd_pd(vx0, vw, a02);
        a12 = _mm256_fmadd_pd(vx1, vw, a12);
        vw = _mm256_loadu_pd(w3 + k);
        a03 = _mm256_fmadd_pd(vx0, vw, a03);
        a13 = _mm256_fmadd_pd(vx1, vw, a13);
    }
    double s0[4] = {hsum(a00), hsum(a01), hsum(a02), hsum(a03)};
    double s1[4] = {hsum(a10), hsum(a11), hsum(a12), hsum(a13)};
    for (; k < in; ++k) {
        s0[0] += x0[k] * w0[k];
        s0[1] += x0[k] * w1[k];
        s0[2] += x0[k] * w2[k];
        s0[3] += x0[k] * w3[k];
        s1[0] += x1[k] * w0[k];
        s1[1] += x1[k] * w1[k];
        s1[2] += x1[k] * w2[k];
        s1[3] += x1[k] * w3[k];
    }
    for (int j = 0; j < 4; ++j) {
        y0[j] = bias[j] + s0[j];
        y1[j] = bias[j] + s1[j];
    }
}

void dense_forward(const double* x, std::size_t rows, std::size_t in, const double* w,
                   const double* bias, std::size_t out, double* y) {
    std::size_t r = 0;
    for (; r + 2 <= rows; r += 2) {
        const double* x0 = x + r * in;
        const double* x1 = x0 + in;
        double* y0 = y + r * out;
        double* y1 = y0 + out;
        std::size_t o = 0;
        for (; o + 4 <= out; o += 4)
            forward_block_2x4(x0, x1, w + o * in, in, bias + o, y0 + o, y1 + o);
        for (; o < out; ++o) {
            y0[o] = bias[o] + dot(w + o * in, x0, in);
            y1[o] = bias[o] + dot(w + o * in, x1, in);
        }
    }
    for (; r < rows; ++r) {
        const double* xr = x + r * in;
        double* yr = y + r * out;
        for (std::size_t o = 0; o < out; ++o) yr[o] = bias[o] + dot(w + o * in, xr, in);
    }
}

void dense_backward_params(const double* dy, const double* x, std::size_t rows, std::size_t in,
                           std::size_t out, double* dw, double* db) {
    for (std::size_t o = 0; o < out; ++o) {
        double* dwo = dw + o * in;
        std::size_t r = 0;
        for (; r + 4 <= rows; r += 4) {
            const double g0 = dy[r * out + o];
            const double g1 = dy[(r + 1) * out + o];
            const double g2 = dy[(r + 2) * out + o];
            const double g3 = dy[(r + 3) * out + o];
            if (g0 == 0.0 && g1 == 0.0 && g2 == 0.0 && g3 == 0.0) continue;
            db[o] += (g0 + g1) + (g2 + g3);
            const double* x0 = x + r * in;
            const double* x1 = x0 + in;
            const double* x2 = x1 + in;
            const double* x3 = x2 + in;
            const __m256d v0 = _mm256_set1_pd(g0), v1 = _mm256_set1_pd(g1);
            const __m256d v2 = _mm256_set1_pd(g2), v3 = _mm256_set1_pd(g3);
            std::size_t i = 0;
            for (; i + 4 <= in; i += 4) {
                __m256d acc = _mm256_loadu_pd(dwo + i);
                acc = _mm256_fmadd_pd(v0, _mm256_loadu_pd(x0 + i), acc);
                acc = _mm256_fmadd_pd(v1, _mm256_loadu_pd(x1 + i), acc);
                acc = _mm256_fmadd_pd(v2, _mm256_loadu_pd(x2 + i), acc);
                acc = _mm256_fmadd_pd(v3, _mm256_loadu_pd(x3 + i), acc);
                _mm256_storeu_pd(dwo + i, acc);
            }
            for (; i < in; ++i) dwo[i] += g0 * x0[i] + g1 * x1[i] + g2 * x2[i] + g3 * x3[i];
        }
        for (; r < rows; ++r) {
            const double g = dy[r * out + o];
            if (g == 0.0) continue;
            db[o] += g;
            axpy(g, x + r * in, dwo, in);
        }
    }
}

void dense_backward_input(const double* dy, const double* w, std::size_t rows, std::size_t in,
                          std::size_t out, double* dx) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* dyr = dy + r * out;
        double* dxr = dx + r * in;
        for (std::size_t i = 0; i < in; ++i) dxr[i] = 0.0;
        std::size_t o = 0;
        for (; o + 4 <= out; o += 4) {
            const double g0 = dyr[o], g1 = dyr[o + 1], g2 = dyr[o + 2], g3 = dyr[o + 3];
            if (g0 == 0.0 && g1 == 0.0 && g2 == 0.0 && g3 == 0.0) continue;
            const double* w0 = w + o * in;
            const double* w1 = w0 + in;
            const double* w2 = w1 + in;
            const double* w3 = w2 + in;
            const __m256d v0 = _mm256_set1_pd(g0), v1 = _mm256_set1_pd(g1);
            const __m256d v2 = _mm256_set1_pd(g2), v3 = _mm256_set1_pd(g3);
            std::size_t i = 0;
            for (; i + 4 <= in; i += 4) {
                __m256d acc = _mm256_loadu_pd(dxr + i);
                acc = _mm256_fmadd_pd(v0, _mm256_loadu_pd(w0 + i), acc);
                acc = _mm256_fmadd_pd(v1, _mm256_loadu_pd(w1 + i), acc);
                acc = _mm256_fmadd_pd(v2, _mm256_loadu_pd(w2 + i), acc);
                acc = _mm256_fmadd_pd(v3, _mm256_loadu_pd(w3 + i), acc);
                _mm256_storeu_pd(dxr + i, acc);
            }
            for (; i < in; ++i) dxr[i] += g0 * w0[i] + g1 * w1[i] + g2 * w2[i] + g3 * w3[i];
        }
        for (; o < out; ++o) {
            if (dyr[o] == 0.0) continue;
            axpy(dyr[o], w + o * in, dxr, in);
        }
    }
}

constexpr KernelTable kAvx2{
    "avx2", dot, axpy, reparam, mul_acc, dense_forward, dense_backward_params,
    dense_backward_input,
};

} // namespace

const KernelTable& avx2_table_unchecked() noexcept { return kAvx2; }

} // namespace basil::kernels
