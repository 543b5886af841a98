#pragma once

// Straightforward reference code used as an independent second path in the
// tests. Nothing here shares code with the library's batched kernels.

#include <cmath>
#include <cstddef>
#include <vector>

#include "basil/network.hpp"

namespace oracle {

struct Layers {
    // acts[l] is the input to layer l; pre[l] its pre-activation.
    std::vector<std::vector<double>> acts;
    std::vector<std::vector<double>> pre;
};

inline Layers forward(const basil::NetworkArch& a, const std::vector<double>& theta, const std::vector<double>& z) {
    Layers L;
    L.acts.push_back(z);
    std::size_t off = 0;
    const std::size_t n = a.hidden_dims.size() + 1;
    for (std::size_t l = 0; l < n; ++l) {
        const std::size_t in = l == 0 ? a.input_dim : a.hidden_dims[l - 1];
        const std::size_t out = l + 1 == n ? a.num_classes : a.hidden_dims[l];
        std::vector<double> y(out);
        for (std::size_t o = 0; o < out; ++o) {
            long double s = theta[off + out * in + o];
            for (std::size_t i = 0; i < in; ++i) s += static_cast<long double>(theta[off + o * in + i]) * L.acts[l][i];
            y[o] = static_cast<double>(s);
        }
        off += out * in + out;
        L.pre.push_back(y);
        if (l + 1 < n)
            for (double& v : y) v = v > 0.0 ? v : 0.0;
        L.acts.push_back(y);
    }
    return L;
}

inline std::vector<double> logits(const basil::NetworkArch& a, const std::vector<double>& theta,
                                  const std::vector<double>& z) {
    return forward(a, theta, z).acts.back();
}

inline double nll(const std::vector<double>& logits, std::size_t y) {
    long double m = logits[0];
    for (double v : logits) m = std::max<long double>(m, v);
    long double s = 0;
    for (double v : logits) s += std::exp(static_cast<long double>(v) - m);
    return static_cast<double>(m + std::log(s) - logits[y]);
}

/// d(loss)/d(theta) given d(loss)/d(logits), by plain loops.
inline std::vector<double> backward(const basil::NetworkArch& a, const std::vector<double>& theta, const Layers& L,
                                    std::vector<double> delta) {
    std::vector<double> grad(theta.size(), 0.0);
    const std::size_t n = a.hidden_dims.size() + 1;
    std::vector<std::size_t> offs(n);
    std::size_t off = 0;
    for (std::size_t l = 0; l < n; ++l) {
        offs[l] = off;
        const std::size_t in = l == 0 ? a.input_dim : a.hidden_dims[l - 1];
        const std::size_t out = l + 1 == n ? a.num_classes : a.hidden_dims[l];
        off += out * in + out;
    }
    for (std::size_t l = n; l-- > 0;) {
        const std::size_t in = l == 0 ? a.input_dim : a.hidden_dims[l - 1];
        const std::size_t out = l + 1 == n ? a.num_classes : a.hidden_dims[l];
        for (std::size_t o = 0; o < out; ++o) {
            grad[offs[l] + out * in + o] += delta[o];
            for (std::size_t i = 0; i < in; ++i) grad[offs[l] + o * in + i] += delta[o] * L.acts[l][i];
        }
        if (l == 0) break;
        std::vector<double> prev(in, 0.0);
        for (std::size_t i = 0; i < in; ++i) {
            double s = 0.0;
            for (std::size_t o = 0; o < out; ++o) s += delta[o] * theta[offs[l] + o * in + i];
            prev[i] = L.pre[l - 1][i] > 0.0 ? s : 0.0;
        }
        delta = std::move(prev);
    }
    return grad;
}

/// Gradient of the cross-entropy of one example at theta.
inline std::vector<double> ce_grad(const basil::NetworkArch& a, const std::vector<double>& theta,
                                   const std::vector<double>& z, std::size_t y) {
    const Layers L = forward(a, theta, z);
    const auto& lg = L.acts.back();
    double m = lg[0];
    for (double v : lg) m = std::max(m, v);
    double s = 0.0;
    for (double v : lg) s += std::exp(v - m);
    std::vector<double> d(lg.size());
    for (std::size_t c = 0; c < lg.size(); ++c) d[c] = std::exp(lg[c] - m) / s - (c == y ? 1.0 : 0.0);
    return backward(a, theta, L, d);
}

} // namespace oracle
