#include "basil/network.hpp"

#include <algorithm>
#include <string>

#include "basil/error.hpp"
#include "basil/kernels.hpp"

namespace basil {

void NetworkArch::validate() const {
    if (input_dim < 1) throw InputError("network input_dim must be >= 1");
    for (std::size_t h : hidden_dims)
        if (h < 1) throw InputError("network hidden layer width must be >= 1");
    if (num_classes < 2) throw InputError("network num_classes must be >= 2");
}

std::size_t NetworkArch::layer_in(std::size_t l) const noexcept {
    return l == 0 ? input_dim : hidden_dims[l - 1];
}

std::size_t NetworkArch::layer_out(std::size_t l) const noexcept {
    return l + 1 == num_layers() ? num_classes : hidden_dims[l];
}

std::size_t NetworkArch::weight_offset(std::size_t l) const noexcept {
    std::size_t off = 0;
    for (std::size_t k = 0; k < l; ++k) off += (layer_in(k) + 1) * layer_out(k);
    return off;
}

std::size_t NetworkArch::bias_offset(std::size_t l) const noexcept {
    return weight_offset(l) + layer_in(l) * layer_out(l);
}

std::size_t NetworkArch::param_count() const noexcept { return weight_offset(num_layers()); }

LogitVector forward(const NetworkArch& arch, std::span<const double> theta,
                    std::span<const double> z) {
    if (z.size() != arch.input_dim)
        throw InputError("embedding has length " + std::to_string(z.size()) + ", expected " +
                         std::to_string(arch.input_dim));
    if (theta.size() != arch.param_count()) throw InputError("parameter vector length mismatch");
    BatchPass pass;
    pass.forward(arch, theta, z, 1);
    auto out = pass.logits();
    return LogitVector(out.begin(), out.end());
}

void BatchPass::forward(const NetworkArch& arch, std::span<const double> theta,
                        std::span<const double> inputs, std::size_t rows) {
    const auto& k = kernels::active();
    const std::size_t layers = arch.num_layers();
    rows_ = rows;
    classes_ = arch.num_classes;
    acts_.resize(layers);
    pre_.resize(layers);
    acts_[0].assign(inputs.begin(), inputs.begin() + static_cast<std::ptrdiff_t>(rows * arch.input_dim));
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t in = arch.layer_in(l);
        const std::size_t out = arch.layer_out(l);
        pre_[l].resize(rows * out);
        k.dense_forward(acts_[l].data(), rows, in, theta.data() + arch.weight_offset(l),
                        theta.data() + arch.bias_offset(l), out, pre_[l].data());
        if (l + 1 < layers) {
            auto& a = acts_[l + 1];
            a.resize(rows * out);
            std::transform(pre_[l].begin(), pre_[l].end(), a.begin(),
                           [](double v) { return v > 0.0 ? v : 0.0; });
        }
    }
}

std::span<const double> BatchPass::logits() const noexcept {
    return {pre_.back().data(), rows_ * classes_};
}

std::span<const double> BatchPass::logits_row(std::size_t r) const noexcept {
    return {pre_.back().data() + r * classes_, classes_};
}

void BatchPass::backward(const NetworkArch& arch, std::span<const double> theta,
                         std::span<const double> dlogits, std::span<double> grad) {
    const auto& k = kernels::active();
    delta_.assign(dlogits.begin(), dlogits.end());
    for (std::size_t l = arch.num_layers(); l-- > 0;) {
        const std::size_t in = arch.layer_in(l);
        const std::size_t out = arch.layer_out(l);
        k.dense_backward_params(delta_.data(), acts_[l].data(), rows_, in, out,
                                grad.data() + arch.weight_offset(l),
                                grad.data() + arch.bias_offset(l));
        if (l == 0) break;
        delta_prev_.resize(rows_ * in);
        k.dense_backward_input(delta_.data(), theta.data() + arch.weight_offset(l), rows_, in, out,
                               delta_prev_.data());
        const auto& pre = pre_[l - 1];
        for (std::size_t i = 0; i < delta_prev_.size(); ++i)
            if (!(pre[i] > 0.0)) delta_prev_[i] = 0.0;
        delta_.swap(delta_prev_);
    }
}

} // namespace basil
