#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "basil/rng.hpp"

namespace basil {

enum class Activation { ReLU };

/// Shape of the plastic classifier head: input -> hidden... -> logits.
struct NetworkArch {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims{256, 256};
    std::size_t num_classes = 0;
    Activation activation = Activation::ReLU;

    /// Throws InputError unless input_dim >= 1, hidden dims >= 1, classes >= 2.
    void validate() const;

    std::size_t num_layers() const noexcept { return hidden_dims.size() + 1; }
    std::size_t layer_in(std::size_t l) const noexcept;
    std::size_t layer_out(std::size_t l) const noexcept;
    /// Offset of layer l's weight block (out x in, row-major); its bias follows.
    std::size_t weight_offset(std::size_t l) const noexcept;
    std::size_t bias_offset(std::size_t l) const noexcept;
    /// Total parameter count P.
    std::size_t param_count() const noexcept;

    friend bool operator==(const NetworkArch&, const NetworkArch&) = default;
};

using LogitVector = std::vector<double>;

/// Forward pass of one sample through the head with parameter vector theta.
LogitVector forward(const NetworkArch& arch, std::span<const double> theta,
                    std::span<const double> z);

/// Batched forward/backward over rows of embeddings. Keeps the activations of
/// the last forward() so backward() can reuse them.
class BatchPass {
public:
    /// inputs is rows x arch.input_dim, row-major.
    void forward(const NetworkArch& arch, std::span<const double> theta,
                 std::span<const double> inputs, std::size_t rows);

    std::size_t rows() const noexcept { return rows_; }
    /// rows x num_classes
    std::span<const double> logits() const noexcept;
    std::span<const double> logits_row(std::size_t r) const noexcept;

    /// Accumulates d(loss)/d(theta) into grad given d(loss)/d(logits).
    void backward(const NetworkArch& arch, std::span<const double> theta,
                  std::span<const double> dlogits, std::span<double> grad);

private:
    std::size_t rows_ = 0;
    std::size_t classes_ = 0;
    // acts_[0] is the input; acts_[l + 1] = relu(pre_[l]) for hidden layers.
    std::vector<std::vector<double>> acts_;
    std::vector<std::vector<double>> pre_;
    std::vector<double> delta_;
    std::vector<double> delta_prev_;
};

} // namespace basil
