#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "basil/network.hpp"
#include "basil/rng.hpp"

namespace basil {

/// ln(1 + e^x), stable for large |x|.
double softplus(double x) noexcept;
/// Inverse of softplus for y > 0.
double softplus_inverse(double y) noexcept;
double sigmoid(double x) noexcept;

/// Diagonal Gaussian over the stacked weights and biases of the head.
/// sigma = softplus(rho) elementwise.
struct MeanFieldPosterior {
    NetworkArch arch;
    std::vector<double> mu;
    std::vector<double> rho;

    /// He-normal means (zero biases) and a constant spread sigma0.
    static MeanFieldPosterior initialize(const NetworkArch& arch, double sigma0, Rng& rng);
    /// mu = 0, sigma = scale everywhere.
    static MeanFieldPosterior isotropic(const NetworkArch& arch, double scale);

    std::size_t size() const noexcept { return mu.size(); }
    std::vector<double> sigma() const;
    /// Throws InputError if vectors disagree with arch or hold non-finite values.
    void validate() const;

    friend bool operator==(const MeanFieldPosterior&, const MeanFieldPosterior&) = default;
};

/// One draw theta = mu + sigma * eps, keeping eps for the pathwise gradient.
struct WeightSample {
    std::vector<double> theta;
    std::vector<double> eps;
};

WeightSample sample_weights(const MeanFieldPosterior& q, Rng& rng);

/// Logits of the network with the sampled parameters.
LogitVector forward(const NetworkArch& arch, const WeightSample& w, std::span<const double> z);

/// -log softmax(logits)[y] in log-sum-exp form.
double nll(std::span<const double> logits, std::size_t y);

/// Closed-form KL(q || p) between diagonal Gaussians.
double kl_diag_gaussian(const MeanFieldPosterior& q, const MeanFieldPosterior& p);

struct LabeledEmbedding {
    std::span<const double> z;
    std::size_t y = 0;
};

struct DistillTarget {
    std::span<const double> z;
    std::span<const double> h;
};

/// Loss and its gradient with respect to (mu, rho), laid out as
/// [d mu_0 .. d mu_{P-1}, d rho_0 .. d rho_{P-1}].
struct LossAndGrads {
    double loss = 0.0;
    std::vector<double> grads;

    // Individual terms of the loss, for reporting.
    double nll_new = 0.0;
    double nll_replay = 0.0;
    double distill = 0.0;
    double kl = 0.0;

    std::span<const double> d_mu() const noexcept { return {grads.data(), grads.size() / 2}; }
    std::span<const double> d_rho() const noexcept {
        return {grads.data() + grads.size() / 2, grads.size() / 2};
    }
};

/// Combined per-arrival objective, Monte-Carlo estimated over shared weight
/// draws:
///   E[-log p(y_new)] + w * sum_n E[-log p(y_n)] + lambda2 * sum_j E||h_j - f(z_j)||^2
///   + lambda1 * KL(q || prior)
/// Any term may be absent.
struct Objective {
    std::optional<LabeledEmbedding> new_sample;
    std::span<const LabeledEmbedding> replay;
    double replay_weight = 1.0;
    std::span<const DistillTarget> distill;
    double lambda2 = 0.0;
    const MeanFieldPosterior* prior = nullptr;
    double lambda1 = 0.0;
};

LossAndGrads objective_loss_and_grads(const MeanFieldPosterior& q, const Objective& obj,
                                      std::size_t mc_samples, Rng& rng);

/// Negated ELBO: NLL of the new sample plus summed replay NLLs plus lambda1 * KL.
LossAndGrads elbo_loss_and_grads(const MeanFieldPosterior& q, const MeanFieldPosterior& prior,
                                 const LabeledEmbedding& new_sample,
                                 std::span<const LabeledEmbedding> replay, double lambda1,
                                 std::size_t mc_samples, Rng& rng);

/// lambda2 * sum_j E||h_j - f(z_j)||^2 over the batch (no 1/N).
LossAndGrads distill_loss_and_grads(const MeanFieldPosterior& q,
                                    std::span<const DistillTarget> batch, double lambda2,
                                    std::size_t mc_samples, Rng& rng);

/// Mean of softmax(f(z)) over mc_samples draws.
std::vector<double> predict_proba(const MeanFieldPosterior& q, std::span<const double> z,
                                  std::size_t mc_samples, Rng& rng);

/// Shannon entropy (nats) of the MC predictive distribution.
double predictive_uncertainty(const MeanFieldPosterior& q, std::span<const double> z,
                              std::size_t mc_samples, Rng& rng);

double entropy(std::span<const double> p) noexcept;

/// Predictive probabilities for many rows (rows x input_dim) sharing the
/// same mc_samples weight draws. Returns rows x num_classes.
std::vector<double> predict_proba_batch(const MeanFieldPosterior& q,
                                        std::span<const double> inputs, std::size_t rows,
                                        std::size_t mc_samples, Rng& rng);

/// Per-example statistics cached in the replay buffer.
struct ExampleScore {
    LogitVector logits;    // mean logits over draws
    double loss = 0.0;     // mean NLL over draws
    double uncertainty = 0.0; // entropy of the mean softmax
};

std::vector<ExampleScore> score_examples(const MeanFieldPosterior& q,
                                         std::span<const LabeledEmbedding> examples,
                                         std::size_t mc_samples, Rng& rng);

} // namespace basil
