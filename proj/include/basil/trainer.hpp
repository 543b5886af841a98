#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "basil/bnn.hpp"
#include "basil/replay_buffer.hpp"
#include "basil/rng.hpp"

namespace basil {

enum class TrainingMode {
    BaSiL,     // replay + distillation + loss-aware buffer
    FineTune,  // new sample only, no buffer
    PlainER,   // uniform replay, reservoir buffer, no distillation
};

enum class OptimizerKind { SGD, Adam };

struct TrainerConfig {
    double lambda1 = 1.0;
    double lambda2 = 0.3;
    std::size_t n_replay = 16;
    std::size_t n_kd = 16;
    ReplayStrategy replay_strategy = ReplayStrategy::UAPN;
    ReplacementPolicy replacement_policy = ReplacementPolicy::LAWRRR;
    std::size_t mc_train = 2;
    std::size_t mc_eval = 10;
    // Draws used when recomputing cached slot statistics after an update.
    std::size_t mc_refresh = 2;
    double learning_rate = 0.01;
    // Rescale the (mu, rho) gradient to at most this L2 norm; 0 disables.
    double grad_clip = 10.0;
    std::size_t grad_steps_per_sample = 1;
    std::size_t buffer_capacity = 100;
    TrainingMode mode = TrainingMode::BaSiL;

    OptimizerKind optimizer = OptimizerKind::SGD;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;

    // Copy the posterior into the prior every k arrivals.
    std::size_t prior_refresh_every = 1;
    // Divide the summed replay likelihood by the replay batch size.
    bool normalize_replay = false;
    // Overwrite stored logits when a slot is rehearsed.
    bool refresh_logits = true;

    double sigma0 = 0.05;
    double prior_scale = 1.0;

    /// Throws InputError on out-of-range values.
    void validate() const;
    /// Applies the overrides a mode implies (FineTune: no buffer, lambda2 = 0;
    /// PlainER: Uni, PlainReservoir, lambda2 = 0).
    TrainerConfig effective() const;

    friend bool operator==(const TrainerConfig&, const TrainerConfig&) = default;
};

struct StepReport {
    std::uint64_t step = 0;
    double loss = 0.0;
    double nll_new = 0.0;
    double nll_replay = 0.0;
    double distill = 0.0;
    double kl = 0.0;
    std::vector<std::size_t> replay_indices;
    std::vector<std::size_t> kd_indices;
    InsertReport insert;
};

/// Extra named section carried inside a checkpoint image.
struct CheckpointSection {
    std::string tag; // 4 characters
    std::vector<std::uint8_t> payload;
};

inline constexpr std::string_view kCheckpointMagic = "BSLCKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Posterior, prior, buffer, step counter and random stream of one learner.
class StreamTrainer {
public:
    StreamTrainer(const NetworkArch& arch, const TrainerConfig& config, std::uint64_t seed);

    /// One arrival: prior refresh, replay selection, gradient step(s),
    /// metadata refresh of rehearsed slots, buffer insertion.
    /// Throws InputError on bad input and NumericFault (state unchanged) on
    /// a non-finite loss or parameter.
    StepReport observe(std::span<const double> z, std::size_t y);

    /// Accuracy of argmax predictions over the given rows; argmax is limited
    /// to active_classes when that list is non-empty. Uses a random stream
    /// derived from (seed, step) and leaves the trainer untouched.
    double evaluate(std::span<const double> inputs, std::span<const std::size_t> labels,
                    std::span<const std::size_t> active_classes = {}) const;

    std::vector<std::uint8_t> checkpoint(std::span<const CheckpointSection> extra = {}) const;
    static StreamTrainer restore(std::span<const std::uint8_t> image);
    /// Splits an image into its sections (validates magic and version).
    static std::map<std::string, std::vector<std::uint8_t>> read_sections(
        std::span<const std::uint8_t> image);

    std::uint64_t state_hash() const;

    const TrainerConfig& config() const noexcept { return config_; }
    const NetworkArch& arch() const noexcept { return posterior_.arch; }
    const MeanFieldPosterior& posterior() const noexcept { return posterior_; }
    const MeanFieldPosterior& prior() const noexcept { return prior_; }
    const ReplayBuffer& buffer() const noexcept { return buffer_; }
    std::uint64_t step() const noexcept { return step_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const Rng& rng() const noexcept { return rng_; }

    // Test hooks.
    MeanFieldPosterior& mutable_posterior() noexcept { return posterior_; }
    MeanFieldPosterior& mutable_prior() noexcept { return prior_; }

private:
    StreamTrainer() = default;
    void apply_update(MeanFieldPosterior& q, const LossAndGrads& lg, std::vector<double>& m,
                      std::vector<double>& v, std::uint64_t& t) const;

    TrainerConfig config_;
    MeanFieldPosterior posterior_;
    MeanFieldPosterior prior_;
    ReplayBuffer buffer_;
    std::uint64_t step_ = 0;
    std::uint64_t seed_ = 0;
    Rng rng_;
    std::vector<double> adam_m_;
    std::vector<double> adam_v_;
    std::uint64_t adam_t_ = 0;
};

std::string to_string(TrainingMode m);
std::string to_string(ReplayStrategy s);
std::string to_string(ReplacementPolicy p);
TrainingMode parse_mode(const std::string& s);
ReplayStrategy parse_replay(const std::string& s);
ReplacementPolicy parse_replace(const std::string& s);

} // namespace basil
