#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "basil/dataset.hpp"
#include "basil/metrics.hpp"
#include "basil/network.hpp"
#include "basil/orderings.hpp"
#include "basil/trainer.hpp"

namespace basil {

struct ExperimentConfig {
    std::string run_id = "run";
    // Directory holding train.json / test.json; empty means generate from synth.
    std::string data_dir;
    SynthParams synth;
    OrderingSpec ordering;
    std::vector<std::size_t> hidden_dims{256, 256};
    TrainerConfig trainer;
    // Unset: uniform replay for iid streams, uncertainty-aware otherwise.
    std::optional<ReplayStrategy> replay;
    OfflineSettings offline;
    std::vector<std::uint64_t> seeds{0};
    std::string out_dir = "out";
    std::size_t jobs = 1;
    // Evaluate (and discard) every k arrivals; results must not change.
    std::size_t probe_every = 0;

    /// Throws InputError on any out-of-range value.
    void validate() const;
    /// Trainer settings actually used for this experiment's ordering.
    TrainerConfig trainer_config() const;
    /// Ordered key/value pairs describing every setting that shapes results.
    std::vector<std::pair<std::string, std::string>> echo() const;
    std::uint64_t fingerprint() const;
};

/// Applies one setting by key (the same keys the config file uses).
/// Throws InputError for unknown keys or unparsable values.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// key = value lines, '#' comments, optional [section] headers that prefix
/// keys ("[synth]" + "dim" -> "synth.dim"). Errors name the line number.
void apply_config_text(ExperimentConfig& cfg, const std::string& text);

/// All keys accepted by apply_setting.
std::vector<std::string> config_keys();

struct SeedResult {
    std::uint64_t seed = 0;
    std::vector<EvalRecord> records;
    bool complete = false;
    std::optional<std::string> fault;
    // observe() calls made for this seed (single-pass check).
    std::uint64_t observed = 0;
};

struct ExperimentResult {
    std::vector<SeedResult> seeds; // sorted by seed
    bool any_fault() const;
    bool all_complete() const;
};

struct LoadedData {
    Dataset train;
    Dataset test;
};

/// Reads data_dir, or generates the synthetic pair.
LoadedData load_experiment_data(const ExperimentConfig& cfg);

struct RunControl {
    bool resume = false;
    // Stop each seed after this many testing events (simulated interruption).
    std::optional<std::size_t> stop_after_events;
    bool write_checkpoints = true;
};

/// One seed of the protocol: order, observe each element once, evaluate at
/// every testing event against the cached offline reference.
SeedResult run_seed(const ExperimentConfig& cfg, const LoadedData& data, std::uint64_t seed,
                    const RunControl& control = {});

/// All seeds (in parallel up to cfg.jobs), then results, summary and
/// metadata files under cfg.out_dir.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunControl& control = {});

std::string results_csv(const ExperimentConfig& cfg, const ExperimentResult& result);
std::string summary_csv(const ExperimentConfig& cfg, const ExperimentResult& result);

std::string results_path(const ExperimentConfig& cfg);
std::string summary_path(const ExperimentConfig& cfg);
std::string checkpoint_path(const ExperimentConfig& cfg, std::uint64_t seed);

/// %.17g
std::string format_double(double v);

} // namespace basil
