#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "basil/dataset.hpp"
#include "basil/network.hpp"

namespace basil {

struct EvalRecord {
    std::size_t event_index = 0;
    double alpha = 0.0;
    double alpha_offline = 1.0;

    friend bool operator==(const EvalRecord&, const EvalRecord&) = default;
};

/// Mean over records of alpha / alpha_offline. Throws InputError on an empty
/// list or a non-positive (or non-finite) offline accuracy.
double omega_all(std::span<const EvalRecord> records);

/// Mean of the raw offline accuracies.
double offline_hat(std::span<const EvalRecord> records);

struct OfflineSettings {
    std::size_t epochs = 5;
    std::size_t batch_size = 16;
    double learning_rate = 0.05;
    std::uint64_t seed = 0;
    // Empty disables the file cache.
    std::string cache_dir;

    void validate() const;
};

/// Rows of a dataset restricted to some classes, as doubles.
struct LabeledRows {
    std::vector<double> inputs;
    std::vector<std::size_t> labels;
    std::size_t dim = 0;

    std::size_t size() const noexcept { return labels.size(); }
};

LabeledRows gather_rows(const Dataset& d, std::span<const std::size_t> classes);

/// Accuracy on rows with argmax limited to active classes (all when empty).
double accuracy(const NetworkArch& arch, std::span<const double> theta, const LabeledRows& rows,
                std::span<const std::size_t> active_classes);

/// Trains a point-estimate head on all training rows of `classes` with
/// shuffled mini-batch SGD and returns its test accuracy on those classes.
double offline_accuracy(const Dataset& train, const Dataset& test, const NetworkArch& arch,
                        std::span<const std::size_t> classes, const OfflineSettings& settings);

/// offline_accuracy for each event's class coverage, served from
/// settings.cache_dir when an entry for the same key exists and parses.
std::vector<double> offline_reference(const Dataset& train, const Dataset& test, const NetworkArch& arch,
                                      const std::vector<std::vector<std::size_t>>& event_classes,
                                      const OfflineSettings& settings);

/// Cache key for one offline evaluation.
std::uint64_t offline_cache_key(const Dataset& train, const Dataset& test, const NetworkArch& arch,
                                std::span<const std::size_t> classes, const OfflineSettings& settings);

} // namespace basil
