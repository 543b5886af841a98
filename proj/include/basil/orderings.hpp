#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "basil/dataset.hpp"

namespace basil {

enum class OrderingKind { IID, ClassIID, Instance, ClassInstance };

struct OrderingSpec {
    OrderingKind kind = OrderingKind::ClassInstance;
    // Classes per increment for ClassIID / ClassInstance (capped at the class count).
    std::size_t classes_per_increment = 2;
    // Evenly spaced testing events for IID / Instance.
    std::size_t events = 10;
};

struct StreamOrder {
    std::vector<std::uint64_t> sample_ids;
    // Stream positions (exclusive end) at which a testing event happens;
    // strictly increasing, last one equals the stream length.
    std::vector<std::size_t> event_boundaries;
};

/// Arranges the manifest's samples into one of the four stream orders.
/// Throws InputError for an empty manifest or missing temporal metadata.
StreamOrder order_stream(const DatasetManifest& manifest, const OrderingSpec& spec, std::uint64_t seed);

/// Partition of the sorted class ids into increments, in stream order.
std::vector<std::vector<std::size_t>> class_groups(const DatasetManifest& manifest,
                                                   std::size_t classes_per_increment,
                                                   std::uint64_t seed);

std::string to_string(OrderingKind k);
OrderingKind parse_ordering(const std::string& s);

struct SynthParams {
    std::size_t num_classes = 10;
    std::size_t instances_per_class = 3;
    std::size_t frames_per_instance = 200;
    std::size_t dim = 32;
    double drift = 0.03;
    double noise = 0.09;
    std::uint64_t seed = 0;
    // Held-out frames per instance; 0 means frames_per_instance / 4 (at least 1).
    std::size_t test_frames_per_instance = 0;
    double class_scale = 0.3;
    double instance_spread = 0.15;
    double mean_reversion = 0.02;

    void validate() const;
};

/// Temporally coherent embedding streams: class centers, perturbed instance
/// centers, and a mean-reverting random walk per instance plus isotropic
/// noise. Returns (train, test); test frames are interleaved hold-outs of the
/// same walks.
std::pair<Dataset, Dataset> synth_dataset(const SynthParams& params);

} // namespace basil
