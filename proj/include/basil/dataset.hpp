#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace basil {

enum class Split { Train, Test };

struct SampleRecord {
    std::uint64_t sample_id = 0;
    std::size_t class_id = 0;
    // Absent for datasets without video structure.
    std::optional<std::size_t> instance_id;
    std::optional<std::size_t> temporal_index;
    // Row in the embedding file.
    std::uint64_t embedding_ref = 0;

    friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct DatasetManifest {
    std::vector<SampleRecord> samples;
    std::size_t num_classes = 0;
    std::size_t embedding_dim = 0;
    Split split = Split::Train;
    // Embedding file name, relative to the manifest's directory.
    std::string embedding_file;

    bool has_temporal_metadata() const noexcept;
    /// Unique (class, instance, temporal) keys, contiguous temporal indices
    /// per instance, unique sample ids, class ids in range.
    void validate() const;

    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

/// Row-major float32 embedding rows, as stored on disk.
struct EmbeddingTable {
    std::size_t dim = 0;
    std::vector<float> values;

    std::size_t count() const noexcept { return dim == 0 ? 0 : values.size() / dim; }
    std::span<const float> row(std::size_t i) const { return {values.data() + i * dim, dim}; }

    friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;
};

struct Dataset {
    DatasetManifest manifest;
    EmbeddingTable embeddings;

    /// Manifest invariants plus: every embedding_ref resolves, dims agree.
    void validate() const;
    std::span<const float> embedding(const SampleRecord& r) const { return embeddings.row(r.embedding_ref); }
    /// Hash over labels and embedding bytes, used as a cache key.
    std::uint64_t content_hash() const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline constexpr std::string_view kEmbeddingMagic = "BSLEMB1";

std::string to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const std::string& text);

std::vector<std::uint8_t> encode_embeddings(const EmbeddingTable& t);
EmbeddingTable decode_embeddings(std::span<const std::uint8_t> bytes);

/// Writes <dir>/<stem>.json and the embedding file it names.
void write_dataset(const Dataset& d, const std::string& dir, const std::string& stem);
/// Reads a manifest and its embedding file; throws LoadError on any defect.
Dataset read_dataset(const std::string& manifest_path);

} // namespace basil
