#include "basil/dataset.hpp"

#include <filesystem>
#include <map>
#include <set>
#include <tuple>

#include "json.hpp"

#include "basil/binary_io.hpp"
#include "basil/error.hpp"

namespace basil {

using nlohmann::json;

bool DatasetManifest::has_temporal_metadata() const noexcept {
    for (const auto& s : samples)
        if (!s.instance_id || !s.temporal_index) return false;
    return true;
}

void DatasetManifest::validate() const {
    if (num_classes < 1) throw InputError("manifest num_classes must be >= 1");
    if (embedding_dim < 1) throw InputError("manifest embedding_dim must be >= 1");
    std::set<std::uint64_t> ids;
    std::set<std::tuple<std::size_t, std::size_t, std::size_t>> keys;
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> frames;
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> max_t;
    for (const auto& s : samples) {
        if (s.class_id >= num_classes)
            throw InputError("sample " + std::to_string(s.sample_id) + " has class id out of range");
        if (!ids.insert(s.sample_id).second)
            throw InputError("duplicate sample_id " + std::to_string(s.sample_id));
        if (s.instance_id.has_value() != s.temporal_index.has_value())
            throw InputError("sample " + std::to_string(s.sample_id) +
                             " has only one of instance_id / temporal_index");
        if (s.instance_id) {
            if (!keys.emplace(s.class_id, *s.instance_id, *s.temporal_index).second)
                throw InputError("duplicate (class, instance, temporal_index) at sample " +
                                 std::to_string(s.sample_id));
            const auto block = std::make_pair(s.class_id, *s.instance_id);
            ++frames[block];
            max_t[block] = std::max(max_t[block], *s.temporal_index);
        }
    }
    for (const auto& [block, count] : frames)
        if (max_t[block] + 1 != count)
            throw InputError("temporal_index not contiguous from 0 in class " +
                             std::to_string(block.first) + " instance " + std::to_string(block.second));
}

void Dataset::validate() const {
    manifest.validate();
    if (embeddings.dim != manifest.embedding_dim)
        throw InputError("embedding file dimension differs from manifest");
    for (const auto& s : manifest.samples)
        if (s.embedding_ref >= embeddings.count())
            throw InputError("sample " + std::to_string(s.sample_id) + " references missing embedding row");
}

std::uint64_t Dataset::content_hash() const {
    binio::Writer w;
    w.put<std::uint64_t>(manifest.num_classes);
    w.put<std::uint64_t>(manifest.embedding_dim);
    for (const auto& s : manifest.samples) {
        w.put<std::uint64_t>(s.sample_id);
        w.put<std::uint64_t>(s.class_id);
        w.put<std::uint64_t>(s.embedding_ref);
    }
    std::uint64_t h = binio::fnv1a(w.bytes());
    const auto* p = reinterpret_cast<const std::uint8_t*>(embeddings.values.data());
    return binio::fnv1a({p, embeddings.values.size() * sizeof(float)}, h);
}

std::string to_json(const DatasetManifest& m) {
    json samples = json::array();
    for (const auto& s : m.samples) {
        json r;
        r["sample_id"] = s.sample_id;
        r["class_id"] = s.class_id;
        r["instance_id"] = s.instance_id ? json(*s.instance_id) : json(nullptr);
        r["temporal_index"] = s.temporal_index ? json(*s.temporal_index) : json(nullptr);
        r["embedding_ref"] = s.embedding_ref;
        samples.push_back(std::move(r));
    }
    json doc;
    doc["format"] = "basil-manifest";
    doc["version"] = 1;
    doc["split"] = m.split == Split::Train ? "train" : "test";
    doc["num_classes"] = m.num_classes;
    doc["embedding_dim"] = m.embedding_dim;
    doc["embedding_file"] = m.embedding_file;
    doc["samples"] = std::move(samples);
    return doc.dump(1) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
    try {
        const json doc = json::parse(text);
        if (doc.at("format").get<std::string>() != "basil-manifest")
            throw LoadError("not a basil manifest");
        if (doc.at("version").get<int>() != 1) throw LoadError("unsupported manifest version");
        DatasetManifest m;
        const auto split = doc.at("split").get<std::string>();
        if (split != "train" && split != "test") throw LoadError("split must be train or test");
        m.split = split == "train" ? Split::Train : Split::Test;
        m.num_classes = doc.at("num_classes").get<std::size_t>();
        m.embedding_dim = doc.at("embedding_dim").get<std::size_t>();
        m.embedding_file = doc.at("embedding_file").get<std::string>();
        for (const auto& r : doc.at("samples")) {
            SampleRecord s;
            s.sample_id = r.at("sample_id").get<std::uint64_t>();
            s.class_id = r.at("class_id").get<std::size_t>();
            if (r.contains("instance_id") && !r["instance_id"].is_null())
                s.instance_id = r["instance_id"].get<std::size_t>();
            if (r.contains("temporal_index") && !r["temporal_index"].is_null())
                s.temporal_index = r["temporal_index"].get<std::size_t>();
            s.embedding_ref = r.at("embedding_ref").get<std::uint64_t>();
            m.samples.push_back(s);
        }
        return m;
    } catch (const json::exception& e) {
        throw LoadError(std::string("malformed manifest: ") + e.what());
    }
}

std::vector<std::uint8_t> encode_embeddings(const EmbeddingTable& t) {
    binio::Writer w;
    w.put_bytes(kEmbeddingMagic);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.count()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.dim));
    for (float v : t.values) w.put(v);
    return w.take();
}

EmbeddingTable decode_embeddings(std::span<const std::uint8_t> bytes) {
    binio::Reader r(bytes);
    if (r.remaining() < kEmbeddingMagic.size() || r.get_bytes(kEmbeddingMagic.size()) != kEmbeddingMagic)
        throw LoadError("not an embedding file (bad magic)");
    const auto count = r.get<std::uint32_t>();
    const auto dim = r.get<std::uint32_t>();
    if (dim == 0) throw LoadError("embedding dimension is zero");
    const std::uint64_t n = static_cast<std::uint64_t>(count) * dim;
    if (r.remaining() != n * sizeof(float))
        throw LoadError("embedding file size does not match its header");
    EmbeddingTable t{dim, std::vector<float>(static_cast<std::size_t>(n))};
    for (float& v : t.values) v = r.get<float>();
    return t;
}

void write_dataset(const Dataset& d, const std::string& dir, const std::string& stem) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    DatasetManifest m = d.manifest;
    m.embedding_file = stem + ".emb";
    const std::string text = to_json(m);
    binio::write_file((fs::path(dir) / (stem + ".json")).string(),
                      {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
    binio::write_file((fs::path(dir) / m.embedding_file).string(), encode_embeddings(d.embeddings));
}

Dataset read_dataset(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    const auto raw = binio::read_file(manifest_path);
    Dataset d;
    d.manifest = manifest_from_json(std::string(raw.begin(), raw.end()));
    const fs::path emb = fs::path(manifest_path).parent_path() / d.manifest.embedding_file;
    d.embeddings = decode_embeddings(binio::read_file(emb.string()));
    try {
        d.validate();
    } catch (const InputError& e) {
        throw LoadError(std::string("invalid dataset ") + manifest_path + ": " + e.what());
    }
    return d;
}

} // namespace basil
