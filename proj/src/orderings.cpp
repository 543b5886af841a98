#include "basil/orderings.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>

#include "basil/error.hpp"
#include "basil/rng.hpp"

namespace basil {

namespace {

constexpr std::uint64_t kOrderStream = 0x0d3e;

std::vector<std::size_t> even_boundaries(std::size_t n, std::size_t events) {
    std::vector<std::size_t> b;
    for (std::size_t k = 1; k <= events; ++k) {
        const std::size_t pos = (n * k) / events;
        if (pos > 0 && (b.empty() || pos > b.back())) b.push_back(pos);
    }
    return b;
}

using Block = std::vector<const SampleRecord*>;

// (class, instance) blocks sorted by temporal index, keyed in ascending order.
std::map<std::pair<std::size_t, std::size_t>, Block> instance_blocks(const DatasetManifest& m) {
    std::map<std::pair<std::size_t, std::size_t>, Block> blocks;
    for (const auto& s : m.samples) blocks[{s.class_id, *s.instance_id}].push_back(&s);
    for (auto& [key, block] : blocks)
        std::sort(block.begin(), block.end(), [](const SampleRecord* a, const SampleRecord* b) {
            return *a->temporal_index < *b->temporal_index;
        });
    return blocks;
}

} // namespace

std::string to_string(OrderingKind k) {
    switch (k) {
    case OrderingKind::IID: return "iid";
    case OrderingKind::ClassIID: return "class-iid";
    case OrderingKind::Instance: return "instance";
    case OrderingKind::ClassInstance: return "class-instance";
    }
    return "?";
}

OrderingKind parse_ordering(const std::string& s) {
    if (s == "iid") return OrderingKind::IID;
    if (s == "class-iid") return OrderingKind::ClassIID;
    if (s == "instance") return OrderingKind::Instance;
    if (s == "class-instance") return OrderingKind::ClassInstance;
    throw InputError("unknown ordering '" + s + "' (expected iid, class-iid, instance, class-instance)");
}

std::vector<std::vector<std::size_t>> class_groups(const DatasetManifest& manifest,
                                                   std::size_t classes_per_increment,
                                                   std::uint64_t seed) {
    if (classes_per_increment < 1) throw InputError("classes_per_increment must be >= 1");
    std::vector<std::size_t> classes;
    for (const auto& s : manifest.samples) classes.push_back(s.class_id);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

    Rng rng(derive_seed(seed, kOrderStream));
    std::shuffle(classes.begin(), classes.end(), rng.engine());
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < classes.size(); i += classes_per_increment) {
        const std::size_t end = std::min(classes.size(), i + classes_per_increment);
        groups.emplace_back(classes.begin() + static_cast<std::ptrdiff_t>(i),
                            classes.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return groups;
}

StreamOrder order_stream(const DatasetManifest& manifest, const OrderingSpec& spec, std::uint64_t seed) {
    if (manifest.samples.empty()) throw InputError("cannot order an empty manifest");
    const bool temporal = spec.kind == OrderingKind::Instance || spec.kind == OrderingKind::ClassInstance;
    if (temporal && !manifest.has_temporal_metadata())
        throw InputError("ordering " + to_string(spec.kind) + " needs instance_id and temporal_index on every sample");
    if (spec.events < 1) throw InputError("events must be >= 1");

    const std::size_t n = manifest.samples.size();
    StreamOrder out;
    out.sample_ids.reserve(n);
    // Group order is drawn first from its own stream so ClassIID and
    // ClassInstance visit classes in the same order for a given seed.
    Rng rng(derive_seed(seed, kOrderStream + 1));

    switch (spec.kind) {
    case OrderingKind::IID: {
        for (const auto& s : manifest.samples) out.sample_ids.push_back(s.sample_id);
        std::shuffle(out.sample_ids.begin(), out.sample_ids.end(), rng.engine());
        out.event_boundaries = even_boundaries(n, spec.events);
        break;
    }
    case OrderingKind::ClassIID: {
        for (const auto& group : class_groups(manifest, spec.classes_per_increment, seed)) {
            const std::size_t begin = out.sample_ids.size();
            for (const auto& s : manifest.samples)
                if (std::find(group.begin(), group.end(), s.class_id) != group.end())
                    out.sample_ids.push_back(s.sample_id);
            std::shuffle(out.sample_ids.begin() + static_cast<std::ptrdiff_t>(begin),
                         out.sample_ids.end(), rng.engine());
            out.event_boundaries.push_back(out.sample_ids.size());
        }
        break;
    }
    case OrderingKind::Instance: {
        auto blocks = instance_blocks(manifest);
        std::vector<const Block*> order;
        for (const auto& [key, block] : blocks) order.push_back(&block);
        std::shuffle(order.begin(), order.end(), rng.engine());
        for (const Block* b : order)
            for (const SampleRecord* s : *b) out.sample_ids.push_back(s->sample_id);
        out.event_boundaries = even_boundaries(n, spec.events);
        break;
    }
    case OrderingKind::ClassInstance: {
        auto blocks = instance_blocks(manifest);
        for (const auto& group : class_groups(manifest, spec.classes_per_increment, seed)) {
            std::vector<const Block*> order;
            for (const auto& [key, block] : blocks)
                if (std::find(group.begin(), group.end(), key.first) != group.end())
                    order.push_back(&block);
            std::shuffle(order.begin(), order.end(), rng.engine());
            for (const Block* b : order)
                for (const SampleRecord* s : *b) out.sample_ids.push_back(s->sample_id);
            out.event_boundaries.push_back(out.sample_ids.size());
        }
        break;
    }
    }
    return out;
}

void SynthParams::validate() const {
    if (num_classes < 2) throw InputError("synthetic data needs at least 2 classes");
    if (instances_per_class < 1) throw InputError("instances per class must be >= 1");
    if (frames_per_instance < 1) throw InputError("frames per instance must be >= 1");
    if (dim < 2) throw InputError("embedding dimension must be >= 2");
    auto ok = [](double v) { return std::isfinite(v) && v >= 0.0; };
    if (!ok(drift)) throw InputError("drift must be finite and >= 0");
    if (!ok(noise)) throw InputError("noise must be finite and >= 0");
    if (!ok(class_scale) || class_scale == 0.0) throw InputError("class_scale must be positive");
    if (!ok(instance_spread)) throw InputError("instance_spread must be finite and >= 0");
    if (!(mean_reversion > 0.0 && mean_reversion <= 1.0))
        throw InputError("mean_reversion must lie in (0, 1]");
}

std::pair<Dataset, Dataset> synth_dataset(const SynthParams& p) {
    p.validate();
    const std::size_t d = p.dim;
    const std::size_t n_test =
        p.test_frames_per_instance > 0 ? p.test_frames_per_instance : std::max<std::size_t>(1, p.frames_per_instance / 4);
    const std::size_t total = p.frames_per_instance + n_test;
    // Stationary spread of the walk, so frame 0 is not special.
    const double keep = 1.0 - p.mean_reversion;
    const double walk_std = p.drift / std::sqrt(1.0 - keep * keep);

    Rng rng(p.seed);
    std::vector<double> center(d), inst(d), offset(d), noise(d);

    Dataset train, test;
    for (Dataset* ds : {&train, &test}) {
        ds->manifest.num_classes = p.num_classes;
        ds->manifest.embedding_dim = d;
        ds->embeddings.dim = d;
    }
    train.manifest.split = Split::Train;
    test.manifest.split = Split::Test;
    train.manifest.embedding_file = "train.emb";
    test.manifest.embedding_file = "test.emb";

    for (std::size_t c = 0; c < p.num_classes; ++c) {
        rng.fill_normal(center);
        for (double& v : center) v *= p.class_scale;
        for (std::size_t i = 0; i < p.instances_per_class; ++i) {
            rng.fill_normal(inst);
            for (std::size_t k = 0; k < d; ++k) inst[k] = center[k] + p.instance_spread * inst[k];
            rng.fill_normal(offset);
            for (double& v : offset) v *= walk_std;

            std::size_t t_train = 0;
            std::size_t t_test = 0;
            for (std::size_t f = 0; f < total; ++f) {
                if (f > 0) {
                    rng.fill_normal(noise);
                    for (std::size_t k = 0; k < d; ++k) offset[k] = keep * offset[k] + p.drift * noise[k];
                }
                rng.fill_normal(noise);
                const bool held_out = ((f + 1) * n_test) / total > (f * n_test) / total;
                Dataset& ds = held_out ? test : train;
                std::size_t& t = held_out ? t_test : t_train;
                const std::uint64_t id = ds.manifest.samples.size();
                ds.manifest.samples.push_back({id, c, i, t++, id});
                for (std::size_t k = 0; k < d; ++k)
                    ds.embeddings.values.push_back(static_cast<float>(inst[k] + offset[k] + p.noise * noise[k]));
            }
        }
    }
    return {std::move(train), std::move(test)};
}

} // namespace basil
