#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <vector>

#include "basil/binary_io.hpp"
#include "basil/error.hpp"
#include "basil/orderings.hpp"

using namespace basil;
namespace fs = std::filesystem;

namespace {

SynthParams small_synth() {
    SynthParams p;
    p.num_classes = 6;
    p.instances_per_class = 3;
    p.frames_per_instance = 20;
    p.dim = 5;
    p.seed = 4;
    return p;
}

const Dataset& small_train() {
    static const Dataset d = synth_dataset(small_synth()).first;
    return d;
}

std::map<std::uint64_t, const SampleRecord*> by_id(const DatasetManifest& m) {
    std::map<std::uint64_t, const SampleRecord*> out;
    for (const auto& s : m.samples) out[s.sample_id] = &s;
    return out;
}

void check_permutation_and_events(const DatasetManifest& m, const StreamOrder& o) {
    std::vector<std::uint64_t> sorted = o.sample_ids, want;
    std::sort(sorted.begin(), sorted.end());
    for (const auto& s : m.samples) want.push_back(s.sample_id);
    std::sort(want.begin(), want.end());
    CHECK(sorted == want);
    REQUIRE_FALSE(o.event_boundaries.empty());
    CHECK(o.event_boundaries.back() == m.samples.size());
    CHECK(std::adjacent_find(o.event_boundaries.begin(), o.event_boundaries.end(),
                             [](auto a, auto b) { return a >= b; }) == o.event_boundaries.end());
    CHECK(o.event_boundaries.front() > 0);
}

// Every (class, instance) run appears as one contiguous block in temporal order.
void check_instance_blocks(const DatasetManifest& m, const StreamOrder& o) {
    const auto ids = by_id(m);
    std::set<std::pair<std::size_t, std::size_t>> finished;
    std::pair<std::size_t, std::size_t> current{~std::size_t{0}, 0};
    std::size_t last_t = 0;
    for (auto id : o.sample_ids) {
        const SampleRecord& s = *ids.at(id);
        const std::pair<std::size_t, std::size_t> key{s.class_id, *s.instance_id};
        if (key != current) {
            CHECK(finished.count(key) == 0);
            if (current.first != ~std::size_t{0}) finished.insert(current);
            current = key;
            CHECK(*s.temporal_index == 0);
        } else {
            CHECK(*s.temporal_index == last_t + 1);
        }
        last_t = *s.temporal_index;
    }
}

// Each event segment holds exactly one class group; groups are disjoint.
void check_class_segments(const DatasetManifest& m, const StreamOrder& o, std::size_t cpi) {
    const auto ids = by_id(m);
    std::set<std::size_t> seen_before;
    std::size_t begin = 0;
    for (std::size_t end : o.event_boundaries) {
        std::set<std::size_t> here;
        for (std::size_t p = begin; p < end; ++p) here.insert(ids.at(o.sample_ids[p])->class_id);
        CHECK(here.size() <= cpi);
        for (auto c : here) CHECK(seen_before.count(c) == 0);
        seen_before.insert(here.begin(), here.end());
        begin = end;
    }
    CHECK(seen_before.size() == m.num_classes);
}

double lag1_correlation(const std::vector<double>& x) {
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        den += (x[i] - mean) * (x[i] - mean);
        if (i + 1 < x.size()) num += (x[i] - mean) * (x[i + 1] - mean);
    }
    return num / den;
}

} // namespace

TEST_CASE("every ordering is a permutation with well-formed events") {
    const auto& m = small_train().manifest;
    for (auto kind : {OrderingKind::IID, OrderingKind::ClassIID, OrderingKind::Instance, OrderingKind::ClassInstance}) {
        CAPTURE(to_string(kind));
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto o = order_stream(m, {kind, 2, 7}, seed);
            check_permutation_and_events(m, o);
        }
    }
}

TEST_CASE("iid and instance orderings use evenly spaced events") {
    const auto& m = small_train().manifest;
    const auto o = order_stream(m, {OrderingKind::IID, 2, 7}, 1);
    CHECK(o.event_boundaries.size() == 7);
    CHECK(o.event_boundaries[0] == m.samples.size() / 7);
    const auto many = order_stream(m, {OrderingKind::Instance, 2, 100000}, 1);
    CHECK(many.event_boundaries.size() == m.samples.size());
}

TEST_CASE("instance orderings keep each video contiguous and in temporal order") {
    const auto& m = small_train().manifest;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        check_instance_blocks(m, order_stream(m, {OrderingKind::Instance, 2, 10}, seed));
        check_instance_blocks(m, order_stream(m, {OrderingKind::ClassInstance, 2, 10}, seed));
    }
}

TEST_CASE("class orderings present disjoint class groups one event each") {
    const auto& m = small_train().manifest;
    for (std::size_t cpi : {1, 2, 4, 6, 50}) {
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            const auto ci = order_stream(m, {OrderingKind::ClassIID, cpi, 10}, seed);
            const auto cn = order_stream(m, {OrderingKind::ClassInstance, cpi, 10}, seed);
            const std::size_t groups = (6 + std::min<std::size_t>(cpi, 6) - 1) / std::min<std::size_t>(cpi, 6);
            CHECK(ci.event_boundaries.size() == groups);
            check_class_segments(m, ci, cpi);
            check_class_segments(m, cn, cpi);
            // same seed, same class schedule for both class orderings
            CHECK(ci.event_boundaries == cn.event_boundaries);
        }
    }
    const auto g = class_groups(m, 4, 0);
    REQUIRE(g.size() == 2);
    CHECK(g[0].size() == 4);
    CHECK(g[1].size() == 2);
    CHECK_THROWS_AS(class_groups(m, 0, 0), InputError);
}

TEST_CASE("class-iid shuffles inside a group") {
    const auto& m = small_train().manifest;
    const auto ids = by_id(m);
    const auto o = order_stream(m, {OrderingKind::ClassIID, 6, 10}, 2);
    std::size_t switches = 0;
    for (std::size_t p = 1; p < o.sample_ids.size(); ++p)
        switches += ids.at(o.sample_ids[p])->class_id != ids.at(o.sample_ids[p - 1])->class_id;
    CHECK(switches > o.sample_ids.size() / 2);
}

TEST_CASE("orderings are deterministic in the seed") {
    const auto& m = small_train().manifest;
    for (auto kind : {OrderingKind::IID, OrderingKind::ClassIID, OrderingKind::Instance, OrderingKind::ClassInstance}) {
        const auto a = order_stream(m, {kind, 2, 10}, 9);
        const auto b = order_stream(m, {kind, 2, 10}, 9);
        const auto c = order_stream(m, {kind, 2, 10}, 10);
        CHECK(a.sample_ids == b.sample_ids);
        CHECK(a.event_boundaries == b.event_boundaries);
        CHECK(a.sample_ids != c.sample_ids);
    }
}

TEST_CASE("ordering errors") {
    DatasetManifest empty;
    empty.num_classes = 2;
    empty.embedding_dim = 2;
    CHECK_THROWS_AS(order_stream(empty, {}, 0), InputError);

    DatasetManifest flat = small_train().manifest;
    for (auto& s : flat.samples) s.instance_id.reset();
    CHECK_THROWS_AS(order_stream(flat, {OrderingKind::Instance, 2, 10}, 0), InputError);
    CHECK_THROWS_AS(order_stream(flat, {OrderingKind::ClassInstance, 2, 10}, 0), InputError);
    CHECK_NOTHROW(order_stream(flat, {OrderingKind::IID, 2, 10}, 0));
    CHECK_NOTHROW(order_stream(flat, {OrderingKind::ClassIID, 2, 10}, 0));
    CHECK_THROWS_AS(order_stream(flat, {OrderingKind::IID, 2, 0}, 0), InputError);

    CHECK(parse_ordering("class-instance") == OrderingKind::ClassInstance);
    for (auto k : {OrderingKind::IID, OrderingKind::ClassIID, OrderingKind::Instance, OrderingKind::ClassInstance})
        CHECK(parse_ordering(to_string(k)) == k);
    CHECK_THROWS_AS(parse_ordering("random"), InputError);
}

TEST_CASE("synthetic data: sizes and metadata") {
    SynthParams p;
    const auto [train, test] = synth_dataset(p);
    CHECK(train.manifest.samples.size() == 6000);
    CHECK(test.manifest.samples.size() == 1500);
    CHECK(train.embeddings.dim == 32);
    CHECK_NOTHROW(train.validate());
    CHECK_NOTHROW(test.validate());
    CHECK(train.manifest.has_temporal_metadata());
    CHECK(test.manifest.split == Split::Test);

    std::map<std::size_t, std::size_t> per_class;
    for (const auto& s : train.manifest.samples) ++per_class[s.class_id];
    CHECK(per_class.size() == 10);
    for (const auto& [c, n] : per_class) CHECK(n == 600);

    auto q = small_synth();
    q.test_frames_per_instance = 7;
    CHECK(synth_dataset(q).second.manifest.samples.size() == 6 * 3 * 7);

    SynthParams bad;
    bad.dim = 0;
    CHECK_THROWS_AS(synth_dataset(bad), InputError);
    bad = {};
    bad.num_classes = 1;
    CHECK_THROWS_AS(synth_dataset(bad), InputError);
    bad = {};
    bad.noise = -1;
    CHECK_THROWS_AS(synth_dataset(bad), InputError);
}

TEST_CASE("synthetic data: classes are separable by nearest centroid") {
    const auto [train, test] = synth_dataset(SynthParams{});
    const std::size_t d = train.embeddings.dim, K = train.manifest.num_classes;
    std::vector<double> centroid(K * d, 0.0);
    std::vector<std::size_t> count(K, 0);
    for (const auto& s : train.manifest.samples) {
        const auto row = train.embedding(s);
        for (std::size_t k = 0; k < d; ++k) centroid[s.class_id * d + k] += row[k];
        ++count[s.class_id];
    }
    for (std::size_t c = 0; c < K; ++c)
        for (std::size_t k = 0; k < d; ++k) centroid[c * d + k] /= static_cast<double>(count[c]);
    std::size_t correct = 0;
    for (const auto& s : test.manifest.samples) {
        const auto row = test.embedding(s);
        std::size_t best = 0;
        double best_d = INFINITY;
        for (std::size_t c = 0; c < K; ++c) {
            double dist = 0.0;
            for (std::size_t k = 0; k < d; ++k) dist += std::pow(row[k] - centroid[c * d + k], 2);
            if (dist < best_d) best_d = dist, best = c;
        }
        correct += best == s.class_id;
    }
    const double acc = static_cast<double>(correct) / test.manifest.samples.size();
    MESSAGE("nearest-centroid accuracy " << acc);
    CHECK(acc > 0.9);
}

TEST_CASE("synthetic data: consecutive frames are correlated") {
    auto p = small_synth();
    p.frames_per_instance = 400;
    p.noise = 0.0;
    const auto train = synth_dataset(p).first;
    // first coordinate of instance (0, 0) in temporal order
    std::vector<double> x;
    for (const auto& s : train.manifest.samples)
        if (s.class_id == 0 && *s.instance_id == 0) x.push_back(train.embedding(s)[0]);
    REQUIRE(x.size() == 400);
    CHECK(lag1_correlation(x) > 0.8);

    // with frame noise dominating, the correlation collapses
    p.drift = 0.0;
    p.noise = 0.1;
    const auto flat = synth_dataset(p).first;
    x.clear();
    for (const auto& s : flat.manifest.samples)
        if (s.class_id == 0 && *s.instance_id == 0) x.push_back(flat.embedding(s)[0]);
    CHECK(std::abs(lag1_correlation(x)) < 0.2);
}

TEST_CASE("synthetic data is a pure function of its parameters") {
    const auto a = synth_dataset(small_synth());
    const auto b = synth_dataset(small_synth());
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
    auto p = small_synth();
    p.seed = 5;
    CHECK(synth_dataset(p).first.embeddings != a.first.embeddings);
}

TEST_CASE("dataset files round trip") {
    const fs::path dir = fs::temp_directory_path() / "basil_test_dataset_io";
    fs::remove_all(dir);
    const auto [train, test] = synth_dataset(small_synth());
    write_dataset(train, dir.string(), "train");
    write_dataset(test, dir.string(), "test");
    CHECK(read_dataset((dir / "train.json").string()) == train);
    CHECK(read_dataset((dir / "test.json").string()) == test);
    CHECK(manifest_from_json(to_json(train.manifest)) == train.manifest);
    CHECK(decode_embeddings(encode_embeddings(train.embeddings)) == train.embeddings);
    CHECK(train.content_hash() != test.content_hash());

    SUBCASE("corrupt inputs raise LoadError") {
        auto emb = binio::read_file((dir / "train.emb").string());
        auto cut = emb;
        cut.pop_back();
        CHECK_THROWS_AS(decode_embeddings(cut), LoadError);
        auto magic = emb;
        magic[0] = 'Z';
        CHECK_THROWS_AS(decode_embeddings(magic), LoadError);

        binio::write_file((dir / "train.emb").string(), cut);
        CHECK_THROWS_AS(read_dataset((dir / "train.json").string()), LoadError);

        CHECK_THROWS_AS(manifest_from_json("{"), LoadError);
        CHECK_THROWS_AS(manifest_from_json("{\"format\": \"other\"}"), LoadError);
        CHECK_THROWS_AS(read_dataset((dir / "missing.json").string()), LoadError);

        // a manifest referencing rows past the end of the embedding file
        Dataset d = test;
        d.manifest.samples.back().embedding_ref = 1u << 30;
        write_dataset(d, dir.string(), "bad");
        CHECK_THROWS_AS(read_dataset((dir / "bad.json").string()), LoadError);
    }
    fs::remove_all(dir);
}
