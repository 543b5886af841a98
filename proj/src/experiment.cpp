#include "basil/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <ctime>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "basil/binary_io.hpp"
#include "basil/error.hpp"
#include "basil/kernels.hpp"
#include "json.hpp"

namespace basil {

namespace fs = std::filesystem;

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string unquote(const std::string& s) {
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\'')))
        return s.substr(1, s.size() - 2);
    return s;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size() || v.empty())
        throw InputError(key + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    return static_cast<std::size_t>(parse_u64(key, v));
}

double parse_real(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size() || v.empty() || !std::isfinite(out))
        throw InputError(key + ": expected a finite number, got '" + v + "'");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw InputError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(trim(cur));
    return out;
}

// "0,1,5" or "0-9" or a mix.
std::vector<std::uint64_t> parse_seeds(const std::string& key, const std::string& v) {
    std::vector<std::uint64_t> out;
    for (const auto& part : split(v, ',')) {
        const auto dash = part.find('-');
        if (dash != std::string::npos && dash > 0) {
            const auto lo = parse_u64(key, trim(part.substr(0, dash)));
            const auto hi = parse_u64(key, trim(part.substr(dash + 1)));
            if (hi < lo || hi - lo > 100000) throw InputError(key + ": bad seed range '" + part + "'");
            for (auto s = lo; s <= hi; ++s) out.push_back(s);
        } else {
            out.push_back(parse_u64(key, part));
        }
    }
    if (out.empty()) throw InputError(key + ": no seeds given");
    return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::string join_seeds(const std::vector<std::uint64_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::SGD ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "sgd") return OptimizerKind::SGD;
    if (s == "adam") return OptimizerKind::Adam;
    throw InputError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

using Setter = void (*)(ExperimentConfig&, const std::string&, const std::string&);

const std::vector<std::pair<std::string, Setter>>& setters() {
    static const std::vector<std::pair<std::string, Setter>> table = {
        {"run_id", [](ExperimentConfig& c, const std::string&, const std::string& v) {
             if (v.empty() || v.find_first_of(",/\\\n\r") != std::string::npos)
                 throw InputError("run_id must be non-empty and free of ',', '/' and line breaks");
             c.run_id = v;
         }},
        {"data", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data_dir = v; }},
        {"out", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
        {"jobs", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.jobs = parse_size(k, v); }},
        {"seeds", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.seeds = parse_seeds(k, v); }},
        {"probe_every", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.probe_every = parse_size(k, v); }},
        {"ordering", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.ordering.kind = parse_ordering(v); }},
        {"classes_per_increment", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.ordering.classes_per_increment = parse_size(k, v); }},
        {"events", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.ordering.events = parse_size(k, v); }},
        {"hidden", [](ExperimentConfig& c, const std::string& k, const std::string& v) {
             std::vector<std::size_t> dims;
             if (!v.empty() && v != "none")
                 for (const auto& p : split(v, ',')) dims.push_back(parse_size(k, p));
             c.hidden_dims = dims;
         }},
        {"mode", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.trainer.mode = parse_mode(v); }},
        {"replay", [](ExperimentConfig& c, const std::string&, const std::string& v) {
             if (v == "auto") c.replay.reset();
             else c.replay = parse_replay(v);
         }},
        {"replace", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.trainer.replacement_policy = parse_replace(v); }},
        {"lambda1", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.trainer.lambda1 = parse_real(k, v); }},
        {"lambda2", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.trainer.lambda2 = parse_real(k, v); }},
        {"n_replay", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.trainer.n_replay = parse_size(k, v); }},
        {"n_kd", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.trainer.n_kd = parse_size(k, v); }},
        {"mc_train", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.trainer.mc_train = parse_size(k, v); }},
        {"mc_eval", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.trainer.mc_eval = parse_size(k, v); }},
        {"mc_refresh", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.trainer.mc_refresh = parse_size(k, v); }},
        {"learning_rate", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.trainer.learning_rate = parse_real(k, v); }},
        {"grad_clip", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.trainer.grad_clip = parse_real(k, v); }},
        {"grad_steps", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.trainer.grad_steps_per_sample = parse_size(k, v); }},
        {"buffer", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.trainer.buffer_capacity = parse_size(k, v); }},
        {"optimizer", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.trainer.optimizer = parse_optimizer(v); }},
        {"prior_refresh_every", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.trainer.prior_refresh_every = parse_size(k, v); }},
        {"normalize_replay", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.trainer.normalize_replay = parse_bool(k, v); }},
        {"refresh_logits", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.trainer.refresh_logits = parse_bool(k, v); }},
        {"sigma0", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.trainer.sigma0 = parse_real(k, v); }},
        {"prior_scale", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.trainer.prior_scale = parse_real(k, v); }},
        {"synth.classes", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.synth.num_classes = parse_size(k, v); }},
        {"synth.instances", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.synth.instances_per_class = parse_size(k, v); }},
        {"synth.frames", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.synth.frames_per_instance = parse_size(k, v); }},
        {"synth.test_frames", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.synth.test_frames_per_instance = parse_size(k, v); }},
        {"synth.dim", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.synth.dim = parse_size(k, v); }},
        {"synth.drift", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.synth.drift = parse_real(k, v); }},
        {"synth.noise", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.synth.noise = parse_real(k, v); }},
        {"synth.seed", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.synth.seed = parse_u64(k, v); }},
        {"offline.epochs", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.offline.epochs = parse_size(k, v); }},
        {"offline.batch", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.offline.batch_size = parse_size(k, v); }},
        {"offline.lr", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.offline.learning_rate = parse_real(k, v); }},
        {"offline.seed", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.offline.seed = parse_u64(k, v); }},
        {"offline.cache", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.offline.cache_dir = v; }},
    };
    return table;
}

} // namespace

std::vector<std::string> config_keys() {
    std::vector<std::string> out;
    for (const auto& [k, fn] : setters()) out.push_back(k);
    return out;
}

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& [k, fn] : setters())
        if (k == key) return fn(cfg, key, value);
    throw InputError("unknown configuration key '" + key + "'");
}

void apply_config_text(ExperimentConfig& cfg, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::string section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = line;
        // Comments, unless inside quotes.
        bool quoted = false;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '"') quoted = !quoted;
            if (s[i] == '#' && !quoted) {
                s.resize(i);
                break;
            }
        }
        s = trim(s);
        if (s.empty()) continue;
        try {
            if (s.front() == '[') {
                if (s.back() != ']') throw InputError("unterminated section header");
                section = trim(s.substr(1, s.size() - 2));
                continue;
            }
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw InputError("expected 'key = value'");
            std::string key = trim(s.substr(0, eq));
            if (key.empty()) throw InputError("missing key");
            if (!section.empty()) key = section + "." + key;
            apply_setting(cfg, key, unquote(trim(s.substr(eq + 1))));
        } catch (const InputError& e) {
            throw InputError("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
}

void ExperimentConfig::validate() const {
    if (seeds.empty()) throw InputError("at least one seed is required");
    std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
    if (unique.size() != seeds.size()) throw InputError("seeds must be distinct");
    if (jobs < 1) throw InputError("jobs must be >= 1");
    if (out_dir.empty()) throw InputError("output directory must be set");
    if (ordering.classes_per_increment < 1) throw InputError("classes_per_increment must be >= 1");
    if (ordering.events < 1) throw InputError("events must be >= 1");
    for (auto h : hidden_dims)
        if (h < 1) throw InputError("hidden layer sizes must be >= 1");
    trainer_config().validate();
    offline.validate();
    if (data_dir.empty()) synth.validate();
}

TrainerConfig ExperimentConfig::trainer_config() const {
    TrainerConfig t = trainer;
    if (replay) t.replay_strategy = *replay;
    else t.replay_strategy = ordering.kind == OrderingKind::IID ? ReplayStrategy::Uni : ReplayStrategy::UAPN;
    return t.effective();
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::echo() const {
    const TrainerConfig t = trainer_config();
    std::vector<std::pair<std::string, std::string>> e = {
        {"run_id", run_id},
        {"seeds", join_seeds(seeds)},
        {"ordering", to_string(ordering.kind)},
        {"classes_per_increment", std::to_string(ordering.classes_per_increment)},
        {"events", std::to_string(ordering.events)},
        {"hidden", hidden_dims.empty() ? std::string("none") : join_sizes(hidden_dims)},
        {"mode", to_string(t.mode)},
        {"replay", to_string(t.replay_strategy)},
        {"replace", to_string(t.replacement_policy)},
        {"lambda1", format_double(t.lambda1)},
        {"lambda2", format_double(t.lambda2)},
        {"n_replay", std::to_string(t.n_replay)},
        {"n_kd", std::to_string(t.n_kd)},
        {"mc_train", std::to_string(t.mc_train)},
        {"mc_eval", std::to_string(t.mc_eval)},
        {"mc_refresh", std::to_string(t.mc_refresh)},
        {"learning_rate", format_double(t.learning_rate)},
        {"grad_clip", format_double(t.grad_clip)},
        {"grad_steps", std::to_string(t.grad_steps_per_sample)},
        {"buffer", std::to_string(t.buffer_capacity)},
        {"optimizer", to_string(t.optimizer)},
        {"prior_refresh_every", std::to_string(t.prior_refresh_every)},
        {"normalize_replay", t.normalize_replay ? "true" : "false"},
        {"refresh_logits", t.refresh_logits ? "true" : "false"},
        {"sigma0", format_double(t.sigma0)},
        {"prior_scale", format_double(t.prior_scale)},
        {"offline.epochs", std::to_string(offline.epochs)},
        {"offline.batch", std::to_string(offline.batch_size)},
        {"offline.lr", format_double(offline.learning_rate)},
        {"offline.seed", std::to_string(offline.seed)},
    };
    if (data_dir.empty()) {
        e.insert(e.end(), {
            {"synth.classes", std::to_string(synth.num_classes)},
            {"synth.instances", std::to_string(synth.instances_per_class)},
            {"synth.frames", std::to_string(synth.frames_per_instance)},
            {"synth.test_frames", std::to_string(synth.test_frames_per_instance)},
            {"synth.dim", std::to_string(synth.dim)},
            {"synth.drift", format_double(synth.drift)},
            {"synth.noise", format_double(synth.noise)},
            {"synth.seed", std::to_string(synth.seed)},
        });
    } else {
        e.emplace_back("data", data_dir);
    }
    return e;
}

std::uint64_t ExperimentConfig::fingerprint() const {
    std::string text;
    for (const auto& [k, v] : echo())
        if (k != "seeds") text += k + "=" + v + "\n";
    return binio::fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

bool ExperimentResult::any_fault() const {
    return std::any_of(seeds.begin(), seeds.end(), [](const SeedResult& s) { return s.fault.has_value(); });
}

bool ExperimentResult::all_complete() const {
    return std::all_of(seeds.begin(), seeds.end(), [](const SeedResult& s) { return s.complete; });
}

LoadedData load_experiment_data(const ExperimentConfig& cfg) {
    LoadedData d;
    if (cfg.data_dir.empty()) {
        auto [train, test] = synth_dataset(cfg.synth);
        d.train = std::move(train);
        d.test = std::move(test);
    } else {
        const fs::path dir(cfg.data_dir);
        for (const char* name : {"train.json", "test.json"})
            if (!fs::exists(dir / name))
                throw InputError("data directory " + cfg.data_dir + " has no " + name);
        d.train = read_dataset((dir / "train.json").string());
        d.test = read_dataset((dir / "test.json").string());
    }
    if (d.train.manifest.embedding_dim != d.test.manifest.embedding_dim)
        throw InputError("train and test embeddings differ in dimension");
    if (d.train.manifest.num_classes != d.test.manifest.num_classes)
        throw InputError("train and test manifests disagree on the class count");
    if (d.train.manifest.samples.empty() || d.test.manifest.samples.empty())
        throw InputError("train and test splits must be non-empty");
    return d;
}

std::string results_path(const ExperimentConfig& cfg) {
    return (fs::path(cfg.out_dir) / (cfg.run_id + ".results.csv")).string();
}

std::string summary_path(const ExperimentConfig& cfg) {
    return (fs::path(cfg.out_dir) / (cfg.run_id + ".summary.csv")).string();
}

std::string checkpoint_path(const ExperimentConfig& cfg, std::uint64_t seed) {
    return (fs::path(cfg.out_dir) / "checkpoints" / (cfg.run_id + "-seed" + std::to_string(seed) + ".ckpt")).string();
}

namespace {

constexpr std::uint32_t kHarnessVersion = 1;

struct HarnessState {
    std::uint64_t fingerprint = 0;
    std::uint64_t seed = 0;
    std::uint64_t position = 0;
    std::uint64_t next_event = 0;
    std::vector<EvalRecord> records;
};

std::vector<std::uint8_t> encode_harness(const HarnessState& h) {
    binio::Writer w;
    w.put<std::uint32_t>(kHarnessVersion);
    w.put<std::uint64_t>(h.fingerprint);
    w.put<std::uint64_t>(h.seed);
    w.put<std::uint64_t>(h.position);
    w.put<std::uint64_t>(h.next_event);
    w.put<std::uint64_t>(h.records.size());
    for (const auto& r : h.records) {
        w.put<std::uint64_t>(r.event_index);
        w.put<double>(r.alpha);
        w.put<double>(r.alpha_offline);
    }
    return w.take();
}

HarnessState decode_harness(std::span<const std::uint8_t> bytes) {
    binio::Reader r(bytes);
    if (r.get<std::uint32_t>() != kHarnessVersion) throw LoadError("unsupported harness section version");
    HarnessState h;
    h.fingerprint = r.get<std::uint64_t>();
    h.seed = r.get<std::uint64_t>();
    h.position = r.get<std::uint64_t>();
    h.next_event = r.get<std::uint64_t>();
    const auto n = r.get<std::uint64_t>();
    if (n > r.remaining() / 24) throw LoadError("harness record count exceeds section size");
    for (std::uint64_t i = 0; i < n; ++i) {
        EvalRecord rec;
        rec.event_index = r.get<std::uint64_t>();
        rec.alpha = r.get<double>();
        rec.alpha_offline = r.get<double>();
        h.records.push_back(rec);
    }
    if (!r.done()) throw LoadError("trailing bytes in harness section");
    return h;
}

std::vector<std::vector<std::size_t>> event_coverage(const DatasetManifest& m, const StreamOrder& order,
                                                     const std::unordered_map<std::uint64_t, std::size_t>& index) {
    std::vector<std::vector<std::size_t>> out;
    std::set<std::size_t> seen;
    std::size_t pos = 0;
    for (std::size_t boundary : order.event_boundaries) {
        for (; pos < boundary; ++pos) seen.insert(m.samples[index.at(order.sample_ids[pos])].class_id);
        out.emplace_back(seen.begin(), seen.end());
    }
    return out;
}

} // namespace

SeedResult run_seed(const ExperimentConfig& cfg, const LoadedData& data, std::uint64_t seed,
                    const RunControl& control) {
    const DatasetManifest& m = data.train.manifest;
    NetworkArch arch;
    arch.input_dim = m.embedding_dim;
    arch.hidden_dims = cfg.hidden_dims;
    arch.num_classes = m.num_classes;
    arch.validate();
    const TrainerConfig tcfg = cfg.trainer_config();

    std::unordered_map<std::uint64_t, std::size_t> index;
    for (std::size_t i = 0; i < m.samples.size(); ++i) index.emplace(m.samples[i].sample_id, i);

    const StreamOrder order = order_stream(m, cfg.ordering, seed);
    const auto coverage = event_coverage(m, order, index);

    OfflineSettings offline = cfg.offline;
    if (offline.cache_dir.empty()) offline.cache_dir = (fs::path(cfg.out_dir) / "cache").string();
    else if (offline.cache_dir == "none") offline.cache_dir.clear();
    const auto alpha_offline = offline_reference(data.train, data.test, arch, coverage, offline);

    std::vector<LabeledRows> tests;
    for (const auto& classes : coverage) {
        tests.push_back(gather_rows(data.test, classes));
        if (tests.back().size() == 0) throw InputError("test split has no samples for the classes seen at an event");
    }

    const std::string ckpt = checkpoint_path(cfg, seed);
    HarnessState h;
    h.fingerprint = cfg.fingerprint();
    h.seed = seed;
    std::optional<StreamTrainer> trainer;
    if (control.resume && fs::exists(ckpt)) {
        const auto image = binio::read_file(ckpt);
        const auto sections = StreamTrainer::read_sections(image);
        const auto it = sections.find("HARN");
        if (it == sections.end()) throw LoadError(ckpt + ": checkpoint has no harness section");
        HarnessState saved = decode_harness(it->second);
        if (saved.fingerprint != h.fingerprint || saved.seed != seed)
            throw InputError(ckpt + " was written by a different configuration; rerun without --resume");
        StreamTrainer restored = StreamTrainer::restore(image);
        if (restored.step() != saved.position || saved.next_event > order.event_boundaries.size() ||
            saved.records.size() != saved.next_event)
            throw LoadError(ckpt + ": inconsistent harness position");
        h = std::move(saved);
        trainer.emplace(std::move(restored));
    } else {
        trainer.emplace(arch, tcfg, seed);
    }

    SeedResult result;
    result.seed = seed;
    result.records = h.records;

    auto save = [&] {
        if (!control.write_checkpoints) return;
        fs::create_directories(fs::path(ckpt).parent_path());
        const CheckpointSection extra{"HARN", encode_harness(h)};
        binio::write_file(ckpt, trainer->checkpoint(std::span(&extra, 1)));
    };

    std::vector<double> z(arch.input_dim);
    std::size_t events_this_call = 0;
    for (std::size_t e = h.next_event; e < order.event_boundaries.size(); ++e) {
        if (control.stop_after_events && events_this_call >= *control.stop_after_events) {
            result.observed = trainer->step();
            return result;
        }
        try {
            for (std::size_t pos = h.position; pos < order.event_boundaries[e]; ++pos) {
                const SampleRecord& rec = m.samples[index.at(order.sample_ids[pos])];
                const auto row = data.train.embedding(rec);
                std::copy(row.begin(), row.end(), z.begin());
                trainer->observe(z, rec.class_id);
                h.position = pos + 1;
                if (cfg.probe_every > 0 && trainer->step() % cfg.probe_every == 0)
                    (void)trainer->evaluate(tests[e].inputs, tests[e].labels, coverage[e]);
            }
        } catch (const NumericFault& f) {
            result.fault = "step " + std::to_string(f.step()) + ": " + f.what();
            result.observed = trainer->step();
            return result;
        }
        const double alpha = trainer->evaluate(tests[e].inputs, tests[e].labels, coverage[e]);
        h.records.push_back({e, alpha, alpha_offline[e]});
        h.next_event = e + 1;
        result.records = h.records;
        ++events_this_call;
        save();
    }

    result.observed = trainer->step();
    if (result.observed != order.sample_ids.size() || h.position != order.sample_ids.size())
        throw std::logic_error("stream was not consumed exactly once");
    result.complete = true;
    return result;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunControl& control) {
    cfg.validate();
    const std::string started = utc_now();
    const LoadedData data = load_experiment_data(cfg);
    fs::create_directories(cfg.out_dir);

    ExperimentResult result;
    result.seeds.resize(cfg.seeds.size());
    std::vector<std::exception_ptr> errors(cfg.seeds.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cfg.seeds.size(); i = next++) {
            try {
                result.seeds[i] = run_seed(cfg, data, cfg.seeds[i], control);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::min(cfg.jobs, cfg.seeds.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::sort(result.seeds.begin(), result.seeds.end(),
              [](const SeedResult& a, const SeedResult& b) { return a.seed < b.seed; });

    const auto write_text = [](const std::string& path, const std::string& text) {
        binio::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    };
    write_text(results_path(cfg), results_csv(cfg, result));
    write_text(summary_path(cfg), summary_csv(cfg, result));

    nlohmann::json meta;
    meta["run_id"] = cfg.run_id;
    meta["started_utc"] = started;
    meta["finished_utc"] = utc_now();
    meta["kernels"] = kernels::active().name;
    meta["jobs"] = cfg.jobs;
    meta["seeds"] = cfg.seeds;
    write_text((fs::path(cfg.out_dir) / (cfg.run_id + ".meta.json")).string(), meta.dump(1) + "\n");
    return result;
}

std::string results_csv(const ExperimentConfig& cfg, const ExperimentResult& result) {
    std::ostringstream out;
    out << "# basil-results 1\n";
    for (const auto& [k, v] : cfg.echo()) out << "# " << k << "=" << v << "\n";
    out << "run_id,seed,mode,ordering,event_index,alpha,alpha_offline,omega_all_running\n";
    const std::string mode = to_string(cfg.trainer_config().mode);
    const std::string ordering = to_string(cfg.ordering.kind);
    for (const auto& s : result.seeds) {
        for (std::size_t i = 0; i < s.records.size(); ++i) {
            const auto& r = s.records[i];
            const double running = omega_all(std::span(s.records).first(i + 1));
            out << cfg.run_id << ',' << s.seed << ',' << mode << ',' << ordering << ',' << r.event_index << ','
                << format_double(r.alpha) << ',' << format_double(r.alpha_offline) << ','
                << format_double(running) << '\n';
        }
        if (s.fault) out << "# fault seed=" << s.seed << " " << *s.fault << "\n";
        else if (!s.complete) out << "# incomplete seed=" << s.seed << " events=" << s.records.size() << "\n";
    }
    return out.str();
}

std::string summary_csv(const ExperimentConfig& cfg, const ExperimentResult& result) {
    std::vector<double> omegas, hats;
    for (const auto& s : result.seeds) {
        if (!s.complete || s.records.empty()) continue;
        omegas.push_back(omega_all(s.records));
        hats.push_back(offline_hat(s.records));
    }
    auto mean = [](const std::vector<double>& v) {
        double sum = 0.0;
        for (double x : v) sum += x;
        return v.empty() ? std::nan("") : sum / static_cast<double>(v.size());
    };
    auto stdev = [&](const std::vector<double>& v) {
        if (v.size() < 2) return v.empty() ? std::nan("") : 0.0;
        const double m = mean(v);
        double ss = 0.0;
        for (double x : v) ss += (x - m) * (x - m);
        return std::sqrt(ss / static_cast<double>(v.size() - 1));
    };
    const TrainerConfig t = cfg.trainer_config();
    std::ostringstream out;
    out << "run_id,mode,ordering,lambda2,buffer,seeds,omega_all_mean,omega_all_std,offline_hat_mean\n";
    out << cfg.run_id << ',' << to_string(t.mode) << ',' << to_string(cfg.ordering.kind) << ','
        << format_double(t.lambda2) << ',' << t.buffer_capacity << ',' << omegas.size() << ','
        << format_double(mean(omegas)) << ',' << format_double(stdev(omegas)) << ',' << format_double(mean(hats))
        << '\n';
    return out.str();
}

} // namespace basil
