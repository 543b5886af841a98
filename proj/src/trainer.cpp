#include "basil/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "basil/binary_io.hpp"
#include "basil/error.hpp"
#include "basil/kernels.hpp"

namespace basil {

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kTrainStream = 0x7a1e;
constexpr std::uint64_t kEvalStream = 0xe7a1;

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

} // namespace

std::string to_string(TrainingMode m) {
    switch (m) {
    case TrainingMode::BaSiL: return "basil";
    case TrainingMode::FineTune: return "finetune";
    case TrainingMode::PlainER: return "plain-er";
    }
    return "?";
}

std::string to_string(ReplayStrategy s) {
    switch (s) {
    case ReplayStrategy::Uni: return "uni";
    case ReplayStrategy::UAPN: return "uapn";
    case ReplayStrategy::LAPN: return "lapn";
    }
    return "?";
}

std::string to_string(ReplacementPolicy p) {
    switch (p) {
    case ReplacementPolicy::LAWCBR: return "lawcbr";
    case ReplacementPolicy::LAWRRR: return "lawrrr";
    case ReplacementPolicy::PlainReservoir: return "reservoir";
    case ReplacementPolicy::LAWRRRAlways: return "lawrrr-always";
    }
    return "?";
}

TrainingMode parse_mode(const std::string& s) {
    if (s == "basil") return TrainingMode::BaSiL;
    if (s == "finetune") return TrainingMode::FineTune;
    if (s == "plain-er") return TrainingMode::PlainER;
    throw InputError("unknown mode '" + s + "' (expected basil, finetune, plain-er)");
}

ReplayStrategy parse_replay(const std::string& s) {
    if (s == "uni") return ReplayStrategy::Uni;
    if (s == "uapn") return ReplayStrategy::UAPN;
    if (s == "lapn") return ReplayStrategy::LAPN;
    throw InputError("unknown replay strategy '" + s + "' (expected uni, uapn, lapn)");
}

ReplacementPolicy parse_replace(const std::string& s) {
    if (s == "lawcbr") return ReplacementPolicy::LAWCBR;
    if (s == "lawrrr") return ReplacementPolicy::LAWRRR;
    if (s == "reservoir") return ReplacementPolicy::PlainReservoir;
    if (s == "lawrrr-always") return ReplacementPolicy::LAWRRRAlways;
    throw InputError("unknown replacement policy '" + s + "' (expected lawcbr, lawrrr, lawrrr-always, reservoir)");
}

void TrainerConfig::validate() const {
    auto finite_nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
    if (!finite_nonneg(lambda1)) throw InputError("lambda1 must be finite and >= 0");
    if (!finite_nonneg(lambda2)) throw InputError("lambda2 must be finite and >= 0");
    if (mc_train < 1 || mc_eval < 1 || mc_refresh < 1)
        throw InputError("Monte-Carlo sample counts must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw InputError("learning_rate must be positive");
    if (!finite_nonneg(grad_clip)) throw InputError("grad_clip must be finite and >= 0");
    if (grad_steps_per_sample < 1) throw InputError("grad_steps_per_sample must be >= 1");
    if (prior_refresh_every < 1) throw InputError("prior_refresh_every must be >= 1");
    if (!(sigma0 > 0.0) || !std::isfinite(sigma0)) throw InputError("sigma0 must be positive");
    if (!(prior_scale > 0.0) || !std::isfinite(prior_scale))
        throw InputError("prior_scale must be positive");
    if (optimizer == OptimizerKind::Adam &&
        !(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 &&
          adam_epsilon > 0.0))
        throw InputError("invalid Adam hyper-parameters");
}

TrainerConfig TrainerConfig::effective() const {
    TrainerConfig c = *this;
    switch (mode) {
    case TrainingMode::BaSiL:
        break;
    case TrainingMode::FineTune:
        c.buffer_capacity = 0;
        c.lambda2 = 0.0;
        break;
    case TrainingMode::PlainER:
        c.replay_strategy = ReplayStrategy::Uni;
        c.replacement_policy = ReplacementPolicy::PlainReservoir;
        c.lambda2 = 0.0;
        break;
    }
    return c;
}

StreamTrainer::StreamTrainer(const NetworkArch& arch, const TrainerConfig& config,
                             std::uint64_t seed)
    : config_(config.effective()), buffer_(config_.buffer_capacity), seed_(seed) {
    arch.validate();
    config_.validate();
    Rng init(derive_seed(seed, kInitStream));
    posterior_ = MeanFieldPosterior::initialize(arch, config_.sigma0, init);
    prior_ = MeanFieldPosterior::isotropic(arch, config_.prior_scale);
    rng_ = Rng(derive_seed(seed, kTrainStream));
    if (config_.optimizer == OptimizerKind::Adam) {
        adam_m_.assign(2 * posterior_.size(), 0.0);
        adam_v_.assign(2 * posterior_.size(), 0.0);
    }
}

void StreamTrainer::apply_update(MeanFieldPosterior& q, const LossAndGrads& lg,
                                 std::vector<double>& m, std::vector<double>& v,
                                 std::uint64_t& t) const {
    const std::size_t P = q.size();
    double lr = config_.learning_rate;
    double scale = 1.0;
    if (config_.grad_clip > 0.0) {
        long double sq = 0.0L;
        for (double g : lg.grads) sq += static_cast<long double>(g) * g;
        const double norm = std::sqrt(static_cast<double>(sq));
        if (norm > config_.grad_clip) scale = config_.grad_clip / norm;
    }
    if (config_.optimizer == OptimizerKind::SGD) {
        const auto& k = kernels::active();
        lr *= scale;
        k.axpy(-lr, lg.grads.data(), q.mu.data(), P);
        k.axpy(-lr, lg.grads.data() + P, q.rho.data(), P);
        return;
    }
    ++t;
    const double b1 = config_.adam_beta1;
    const double b2 = config_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < 2 * P; ++i) {
        const double g = scale * lg.grads[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        const double delta = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.adam_epsilon);
        if (i < P)
            q.mu[i] -= delta;
        else
            q.rho[i - P] -= delta;
    }
}

StepReport StreamTrainer::observe(std::span<const double> z, std::size_t y) {
    const NetworkArch& arch = posterior_.arch;
    if (z.size() != arch.input_dim)
        throw InputError("embedding has length " + std::to_string(z.size()) + ", expected " +
                         std::to_string(arch.input_dim));
    if (y >= arch.num_classes)
        throw InputError("class id " + std::to_string(y) + " out of range");
    if (!all_finite(z)) throw InputError("embedding holds non-finite values");

    const TrainerConfig& cfg = config_;
    const bool use_buffer = cfg.buffer_capacity > 0;
    // Everything below works on copies until the step is known to be finite.
    Rng rng = rng_;
    const bool refresh_prior = step_ % cfg.prior_refresh_every == 0;
    const MeanFieldPosterior* prior = refresh_prior ? &posterior_ : &prior_;

    StepReport report;
    report.step = step_;
    if (use_buffer) {
        report.replay_indices = buffer_.sample_replay(cfg.replay_strategy, cfg.n_replay, rng);
        if (cfg.lambda2 != 0.0) report.kd_indices = buffer_.sample_kd(cfg.n_kd, rng);
    }

    std::vector<LabeledEmbedding> replay;
    replay.reserve(report.replay_indices.size());
    for (std::size_t i : report.replay_indices) {
        const MemorySlot& s = buffer_.slot(i);
        replay.push_back({s.z, s.y});
    }
    std::vector<DistillTarget> distill;
    distill.reserve(report.kd_indices.size());
    for (std::size_t i : report.kd_indices) {
        const MemorySlot& s = buffer_.slot(i);
        distill.push_back({s.z, s.h});
    }

    Objective obj;
    obj.new_sample = LabeledEmbedding{z, y};
    obj.replay = replay;
    obj.replay_weight = (cfg.normalize_replay && !replay.empty())
                            ? 1.0 / static_cast<double>(replay.size())
                            : 1.0;
    obj.distill = distill;
    obj.lambda2 = cfg.lambda2;
    obj.prior = prior;
    obj.lambda1 = cfg.lambda1;

    MeanFieldPosterior next = posterior_;
    std::vector<double> m = adam_m_;
    std::vector<double> v = adam_v_;
    std::uint64_t t = adam_t_;
    for (std::size_t g = 0; g < cfg.grad_steps_per_sample; ++g) {
        LossAndGrads lg = objective_loss_and_grads(next, obj, cfg.mc_train, rng);
        if (!std::isfinite(lg.loss) || !all_finite(lg.grads))
            throw NumericFault(step_, "non-finite loss at step " + std::to_string(step_));
        if (g == 0) {
            report.loss = lg.loss;
            report.nll_new = lg.nll_new;
            report.nll_replay = lg.nll_replay;
            report.distill = lg.distill;
            report.kl = lg.kl;
        }
        apply_update(next, lg, m, v, t);
    }
    if (!all_finite(next.mu) || !all_finite(next.rho))
        throw NumericFault(step_, "non-finite parameter after step " + std::to_string(step_));

    // Commit.
    if (refresh_prior) prior_ = std::move(posterior_);
    posterior_ = std::move(next);
    adam_m_ = std::move(m);
    adam_v_ = std::move(v);
    adam_t_ = t;

    if (use_buffer) {
        std::vector<std::size_t> touched = report.replay_indices;
        touched.insert(touched.end(), report.kd_indices.begin(), report.kd_indices.end());
        std::sort(touched.begin(), touched.end());
        touched.erase(std::unique(touched.begin(), touched.end()), touched.end());

        std::vector<LabeledEmbedding> examples;
        examples.reserve(touched.size() + 1);
        for (std::size_t i : touched) examples.push_back({buffer_.slot(i).z, buffer_.slot(i).y});
        examples.push_back({z, y});
        auto scores = score_examples(posterior_, examples, cfg.mc_refresh, rng);

        for (std::size_t k = 0; k < touched.size(); ++k) {
            const std::size_t i = touched[k];
            LogitVector h = cfg.refresh_logits ? std::move(scores[k].logits) : buffer_.slot(i).h;
            buffer_.refresh_slot(i, std::move(h), scores[k].loss, scores[k].uncertainty);
        }
        ExampleScore& fresh = scores.back();
        MemorySlot slot{std::vector<double>(z.begin(), z.end()), y, std::move(fresh.logits),
                        fresh.loss, fresh.uncertainty};
        report.insert = buffer_.maybe_insert(std::move(slot), cfg.replacement_policy, rng);
    }

    rng_ = rng;
    ++step_;
    return report;
}

double StreamTrainer::evaluate(std::span<const double> inputs, std::span<const std::size_t> labels,
                               std::span<const std::size_t> active_classes) const {
    const std::size_t d = arch().input_dim;
    const std::size_t K = arch().num_classes;
    if (labels.empty()) throw InputError("test set is empty");
    if (inputs.size() != labels.size() * d) throw InputError("test inputs do not match labels x dim");
    for (std::size_t c : active_classes)
        if (c >= K) throw InputError("active class id out of range");

    Rng rng(derive_seed(derive_seed(seed_, kEvalStream), step_));
    const auto proba = predict_proba_batch(posterior_, inputs, labels.size(), config_.mc_eval, rng);

    std::vector<std::size_t> candidates(active_classes.begin(), active_classes.end());
    if (candidates.empty())
        for (std::size_t c = 0; c < K; ++c) candidates.push_back(c);
    std::sort(candidates.begin(), candidates.end());

    std::size_t correct = 0;
    for (std::size_t r = 0; r < labels.size(); ++r) {
        const double* p = proba.data() + r * K;
        std::size_t best = candidates.front();
        for (std::size_t c : candidates)
            if (p[c] > p[best]) best = c;
        if (best == labels[r]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Checkpoint image

namespace {

void put_arch(binio::Writer& w, const NetworkArch& a) {
    w.put<std::uint64_t>(a.input_dim);
    w.put<std::uint64_t>(a.hidden_dims.size());
    for (std::size_t h : a.hidden_dims) w.put<std::uint64_t>(h);
    w.put<std::uint64_t>(a.num_classes);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(a.activation));
}

NetworkArch get_arch(binio::Reader& r) {
    NetworkArch a;
    a.input_dim = r.get<std::uint64_t>();
    const auto n = r.get<std::uint64_t>();
    if (n > 64) throw LoadError("implausible hidden layer count");
    a.hidden_dims.resize(n);
    for (auto& h : a.hidden_dims) h = r.get<std::uint64_t>();
    a.num_classes = r.get<std::uint64_t>();
    if (r.get<std::uint8_t>() != 0) throw LoadError("unknown activation");
    return a;
}

void put_config(binio::Writer& w, const TrainerConfig& c) {
    w.put(c.lambda1);
    w.put(c.lambda2);
    w.put<std::uint64_t>(c.n_replay);
    w.put<std::uint64_t>(c.n_kd);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(c.replay_strategy));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(c.replacement_policy));
    w.put<std::uint64_t>(c.mc_train);
    w.put<std::uint64_t>(c.mc_eval);
    w.put<std::uint64_t>(c.mc_refresh);
    w.put(c.learning_rate);
    w.put(c.grad_clip);
    w.put<std::uint64_t>(c.grad_steps_per_sample);
    w.put<std::uint64_t>(c.buffer_capacity);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(c.mode));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(c.optimizer));
    w.put(c.adam_beta1);
    w.put(c.adam_beta2);
    w.put(c.adam_epsilon);
    w.put<std::uint64_t>(c.prior_refresh_every);
    w.put<std::uint8_t>(c.normalize_replay ? 1 : 0);
    w.put<std::uint8_t>(c.refresh_logits ? 1 : 0);
    w.put(c.sigma0);
    w.put(c.prior_scale);
}

template <typename E>
E get_enum(binio::Reader& r, std::uint8_t max) {
    const auto v = r.get<std::uint8_t>();
    if (v > max) throw LoadError("enum value out of range");
    return static_cast<E>(v);
}

TrainerConfig get_config(binio::Reader& r) {
    TrainerConfig c;
    c.lambda1 = r.get<double>();
    c.lambda2 = r.get<double>();
    c.n_replay = r.get<std::uint64_t>();
    c.n_kd = r.get<std::uint64_t>();
    c.replay_strategy = get_enum<ReplayStrategy>(r, 2);
    c.replacement_policy = get_enum<ReplacementPolicy>(r, 3);
    c.mc_train = r.get<std::uint64_t>();
    c.mc_eval = r.get<std::uint64_t>();
    c.mc_refresh = r.get<std::uint64_t>();
    c.learning_rate = r.get<double>();
    c.grad_clip = r.get<double>();
    c.grad_steps_per_sample = r.get<std::uint64_t>();
    c.buffer_capacity = r.get<std::uint64_t>();
    c.mode = get_enum<TrainingMode>(r, 2);
    c.optimizer = get_enum<OptimizerKind>(r, 1);
    c.adam_beta1 = r.get<double>();
    c.adam_beta2 = r.get<double>();
    c.adam_epsilon = r.get<double>();
    c.prior_refresh_every = r.get<std::uint64_t>();
    c.normalize_replay = r.get<std::uint8_t>() != 0;
    c.refresh_logits = r.get<std::uint8_t>() != 0;
    c.sigma0 = r.get<double>();
    c.prior_scale = r.get<double>();
    return c;
}

void put_posterior(binio::Writer& w, const MeanFieldPosterior& q) {
    w.put_doubles(q.mu);
    w.put_doubles(q.rho);
}

MeanFieldPosterior get_posterior(binio::Reader& r, const NetworkArch& arch) {
    MeanFieldPosterior q{arch, r.get_doubles(), r.get_doubles()};
    q.validate();
    return q;
}

template <typename F>
auto decode(const std::map<std::string, std::vector<std::uint8_t>>& sections, const char* tag, F f) {
    auto it = sections.find(tag);
    if (it == sections.end()) throw LoadError(std::string("checkpoint lacks section ") + tag);
    binio::Reader r(it->second);
    auto value = f(r);
    if (!r.done()) throw LoadError(std::string("trailing bytes in section ") + tag);
    return value;
}

} // namespace

std::vector<std::uint8_t> StreamTrainer::checkpoint(std::span<const CheckpointSection> extra) const {
    binio::Writer out;
    out.put_bytes(kCheckpointMagic);
    out.put<std::uint32_t>(kCheckpointVersion);

    binio::Writer s;
    put_config(s, config_);
    out.put_section("CONF", s);

    s = {};
    put_arch(s, posterior_.arch);
    out.put_section("ARCH", s);

    s = {};
    put_posterior(s, posterior_);
    out.put_section("POST", s);

    s = {};
    put_posterior(s, prior_);
    out.put_section("PRIO", s);

    s = {};
    s.put<std::uint64_t>(adam_t_);
    s.put_doubles(adam_m_);
    s.put_doubles(adam_v_);
    out.put_section("OPTM", s);

    s = {};
    s.put<std::uint64_t>(buffer_.capacity());
    s.put<std::uint64_t>(buffer_.seen_count());
    s.put<std::uint64_t>(buffer_.size());
    for (const MemorySlot& slot : buffer_.slots()) {
        s.put_doubles(slot.z);
        s.put<std::uint64_t>(slot.y);
        s.put_doubles(slot.h);
        s.put(slot.loss);
        s.put(slot.uncertainty);
    }
    out.put_section("BUFF", s);

    s = {};
    s.put<std::uint64_t>(step_);
    s.put<std::uint64_t>(seed_);
    out.put_section("CNTR", s);

    s = {};
    for (std::uint64_t word : rng_.engine().state()) s.put(word);
    out.put_section("RNG_", s);

    for (const auto& e : extra) {
        if (e.tag.size() != 4) throw InputError("checkpoint section tags have 4 characters");
        binio::Writer payload;
        payload.put_bytes(std::span<const std::uint8_t>(e.payload));
        out.put_section(e.tag, payload);
    }
    out.put_section("END_", binio::Writer{});
    return out.take();
}

std::map<std::string, std::vector<std::uint8_t>> StreamTrainer::read_sections(
    std::span<const std::uint8_t> image) {
    binio::Reader r(image);
    if (r.remaining() < kCheckpointMagic.size() || r.get_bytes(kCheckpointMagic.size()) != kCheckpointMagic)
        throw LoadError("not a checkpoint image (bad magic)");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw LoadError("unsupported checkpoint version " + std::to_string(version));
    std::map<std::string, std::vector<std::uint8_t>> sections;
    for (;;) {
        const std::string tag = r.get_bytes(4);
        const auto len = r.get<std::uint64_t>();
        if (len > r.remaining()) throw LoadError("section " + tag + " is truncated");
        auto payload = r.get_span(static_cast<std::size_t>(len));
        if (tag == "END_") break;
        sections[tag].assign(payload.begin(), payload.end());
    }
    if (!r.done()) throw LoadError("trailing bytes after checkpoint end marker");
    return sections;
}

StreamTrainer StreamTrainer::restore(std::span<const std::uint8_t> image) {
    const auto sections = read_sections(image);
    StreamTrainer t;
    try {
        t.config_ = decode(sections, "CONF", get_config);
        t.config_.validate();
        const NetworkArch arch = decode(sections, "ARCH", get_arch);
        arch.validate();
        t.posterior_ = decode(sections, "POST", [&](binio::Reader& r) { return get_posterior(r, arch); });
        t.prior_ = decode(sections, "PRIO", [&](binio::Reader& r) { return get_posterior(r, arch); });
        decode(sections, "OPTM", [&](binio::Reader& r) {
            t.adam_t_ = r.get<std::uint64_t>();
            t.adam_m_ = r.get_doubles();
            t.adam_v_ = r.get_doubles();
            const std::size_t want = t.config_.optimizer == OptimizerKind::Adam ? 2 * arch.param_count() : 0;
            if (t.adam_m_.size() != want || t.adam_v_.size() != want)
                throw LoadError("optimizer state does not match configuration");
            return 0;
        });
        t.buffer_ = decode(sections, "BUFF", [&](binio::Reader& r) {
            const auto capacity = r.get<std::uint64_t>();
            const auto seen = r.get<std::uint64_t>();
            const auto n = r.get<std::uint64_t>();
            if (n > capacity || capacity != t.config_.buffer_capacity)
                throw LoadError("buffer capacity does not match configuration");
            std::vector<MemorySlot> slots(static_cast<std::size_t>(n));
            for (auto& s : slots) {
                s.z = r.get_doubles();
                s.y = r.get<std::uint64_t>();
                s.h = r.get_doubles();
                s.loss = r.get<double>();
                s.uncertainty = r.get<double>();
                if (s.z.size() != arch.input_dim || s.h.size() != arch.num_classes || s.y >= arch.num_classes)
                    throw LoadError("buffer slot does not match architecture");
            }
            return ReplayBuffer::restore(capacity, seen, std::move(slots));
        });
        decode(sections, "CNTR", [&](binio::Reader& r) {
            t.step_ = r.get<std::uint64_t>();
            t.seed_ = r.get<std::uint64_t>();
            return 0;
        });
        decode(sections, "RNG_", [&](binio::Reader& r) {
            Xoshiro256::State st;
            for (auto& word : st) word = r.get<std::uint64_t>();
            t.rng_.engine().set_state(st);
            return 0;
        });
    } catch (const InputError& e) {
        throw LoadError(std::string("invalid checkpoint: ") + e.what());
    }
    return t;
}

std::uint64_t StreamTrainer::state_hash() const {
    const auto image = checkpoint();
    return binio::fnv1a(image);
}

} // namespace basil
