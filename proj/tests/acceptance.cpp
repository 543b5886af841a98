// Acceptance run: one PASS/FAIL line per criterion, exit status from the
// gating subset. Long; runs the comparative experiments on the default
// synthetic stream.
//
//   basil_acceptance --work DIR [--seeds 10] [--jobs N]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "CLI11.hpp"

#include "basil/binary_io.hpp"
#include "basil/bnn.hpp"
#include "basil/experiment.hpp"
#include "basil/kernels.hpp"
#include "basil/metrics.hpp"
#include "basil/orderings.hpp"
#include "basil/replay_buffer.hpp"
#include "basil/trainer.hpp"

using namespace basil;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

struct Verdict {
    int id = 0;
    bool pass = false;
    bool gating = true;
    std::string text;
};

std::vector<Verdict> verdicts;

void record(int id, bool pass, bool gating, const std::string& text) {
    verdicts.push_back({id, pass, gating, text});
    std::cerr << "  done: criterion " << id << (pass ? " PASS" : " FAIL") << "\n";
}

void progress(const std::string& s) { std::cerr << "... " << s << std::endl; }

// ---------------------------------------------------------------------------
// 1. gradients vs central differences

MeanFieldPosterior random_posterior(const NetworkArch& arch, Rng& rng, double lo, double hi) {
    auto q = MeanFieldPosterior::initialize(arch, 0.1, rng);
    for (double& m : q.mu) m += 0.1 * rng.normal();
    for (double& r : q.rho) r = softplus_inverse(lo + (hi - lo) * rng.uniform());
    return q;
}

double worst_fd_error(MeanFieldPosterior q, const std::function<LossAndGrads(const MeanFieldPosterior&)>& f,
                      std::size_t& coords) {
    const auto g = f(q).grads;
    const std::size_t P = q.size();
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t k = 0; k < 2 * P; ++k) {
        double& x = k < P ? q.mu[k] : q.rho[k - P];
        const double x0 = x;
        x = x0 + h;
        const double up = f(q).loss;
        x = x0 - h;
        const double down = f(q).loss;
        x = x0;
        const double fd = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(fd - g[k]) / std::max({std::abs(fd), std::abs(g[k]), 1e-6}));
    }
    coords += 2 * P;
    return worst;
}

void criterion_gradients() {
    const auto t0 = Clock::now();
    const NetworkArch arch{8, {8}, 3};
    Rng rng(2024);
    double worst = 0.0;
    std::size_t coords = 0;
    for (int trial = 0; trial < 3; ++trial) {
        const auto q = random_posterior(arch, rng, 0.05, 0.6);
        const auto prior = random_posterior(arch, rng, 0.3, 1.0);
        std::vector<double> zs(8 * 8);
        rng.fill_normal(zs);
        std::vector<LabeledEmbedding> replay;
        for (std::size_t j = 1; j < 4; ++j) replay.push_back({std::span(zs).subspan(8 * j, 8), j % 3});
        std::vector<double> hs(3 * 4);
        rng.fill_normal(hs);
        std::vector<DistillTarget> kd;
        for (std::size_t j = 0; j < 4; ++j) kd.push_back({std::span(zs).subspan(8 * (4 + j), 8), std::span(hs).subspan(3 * j, 3)});
        const std::uint64_t draw_seed = 100 + trial;
        worst = std::max(worst, worst_fd_error(q, [&](const MeanFieldPosterior& x) {
            Rng r(draw_seed);
            return elbo_loss_and_grads(x, prior, {std::span(zs).first(8), 1}, replay, 1.0, 2, r);
        }, coords));
        worst = std::max(worst, worst_fd_error(q, [&](const MeanFieldPosterior& x) {
            Rng r(draw_seed);
            return distill_loss_and_grads(x, kd, 0.3, 2, r);
        }, coords));
    }
    const double secs = seconds_since(t0);
    const bool ok = worst < 1e-4 && secs < 10.0;
    record(1, ok, true,
           "gradient check: worst relative error " + fmt("%.2e", worst) + " over " + std::to_string(coords) +
               " coordinates (limit 1e-4), " + fmt("%.2f", secs) + " s (limit 10 s)");
}

// ---------------------------------------------------------------------------
// 2. KL vs Monte Carlo

void criterion_kl() {
    const auto t0 = Clock::now();
    const NetworkArch arch{3, {}, 4}; // 16 parameters
    Rng rng(7);
    std::mt19937_64 gen(99);
    std::normal_distribution<double> normal;
    double worst = 0.0;
    const std::size_t draws = 1000000;
    for (int pair = 0; pair < 20; ++pair) {
        const auto q = random_posterior(arch, rng, 0.3, 1.5);
        const auto p = random_posterior(arch, rng, 0.3, 1.5);
        const auto sq = q.sigma();
        const auto sp = p.sigma();
        long double acc = 0.0L;
        for (std::size_t n = 0; n < draws; ++n) {
            double lr = 0.0;
            for (std::size_t i = 0; i < 16; ++i) {
                const double e = normal(gen);
                const double w = q.mu[i] + sq[i] * e;
                const double u = (w - p.mu[i]) / sp[i];
                lr += std::log(sp[i] / sq[i]) - 0.5 * e * e + 0.5 * u * u;
            }
            acc += lr;
        }
        const double mc = static_cast<double>(acc / draws);
        const double exact = kl_diag_gaussian(q, p);
        worst = std::max(worst, std::abs(mc - exact) / exact);
    }
    MeanFieldPosterior one = MeanFieldPosterior::isotropic(NetworkArch{1, {}, 2}, 1.0);
    MeanFieldPosterior shifted = one;
    shifted.mu[0] = 1.0;
    const double half = kl_diag_gaussian(shifted, one);
    const double secs = seconds_since(t0);
    const bool ok = worst < 0.02 && half == 0.5 && secs < 30.0;
    record(2, ok, true,
           "KL check: worst relative gap to 1e6-draw Monte Carlo " + fmt("%.4f", worst) +
               " over 20 pairs (limit 0.02); unit mean shift gives " + fmt("%.17g", half) + " (want 0.5); " +
               fmt("%.1f", secs) + " s (limit 30 s)");
}

// ---------------------------------------------------------------------------
// 3. replacement laws

MemorySlot slot_of(std::size_t y, double loss) { return MemorySlot{{0.0, 1.0}, y, {0.0, 0.0}, loss, 0.5}; }

double chi_square_p(const std::vector<std::size_t>& obs, const std::vector<double>& probs) {
    double n = 0.0, stat = 0.0;
    for (auto o : obs) n += static_cast<double>(o);
    for (std::size_t i = 0; i < obs.size(); ++i) {
        const double e = probs[i] * n;
        stat += (static_cast<double>(obs[i]) - e) * (static_cast<double>(obs[i]) - e) / e;
    }
    boost::math::chi_squared dist(static_cast<double>(obs.size() - 1));
    return boost::math::cdf(boost::math::complement(dist, stat));
}

std::vector<std::size_t> eviction_counts(const std::vector<std::pair<std::size_t, double>>& content,
                                         ReplacementPolicy policy, std::size_t incoming, Rng& rng) {
    std::vector<MemorySlot> slots;
    for (auto [y, l] : content) slots.push_back(slot_of(y, l));
    const auto base = ReplayBuffer::restore(content.size(), content.size(), slots);
    std::vector<std::size_t> hist(content.size(), 0);
    for (int t = 0; t < 10000; ++t) {
        ReplayBuffer b = base;
        const auto rep = b.maybe_insert(slot_of(incoming, 1.0), policy, rng);
        if (rep.evicted) ++hist[*rep.evicted];
    }
    return hist;
}

void criterion_replacement() {
    Rng rng(31);
    std::vector<std::string> notes;
    double min_p = 1.0;
    bool ok = true;

    // LAWCBR: majority class {0: three slots}, eviction within it by 1/loss.
    auto h = eviction_counts({{0, 1.0}, {0, 0.5}, {0, 0.25}, {1, 0.1}}, ReplacementPolicy::LAWCBR, 2, rng);
    ok &= h[3] == 0;
    double p = chi_square_p({h[0], h[1], h[2]}, {1.0 / 7, 2.0 / 7, 4.0 / 7});
    min_p = std::min(min_p, p);
    h = eviction_counts({{0, 0.7}, {0, 0.7}, {1, 0.01}, {0, 0.7}}, ReplacementPolicy::LAWCBR, 1, rng);
    ok &= h[2] == 0;
    min_p = std::min(min_p, chi_square_p({h[0], h[1], h[3]}, {1.0 / 3, 1.0 / 3, 1.0 / 3}));

    // LAWRRR: every slot, weight class count / loss = 3, 3, 6, 2.
    const std::vector<double> law{3.0 / 14, 3.0 / 14, 6.0 / 14, 2.0 / 14};
    h = eviction_counts({{0, 1.0}, {0, 1.0}, {0, 0.5}, {1, 0.5}}, ReplacementPolicy::LAWRRRAlways, 1, rng);
    min_p = std::min(min_p, chi_square_p(h, law));
    // Gated variant: accepted with probability 4/5, same law among accepted.
    h = eviction_counts({{0, 1.0}, {0, 1.0}, {0, 0.5}, {1, 0.5}}, ReplacementPolicy::LAWRRR, 1, rng);
    min_p = std::min(min_p, chi_square_p(h, law));
    std::size_t accepted = 0;
    for (auto c : h) accepted += c;
    min_p = std::min(min_p, chi_square_p({accepted, 10000 - accepted}, {0.8, 0.2}));
    ok &= min_p > 0.01;

    // Capacity and class histogram invariants over random operation sequences.
    const ReplacementPolicy policies[] = {ReplacementPolicy::LAWCBR, ReplacementPolicy::LAWRRR,
                                          ReplacementPolicy::LAWRRRAlways, ReplacementPolicy::PlainReservoir};
    std::size_t violations = 0;
    for (int seq = 0; seq < 10000; ++seq) {
        const std::size_t cap = 1 + rng.index(8);
        ReplayBuffer b(cap);
        const auto policy = policies[rng.index(4)];
        const std::size_t len = 1 + rng.index(60);
        for (std::size_t op = 0; op < len; ++op) {
            if (rng.index(3) == 0 && !b.empty())
                b.refresh_slot(rng.index(b.size()), {0.0, 0.0}, rng.uniform(), rng.uniform());
            else
                b.maybe_insert(slot_of(rng.index(5), rng.uniform()), policy, rng);
            std::map<std::size_t, std::size_t> counts;
            for (const auto& s : b.slots()) ++counts[s.y];
            bool hist_ok = true;
            for (std::size_t y = 0; y < 5; ++y) hist_ok &= counts[y] == b.class_count(y);
            if (b.size() > cap || !hist_ok) ++violations;
        }
    }
    ok &= violations == 0;
    record(3, ok, true,
           "replacement laws: smallest chi-square p " + fmt("%.3f", min_p) +
               " (limit > 0.01) across LAWCBR, LAWRRR and its acceptance rate; " + std::to_string(violations) +
               " capacity or histogram violations in 10000 random sequences");
}

// ---------------------------------------------------------------------------
// 4-6. comparative runs on the default synthetic stream

struct RunStats {
    double mean = 0.0;
    double sd = 0.0;
    bool complete = false;
    double seconds = 0.0;
};

RunStats run_config(const ExperimentConfig& cfg) {
    const auto t0 = Clock::now();
    const auto res = run_experiment(cfg);
    RunStats s;
    s.seconds = seconds_since(t0);
    s.complete = res.all_complete() && !res.any_fault();
    std::vector<double> om;
    for (const auto& r : res.seeds)
        if (r.complete) om.push_back(omega_all(r.records));
    for (double v : om) s.mean += v;
    s.mean /= static_cast<double>(std::max<std::size_t>(1, om.size()));
    for (double v : om) s.sd += (v - s.mean) * (v - s.mean);
    s.sd = om.size() > 1 ? std::sqrt(s.sd / static_cast<double>(om.size() - 1)) : 0.0;
    return s;
}

std::string show(const RunStats& s) { return fmt("%.4f", s.mean) + " +- " + fmt("%.4f", s.sd); }

ExperimentConfig comparison_config(const fs::path& work, std::size_t seeds, std::size_t jobs, const std::string& id) {
    ExperimentConfig c; // defaults: 10 x 3 x 200 frames, d = 32, class-instance, buffer 100
    c.run_id = id;
    c.out_dir = (work / "comparison").string();
    c.offline.cache_dir = (work / "offline-cache").string();
    c.seeds.clear();
    for (std::size_t s = 0; s < seeds; ++s) c.seeds.push_back(s);
    c.jobs = jobs;
    return c;
}

void criteria_comparisons(const fs::path& work, std::size_t seeds, std::size_t jobs) {
    auto basil_cfg = comparison_config(work, seeds, jobs, "basil");
    auto ft_cfg = comparison_config(work, seeds, jobs, "finetune");
    ft_cfg.trainer.mode = TrainingMode::FineTune;
    auto er_cfg = comparison_config(work, seeds, jobs, "plain-er");
    er_cfg.trainer.mode = TrainingMode::PlainER;

    progress("criterion 4: basil, finetune and plain-er over " + std::to_string(seeds) + " seeds");
    const auto t0 = Clock::now();
    const RunStats basil = run_config(basil_cfg);
    progress("basil " + show(basil) + " in " + fmt("%.0f", basil.seconds) + " s");
    const RunStats ft = run_config(ft_cfg);
    progress("finetune " + show(ft) + " in " + fmt("%.0f", ft.seconds) + " s");
    const RunStats er = run_config(er_cfg);
    progress("plain-er " + show(er) + " in " + fmt("%.0f", er.seconds) + " s");
    const double total = seconds_since(t0);

    const bool margin_ok = basil.mean - ft.mean >= 0.25;
    const bool er_ok = basil.mean >= er.mean;
    const bool runs_ok = basil.complete && ft.complete && er.complete;
    const bool time_ok = total < 300.0;
    const bool quality = margin_ok && er_ok && runs_ok;
    // The runtime target is reported but does not gate on its own.
    record(4, quality && time_ok, !quality,
           "forgetting mitigation over " + std::to_string(seeds) + " seeds: basil " + show(basil) + ", finetune " +
               show(ft) + ", plain-er " + show(er) + "; basil - finetune = " + fmt("%.4f", basil.mean - ft.mean) +
               (margin_ok ? " >= 0.25 ok" : " < 0.25 FAIL") + "; basil " + (er_ok ? ">= plain-er ok" : "< plain-er FAIL") +
               (runs_ok ? "" : "; some seed faulted or stopped") + "; runtime " + fmt("%.0f", total) + " s" +
               (time_ok ? " < 300 s ok" : " over the 300 s target"));

    progress("criterion 5: lambda2 = 0");
    auto nokd_cfg = comparison_config(work, seeds, jobs, "basil-lambda2-0");
    nokd_cfg.trainer.lambda2 = 0.0;
    const RunStats nokd = run_config(nokd_cfg);
    record(5, basil.mean > nokd.mean && nokd.complete, false,
           "distillation ablation (soft): lambda2 = 0.3 " + show(basil) + " vs lambda2 = 0 " + show(nokd) +
               (basil.mean > nokd.mean ? ", strictly better" : ", not better"));

    progress("criterion 6: stored logits left stale");
    auto stale_cfg = comparison_config(work, seeds, jobs, "basil-no-refresh");
    stale_cfg.trainer.refresh_logits = false;
    const RunStats stale = run_config(stale_cfg);
    record(6, basil.mean >= stale.mean && stale.complete, false,
           "logit refresh ablation (soft): refresh on " + show(basil) + " vs off " + show(stale) +
               (basil.mean >= stale.mean ? ", on >= off" : ", on < off"));
}

// ---------------------------------------------------------------------------
// 7. any-time inference

std::string slurp(const std::string& path) {
    const auto b = binio::read_file(path);
    return std::string(b.begin(), b.end());
}

void criterion_anytime(const fs::path& work) {
    // Trainer level: random evaluate() calls between arrivals.
    SynthParams sp;
    const auto [train, test] = synth_dataset(sp);
    const NetworkArch arch{sp.dim, {256, 256}, sp.num_classes};
    const auto order = order_stream(train.manifest, {}, 3);
    const auto rows = gather_rows(test, {});
    StreamTrainer plain(arch, TrainerConfig{}, 3), probed(arch, TrainerConfig{}, 3);
    Rng coin(5);
    std::size_t mismatches = 0, probes = 0;
    std::vector<double> z(sp.dim);
    for (std::size_t pos = 0; pos < 600; ++pos) {
        const auto& rec = train.manifest.samples[order.sample_ids[pos]];
        const auto row = train.embedding(rec);
        std::copy(row.begin(), row.end(), z.begin());
        if (coin.index(25) == 0) {
            (void)probed.evaluate(rows.inputs, rows.labels);
            ++probes;
        }
        plain.observe(z, rec.class_id);
        probed.observe(z, rec.class_id);
        if (plain.state_hash() != probed.state_hash()) ++mismatches;
    }

    // Harness level: results file with and without probes.
    auto a = ExperimentConfig{};
    apply_config_text(a, "synth.frames = 40\nseeds = 0-1\nrun_id = anytime\n");
    a.out_dir = (work / "anytime" / "plain").string();
    a.offline.cache_dir = (work / "offline-cache").string();
    auto b = a;
    b.out_dir = (work / "anytime" / "probed").string();
    b.probe_every = 17;
    run_experiment(a);
    run_experiment(b);
    const bool same_csv = slurp(results_path(a)) == slurp(results_path(b));

    record(7, mismatches == 0 && same_csv, true,
           "any-time inference: " + std::to_string(probes) + " interleaved evaluations, " +
               std::to_string(mismatches) + " state-hash mismatches over 600 arrivals; results file with probes every 17 arrivals " +
               (same_csv ? "bit-identical" : "DIFFERS"));
}

// ---------------------------------------------------------------------------
// 8. metric exactness

void criterion_metric() {
    bool ok = true;
    std::vector<EvalRecord> same{{0, 0.7, 0.7}, {1, 0.2, 0.2}};
    std::vector<EvalRecord> half{{0, 0.5, 1.0}, {1, 0.5, 1.0}};
    std::vector<EvalRecord> mixed{{0, 0.9, 0.8}, {1, 0.6, 0.9}};
    // Independent reference in long double: (0.9/0.8 + 0.6/0.9) / 2.
    const double want = static_cast<double>((0.9L / 0.8L + 0.6L / 0.9L) / 2.0L);
    const double got = omega_all(mixed);
    ok &= omega_all(same) == 1.0 && omega_all(half) == 0.5 && std::abs(got - want) < 1e-12;
    ok &= std::abs(got - 0.89583333333333) < 1e-12;

    std::mt19937_64 g(8);
    std::uniform_real_distribution<double> u(0.05, 1.0);
    std::vector<EvalRecord> recs;
    for (std::size_t i = 0; i < 25; ++i) recs.push_back({i, u(g), u(g)});
    const double base = omega_all(recs);
    double drift = 0.0;
    for (int s = 0; s < 100; ++s) {
        std::shuffle(recs.begin(), recs.end(), g);
        drift = std::max(drift, std::abs(omega_all(recs) - base));
    }
    ok &= drift < 1e-12;
    record(8, ok, true,
           "metric exactness: hand examples 1, 0.5, " + fmt("%.14f", got) + " (reference " + fmt("%.14f", want) +
               "); largest change over 100 shuffles " + fmt("%.1e", drift));
}

// ---------------------------------------------------------------------------
// 9. throughput

void criterion_throughput() {
    SynthParams sp;
    const auto train = synth_dataset(sp).first;
    const NetworkArch arch{32, {256, 256}, 10};
    TrainerConfig cfg; // N1' = N2' = 16, two draws
    StreamTrainer t(arch, cfg, 0);
    const auto order = order_stream(train.manifest, {}, 0);
    std::vector<double> z(32), times;
    const auto t0 = Clock::now();
    for (std::size_t pos = 0; pos < order.sample_ids.size(); ++pos) {
        const auto& rec = train.manifest.samples[order.sample_ids[pos]];
        const auto row = train.embedding(rec);
        std::copy(row.begin(), row.end(), z.begin());
        const auto s0 = Clock::now();
        t.observe(z, rec.class_id);
        if (pos >= cfg.buffer_capacity) times.push_back(seconds_since(s0) * 1e3);
    }
    const double stream = seconds_since(t0);
    std::sort(times.begin(), times.end());
    const double median = times[times.size() / 2];
    const double p99 = times[times.size() * 99 / 100];
    const bool ok = median < 50.0 && stream < 300.0;
    record(9, ok, true,
           "throughput (" + std::string(kernels::active().name) + " kernels): observe median " + fmt("%.2f", median) +
               " ms, p99 " + fmt("%.2f", p99) + " ms, max " + fmt("%.2f", times.back()) +
               " ms (limit 50 ms); full 6000-sample stream " + fmt("%.1f", stream) + " s (limit 300 s)");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance run"};
    std::string work = "acceptance_work";
    std::size_t seeds = 10;
    std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
    app.add_option("--work", work, "scratch directory")->capture_default_str();
    app.add_option("--seeds", seeds, "seeds for the comparative runs")->capture_default_str();
    app.add_option("--jobs", jobs, "seeds run in parallel")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    const fs::path dir(work);
    fs::remove_all(dir / "comparison");
    fs::remove_all(dir / "anytime");
    fs::create_directories(dir);

    const auto t0 = Clock::now();
    try {
        progress("criterion 8");
        criterion_metric();
        progress("criterion 1");
        criterion_gradients();
        progress("criterion 2");
        criterion_kl();
        progress("criterion 3");
        criterion_replacement();
        progress("criterion 7");
        criterion_anytime(dir);
        progress("criterion 9");
        criterion_throughput();
        criteria_comparisons(dir, seeds, jobs);
    } catch (const std::exception& e) {
        std::cout << "acceptance aborted: " << e.what() << "\n";
        return 1;
    }

    std::sort(verdicts.begin(), verdicts.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
    std::ostringstream out;
    bool gate = true;
    std::vector<int> soft_failures;
    for (const auto& v : verdicts) {
        out << "criterion " << v.id << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.text << "\n";
        if (!v.pass && v.gating) gate = false;
        if (!v.pass && !v.gating) soft_failures.push_back(v.id);
    }
    out << "gate: " << (gate ? "PASS" : "FAIL");
    if (!soft_failures.empty()) {
        out << " (non-gating failures:";
        for (int id : soft_failures) out << " " << id;
        out << ")";
    }
    out << "; total " << fmt("%.0f", seconds_since(t0)) << " s\n";
    std::cout << out.str();
    const std::string text = out.str();
    binio::write_file((dir / "acceptance.txt").string(),
                      std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    return gate ? 0 : 1;
}
