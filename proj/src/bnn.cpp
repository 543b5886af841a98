#include "basil/bnn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "basil/error.hpp"
#include "basil/kernels.hpp"

namespace basil {

double softplus(double x) noexcept {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double softplus_inverse(double y) noexcept { return y + std::log(-std::expm1(-y)); }

double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

MeanFieldPosterior MeanFieldPosterior::initialize(const NetworkArch& arch, double sigma0,
                                                  Rng& rng) {
    arch.validate();
    if (!(sigma0 > 0.0) || !std::isfinite(sigma0)) throw InputError("sigma0 must be positive");
    MeanFieldPosterior q{arch, std::vector<double>(arch.param_count(), 0.0),
                         std::vector<double>(arch.param_count(), softplus_inverse(sigma0))};
    for (std::size_t l = 0; l < arch.num_layers(); ++l) {
        const std::size_t in = arch.layer_in(l);
        const double scale = std::sqrt(2.0 / static_cast<double>(in));
        auto first = q.mu.begin() + static_cast<std::ptrdiff_t>(arch.weight_offset(l));
        std::span<double> w(&*first, in * arch.layer_out(l));
        rng.fill_normal(w);
        for (double& v : w) v *= scale;
    }
    return q;
}

MeanFieldPosterior MeanFieldPosterior::isotropic(const NetworkArch& arch, double scale) {
    arch.validate();
    return MeanFieldPosterior{arch, std::vector<double>(arch.param_count(), 0.0),
                              std::vector<double>(arch.param_count(), softplus_inverse(scale))};
}

std::vector<double> MeanFieldPosterior::sigma() const {
    std::vector<double> s(rho.size());
    std::transform(rho.begin(), rho.end(), s.begin(), softplus);
    return s;
}

void MeanFieldPosterior::validate() const {
    arch.validate();
    const std::size_t p = arch.param_count();
    if (mu.size() != p || rho.size() != p)
        throw InputError("posterior vectors do not match architecture (expected " +
                         std::to_string(p) + " parameters)");
    for (std::size_t i = 0; i < p; ++i)
        if (!std::isfinite(mu[i]) || !std::isfinite(rho[i]))
            throw InputError("posterior holds a non-finite parameter at index " + std::to_string(i));
}

WeightSample sample_weights(const MeanFieldPosterior& q, Rng& rng) {
    WeightSample w{std::vector<double>(q.size()), std::vector<double>(q.size())};
    rng.fill_normal(w.eps);
    const auto sigma = q.sigma();
    kernels::active().reparam(q.mu.data(), sigma.data(), w.eps.data(), w.theta.data(), q.size());
    return w;
}

LogitVector forward(const NetworkArch& arch, const WeightSample& w, std::span<const double> z) {
    return forward(arch, std::span<const double>(w.theta), z);
}

namespace {

double log_sum_exp(std::span<const double> v) {
    const double m = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

void check_class(std::size_t y, std::size_t classes) {
    if (y >= classes)
        throw InputError("class id " + std::to_string(y) + " out of range [0, " +
                         std::to_string(classes) + ")");
}

void check_dim(std::span<const double> z, std::size_t d) {
    if (z.size() != d)
        throw InputError("embedding has length " + std::to_string(z.size()) + ", expected " +
                         std::to_string(d));
}

void check_mc(std::size_t mc) {
    if (mc < 1) throw InputError("mc_samples must be >= 1");
}

// Per-row softmax into p (same length as logits).
void softmax(std::span<const double> logits, std::span<double> p) {
    const double m = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
        p[k] = std::exp(logits[k] - m);
        s += p[k];
    }
    for (double& v : p) v /= s;
}

// KL(q || p) value plus d/dmu and d/dsigma of it.
double kl_with_grads(const MeanFieldPosterior& q, std::span<const double> sq,
                     const MeanFieldPosterior& p, std::span<const double> sp,
                     std::span<double> d_mu, std::span<double> d_sigma) {
    double kl = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        const double vp = sp[i] * sp[i];
        const double dm = q.mu[i] - p.mu[i];
        const double r = (sq[i] * sq[i]) / vp;
        const double x = r - 1.0;
        kl += 0.5 * (std::max(0.0, x - std::log1p(x)) + dm * dm / vp);
        if (!d_mu.empty()) {
            d_mu[i] = dm / vp;
            d_sigma[i] = sq[i] / vp - 1.0 / sq[i];
        }
    }
    return kl;
}

// sigma = softplus(rho) and its derivative sigmoid(rho), sharing one exp.
void softplus_and_slope(std::span<const double> rho, std::vector<double>& sigma, std::vector<double>& slope) {
    sigma.resize(rho.size());
    slope.resize(rho.size());
    for (std::size_t i = 0; i < rho.size(); ++i) {
        const double x = rho[i];
        if (x > 0.0) {
            const double e = std::exp(-x);
            sigma[i] = x + std::log1p(e);
            slope[i] = 1.0 / (1.0 + e);
        } else {
            const double e = std::exp(x);
            sigma[i] = std::log1p(e);
            slope[i] = e / (1.0 + e);
        }
    }
}

void check_same_arch(const MeanFieldPosterior& q, const MeanFieldPosterior& p) {
    if (!(q.arch == p.arch) || q.size() != p.size())
        throw InputError("posteriors have different architectures");
}

} // namespace

double nll(std::span<const double> logits, std::size_t y) {
    if (logits.empty()) throw InputError("empty logit vector");
    check_class(y, logits.size());
    return log_sum_exp(logits) - logits[y];
}

double kl_diag_gaussian(const MeanFieldPosterior& q, const MeanFieldPosterior& p) {
    check_same_arch(q, p);
    const auto sq = q.sigma();
    const auto sp = p.sigma();
    return kl_with_grads(q, sq, p, sp, {}, {});
}

LossAndGrads objective_loss_and_grads(const MeanFieldPosterior& q, const Objective& obj,
                                      std::size_t mc_samples, Rng& rng) {
    check_mc(mc_samples);
    const NetworkArch& arch = q.arch;
    const std::size_t P = q.size();
    const std::size_t d = arch.input_dim;
    const std::size_t K = arch.num_classes;
    if (P != arch.param_count()) throw InputError("posterior does not match its architecture");

    const bool use_kl = obj.prior != nullptr && obj.lambda1 != 0.0;
    if (use_kl) check_same_arch(q, *obj.prior);
    const bool use_distill = obj.lambda2 != 0.0 && !obj.distill.empty();

    // Row layout: [new sample][replay...][distill...]
    const std::size_t n_new = obj.new_sample ? 1 : 0;
    const std::size_t n_replay = obj.replay.size();
    const std::size_t n_distill = use_distill ? obj.distill.size() : 0;
    const std::size_t rows = n_new + n_replay + n_distill;

    std::vector<double> inputs;
    inputs.reserve(rows * d);
    auto push = [&](std::span<const double> z) {
        check_dim(z, d);
        inputs.insert(inputs.end(), z.begin(), z.end());
    };
    if (obj.new_sample) {
        push(obj.new_sample->z);
        check_class(obj.new_sample->y, K);
    }
    for (const auto& r : obj.replay) {
        push(r.z);
        check_class(r.y, K);
    }
    for (std::size_t j = 0; j < n_distill; ++j) {
        push(obj.distill[j].z);
        if (obj.distill[j].h.size() != K) throw InputError("stored logits have wrong length");
    }

    LossAndGrads out;
    out.grads.assign(2 * P, 0.0);
    std::span<double> g_mu(out.grads.data(), P);
    std::span<double> g_rho(out.grads.data() + P, P);
    std::vector<double> g_sigma(P, 0.0);
    std::vector<double> sigma, slope;
    softplus_and_slope(q.rho, sigma, slope);

    if (rows > 0) {
        const auto& k = kernels::active();
        const double inv_s = 1.0 / static_cast<double>(mc_samples);
        std::vector<double> eps(P), theta(P), dtheta(P);
        std::vector<double> dlogits(rows * K);
        std::vector<double> prob(K);
        BatchPass pass;
        for (std::size_t s = 0; s < mc_samples; ++s) {
            rng.fill_normal(eps);
            k.reparam(q.mu.data(), sigma.data(), eps.data(), theta.data(), P);
            pass.forward(arch, theta, inputs, rows);
            for (std::size_t r = 0; r < rows; ++r) {
                const auto logit = pass.logits_row(r);
                std::span<double> dl(dlogits.data() + r * K, K);
                if (r < n_new + n_replay) {
                    const bool is_new = r < n_new;
                    const double w = is_new ? 1.0 : obj.replay_weight;
                    const std::size_t y = is_new ? obj.new_sample->y : obj.replay[r - n_new].y;
                    const double l = log_sum_exp(logit) - logit[y];
                    (is_new ? out.nll_new : out.nll_replay) += w * l * inv_s;
                    softmax(logit, prob);
                    for (std::size_t c = 0; c < K; ++c)
                        dl[c] = w * inv_s * (prob[c] - (c == y ? 1.0 : 0.0));
                } else {
                    const auto h = obj.distill[r - n_new - n_replay].h;
                    double sq = 0.0;
                    for (std::size_t c = 0; c < K; ++c) {
                        const double diff = logit[c] - h[c];
                        sq += diff * diff;
                        dl[c] = 2.0 * obj.lambda2 * inv_s * diff;
                    }
                    out.distill += obj.lambda2 * sq * inv_s;
                }
            }
            std::fill(dtheta.begin(), dtheta.end(), 0.0);
            pass.backward(arch, theta, dlogits, dtheta);
            k.axpy(1.0, dtheta.data(), g_mu.data(), P);
            k.mul_acc(dtheta.data(), eps.data(), g_sigma.data(), P);
        }
    }

    // At q == p the divergence and its gradient vanish exactly.
    if (use_kl && !(q.mu == obj.prior->mu && q.rho == obj.prior->rho)) {
        std::vector<double> kl_mu(P), kl_sigma(P);
        const auto prior_sigma = obj.prior->sigma();
        out.kl = obj.lambda1 * kl_with_grads(q, sigma, *obj.prior, prior_sigma, kl_mu, kl_sigma);
        const auto& k = kernels::active();
        k.axpy(obj.lambda1, kl_mu.data(), g_mu.data(), P);
        k.axpy(obj.lambda1, kl_sigma.data(), g_sigma.data(), P);
    }

    for (std::size_t i = 0; i < P; ++i) g_rho[i] = g_sigma[i] * slope[i];
    out.loss = out.nll_new + out.nll_replay + out.distill + out.kl;
    return out;
}

LossAndGrads elbo_loss_and_grads(const MeanFieldPosterior& q, const MeanFieldPosterior& prior,
                                 const LabeledEmbedding& new_sample,
                                 std::span<const LabeledEmbedding> replay, double lambda1,
                                 std::size_t mc_samples, Rng& rng) {
    Objective obj;
    obj.new_sample = new_sample;
    obj.replay = replay;
    obj.prior = &prior;
    obj.lambda1 = lambda1;
    check_same_arch(q, prior);
    return objective_loss_and_grads(q, obj, mc_samples, rng);
}

LossAndGrads distill_loss_and_grads(const MeanFieldPosterior& q,
                                    std::span<const DistillTarget> batch, double lambda2,
                                    std::size_t mc_samples, Rng& rng) {
    if (batch.empty()) throw InputError("distillation batch is empty");
    Objective obj;
    obj.distill = batch;
    obj.lambda2 = lambda2;
    return objective_loss_and_grads(q, obj, mc_samples, rng);
}

double entropy(std::span<const double> p) noexcept {
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return std::max(0.0, h);
}

std::vector<double> predict_proba_batch(const MeanFieldPosterior& q,
                                        std::span<const double> inputs, std::size_t rows,
                                        std::size_t mc_samples, Rng& rng) {
    check_mc(mc_samples);
    const std::size_t d = q.arch.input_dim;
    const std::size_t K = q.arch.num_classes;
    if (inputs.size() != rows * d) throw InputError("input block does not match rows x input_dim");

    constexpr std::size_t kChunk = 256;
    const std::size_t P = q.size();
    const auto sigma = q.sigma();
    const auto& k = kernels::active();
    std::vector<double> out(rows * K, 0.0);
    std::vector<double> eps(P), theta(P), prob(K);
    BatchPass pass;
    for (std::size_t s = 0; s < mc_samples; ++s) {
        rng.fill_normal(eps);
        k.reparam(q.mu.data(), sigma.data(), eps.data(), theta.data(), P);
        for (std::size_t r0 = 0; r0 < rows; r0 += kChunk) {
            const std::size_t n = std::min(kChunk, rows - r0);
            pass.forward(q.arch, theta, inputs.subspan(r0 * d, n * d), n);
            for (std::size_t r = 0; r < n; ++r) {
                softmax(pass.logits_row(r), prob);
                double* dst = out.data() + (r0 + r) * K;
                for (std::size_t c = 0; c < K; ++c) dst[c] += prob[c];
            }
        }
    }
    const double inv_s = 1.0 / static_cast<double>(mc_samples);
    for (double& v : out) v *= inv_s;
    return out;
}

std::vector<double> predict_proba(const MeanFieldPosterior& q, std::span<const double> z,
                                  std::size_t mc_samples, Rng& rng) {
    check_dim(z, q.arch.input_dim);
    return predict_proba_batch(q, z, 1, mc_samples, rng);
}

double predictive_uncertainty(const MeanFieldPosterior& q, std::span<const double> z,
                              std::size_t mc_samples, Rng& rng) {
    return entropy(predict_proba(q, z, mc_samples, rng));
}

std::vector<ExampleScore> score_examples(const MeanFieldPosterior& q,
                                         std::span<const LabeledEmbedding> examples,
                                         std::size_t mc_samples, Rng& rng) {
    check_mc(mc_samples);
    const std::size_t d = q.arch.input_dim;
    const std::size_t K = q.arch.num_classes;
    const std::size_t rows = examples.size();
    std::vector<ExampleScore> scores(rows);
    if (rows == 0) return scores;

    std::vector<double> inputs;
    inputs.reserve(rows * d);
    for (const auto& e : examples) {
        check_dim(e.z, d);
        check_class(e.y, K);
        inputs.insert(inputs.end(), e.z.begin(), e.z.end());
    }
    std::vector<double> prob_sum(rows * K, 0.0);
    for (auto& s : scores) s.logits.assign(K, 0.0);

    const std::size_t P = q.size();
    const auto sigma = q.sigma();
    const auto& k = kernels::active();
    std::vector<double> eps(P), theta(P), prob(K);
    BatchPass pass;
    for (std::size_t s = 0; s < mc_samples; ++s) {
        rng.fill_normal(eps);
        k.reparam(q.mu.data(), sigma.data(), eps.data(), theta.data(), P);
        pass.forward(q.arch, theta, inputs, rows);
        for (std::size_t r = 0; r < rows; ++r) {
            const auto logit = pass.logits_row(r);
            for (std::size_t c = 0; c < K; ++c) scores[r].logits[c] += logit[c];
            scores[r].loss += log_sum_exp(logit) - logit[examples[r].y];
            softmax(logit, prob);
            for (std::size_t c = 0; c < K; ++c) prob_sum[r * K + c] += prob[c];
        }
    }
    const double inv_s = 1.0 / static_cast<double>(mc_samples);
    for (std::size_t r = 0; r < rows; ++r) {
        for (double& v : scores[r].logits) v *= inv_s;
        scores[r].loss *= inv_s;
        std::span<double> p(prob_sum.data() + r * K, K);
        for (double& v : p) v *= inv_s;
        scores[r].uncertainty = entropy(p);
    }
    return scores;
}

} // namespace basil
