#include "basil/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "basil/binary_io.hpp"
#include "basil/bnn.hpp"
#include "basil/error.hpp"
#include "basil/rng.hpp"

namespace basil {

double omega_all(std::span<const EvalRecord> records) {
    if (records.empty()) throw InputError("omega_all needs at least one record");
    double sum = 0.0;
    for (const auto& r : records) {
        if (!(r.alpha_offline > 0.0) || !std::isfinite(r.alpha_offline))
            throw InputError("offline accuracy must be positive at event " + std::to_string(r.event_index));
        if (!std::isfinite(r.alpha)) throw InputError("non-finite accuracy at event " + std::to_string(r.event_index));
        sum += r.alpha / r.alpha_offline;
    }
    return sum / static_cast<double>(records.size());
}

double offline_hat(std::span<const EvalRecord> records) {
    if (records.empty()) throw InputError("offline_hat needs at least one record");
    double sum = 0.0;
    for (const auto& r : records) sum += r.alpha_offline;
    return sum / static_cast<double>(records.size());
}

void OfflineSettings::validate() const {
    if (epochs < 1) throw InputError("offline epochs must be >= 1");
    if (batch_size < 1) throw InputError("offline batch size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw InputError("offline learning rate must be positive");
}

LabeledRows gather_rows(const Dataset& d, std::span<const std::size_t> classes) {
    LabeledRows out;
    out.dim = d.manifest.embedding_dim;
    for (const auto& s : d.manifest.samples) {
        if (!classes.empty() && std::find(classes.begin(), classes.end(), s.class_id) == classes.end()) continue;
        const auto row = d.embedding(s);
        out.inputs.insert(out.inputs.end(), row.begin(), row.end());
        out.labels.push_back(s.class_id);
    }
    return out;
}

double accuracy(const NetworkArch& arch, std::span<const double> theta, const LabeledRows& rows,
                std::span<const std::size_t> active_classes) {
    if (rows.size() == 0) throw InputError("accuracy needs a non-empty test set");
    constexpr std::size_t kChunk = 256;
    const std::size_t k = arch.num_classes;
    BatchPass pass;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < rows.size(); begin += kChunk) {
        const std::size_t n = std::min(kChunk, rows.size() - begin);
        pass.forward(arch, theta, std::span(rows.inputs).subspan(begin * rows.dim, n * rows.dim), n);
        for (std::size_t r = 0; r < n; ++r) {
            const auto logits = pass.logits_row(r);
            std::size_t best = k;
            for (std::size_t c = 0; c < k; ++c) {
                if (!active_classes.empty() &&
                    std::find(active_classes.begin(), active_classes.end(), c) == active_classes.end())
                    continue;
                if (best == k || logits[c] > logits[best]) best = c;
            }
            if (best == rows.labels[begin + r]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(rows.size());
}

double offline_accuracy(const Dataset& train, const Dataset& test, const NetworkArch& arch,
                        std::span<const std::size_t> classes, const OfflineSettings& settings) {
    settings.validate();
    arch.validate();
    const LabeledRows tr = gather_rows(train, classes);
    const LabeledRows te = gather_rows(test, classes);
    if (tr.size() == 0 || te.size() == 0) throw InputError("offline reference has no rows for the requested classes");

    Rng rng(settings.seed);
    MeanFieldPosterior init = MeanFieldPosterior::initialize(arch, 1e-12, rng);
    std::vector<double> theta = init.mu;
    std::vector<double> grad(theta.size());
    std::vector<std::size_t> order(tr.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    const std::size_t k = arch.num_classes;
    const std::size_t bs = settings.batch_size;
    std::vector<double> batch(bs * tr.dim);
    std::vector<double> dlogits(bs * k);
    std::vector<double> p(k);
    BatchPass pass;
    for (std::size_t epoch = 0; epoch < settings.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        for (std::size_t begin = 0; begin < order.size(); begin += bs) {
            const std::size_t n = std::min(bs, order.size() - begin);
            for (std::size_t r = 0; r < n; ++r)
                std::copy_n(tr.inputs.begin() + static_cast<std::ptrdiff_t>(order[begin + r] * tr.dim), tr.dim,
                            batch.begin() + static_cast<std::ptrdiff_t>(r * tr.dim));
            pass.forward(arch, theta, std::span(batch).first(n * tr.dim), n);
            for (std::size_t r = 0; r < n; ++r) {
                const auto logits = pass.logits_row(r);
                const double m = *std::max_element(logits.begin(), logits.end());
                double z = 0.0;
                for (std::size_t c = 0; c < k; ++c) z += (p[c] = std::exp(logits[c] - m));
                for (std::size_t c = 0; c < k; ++c) dlogits[r * k + c] = p[c] / z / static_cast<double>(n);
                dlogits[r * k + tr.labels[order[begin + r]]] -= 1.0 / static_cast<double>(n);
            }
            std::fill(grad.begin(), grad.end(), 0.0);
            pass.backward(arch, theta, std::span(dlogits).first(n * k), grad);
            for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= settings.learning_rate * grad[i];
        }
    }
    return accuracy(arch, theta, te, classes);
}

std::uint64_t offline_cache_key(const Dataset& train, const Dataset& test, const NetworkArch& arch,
                                std::span<const std::size_t> classes, const OfflineSettings& s) {
    binio::Writer w;
    w.put_bytes(std::string_view("offline-v1"));
    w.put<std::uint64_t>(train.content_hash());
    w.put<std::uint64_t>(test.content_hash());
    w.put<std::uint64_t>(arch.input_dim);
    w.put<std::uint64_t>(arch.num_classes);
    w.put<std::uint64_t>(arch.hidden_dims.size());
    for (auto h : arch.hidden_dims) w.put<std::uint64_t>(h);
    w.put<std::uint64_t>(s.epochs);
    w.put<std::uint64_t>(s.batch_size);
    w.put<double>(s.learning_rate);
    w.put<std::uint64_t>(s.seed);
    std::vector<std::size_t> sorted(classes.begin(), classes.end());
    std::sort(sorted.begin(), sorted.end());
    w.put<std::uint64_t>(sorted.size());
    for (auto c : sorted) w.put<std::uint64_t>(c);
    return binio::fnv1a(w.bytes());
}

namespace {

std::string cache_path(const std::string& dir, std::uint64_t key) {
    char name[64];
    std::snprintf(name, sizeof name, "offline-%016llx.txt", static_cast<unsigned long long>(key));
    return (std::filesystem::path(dir) / name).string();
}

// Entry: "basil-offline 1 <key hex> <accuracy hexfloat>\n"
std::optional<double> load_entry(const std::string& path, std::uint64_t key) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    std::string line;
    if (!std::getline(in, line)) return std::nullopt;
    unsigned long long k = 0;
    double v = 0.0;
    int version = 0;
    char tail = 0;
    if (std::sscanf(line.c_str(), "basil-offline %d %llx %la%c", &version, &k, &v, &tail) != 3) return std::nullopt;
    if (version != 1 || k != key || !(v >= 0.0 && v <= 1.0)) return std::nullopt;
    return v;
}

void store_entry(const std::string& path, std::uint64_t key, double v) {
    char line[128];
    const int n = std::snprintf(line, sizeof line, "basil-offline 1 %016llx %a\n",
                                static_cast<unsigned long long>(key), v);
    binio::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(line), static_cast<std::size_t>(n)));
}

} // namespace

std::vector<double> offline_reference(const Dataset& train, const Dataset& test, const NetworkArch& arch,
                                      const std::vector<std::vector<std::size_t>>& event_classes,
                                      const OfflineSettings& settings) {
    settings.validate();
    if (!settings.cache_dir.empty()) std::filesystem::create_directories(settings.cache_dir);
    std::vector<double> out;
    out.reserve(event_classes.size());
    for (const auto& classes : event_classes) {
        const std::uint64_t key = offline_cache_key(train, test, arch, classes, settings);
        if (!settings.cache_dir.empty()) {
            const std::string path = cache_path(settings.cache_dir, key);
            if (auto hit = load_entry(path, key)) {
                out.push_back(*hit);
                continue;
            }
            const double v = offline_accuracy(train, test, arch, classes, settings);
            store_entry(path, key, v);
            out.push_back(v);
        } else {
            out.push_back(offline_accuracy(train, test, arch, classes, settings));
        }
    }
    return out;
}

} // namespace basil
