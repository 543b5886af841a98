#include "basil/replay_buffer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "basil/error.hpp"

namespace basil {

std::size_t ReplayBuffer::class_count(std::size_t y) const noexcept {
    auto it = class_counts_.find(y);
    return it == class_counts_.end() ? 0 : it->second;
}

void ReplayBuffer::check_slot(const MemorySlot& slot) const {
    if (!std::isfinite(slot.loss) || slot.loss < 0.0 || !std::isfinite(slot.uncertainty) ||
        slot.uncertainty < 0.0)
        throw InputError("memory slot loss and uncertainty must be finite and non-negative");
    if (!slots_.empty()) {
        const MemorySlot& ref = slots_.front();
        if (slot.z.size() != ref.z.size() || slot.h.size() != ref.h.size())
            throw InputError("memory slot dimensions differ from buffer contents");
    }
}

std::size_t ReplayBuffer::pick_lawcbr(Rng& rng) const {
    // Majority class; std::map iterates ascending so ties keep the lowest id.
    std::size_t majority = 0;
    std::size_t best = 0;
    for (const auto& [cls, count] : class_counts_) {
        if (count > best) {
            best = count;
            majority = cls;
        }
    }
    std::vector<std::size_t> members;
    std::vector<double> weights;
    for (std::size_t i = 0; i < slots_.size(); ++i) {
        if (slots_[i].y != majority) continue;
        members.push_back(i);
        weights.push_back(1.0 / (slots_[i].loss + kLossEpsilon));
    }
    std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
    return members[dist(rng.engine())];
}

std::size_t ReplayBuffer::pick_lawrrr(Rng& rng) const {
    std::vector<double> weights(slots_.size());
    for (std::size_t i = 0; i < slots_.size(); ++i)
        weights[i] = static_cast<double>(class_count(slots_[i].y)) / (slots_[i].loss + kLossEpsilon);
    std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
    return dist(rng.engine());
}

InsertReport ReplayBuffer::maybe_insert(MemorySlot slot, ReplacementPolicy policy, Rng& rng) {
    check_slot(slot);
    ++seen_count_;
    if (capacity_ == 0) return {};
    if (slots_.size() < capacity_) {
        ++class_counts_[slot.y];
        slots_.push_back(std::move(slot));
        return {true, std::nullopt};
    }

    std::size_t victim = 0;
    switch (policy) {
    case ReplacementPolicy::LAWCBR:
        victim = pick_lawcbr(rng);
        break;
    case ReplacementPolicy::LAWRRR:
        // Same acceptance test as Algorithm R; only the victim choice differs.
        if (rng.index(static_cast<std::size_t>(seen_count_)) >= capacity_) return {false, std::nullopt};
        victim = pick_lawrrr(rng);
        break;
    case ReplacementPolicy::LAWRRRAlways:
        victim = pick_lawrrr(rng);
        break;
    case ReplacementPolicy::PlainReservoir: {
        const auto j = static_cast<std::size_t>(rng.index(static_cast<std::size_t>(seen_count_)));
        if (j >= capacity_) return {false, std::nullopt};
        victim = j;
        break;
    }
    }

    auto it = class_counts_.find(slots_[victim].y);
    if (--it->second == 0) class_counts_.erase(it);
    ++class_counts_[slot.y];
    slots_[victim] = std::move(slot);
    return {true, victim};
}

std::vector<std::size_t> select_extremes(std::span<const double> scores, std::size_t n) {
    const std::size_t size = scores.size();
    std::vector<std::size_t> order(size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (n >= size) return order;

    // Descending by score, ascending index on ties.
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const std::size_t n_high = (n + 1) / 2;
    const std::size_t n_low = n / 2;
    std::vector<std::size_t> picked(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_high));

    std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(n_high), order.end());
    std::stable_sort(rest.begin(), rest.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] < scores[b] || (scores[a] == scores[b] && a < b);
    });
    picked.insert(picked.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_low));
    return picked;
}

std::vector<std::size_t> ReplayBuffer::sample_replay(ReplayStrategy strategy, std::size_t n,
                                                     Rng& rng) const {
    if (slots_.empty() || n == 0) return {};
    std::vector<double> scores(slots_.size());
    switch (strategy) {
    case ReplayStrategy::Uni:
        return sample_kd(n, rng);
    case ReplayStrategy::UAPN:
        std::transform(slots_.begin(), slots_.end(), scores.begin(),
                       [](const MemorySlot& s) { return s.uncertainty; });
        break;
    case ReplayStrategy::LAPN:
        std::transform(slots_.begin(), slots_.end(), scores.begin(),
                       [](const MemorySlot& s) { return s.loss; });
        break;
    }
    return select_extremes(scores, n);
}

std::vector<std::size_t> ReplayBuffer::sample_kd(std::size_t n, Rng& rng) const {
    std::vector<std::size_t> all(slots_.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    if (n >= all.size()) return all;
    std::vector<std::size_t> picked;
    picked.reserve(n);
    std::sample(all.begin(), all.end(), std::back_inserter(picked), n, rng.engine());
    return picked;
}

void ReplayBuffer::refresh_slot(std::size_t index, LogitVector h, double loss, double uncertainty) {
    if (index >= slots_.size())
        throw InputError("slot index " + std::to_string(index) + " out of range (size " +
                         std::to_string(slots_.size()) + ")");
    if (!std::isfinite(loss) || loss < 0.0 || !std::isfinite(uncertainty) || uncertainty < 0.0)
        throw InputError("refreshed loss and uncertainty must be finite and non-negative");
    MemorySlot& s = slots_[index];
    if (h.size() != s.h.size()) throw InputError("refreshed logits have wrong length");
    s.h = std::move(h);
    s.loss = loss;
    s.uncertainty = uncertainty;
}

ReplayBuffer ReplayBuffer::restore(std::size_t capacity, std::uint64_t seen_count,
                                   std::vector<MemorySlot> slots) {
    if (slots.size() > capacity) throw InputError("more slots than capacity");
    ReplayBuffer b(capacity);
    for (auto& s : slots) {
        b.check_slot(s);
        ++b.class_counts_[s.y];
        b.slots_.push_back(std::move(s));
    }
    b.seen_count_ = seen_count;
    return b;
}

} // namespace basil
