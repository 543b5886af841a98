#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "basil/network.hpp"
#include "basil/rng.hpp"

namespace basil {

/// One rehearsal example plus the statistics cached for it.
struct MemorySlot {
    std::vector<double> z;
    std::size_t y = 0;
    LogitVector h;        // logits at last refresh
    double loss = 0.0;    // cached NLL
    double uncertainty = 0.0; // cached predictive entropy

    friend bool operator==(const MemorySlot&, const MemorySlot&) = default;
};

enum class ReplacementPolicy {
    LAWCBR,          // loss-aware eviction inside the majority class
    LAWRRR,          // reservoir acceptance, then loss- and class-count-weighted eviction
    PlainReservoir,  // Algorithm R with uniform eviction
    LAWRRRAlways,    // LAWRRR eviction, but every arrival is inserted
};

enum class ReplayStrategy {
    Uni,   // uniform without replacement
    UAPN,  // half most uncertain + half least uncertain
    LAPN,  // half highest loss + half lowest loss
};

struct InsertReport {
    bool inserted = false;
    std::optional<std::size_t> evicted;
};

/// Added to every cached loss before inverting it into an eviction weight.
inline constexpr double kLossEpsilon = 1e-8;

/// Fixed-capacity episodic memory. Indices are stable: an eviction overwrites
/// the evicted slot in place.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity = 0) : capacity_(capacity) {}

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t size() const noexcept { return slots_.size(); }
    bool empty() const noexcept { return slots_.empty(); }
    bool full() const noexcept { return slots_.size() >= capacity_; }
    std::uint64_t seen_count() const noexcept { return seen_count_; }
    const std::map<std::size_t, std::size_t>& class_counts() const noexcept { return class_counts_; }
    std::size_t class_count(std::size_t y) const noexcept;

    const MemorySlot& slot(std::size_t i) const { return slots_.at(i); }
    std::span<const MemorySlot> slots() const noexcept { return slots_; }

    /// Offers one arrival to the buffer. seen_count is incremented on every call.
    InsertReport maybe_insert(MemorySlot slot, ReplacementPolicy policy, Rng& rng);

    /// Indices of replay examples; at most n, empty when the buffer is empty.
    std::vector<std::size_t> sample_replay(ReplayStrategy strategy, std::size_t n, Rng& rng) const;

    /// Uniform selection for the distillation term.
    std::vector<std::size_t> sample_kd(std::size_t n, Rng& rng) const;

    /// Overwrites the cached statistics of slot index; z and y stay.
    void refresh_slot(std::size_t index, LogitVector h, double loss, double uncertainty);

    /// Rebuilds a buffer from serialized parts, validating every slot.
    static ReplayBuffer restore(std::size_t capacity, std::uint64_t seen_count,
                                std::vector<MemorySlot> slots);

    friend bool operator==(const ReplayBuffer&, const ReplayBuffer&) = default;

private:
    void check_slot(const MemorySlot& slot) const;
    std::size_t pick_lawcbr(Rng& rng) const;
    std::size_t pick_lawrrr(Rng& rng) const;

    std::size_t capacity_;
    std::uint64_t seen_count_ = 0;
    std::vector<MemorySlot> slots_;
    std::map<std::size_t, std::size_t> class_counts_;
};

/// Selection used by UAPN/LAPN: the ceil(n/2) highest scores, then the
/// floor(n/2) lowest among the rest. Ties go to the lower index.
std::vector<std::size_t> select_extremes(std::span<const double> scores, std::size_t n);

} // namespace basil
