#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>

namespace basil {

/// SplitMix64 finalizer. Used to expand seeds and to derive independent
/// stream seeds from (seed, tag) pairs.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
    return mix64(mix64(seed) ^ mix64(tag + 0x632be59bd9b4e019ULL));
}

/// xoshiro256** engine. Satisfies UniformRandomBitGenerator, and its whole
/// state is four words so checkpoints can capture it exactly.
class Xoshiro256 {
public:
    using result_type = std::uint64_t;
    using State = std::array<std::uint64_t, 4>;

    explicit Xoshiro256(std::uint64_t seed = 0) noexcept { reseed(seed); }

    void reseed(std::uint64_t seed) noexcept {
        std::uint64_t x = seed;
        for (auto& w : s_) {
            x += 0x9e3779b97f4a7c15ULL;
            w = mix64(x);
        }
    }

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    const State& state() const noexcept { return s_; }
    void set_state(const State& s) noexcept { s_ = s; }

    friend bool operator==(const Xoshiro256&, const Xoshiro256&) = default;

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
        return (x << k) | (x >> (64 - k));
    }

    State s_{};
};

/// Seedable random source used throughout training. Normal variates come from
/// Boost's ziggurat sampler, which keeps no hidden state between calls, so the
/// engine state alone determines every future draw.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept : engine_(seed) {}

    Xoshiro256& engine() noexcept { return engine_; }
    const Xoshiro256& engine() const noexcept { return engine_; }

    double normal();
    void fill_normal(std::span<double> out);
    /// Uniform on [0, 1).
    double uniform();
    /// Uniform integer on [0, n). n must be positive.
    std::size_t index(std::size_t n);

    friend bool operator==(const Rng&, const Rng&) = default;

private:
    Xoshiro256 engine_;
};

} // namespace basil
