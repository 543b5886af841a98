#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "basil/error.hpp"

namespace basil::binio {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T to_little(T v) noexcept {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::array<unsigned char, sizeof(T)> r{};
        for (std::size_t i = 0; i < sizeof(T); ++i) r[i] = bytes[sizeof(T) - 1 - i];
        return std::bit_cast<T>(r);
    } else {
        return v;
    }
}

/// Appends little-endian scalars to a byte vector.
class Writer {
public:
    template <typename T>
        requires std::is_arithmetic_v<T>
    void put(T v) {
        const T le = to_little(v);
        const auto* p = reinterpret_cast<const unsigned char*>(&le);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }

    void put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
    void put_bytes(std::span<const std::uint8_t> s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

    void put_doubles(std::span<const double> v) {
        put<std::uint64_t>(v.size());
        for (double x : v) put(x);
    }

    /// Section: 4-byte tag, u64 payload length, payload.
    void put_section(std::string_view tag, const Writer& payload) {
        put_bytes(tag.substr(0, 4));
        put<std::uint64_t>(payload.bytes_.size());
        put_bytes(payload.bytes_);
    }

    const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
    std::vector<std::uint8_t> take() noexcept { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

/// Bounds-checked reader; every overrun throws LoadError.
class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <typename T>
        requires std::is_arithmetic_v<T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return to_little(v);
    }

    std::string get_bytes(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::span<const std::uint8_t> get_span(std::size_t n) {
        need(n);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    /// Reads a length-prefixed double array; rejects lengths beyond what remains.
    std::vector<double> get_doubles() {
        const auto n = get<std::uint64_t>();
        if (n > remaining() / sizeof(double)) throw LoadError("array length exceeds data");
        std::vector<double> v(static_cast<std::size_t>(n));
        for (double& x : v) x = get<double>();
        return v;
    }

    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
    bool done() const noexcept { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (n > remaining()) throw LoadError("unexpected end of data");
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept;

} // namespace basil::binio
