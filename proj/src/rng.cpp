#include "basil/rng.hpp"

#include <boost/random/normal_distribution.hpp>

#include <random>

namespace basil {

double Rng::normal() {
    boost::random::normal_distribution<double> dist;
    return dist(engine_);
}

void Rng::fill_normal(std::span<double> out) {
    boost::random::normal_distribution<double> dist;
    for (double& v : out) v = dist(engine_);
}

double Rng::uniform() {
    // 53 random mantissa bits.
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t Rng::index(std::size_t n) {
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(engine_);
}

} // namespace basil
