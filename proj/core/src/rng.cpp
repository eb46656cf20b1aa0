#include "neuroforge/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace nf {

std::uint64_t Rng::mix(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

Rng Rng::split(std::uint64_t label) const {
    Rng child(0);
    child.key_ = mix(key_ ^ mix(label * 0xd6e8feb86659fd93ull + 0xa5a5a5a5a5a5a5a5ull));
    child.counter_ = 0;
    return child;
}

Rng Rng::split(std::string_view label) const {
    // FNV-1a, then feed through the integer split
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : label) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return split(h);
}

std::uint64_t Rng::next_u64() {
    return mix(key_ ^ (counter_++ * 0xc2b2ae3d27d4eb4full));
}

float Rng::uniform() {
    return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f);
}

double Rng::uniform_double() {
    return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
}

float Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    float u1 = uniform();
    float u2 = uniform();
    while (u1 <= 1e-12f) u1 = uniform();
    float r = std::sqrt(-2.0f * std::log(u1));
    float theta = 6.28318530717958647692f * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
}

int Rng::uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
    // rejection sampling keeps the draw exactly uniform
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return static_cast<int>(x % bound);
}

std::vector<int> Rng::sample_without_replacement(int n, int k) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    shuffle(idx);
    idx.resize(static_cast<std::size_t>(k < n ? k : n));
    return idx;
}

}  // namespace nf
