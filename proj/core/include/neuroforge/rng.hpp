#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace nf {

// Counter-based splittable PRNG. A generator is a (key, counter) pair; child
// generators are derived by mixing a label into the key, so independent tasks
// seeded per (experiment, task) draw non-overlapping streams regardless of
// scheduling order. Output is platform-independent.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(mix(seed ^ kKeyTweak)), counter_(0) {}

    Rng split(std::uint64_t label) const;
    Rng split(std::string_view label) const;

    std::uint64_t next_u64();
    std::uint32_t next_u32() { return static_cast<std::uint32_t>(next_u64() >> 32); }

    // uniform in [0, 1)
    float uniform();
    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }
    double uniform_double();

    // standard normal via Box-Muller
    float normal();

    // uniform integer in [0, n), n >= 1
    int uniform_int(int n);

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<int>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

    // first k of a seeded permutation of [0, n)
    std::vector<int> sample_without_replacement(int n, int k);

private:
    static constexpr std::uint64_t kKeyTweak = 0x9e3779b97f4a7c15ull;
    static std::uint64_t mix(std::uint64_t x);

    std::uint64_t key_;
    std::uint64_t counter_;
    bool have_spare_ = false;
    float spare_ = 0.0f;
};

}  // namespace nf
