// Splittable counter-based random generator.
//
// All randomness in the project flows from one root seed per command. Streams
// are derived by hashing a label into the key, so module-level generators are
// reproducible and independent of call order in unrelated code paths.
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "bgts/common.hpp"

namespace bgts {

namespace detail {
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}
}  // namespace detail

class Rng {
  public:
    Rng() : Rng(0) {}
    explicit Rng(uint64_t seed) : key_(detail::splitmix64(seed ^ 0x5851f42d4c957f2dull)), counter_(0) {}

    // Derived stream; the child is independent of draws already made here.
    Rng split(std::string_view label) const {
        Rng r;
        r.key_ = detail::splitmix64(key_ ^ fnv1a64(label));
        r.counter_ = 0;
        return r;
    }
    Rng split(uint64_t stream) const {
        Rng r;
        r.key_ = detail::splitmix64(key_ ^ detail::splitmix64(stream + 0x9e3779b97f4a7c15ull));
        r.counter_ = 0;
        return r;
    }

    uint64_t next_u64() { return detail::splitmix64(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }

    // Uniform in [0,1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive bounds.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        check<ContractError>(lo <= hi, "uniform_int: empty range");
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(next_u64() % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; one value per call, two uniforms consumed.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // First k entries of a shuffled [0,n) index range (partial Fisher-Yates).
    std::vector<int> sample_without_replacement(int n, int k) {
        check<ContractError>(k >= 0 && k <= n, "sample_without_replacement: k out of range");
        std::vector<int> idx(n);
        for (int i = 0; i < n; ++i) idx[i] = i;
        for (int i = 0; i < k; ++i) {
            int j = static_cast<int>(uniform_int(i, n - 1));
            std::swap(idx[i], idx[j]);
        }
        idx.resize(k);
        return idx;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

    uint64_t key() const { return key_; }
    uint64_t counter() const { return counter_; }
    void restore(uint64_t key, uint64_t counter) {
        key_ = key;
        counter_ = counter;
    }

  private:
    uint64_t key_;
    uint64_t counter_;
};

}  // namespace bgts
