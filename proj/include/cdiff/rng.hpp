#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "cdiff/mat.hpp"

namespace cdiff {

// Deterministic random stream. All draws are implemented directly on top of
// the mt19937_64 word stream (no std::*_distribution), so sequences are
// identical across standard libraries and platforms.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform on [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer on [lo, hi] inclusive, by rejection.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return lo + static_cast<int64_t>(x % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller; one value per pair of uniforms, no cache.
    double normal() {
        double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    Mat normal_mat(int r, int c, double mu = 0.0, double sigma = 1.0) {
        Mat m(r, c);
        for (auto& v : m.d) v = normal(mu, sigma);
        return m;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 eng_;
};

namespace detail {
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
}  // namespace detail

// Named substream derivation: every stage, subject and step pulls its own
// stream from (root, label, index), so parallel and serial execution see the
// same sequences.
inline uint64_t derive_seed(uint64_t root, std::string_view label, uint64_t index = 0) {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the label
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    uint64_t x = detail::splitmix64(root ^ h);
    return detail::splitmix64(x ^ index);
}

inline Rng derive_rng(uint64_t root, std::string_view label, uint64_t index = 0) {
    return Rng(derive_seed(root, label, index));
}

}  // namespace cdiff
