#pragma once

#include <algorithm>
#include <cstdint>
#include <string_view>
#include <vector>

namespace evt {

// Splittable seeding: every consumer of randomness derives its own 64-bit
// state from (root seed, stream id). Stream ids are short strings such as
// "init/embed.l0.w" or "epoch3/sample17", so adding a new consumer never
// shifts the random sequence seen by existing ones.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t derive_seed(uint64_t root, std::string_view stream) {
    return splitmix64(root ^ fnv1a64(stream));
}

// Deterministic generator independent of any standard-library distribution
// internals: identical sequences on every platform/compiler.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed == 0 ? 0x6a09e667f3bcc909ULL : seed) {}

    Rng(uint64_t root, std::string_view stream) : Rng(derive_seed(root, stream)) {}

    uint64_t next_u64() {
        state_ = splitmix64_state(state_);
        return mix(state_);
    }

    // Uniform in [0, 1).
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform in [0, n), unbiased via rejection.
    uint64_t next_below(uint64_t n) {
        if (n <= 1) return 0;
        const uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % n);
        uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices out of n, in increasing order.
    std::vector<size_t> sample_indices(size_t n, size_t k);

private:
    static uint64_t splitmix64_state(uint64_t s) { return s + 0x9e3779b97f4a7c15ULL; }
    static uint64_t mix(uint64_t x) {
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    uint64_t state_;
};

inline std::vector<size_t> Rng::sample_indices(size_t n, size_t k) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    if (k >= n) return idx;
    // Partial Fisher-Yates: the first k slots end up holding the sample.
    for (size_t i = 0; i < k; ++i) {
        size_t j = i + static_cast<size_t>(next_below(n - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace evt
