#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace icl {

/// Deterministic RNG wrapper. std::mt19937_64 output is pinned by the
/// standard, and all derived draws below avoid std::*_distribution (whose
/// algorithms are implementation-defined), so every sequence is bit-stable
/// across platforms and standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform draw in [0, n) via modulo rejection.
    std::uint64_t bounded(std::uint64_t n) {
        const std::uint64_t rem = (UINT64_MAX % n + 1) % n;  // 2^64 mod n
        std::uint64_t v = gen_();
        if (rem != 0) {
            const std::uint64_t limit = UINT64_MAX - rem;
            while (v > limit) v = gen_();
        }
        return v % n;
    }

    /// Uniform double in (0, 1]: 53 mantissa bits, never exactly zero.
    double next_unit() {
        return (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53;
    }

private:
    std::mt19937_64 gen_;
};

/// In-place Fisher-Yates using Rng::bounded draws.
template <typename T>
void deterministic_shuffle(std::vector<T>& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.bounded(i));
        std::swap(items[i - 1], items[j]);
    }
}

/// Seeded permutation of 0..n-1.
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(seed);
    deterministic_shuffle(idx, rng);
    return idx;
}

/// A uniform point on the (l-1)-simplex: normalized unit-exponential draws.
inline std::vector<double> random_simplex(Rng& rng, std::size_t l) {
    std::vector<double> v(l);
    double sum = 0.0;
    for (auto& x : v) {
        x = -std::log(rng.next_unit());
        sum += x;
    }
    for (auto& x : v) x /= sum;
    return v;
}

}  // namespace icl
