#ifndef DRIFTFORGE_RNG_HPP
#define DRIFTFORGE_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace driftforge {

// splitmix64; used to derive independent sub-seeds from one master seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
    return splitmix64(base ^ splitmix64(salt));
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
    return derive_seed(derive_seed(base, a), b);
}

// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// distribution helpers below are hand-rolled because std:: distributions are
// implementation-defined and would break byte-identical outputs across
// standard libraries.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next() { return gen_(); }

    // [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n); rejection sampling.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next();
        } while (x >= limit);
        return x % n;
    }

    int index(std::size_t n) { return static_cast<int>(below(n)); }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; draws exactly two uniforms per call.
    double normal() {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

    // First k elements of a random permutation of [0, n); k > n falls back to
    // sampling with replacement.
    std::vector<int> sample_indices(std::size_t n, std::size_t k) {
        std::vector<int> out;
        out.reserve(k);
        if (k > n) {
            for (std::size_t i = 0; i < k; ++i) out.push_back(index(n));
            return out;
        }
        std::vector<int> all(n);
        for (std::size_t i = 0; i < n; ++i) all[i] = static_cast<int>(i);
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = i + below(n - i);
            std::swap(all[i], all[j]);
            out.push_back(all[i]);
        }
        return out;
    }

  private:
    std::mt19937_64 gen_;
};

}  // namespace driftforge

#endif  // DRIFTFORGE_RNG_HPP
