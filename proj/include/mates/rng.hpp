#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace mates {

// Self-contained 64-bit generator (splitmix64). Used for every random draw in
// the project so that results do not depend on standard-library distribution
// internals.
struct Rng {
    std::uint64_t state;

    explicit Rng(std::uint64_t seed) : state(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 bits of precision.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller; one value per call, pair cached.
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Derives an independent stream seed from a base seed and a purpose tag
// (plus an optional index), so that unrelated draws never share a stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t index = 0) {
    Rng r(base ^ (tag * 0xA24BAED4963EE407ULL) ^ (index * 0x9FB21C651E98DF25ULL));
    return r.next_u64();
}

// Tags for the seed streams used across the pipeline.
namespace seed_tag {
inline constexpr std::uint64_t corpus_clean = 1;
inline constexpr std::uint64_t corpus_noise = 2;
inline constexpr std::uint64_t corpus_shuffle = 3;
inline constexpr std::uint64_t corpus_assign = 4;
inline constexpr std::uint64_t model_init = 5;
inline constexpr std::uint64_t warmup_select = 6;
inline constexpr std::uint64_t stage_select = 7;
inline constexpr std::uint64_t stage_batch = 8;
inline constexpr std::uint64_t probe_budget = 9;
inline constexpr std::uint64_t fit_split = 10;
inline constexpr std::uint64_t fit_minibatch = 11;
inline constexpr std::uint64_t fit_init = 12;
inline constexpr std::uint64_t ngram_select = 13;
inline constexpr std::uint64_t stage_fit = 14;
}  // namespace seed_tag

}  // namespace mates
