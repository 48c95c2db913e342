#pragma once

#include <array>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace gfgl {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Order-sensitive 64-bit mix of a key sequence.
inline std::uint64_t hash_keys(std::initializer_list<std::uint64_t> keys) {
    std::uint64_t h = 0x6A09E667F3BCC908ULL;
    for (std::uint64_t k : keys) {
        std::uint64_t s = h ^ (k + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2));
        h = splitmix64(s);
    }
    return h;
}

/// xoshiro256++ generator. Satisfies UniformRandomBitGenerator, so it can
/// drive <random> distributions as well as the samplers below.
///
/// Parallel work never shares a generator: each unit of work derives its own
/// stream from the master seed and a tuple of indices, which makes results
/// independent of how work is scheduled across threads.
class Rng {
  public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

    /// Independent stream identified by (seed, keys...).
    static Rng stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
        std::uint64_t h = seed;
        for (std::uint64_t k : keys) h = hash_keys({h, k});
        return Rng(h);
    }

    void reseed(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    /// Uniform on the open interval (0, 1).
    double uniform() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

    /// Standard normal (Box-Muller, one output per call).
    double normal();

    /// Gamma(shape, 1) via Marsaglia-Tsang, with the U^{1/shape} boost below 1.
    double standard_gamma(double shape);

    /// Poisson draw by inversion, truncated: returns `cap` whenever the draw
    /// would be >= cap. Exact for every value below cap.
    std::int64_t poisson_capped(double mean, std::int64_t cap);

    std::array<std::uint64_t, 4> state() const { return s_; }

  private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::array<std::uint64_t, 4> s_{};
};

}  // namespace gfgl
