// rng.hpp - deterministic keyed random streams (splitmix64 based).
//
// Every stochastic component draws from a stream derived from (seed, key...).
// Streams are independent of thread scheduling: a worker owns the stream for
// its voxel/slice/volume, so results are bit-identical for any thread count.
#pragma once

#include <cmath>
#include <cstdint>

namespace ivim {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(mix(seed + GOLDEN)) {}

    // Derive an independent stream from a seed and up to four stream keys.
    static Rng keyed(std::uint64_t seed, std::uint64_t k0, std::uint64_t k1 = 0,
                     std::uint64_t k2 = 0, std::uint64_t k3 = 0) {
        std::uint64_t s = mix(seed + GOLDEN);
        s = mix(s ^ mix(k0 + GOLDEN));
        s = mix(s ^ mix(k1 + 2 * GOLDEN));
        s = mix(s ^ mix(k2 + 3 * GOLDEN));
        s = mix(s ^ mix(k3 + 4 * GOLDEN));
        Rng r(0);
        r.state_ = s;
        r.has_spare_ = false;
        return r;
    }

    std::uint64_t next_u64() {
        state_ += GOLDEN;
        return mix(state_);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1]; safe for log().
    double uniform_pos() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; one spare cached per stream.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_pos();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // splitmix64 finalizer; also usable as a standalone hash.
    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }

private:
    static constexpr std::uint64_t GOLDEN = 0x9E3779B97F4A7C15ull;
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Stream tags keeping keyed sub-streams disjoint across generator kinds.
namespace rng_tag {
constexpr std::uint64_t texture = 0x7458;
constexpr std::uint64_t motion = 0x6D6F;
constexpr std::uint64_t interscan = 0x6973;
constexpr std::uint64_t noise = 0x6E6F;
constexpr std::uint64_t chain = 0x6368;
constexpr std::uint64_t gibbs = 0x6762;
constexpr std::uint64_t bench = 0x6265;
} // namespace rng_tag

} // namespace ivim
