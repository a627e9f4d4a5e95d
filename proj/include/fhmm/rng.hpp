#ifndef FHMM_RNG_HPP
#define FHMM_RNG_HPP

#include <cstdint>

namespace fhmm {

// Seedable 64-bit PRNG (xoshiro256** seeded through splitmix64).
//
// Stream splitting rule: a generator for logical stream `k` under master
// seed `s` is constructed as Rng(split_seed(s, k)).  Streams used by the
// library:
//   simulate():  stream m+1 drives the state path of chain m,
//                stream 0 drives the emission noise (D draws per timestep,
//                row-major in t).
//   training:    stream 1'000'000 + epoch index drives the subchain
//                permutation of that epoch; stream 2'000'000 + i drives
//                initialization of parameter block i.
// All draws are uniforms mapped through the inverse normal CDF when a
// Gaussian variate is needed, so results do not depend on the standard
// library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& si : s_) {
            // splitmix64
            x += 0x9e3779b97f4a7c15ULL;
            std::uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            si = z ^ (z >> 31);
        }
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in (0,1), never exactly 0 or 1
    double next_uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    // uniform in [-a, a]
    double next_symmetric(double a) { return a * (2.0 * next_uniform() - 1.0); }

    double next_normal();  // inverse-CDF, defined in prob_numerics.cpp

    static std::uint64_t split_seed(std::uint64_t master, std::uint64_t stream) {
        std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    static std::uint64_t rotl(std::uint64_t v, int k) {
        return (v << k) | (v >> (64 - k));
    }
    std::uint64_t s_[4];
};

}  // namespace fhmm

#endif
