#pragma once

#include <cstdint>
#include <cmath>
#include <string>
#include <string_view>

namespace ebd {

// splitmix64, used for seed derivation and hashing.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derives a child seed from (root, tag, counter). All stage-level RNG streams
// are split from one root seed through this.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag, std::uint64_t counter = 0) {
    std::uint64_t s = root;
    for (char c : tag) {
        s ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        splitmix64(s);
    }
    s ^= counter * 0x9e3779b97f4a7c15ULL;
    std::uint64_t t = s;
    return splitmix64(t);
}

// xoshiro256** with a hand-rolled Box-Muller gaussian. The standard library
// distributions are implementation-defined, so they cannot back the
// byte-identical reproducibility contract.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t s = seed;
        for (auto& w : state_) w = splitmix64(s);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) {
        // multiply-shift; bias is negligible for desk-scale n
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
    }

    // standard normal via Box-Muller, cached second variate
    double gaussian() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4]{};
    double cached_ = 0.0;
    bool have_cached_ = false;
};

} // namespace ebd
