#pragma once

#include "sdistill/common.hpp"

#include <cmath>
#include <cstdint>

namespace sdistill {

// Counter-based deterministic RNG. Every consumer derives a fresh generator
// from (seed, stream, index), so draws depend only on those three values and
// never on call order. Gaussians come from Box-Muller on top of the uniform
// bits, which keeps sequences identical across standard libraries.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // Warm up so nearby seeds decorrelate.
        splitmix64(state_);
        splitmix64(state_);
    }

    static Rng from(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
        std::uint64_t s = seed;
        std::uint64_t a = splitmix64(s) ^ (stream * 0xD6E8FEB86659FD93ULL);
        std::uint64_t b = splitmix64(a) ^ (index * 0xCA5A826395121157ULL);
        return Rng(splitmix64(b));
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1), 53-bit resolution.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi], inclusive.
    int next_int(int lo, int hi) {
        require(lo <= hi, "next_int: empty range");
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    double next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 in (0,1] so the log is finite.
        const double u1 = 1.0 - next_unit();
        const double u2 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    ArrayXd gaussian_vector(Eigen::Index n) {
        ArrayXd out(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            out[i] = next_gaussian();
        }
        return out;
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace sdistill
