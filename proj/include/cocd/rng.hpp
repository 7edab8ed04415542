#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

namespace cocd {

// Counter-based deterministic generator (splitmix64). Streams are derived by
// hashing (seed, stream ids), so draws are reproducible and independent of
// call interleaving elsewhere in a run.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1) with 53-bit resolution
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    double rademacher() { return (next() & 1ULL) ? 1.0 : -1.0; }

    // Box-Muller; avoids log(0) by mapping the zero draw to the smallest
    // representable uniform.
    std::pair<double, double> gaussian_pair() {
        double u1 = uniform01();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        return {r * std::cos(a), r * std::sin(a)};
    }

private:
    std::uint64_t state_;
};

// Hash-combine for deriving independent substreams from (seed, ids...).
inline std::uint64_t substream(std::uint64_t seed, std::uint64_t a,
                               std::uint64_t b = 0, std::uint64_t c = 0) {
    SplitMix64 h(seed ^ (a * 0xd2b74407b1ce6e93ULL) ^ (b * 0xca5a826395121157ULL) ^
                 (c * 0x9e6c63d0876a9a63ULL));
    return h.next();
}

}  // namespace cocd
