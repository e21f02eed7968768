#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace ezbsde {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Counter-based standard normal: the draw for (seed, path, step, coord) is a pure
/// function of those four integers, so paths do not depend on thread scheduling.
class CounterNormal {
public:
    explicit CounterNormal(std::uint64_t seed) : seed_(splitmix64(seed)) {}

    double operator()(std::uint64_t path, std::uint64_t step, std::uint64_t coord) const {
        std::uint64_t key = splitmix64(seed_ ^ splitmix64(path + 0x632BE59BD9B4E019ULL));
        key = splitmix64(key ^ splitmix64((step << 8) ^ coord));
        const std::uint64_t a = splitmix64(key);
        const std::uint64_t b = splitmix64(a);
        // 53-bit uniforms, u1 in (0, 1]
        const double u1 = (static_cast<double>(a >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::uint64_t seed_;
};

}  // namespace ezbsde
