#pragma once
#include <cmath>
#include <cstdint>

namespace crs {

/// Counter-based pseudorandom generator built on the splitmix64 finalizer.
/// A draw is a pure function of (seed, stream, counter), so sequences are
/// reproducible bit-for-bit across platforms and independent streams can be
/// derived cheaply for sub-tasks (one object, one parameter tensor, ...).
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
        : base_(mix(seed ^ mix(stream + 0x632BE59BD9B4E019ULL))) {}

    /// Independent generator for a named sub-task.
    [[nodiscard]] CounterRng derive(std::uint64_t substream) const {
        CounterRng r(0);
        r.base_ = mix(base_ ^ mix(substream + 0x9E3779B97F4A7C15ULL));
        r.counter_ = 0;
        return r;
    }

    std::uint64_t next_u64() { return mix(base_ + 0x9E3779B97F4A7C15ULL * ++counter_); }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Integer in [0, n), n >= 1.
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller. Always consumes two uniforms.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    static std::uint64_t mix(std::uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

    /// FNV-1a; used to derive parameter-name streams.
    static std::uint64_t hash_name(const char* s) {
        std::uint64_t h = 0xCBF29CE484222325ULL;
        for (; *s; ++s) h = (h ^ static_cast<unsigned char>(*s)) * 0x100000001B3ULL;
        return h;
    }

private:
    std::uint64_t base_ = 0;
    std::uint64_t counter_ = 0;
};

} // namespace crs
