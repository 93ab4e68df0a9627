#pragma once

#include <cmath>
#include <cstdint>

namespace casebandit {

/// Deterministic splitmix64 generator with counter-based substreams.
///
/// Every random draw in a run derives from (seed, stream, counter), so two
/// policies evaluated under the same seed face identical queries and reward
/// coin flips regardless of how many draws each consumes itself.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(mix(seed)) {}

    /// Child generator for a named substream.
    Rng fork(uint64_t stream) const { return Rng(mix(state_ ^ mix(stream + 0x632be59bd9b4e019ull))); }

    /// Generator pinned to (seed, stream, step) — the per-step env streams.
    static Rng at(uint64_t seed, uint64_t stream, uint64_t step) {
        return Rng(seed).fork(stream).fork(step);
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; the sine partner is discarded so the
    /// draw count per call is fixed.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

private:
    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t state_;
};

// Stream ids used by environments and the engine.
namespace streams {
constexpr uint64_t kQuery = 1;
constexpr uint64_t kReward = 2;
constexpr uint64_t kPolicy = 3;
constexpr uint64_t kContexts = 4;
constexpr uint64_t kHidden = 5;
constexpr uint64_t kCalibration = 6;
constexpr uint64_t kInit = 7;
} // namespace streams

} // namespace casebandit
