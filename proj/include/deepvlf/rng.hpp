#pragma once

#include <cmath>
#include <cstdint>

namespace deepvlf::rng {

// SplitMix64 finalizer. Bijective on 64-bit words.
inline uint64_t mix64(uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline uint64_t combine(uint64_t a, uint64_t b) {
    return mix64(a ^ (mix64(b) + 0x9E3779B97F4A7C15ULL));
}

// Counter-mode random stream: sample i is a pure function of (seed, id, i),
// so any slice of any stream can be regenerated independently of evaluation
// order. Identical (seed, id) always reproduces the identical sequence.
class Stream {
  public:
    Stream() = default;
    Stream(uint64_t seed, uint64_t id) : key_(combine(seed, id)) {}

    double uniform(uint64_t i) const {
        // 53-bit mantissa in (0, 1]; never 0 so it is safe under log().
        uint64_t r = mix64(key_ + i * 0x9E3779B97F4A7C15ULL);
        return static_cast<double>((r >> 11) + 1) * 0x1.0p-53;
    }

    // Box-Muller, one Gaussian per counter value.
    double gaussian(uint64_t i) const {
        double u1 = uniform(2 * i);
        double u2 = uniform(2 * i + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    // Uniform integer in [0, n).
    uint64_t pick(uint64_t i, uint64_t n) const {
        uint64_t r = mix64(key_ + i * 0x9E3779B97F4A7C15ULL);
        return r % n;
    }

    uint64_t key() const { return key_; }

  private:
    uint64_t key_ = 0;
};

// Stream-id namespace tags. Streams are keyed as (seed, tag ⊕ context) so
// sessions, rounds, and directions never share counters.
enum class Dir : uint32_t { forward = 0, feedback = 1, message = 2, aux = 3 };

inline uint64_t session_stream_id(uint64_t session, uint32_t round, Dir dir) {
    return combine(session, (uint64_t(round) << 8) | uint64_t(dir));
}

}  // namespace deepvlf::rng
