#pragma once

#include <cstdint>
#include <random>

namespace dcpo {

// Deterministic seed mixing (splitmix64). Used to derive independent
// per-prompt / per-step seed streams from a single run seed.
inline std::uint64_t mix_seed(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    return mix_seed(a ^ mix_seed(b));
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix_seed(mix_seed(a, b), c);
}

// mt19937_64 has a fully specified output sequence; we only add the
// integer->double conversions so results do not depend on the standard
// library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(mix_seed(seed)) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_int(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace dcpo
