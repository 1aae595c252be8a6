#ifndef MIRAGE_RNG_HPP
#define MIRAGE_RNG_HPP

#include <cmath>
#include <cstdint>

namespace mirage {

// SplitMix64 generator. Every random choice in the project flows through this
// class so that corpora, checkpoints and pipelines are bit-reproducible across
// platforms (std::*_distribution is implementation-defined and unusable here).
class Rng {
  public:
    explicit constexpr Rng(std::uint64_t seed) noexcept : state_(seed) {}

    constexpr std::uint64_t next() noexcept {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double next_double() noexcept {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    // Unbiased uniform integer in [0, n). n must be nonzero.
    std::uint64_t next_below(std::uint64_t n) noexcept {
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = next();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Box-Muller. Consumes exactly two uniforms.
    double next_gauss() noexcept {
        double u1 = next_double();
        const double u2 = next_double();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double radius = std::sqrt(-2.0 * std::log(u1));
        return radius * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    bool next_bool(double p_true) noexcept { return next_double() < p_true; }

    // Stateless mix of (key, data); used to derive independent streams.
    static constexpr std::uint64_t mix(std::uint64_t key, std::uint64_t data) noexcept {
        std::uint64_t z = key ^ (data + 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

  private:
    std::uint64_t state_;
};

// Named sub-streams, so that e.g. batch sampling and noise never alias.
namespace stream {
constexpr std::uint64_t kScene = 0x5343454e45ULL;      // "SCENE"
constexpr std::uint64_t kNoise = 0x4e4f495345ULL;      // "NOISE"
constexpr std::uint64_t kBackbone = 0x4241434bULL;     // "BACK"
constexpr std::uint64_t kHead = 0x48454144ULL;         // "HEAD"
constexpr std::uint64_t kArBatch = 0x4152ULL;          // "AR"
constexpr std::uint64_t kUnlearnBatch = 0x554eULL;     // "UN"
constexpr std::uint64_t kBench = 0x42454e4348ULL;      // "BENCH"
constexpr std::uint64_t kQa = 0x5141ULL;               // "QA"
constexpr std::uint64_t kProbe = 0x50524f4245ULL;      // "PROBE"
constexpr std::uint64_t kSample = 0x53414d50ULL;       // "SAMP"
}  // namespace stream

}  // namespace mirage

#endif  // MIRAGE_RNG_HPP
