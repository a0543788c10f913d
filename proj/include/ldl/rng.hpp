#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace ldl {

/// Derive a child seed from a parent seed and a stream name. All randomness
/// in a run flows from one root seed through named sub-streams so that
/// components (split / init / augment / sim) can be varied independently.
std::uint64_t substream(std::uint64_t seed, std::string_view name);
std::uint64_t substream(std::uint64_t seed, std::string_view name, std::uint64_t index);

/// Seeded generator with hand-rolled distributions. std::mt19937_64 output is
/// fully specified by the standard and the derived draws below avoid the
/// implementation-defined std distributions, so sequences are portable.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t bits() { return gen_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    /// Standard normal via Box-Muller (no cached second draw).
    double normal();

    double gamma(double alpha);
    double beta(double a, double b);
    bool bernoulli(double p) { return uniform() < p; }

    /// Uniform integer in [0, n) by rejection; n must be positive.
    std::uint64_t below(std::uint64_t n);

    void shuffle(std::vector<int>& v);

  private:
    std::mt19937_64 gen_;
};

}  // namespace ldl
