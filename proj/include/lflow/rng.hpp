#pragma once

#include <cmath>
#include <cstdint>

namespace lflow {

// Purpose-separated random streams derived from one master seed. Keeping the
// streams apart makes every consumer individually replayable: redrawing prior
// samples does not shift the Metropolis uniforms and vice versa.
enum class Stream : std::uint64_t {
  kPrior = 1,        // training batch draws
  kOmegaInit = 2,    // frequency initialisation
  kModelInit = 3,    // coupling-stack conditioner initialisation
  kMetrics = 4,      // fresh samples for per-epoch metrics
  kMhProposal = 5,   // latent draws behind chain proposals
  kMhAccept = 6,     // accept/reject uniforms
  kScratch = 7,      // tests and ad-hoc tooling
};

// Counter-based generator: output i is a hash of (seed, stream, i). The whole
// state is one 64-bit counter, so checkpoints store a single integer per
// stream and replay is exact on any platform.
class Rng {
 public:
  Rng(std::uint64_t seed, Stream stream)
      : base_(derive(seed, static_cast<std::uint64_t>(stream))) {}

  std::uint64_t next_u64() { return mix(base_ + kGolden * ++counter_); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller. Uses exactly two counter increments per
  // variate and keeps no hidden state between calls.
  double gaussian() {
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t c) { counter_ = c; }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;
  static constexpr double kPi = 3.141592653589793238462643383279502884;

  static std::uint64_t mix(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
  }

  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    return mix(seed + kGolden * mix(stream + 0x6a09e667f3bcc909ull));
  }

  std::uint64_t base_;
  std::uint64_t counter_ = 0;
};

}  // namespace lflow
