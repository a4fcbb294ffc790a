#pragma once

#include <cstdint>
#include <random>

namespace coinnet {

// Seeded pseudo-random source used everywhere in the library.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. The standard distributions are implementation-defined, so the
// integer, uniform and normal mappings below are written out explicitly to
// keep every seeded artifact identical across platforms.
class Rng {
 public:
  // Identifier persisted in checkpoints next to sketch seeds.
  static constexpr std::uint32_t kGeneratorId = 1;  // mt19937_64 + mappings below

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform01();

  // Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Unbiased uniform integer on [0, n), n >= 1 (rejection sampling).
  std::uint64_t uniform_index(std::uint64_t n);

  // Standard normal via Box-Muller; the second variate is cached.
  double normal();

  // +1 or -1 with equal probability.
  int sign() { return (next_u64() >> 63) ? 1 : -1; }

 private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

// SplitMix64 finalizer; derives independent sub-seeds from (seed, stream).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace coinnet
