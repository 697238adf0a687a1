#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "lrnet/tensor.hpp"

namespace lrnet {

/// Counter-based generator (Philox4x32-10). The full state is the triple
/// (seed, stream, counter): every block of output is a pure function of it,
/// so streams are reproducible across runs and can be handed to independent
/// workers without coordination.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t counter = 0) noexcept
      : seed_(seed), stream_(stream), counter_(counter) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }
  std::uint64_t counter() const noexcept { return counter_; }

  /// Independent generator with the same seed on another stream.
  Rng fork(std::uint64_t stream) const noexcept { return Rng(seed_, stream, 0); }

  /// Raw Philox block for (seed, stream, counter), then advances the counter.
  std::array<std::uint32_t, 4> next_block() noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform on the open interval (0, 1).
  double uniform() noexcept;
  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) noexcept;
  double normal() noexcept;

  /// Two uniforms / normals per counter step.
  void fill_uniform(std::span<Real> out) noexcept;
  void fill_normal(std::span<Real> out) noexcept;

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_;
};

/// Philox4x32-10 bijection on a 128-bit counter under a 64-bit key.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key) noexcept;

/// SplitMix64 finalizer, used to derive child seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) noexcept;

Tensor sample_standard_normal(Rng& rng, Shape shape);

}  // namespace lrnet
