#include "lrnet/rng.hpp"

#include <cmath>
#include <numbers>

namespace lrnet {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(product >> 32);
  lo = static_cast<std::uint32_t>(product);
}

// 53 random bits mapped to the midpoint grid of (0, 1).
inline double to_open_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32 | lo) >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

inline void box_muller(double u1, double u2, double& z0, double& z1) {
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double phase = 2.0 * std::numbers::pi * u2;
  z0 = r * std::cos(phase);
  z1 = r * std::sin(phase);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                           std::array<std::uint32_t, 2> key) noexcept {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kPhiloxW0;
      key[1] += kPhiloxW1;
    }
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::array<std::uint32_t, 4> Rng::next_block() noexcept {
  const std::array<std::uint32_t, 4> ctr = {
      static_cast<std::uint32_t>(counter_), static_cast<std::uint32_t>(counter_ >> 32),
      static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
  const std::array<std::uint32_t, 2> key = {static_cast<std::uint32_t>(seed_),
                                            static_cast<std::uint32_t>(seed_ >> 32)};
  ++counter_;
  return philox4x32_10(ctr, key);
}

std::uint64_t Rng::next_u64() noexcept {
  const auto block = next_block();
  return static_cast<std::uint64_t>(block[0]) << 32 | block[1];
}

double Rng::uniform() noexcept {
  const auto block = next_block();
  return to_open_unit(block[0], block[1]);
}

std::uint64_t Rng::uniform_int(std::uint64_t n) noexcept {
  if (n <= 1) return 0;
  // Rejection sampling keeps the result exactly uniform.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  for (;;) {
    const std::uint64_t x = next_u64();
    if (x < limit) return x % n;
  }
}

double Rng::normal() noexcept {
  const auto block = next_block();
  double z0, z1;
  box_muller(to_open_unit(block[0], block[1]), to_open_unit(block[2], block[3]), z0, z1);
  return z0;
}

void Rng::fill_uniform(std::span<Real> out) noexcept {
  std::size_t i = 0;
  for (; i + 1 < out.size(); i += 2) {
    const auto block = next_block();
    out[i] = static_cast<Real>(to_open_unit(block[0], block[1]));
    out[i + 1] = static_cast<Real>(to_open_unit(block[2], block[3]));
  }
  if (i < out.size()) out[i] = static_cast<Real>(uniform());
}

void Rng::fill_normal(std::span<Real> out) noexcept {
  std::size_t i = 0;
  for (; i + 1 < out.size(); i += 2) {
    const auto block = next_block();
    double z0, z1;
    box_muller(to_open_unit(block[0], block[1]), to_open_unit(block[2], block[3]), z0, z1);
    out[i] = static_cast<Real>(z0);
    out[i + 1] = static_cast<Real>(z1);
  }
  if (i < out.size()) out[i] = static_cast<Real>(normal());
}

Tensor sample_standard_normal(Rng& rng, Shape shape) {
  Tensor out(std::move(shape));
  rng.fill_normal(out.data());
  return out;
}

}  // namespace lrnet
