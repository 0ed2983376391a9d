#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace emlmc {

/// Philox4x32-10 block function (Salmon et al., Random123).
using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

PhiloxCounter philox4x32_10(PhiloxCounter counter, PhiloxKey key) noexcept;

/// Independent experiment purposes share a seed but never a stream.
enum class Domain : std::uint32_t {
  Mlmc = 1,
  Unbiased = 2,
  Fixture = 3,
  Probe = 4,
  Test = 5,
};

/// Identifies one sample's randomness. Every draw is a pure function of
/// (seed, domain, level, replica, attempt) plus the step index and tag
/// given to RandomStream.
struct StreamKey {
  std::uint64_t seed = 0;
  Domain domain = Domain::Mlmc;
  std::uint32_t level = 0;
  std::uint64_t replica = 0;
  std::uint32_t attempt = 0;

  PhiloxKey philox_key() const noexcept;
};

/// Draw tags inside one sample. Distinct tags never collide within a step.
enum class Tag : std::uint32_t {
  SoloNoise = 1,
  SoloSubsample = 2,
  FirstNoise = 3,
  SecondNoise = 4,
  FirstSubsample = 5,
  SecondSubsample = 6,
  CoarseSubsample = 7,
  Truncation = 8,
  Generic = 9,
};

/// Sequential view over the Philox counter space for (key, step, tag).
/// Blocks are consumed in order; constructing the same stream twice yields
/// the same draws.
class RandomStream {
 public:
  RandomStream(const StreamKey& key, std::uint64_t step, Tag tag) noexcept;
  RandomStream(PhiloxKey key, std::uint64_t step, std::uint32_t tag) noexcept;

  std::uint32_t next_u32() noexcept;
  std::uint64_t next_u64() noexcept;

  /// Uniform on (0, 1] with 53 random bits.
  double uniform() noexcept;

  /// Uniform integer on [0, n), exact (Lemire's rejection method).
  std::uint32_t uniform_index(std::uint32_t n) noexcept;

  double normal() noexcept;
  void fill_normal(std::span<double> out) noexcept;

 private:
  void refill() noexcept;

  PhiloxKey key_;
  PhiloxCounter counter_;
  std::array<std::uint32_t, 4> buffer_{};
  int position_ = 4;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

/// SplitMix64 finalizer; used for key derivation.
std::uint64_t mix64(std::uint64_t x) noexcept;

}  // namespace emlmc
