#pragma once

#include "emlmc/coupling.hpp"

#include <cstdint>

namespace emlmc {

/// Streaming central moments up to order four; merge uses the pairwise
/// update of Pebay (2008), so partial aggregates combine in any grouping.
struct Moments {
  std::uint64_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;
  double m3 = 0.0;
  double m4 = 0.0;

  void add(double x) noexcept;
  void merge(const Moments& other) noexcept;

  /// Unbiased sample variance; zero below two samples.
  double variance() const noexcept;
  /// n m4 / m2^2 (non-excess); zero when m2 vanishes.
  double kurtosis() const noexcept;
};

/// Per-level aggregate of DeltaSamples.
struct LevelStats {
  Moments delta;
  Moments fine;
  Moments coarse;
  double total_cost = 0.0;
  std::uint64_t n_failed = 0;

  std::uint64_t n() const noexcept { return delta.n; }
  double mean() const noexcept { return delta.mean; }
  double m2() const noexcept { return delta.m2; }
  double variance() const noexcept { return delta.variance(); }
  double mean_cost() const noexcept {
    return delta.n ? total_cost / static_cast<double>(delta.n) : 0.0;
  }

  void update(const DeltaSample& sample) noexcept;
  void merge(const LevelStats& other) noexcept;
};

LevelStats update(LevelStats stats, const DeltaSample& sample) noexcept;
LevelStats merge(LevelStats a, const LevelStats& b) noexcept;

}  // namespace emlmc
