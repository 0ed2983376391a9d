#include "emlmc/stats.hpp"

namespace emlmc {

void Moments::add(double x) noexcept {
  Moments single;
  single.n = 1;
  single.mean = x;
  merge(single);
}

void Moments::merge(const Moments& b) noexcept {
  if (b.n == 0) return;
  if (n == 0) {
    *this = b;
    return;
  }
  const double na = static_cast<double>(n);
  const double nb = static_cast<double>(b.n);
  const double total = na + nb;
  const double delta = b.mean - mean;
  const double d_n = delta / total;
  const double d_n2 = d_n * d_n;

  const double new_m4 = m4 + b.m4 +
                        delta * d_n * d_n2 * na * nb * (na * na - na * nb + nb * nb) +
                        6.0 * d_n2 * (na * na * b.m2 + nb * nb * m2) +
                        4.0 * d_n * (na * b.m3 - nb * m3);
  const double new_m3 = m3 + b.m3 + delta * d_n2 * na * nb * (na - nb) +
                        3.0 * d_n * (na * b.m2 - nb * m2);
  const double new_m2 = m2 + b.m2 + delta * d_n * na * nb;

  mean += d_n * nb;
  m2 = new_m2;
  m3 = new_m3;
  m4 = new_m4;
  n += b.n;
}

double Moments::variance() const noexcept {
  if (n < 2) return 0.0;
  const double v = m2 / static_cast<double>(n - 1);
  return v > 0.0 ? v : 0.0;
}

double Moments::kurtosis() const noexcept {
  if (n < 2 || !(m2 > 0.0)) return 0.0;
  return static_cast<double>(n) * m4 / (m2 * m2);
}

void LevelStats::update(const DeltaSample& sample) noexcept {
  delta.add(sample.delta);
  fine.add(sample.fine_g);
  if (sample.coarse_g) coarse.add(*sample.coarse_g);
  total_cost += sample.cost;
}

void LevelStats::merge(const LevelStats& other) noexcept {
  delta.merge(other.delta);
  fine.merge(other.fine);
  coarse.merge(other.coarse);
  total_cost += other.total_cost;
  n_failed += other.n_failed;
}

LevelStats update(LevelStats stats, const DeltaSample& sample) noexcept {
  stats.update(sample);
  return stats;
}

LevelStats merge(LevelStats a, const LevelStats& b) noexcept {
  a.merge(b);
  return a;
}

}  // namespace emlmc
