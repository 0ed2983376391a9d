#pragma once

#include "emlmc/coupling.hpp"
#include "emlmc/executor.hpp"
#include "emlmc/stats.hpp"

#include <atomic>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace emlmc {

struct LevelCost {
  double variance = 0.0;
  double cost = 1.0;
};

/// N_l = ceil(2 eps^-2 sqrt(V_l / C_l) sum_k sqrt(V_k C_k)), which meets
/// sum_l V_l / N_l <= eps^2 / 2 at minimal cost. All-zero variances yield
/// `min_samples` everywhere.
std::vector<std::uint64_t> allocate_samples(std::span<const LevelCost> levels,
                                            double eps,
                                            std::uint64_t min_samples = 1000);

/// Sample-generation settings shared by the MLMC and unbiased estimators.
struct SamplerConfig {
  LevelConfig level;
  State x0;
  std::uint64_t seed = 1;
  unsigned workers = 1;
  /// Abort once failed samples exceed this fraction at one level.
  double max_failure_rate = 0.01;
  /// Checked between blocks; a set flag stops sampling early.
  const std::atomic<bool>* cancel = nullptr;
};

/// Draws replicas [first, first + count) of level `level` and returns
/// their aggregate. Failed samples are redrawn with a fresh attempt index.
LevelStats sample_level(const SamplerConfig& config, const LevelPlan& plan,
                        const GradientModel& model, const Observable& observable,
                        std::uint64_t first, std::uint64_t count,
                        Domain domain = Domain::Mlmc);

struct RateFit {
  double alpha_hat = 0.0;
  double beta_hat = 0.0;
  /// Coefficient of determination of the variance fit.
  double r2 = 0.0;
  double r2_alpha = 0.0;
  std::vector<std::string> warnings;
};

/// Least-squares slopes of log2|mean_l| and log2 V_l against l over l >= 1.
/// Levels with zero variance (or zero mean, for alpha) are skipped with a
/// warning. Needs at least three usable levels with n >= 100.
RateFit fit_rates(std::span<const LevelStats> levels);

struct MlmcConfig {
  SamplerConfig sampler;
  std::uint64_t warmup = 1000;
  int initial_max_level = 2;
  int max_level = 12;
  /// Weak rate for the bias estimate; empty means fit from the levels.
  std::optional<double> alpha = 1.0;
};

struct MlmcEstimate {
  double value = 0.0;
  std::vector<LevelStats> levels;
  std::vector<LevelPlan> plans;
  int max_level = 0;
  double eps = 0.0;
  double total_cost = 0.0;
  double bias_estimate = 0.0;
  /// sum_l V_l / N_l.
  double variance_estimate = 0.0;
  double alpha_used = 0.0;
  std::optional<RateFit> rates;
  bool converged = false;
  bool hit_max_level = false;
  bool cancelled = false;
};

/// Adaptive multilevel estimator for target RMSE eps: variance budget
/// eps^2/2, bias budget eps/sqrt(2).
MlmcEstimate run_mlmc(const MlmcConfig& config, const GradientModel& model,
                      const Observable& observable, double eps);

/// Geometric truncation law P(J >= j) = r^j.
class RandomizationLaw {
 public:
  /// Enforces 2^-beta < r < 2^-gamma (finite variance and finite cost).
  RandomizationLaw(double ratio, double beta, double gamma = 1.0);

  double ratio() const noexcept { return ratio_; }
  double survival(int j) const noexcept;
  int sample(RandomStream& stream, int max_level) const noexcept;

 private:
  double ratio_;
};

struct UnbiasedConfig {
  SamplerConfig sampler;
  /// J is clamped here; P(J > cap) = r^(cap+1) is negligible by default.
  int max_level = 30;
};

struct UnbiasedResult {
  double mean = 0.0;
  double variance = 0.0;
  double standard_error = 0.0;
  double mean_cost = 0.0;
  std::uint64_t replicas = 0;
  int deepest_level = 0;
  /// Level corrections grouped by level, over replicas that reached it.
  std::vector<LevelStats> levels;

  /// sum_j c_j P(J >= j) with measured per-level costs c_j.
  double expected_cost(const RandomizationLaw& law) const;
};

/// Z = sum_{j<=J} Delta_j / P(J >= j), one independent J per replica.
UnbiasedResult run_unbiased(const UnbiasedConfig& config,
                            const GradientModel& model,
                            const Observable& observable,
                            const RandomizationLaw& law,
                            std::uint64_t n_replicas);

}  // namespace emlmc
