#include "emlmc/estimator.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

namespace emlmc {
namespace {

SamplerConfig ou_sampler(std::uint64_t seed = 1, unsigned workers = 1) {
  SamplerConfig config;
  config.level = LevelConfig{.h0 = 0.5, .schedule = TheoreticalRho{0.4, 2.0}};
  config.x0 = State::Zero(1);
  config.seed = seed;
  config.workers = workers;
  return config;
}

LevelStats synthetic_level(double mean, double variance, std::uint64_t n = 1000) {
  LevelStats s;
  s.delta.n = n;
  s.delta.mean = mean;
  s.delta.m2 = variance * static_cast<double>(n - 1);
  s.total_cost = static_cast<double>(n);
  return s;
}

// Rejects a model state whose first coordinate exceeds a threshold.
class FragileOu final : public GradientModel {
 public:
  explicit FragileOu(double threshold) : threshold_(threshold) {}
  Eigen::Index dim() const noexcept override { return 1; }
  Vector grad_full(const State& x) const override {
    if (x[0] > threshold_) return Vector::Constant(1, std::nan(""));
    return -0.4 * x;
  }
  double strong_convexity() const noexcept override { return 0.4; }
  std::optional<double> lipschitz() const noexcept override { return 0.4; }

 private:
  double threshold_;
};

TEST(AllocateSamples, SingleLevel) {
  const LevelCost level{1.0, 1.0};
  EXPECT_EQ(allocate_samples({&level, 1}, 0.1), std::vector<std::uint64_t>{200});
}

TEST(AllocateSamples, TwoLevels) {
  const std::vector<LevelCost> levels{{1.0, 1.0}, {0.25, 2.0}};
  EXPECT_EQ(allocate_samples(levels, 0.1), (std::vector<std::uint64_t>{342, 121}));
}

TEST(AllocateSamples, HalvingEpsQuadruples) {
  const std::vector<LevelCost> levels{{2.0, 3.0}, {0.3, 7.0}, {0.05, 20.0}};
  const auto a = allocate_samples(levels, 0.1);
  const auto b = allocate_samples(levels, 0.05);
  for (std::size_t l = 0; l < levels.size(); ++l) {
    EXPECT_LE(b[l], 4 * a[l]);
    EXPECT_GE(b[l], 4 * a[l] - 3);
  }
}

TEST(AllocateSamples, ZeroVarianceUsesMinimum) {
  const std::vector<LevelCost> levels{{0.0, 1.0}, {0.0, 2.0}};
  EXPECT_EQ(allocate_samples(levels, 0.1, 1000), (std::vector<std::uint64_t>{1000, 1000}));
  EXPECT_THROW(allocate_samples(levels, 0.0), std::invalid_argument);
}

TEST(AllocateSamples, MeetsVarianceBudget) {
  test::Gen gen(51);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<LevelCost> levels(static_cast<std::size_t>(gen.integer(1, 8)));
    for (auto& l : levels) l = {std::exp(gen.uniform(-10, 2)), std::exp(gen.uniform(0, 10))};
    const double eps = std::exp(gen.uniform(-5, -1));
    const auto n = allocate_samples(levels, eps);
    double variance = 0;
    for (std::size_t l = 0; l < levels.size(); ++l) {
      variance += levels[l].variance / static_cast<double>(n[l]);
    }
    EXPECT_LE(variance, eps * eps / 2 * (1 + 1e-9));
  }
}

TEST(AllocateSamples, LocallyOptimal) {
  // Perturb one N_l by +-20% and rescale the rest to keep the same total
  // variance; the cost never drops more than 1% below the allocation.
  test::Gen gen(52);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<LevelCost> levels(static_cast<std::size_t>(gen.integer(2, 6)));
    for (auto& l : levels) l = {std::exp(gen.uniform(-8, 1)), std::exp(gen.uniform(0, 8))};
    const auto n = allocate_samples(levels, 0.01);
    std::vector<double> nd(n.begin(), n.end());
    double variance = 0, cost = 0;
    for (std::size_t l = 0; l < levels.size(); ++l) {
      variance += levels[l].variance / nd[l];
      cost += levels[l].cost * nd[l];
    }
    for (std::size_t j = 0; j < levels.size(); ++j) {
      for (double factor : {0.8, 1.2}) {
        const double vj = levels[j].variance / (factor * nd[j]);
        double rest = 0;
        for (std::size_t l = 0; l < levels.size(); ++l) {
          if (l != j) rest += levels[l].variance / nd[l];
        }
        if (variance - vj <= 0) continue;
        const double scale = rest / (variance - vj);
        double perturbed = levels[j].cost * factor * nd[j];
        for (std::size_t l = 0; l < levels.size(); ++l) {
          if (l != j) perturbed += levels[l].cost * nd[l] * scale;
        }
        EXPECT_GE(perturbed, 0.99 * cost);
      }
    }
  }
}

TEST(FitRates, ExactSyntheticSlopes) {
  std::vector<LevelStats> levels;
  for (int l = 0; l <= 5; ++l) {
    levels.push_back(synthetic_level(std::pow(4.0, -l), std::pow(2.0, -l)));
  }
  const auto fit = fit_rates(levels);
  EXPECT_NEAR(fit.alpha_hat, 2.0, 1e-12);
  EXPECT_NEAR(fit.beta_hat, 1.0, 1e-12);
  EXPECT_NEAR(fit.r2, 1.0, 1e-12);
  EXPECT_TRUE(fit.warnings.empty());
}

TEST(FitRates, ZeroVarianceLevelExcludedWithWarning) {
  std::vector<LevelStats> levels;
  for (int l = 0; l <= 5; ++l) {
    levels.push_back(synthetic_level(std::pow(2.0, -l), l == 3 ? 0.0 : std::pow(4.0, -l)));
  }
  const auto fit = fit_rates(levels);
  EXPECT_NEAR(fit.beta_hat, 2.0, 1e-12);
  ASSERT_EQ(fit.warnings.size(), 1u);
}

TEST(FitRates, NeedsThreeLevels) {
  std::vector<LevelStats> levels{synthetic_level(1, 1), synthetic_level(0.5, 0.25),
                                 synthetic_level(0.25, 0.0625)};
  EXPECT_THROW(fit_rates(levels), std::invalid_argument);
  levels.push_back(synthetic_level(0.125, 0.01, 50));  // too few samples
  EXPECT_THROW(fit_rates(levels), std::invalid_argument);
}

TEST(SampleLevel, IndependentOfWorkerCount) {
  const OuModel ou(0.4, 1);
  const auto plan = make_level_plan(2, ou_sampler().level);
  const auto obs = square_norm_observable();
  const auto base = sample_level(ou_sampler(1, 1), plan, ou, obs, 0, 1500);
  for (unsigned workers : {2u, 8u}) {
    const auto other = sample_level(ou_sampler(1, workers), plan, ou, obs, 0, 1500);
    EXPECT_EQ(other.n(), base.n());
    EXPECT_EQ(other.mean(), base.mean());
    EXPECT_EQ(other.m2(), base.m2());
    EXPECT_EQ(other.delta.m4, base.delta.m4);
    EXPECT_EQ(other.total_cost, base.total_cost);
  }
}

TEST(SampleLevel, ReplicaRangesCompose) {
  const OuModel ou(0.4, 1);
  const auto plan = make_level_plan(1, ou_sampler().level);
  const auto obs = square_norm_observable();
  const auto whole = sample_level(ou_sampler(), plan, ou, obs, 0, 1000);
  auto parts = sample_level(ou_sampler(), plan, ou, obs, 0, 400);
  parts.merge(sample_level(ou_sampler(), plan, ou, obs, 400, 600));
  EXPECT_EQ(parts.n(), whole.n());
  EXPECT_NEAR(parts.mean(), whole.mean(), 1e-14);
  EXPECT_NEAR(parts.m2(), whole.m2(), 1e-12 * whole.m2());
}

TEST(SampleLevel, FailedSamplesAreRedrawnAndCounted) {
  const FragileOu model(2.5);
  auto config = ou_sampler();
  config.max_failure_rate = 0.5;
  const auto plan = make_level_plan(0, config.level);
  const auto stats = sample_level(config, plan, model, square_norm_observable(), 0, 2000);
  EXPECT_EQ(stats.n(), 2000u);
  EXPECT_GT(stats.n_failed, 0u);
}

TEST(RunMlmc, AbortsWhenFailuresExceedThreshold) {
  const FragileOu model(2.5);
  MlmcConfig config{.sampler = ou_sampler()};
  config.sampler.max_failure_rate = 0.001;
  EXPECT_THROW(run_mlmc(config, model, square_norm_observable(), 0.1), NumericalError);
}

TEST(RunMlmc, ConstantObservable) {
  const OuModel ou(0.4, 1);
  const MlmcConfig config{.sampler = ou_sampler()};
  const auto est = run_mlmc(config, ou, constant_observable(1.5), 0.05);
  EXPECT_EQ(est.value, 1.5);
  EXPECT_EQ(est.max_level, 2);
  EXPECT_TRUE(est.converged);
  EXPECT_EQ(est.bias_estimate, 0.0);
}

TEST(RunMlmc, OuRecoversInvariantVariance) {
  const OuModel ou(0.4, 1);
  const MlmcConfig config{.sampler = ou_sampler(7)};
  const auto est = run_mlmc(config, ou, square_norm_observable(), 0.05);
  EXPECT_TRUE(est.converged);
  EXPECT_NEAR(est.value, 2.5, 3 * 0.05);
  EXPECT_LE(est.variance_estimate, 0.05 * 0.05 / 2 * 1.0001);
  EXPECT_LE(est.bias_estimate, 0.05 / std::sqrt(2.0));
  double sum = 0, cost = 0;
  for (const auto& l : est.levels) {
    sum += l.mean();
    cost += l.total_cost;
  }
  EXPECT_EQ(est.value, sum);
  EXPECT_EQ(est.total_cost, cost);
}

TEST(RunMlmc, HitsMaxLevelFlag) {
  const OuModel ou(0.4, 1);
  MlmcConfig config{.sampler = ou_sampler(), .warmup = 200, .max_level = 2};
  const auto est = run_mlmc(config, ou, square_norm_observable(), 0.001);
  EXPECT_TRUE(est.hit_max_level);
  EXPECT_FALSE(est.converged);
  EXPECT_EQ(est.max_level, 2);
}

TEST(RunMlmc, CancelFlagStopsEarly) {
  const OuModel ou(0.4, 1);
  std::atomic<bool> cancel{true};
  MlmcConfig config{.sampler = ou_sampler()};
  config.sampler.cancel = &cancel;
  const auto est = run_mlmc(config, ou, square_norm_observable(), 0.01);
  EXPECT_TRUE(est.cancelled);
}

TEST(Telescoping, MatchesSingleLevelBruteForce) {
  // Sum of level means up to L estimates E g(X) for Euler at h_L over T_L.
  const double kappa = 0.4;
  const OuModel ou(kappa, 1);
  const auto sampler = ou_sampler(3);
  constexpr int top = 2;
  double mlmc = 0, mlmc_var = 0;
  for (int l = 0; l <= top; ++l) {
    const auto plan = make_level_plan(l, sampler.level);
    const auto s = sample_level(sampler, plan, ou, square_norm_observable(), 0, 20000);
    mlmc += s.mean();
    mlmc_var += s.variance() / static_cast<double>(s.n());
  }
  const auto plan = make_level_plan(top, sampler.level);
  const long steps = std::lround(plan.t_end / plan.h_fine);
  std::mt19937_64 engine(99);
  std::normal_distribution<double> normal;
  Moments brute;
  for (int p = 0; p < 100000; ++p) {
    double x = 0;
    for (long k = 0; k < steps; ++k) {
      x += -kappa * x * plan.h_fine + std::sqrt(2 * plan.h_fine) * normal(engine);
    }
    brute.add(x * x);
  }
  const double z = (mlmc - brute.mean) /
                   std::sqrt(mlmc_var + brute.variance() / static_cast<double>(brute.n));
  // Two-sided 1e-3 critical value.
  EXPECT_LT(std::abs(z), 3.29);
}

TEST(RandomizationLaw, ConstraintAndWeights) {
  const double r = std::pow(2.0, -1.5);
  const RandomizationLaw law(r, 2.0);
  EXPECT_NEAR(1.0 / law.survival(2), 8.0, 1e-12);
  EXPECT_EQ(law.survival(0), 1.0);
  EXPECT_THROW(RandomizationLaw(0.5, 2.0), std::invalid_argument);
  EXPECT_THROW(RandomizationLaw(0.25, 2.0), std::invalid_argument);
  EXPECT_THROW(RandomizationLaw(0.2, 2.0), std::invalid_argument);
  EXPECT_NO_THROW(RandomizationLaw(0.3, 2.0));
}

TEST(RandomizationLaw, EmpiricalSurvival) {
  const RandomizationLaw law(std::pow(2.0, -1.5), 2.0);
  RandomStream stream(StreamKey{.seed = 1, .domain = Domain::Test}, 0, Tag::Truncation);
  constexpr int n = 200000;
  std::vector<int> at_least(8, 0);
  for (int i = 0; i < n; ++i) {
    const int j = law.sample(stream, 30);
    ASSERT_GE(j, 0);
    for (int k = 0; k <= std::min(j, 7); ++k) ++at_least[k];
  }
  for (int k = 0; k < 8; ++k) {
    const double p = law.survival(k);
    EXPECT_NEAR(at_least[k] / static_cast<double>(n), p, 5 * std::sqrt(p * (1 - p) / n) + 1e-12);
  }
  RandomStream capped(StreamKey{.seed = 2, .domain = Domain::Test}, 0, Tag::Truncation);
  for (int i = 0; i < 1000; ++i) EXPECT_LE(law.sample(capped, 1), 1);
}

TEST(RunUnbiased, CapAtZeroGivesLevelZeroMean) {
  const OuModel ou(0.4, 1);
  const RandomizationLaw law(std::pow(2.0, -1.5), 2.0);
  UnbiasedConfig config{.sampler = ou_sampler(), .max_level = 0};
  const auto result = run_unbiased(config, ou, square_norm_observable(), law, 3000);
  ASSERT_EQ(result.levels.size(), 1u);
  EXPECT_EQ(result.deepest_level, 0);
  EXPECT_NEAR(result.mean, result.levels[0].mean(), 1e-12);
  EXPECT_EQ(result.replicas, 3000u);
}

TEST(RunUnbiased, DeterministicAndCostConsistent) {
  const OuModel ou(0.4, 1);
  const RandomizationLaw law(std::pow(2.0, -1.5), 2.0);
  const UnbiasedConfig one{.sampler = ou_sampler(4, 1)};
  const UnbiasedConfig many{.sampler = ou_sampler(4, 8)};
  const auto a = run_unbiased(one, ou, square_norm_observable(), law, 5000);
  const auto b = run_unbiased(many, ou, square_norm_observable(), law, 5000);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.variance, b.variance);
  EXPECT_EQ(a.mean_cost, b.mean_cost);
  const double expected = a.expected_cost(law);
  EXPECT_GT(a.mean_cost, expected / 2);
  EXPECT_LT(a.mean_cost, expected * 2);
}

}  // namespace
}  // namespace emlmc
