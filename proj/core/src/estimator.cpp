#include "emlmc/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace emlmc {

namespace {

constexpr std::uint64_t kBlockSize = 256;
constexpr std::uint32_t kMaxAttempts = 1000;
constexpr std::uint32_t kTruncationLevel = 0xFFFFFFFFu;

bool cancelled(const std::atomic<bool>* flag) {
  return flag && flag->load(std::memory_order_relaxed);
}

void check_failure_rate(const LevelStats& stats, double max_rate, int level) {
  const double attempted =
      static_cast<double>(stats.n()) + static_cast<double>(stats.n_failed);
  if (static_cast<double>(stats.n_failed) > max_rate * attempted) {
    throw NumericalError("level " + std::to_string(level) + ": " +
                         std::to_string(stats.n_failed) + " of " +
                         std::to_string(static_cast<std::uint64_t>(attempted)) +
                         " samples failed");
  }
}

// Delta sample with retries on integrator failure.
DeltaSample draw_with_retry(const LevelPlan& plan, const GradientModel& model,
                            const Observable& observable, const State& x0,
                            StreamKey key, std::uint64_t& n_failed) {
  for (key.attempt = 0; key.attempt < kMaxAttempts; ++key.attempt) {
    try {
      return simulate_delta(plan, model, observable, x0, key);
    } catch (const NumericalError&) {
      ++n_failed;
    }
  }
  throw NumericalError("sample failed " + std::to_string(kMaxAttempts) +
                       " consecutive attempts");
}

// Least-squares slope and R^2 of y against x.
std::pair<double, double> linear_fit(const std::vector<double>& x,
                                     const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  const double slope = sxy / sxx;
  const double r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return {slope, r2};
}

}  // namespace

std::vector<std::uint64_t> allocate_samples(std::span<const LevelCost> levels,
                                            double eps,
                                            std::uint64_t min_samples) {
  if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
  double sum = 0.0;
  for (const auto& level : levels) {
    if (!(level.variance >= 0.0)) {
      throw std::invalid_argument("level variance must be nonnegative");
    }
    if (!(level.cost > 0.0)) throw std::invalid_argument("level cost must be positive");
    sum += std::sqrt(level.variance * level.cost);
  }
  std::vector<std::uint64_t> n(levels.size(), min_samples);
  if (sum == 0.0) return n;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const double exact = 2.0 / (eps * eps) *
                         std::sqrt(levels[l].variance / levels[l].cost) * sum;
    // Shave rounding noise so exact integers are not bumped up by one.
    n[l] = static_cast<std::uint64_t>(std::ceil(exact * (1.0 - 1e-12)));
  }
  return n;
}

LevelStats sample_level(const SamplerConfig& config, const LevelPlan& plan,
                        const GradientModel& model, const Observable& observable,
                        std::uint64_t first, std::uint64_t count, Domain domain) {
  const std::uint64_t n_blocks = (count + kBlockSize - 1) / kBlockSize;
  std::vector<LevelStats> blocks(n_blocks);
  Executor executor(config.workers);
  executor.for_each_index(n_blocks, [&](std::size_t b) {
    if (cancelled(config.cancel)) return;
    LevelStats& stats = blocks[b];
    const std::uint64_t begin = first + b * kBlockSize;
    const std::uint64_t end = std::min(first + count, begin + kBlockSize);
    for (std::uint64_t replica = begin; replica < end; ++replica) {
      const StreamKey key{.seed = config.seed,
                          .domain = domain,
                          .level = static_cast<std::uint32_t>(plan.level),
                          .replica = replica};
      stats.update(draw_with_retry(plan, model, observable, config.x0, key,
                                   stats.n_failed));
    }
  });
  LevelStats total;
  for (const auto& block : blocks) total.merge(block);
  return total;
}

RateFit fit_rates(std::span<const LevelStats> levels) {
  RateFit fit;
  std::vector<double> lv, v, lm, m;
  int usable = 0;
  for (std::size_t l = 1; l < levels.size(); ++l) {
    const auto& stats = levels[l];
    if (stats.n() < 100) continue;
    ++usable;
    const double var = stats.variance();
    if (var > 0.0) {
      lv.push_back(static_cast<double>(l));
      v.push_back(std::log2(var));
    } else {
      fit.warnings.push_back("level " + std::to_string(l) +
                             " has zero variance; excluded from beta fit");
    }
    const double mean = std::abs(stats.mean());
    if (mean > 0.0) {
      lm.push_back(static_cast<double>(l));
      m.push_back(std::log2(mean));
    } else {
      fit.warnings.push_back("level " + std::to_string(l) +
                             " has zero mean; excluded from alpha fit");
    }
  }
  if (usable < 3) {
    throw std::invalid_argument("rate fit needs at least three levels l >= 1 "
                                "with n >= 100");
  }
  if (lv.size() >= 2) {
    const auto [slope, r2] = linear_fit(lv, v);
    fit.beta_hat = -slope;
    fit.r2 = r2;
  } else {
    fit.beta_hat = std::numeric_limits<double>::quiet_NaN();
  }
  if (lm.size() >= 2) {
    const auto [slope, r2] = linear_fit(lm, m);
    fit.alpha_hat = -slope;
    fit.r2_alpha = r2;
  } else {
    fit.alpha_hat = std::numeric_limits<double>::quiet_NaN();
  }
  return fit;
}

MlmcEstimate run_mlmc(const MlmcConfig& config, const GradientModel& model,
                      const Observable& observable, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("eps must be positive");
  if (config.initial_max_level < 0 ||
      config.max_level < config.initial_max_level) {
    throw std::invalid_argument("invalid level bounds");
  }
  config.sampler.level.scheme.validate(model);
  model.check_dim(config.sampler.x0);

  MlmcEstimate est;
  est.eps = eps;
  auto add_level = [&] {
    const int l = static_cast<int>(est.levels.size());
    est.plans.push_back(make_level_plan(l, config.sampler.level));
    est.levels.emplace_back();
  };
  auto draw = [&](std::size_t l, std::uint64_t count) {
    LevelStats fresh = sample_level(config.sampler, est.plans[l], model,
                                    observable, est.levels[l].n(), count);
    est.levels[l].merge(fresh);
    check_failure_rate(est.levels[l], config.sampler.max_failure_rate,
                       static_cast<int>(l));
  };

  for (int l = 0; l <= config.initial_max_level; ++l) {
    add_level();
    draw(static_cast<std::size_t>(l), config.warmup);
  }

  const double bias_target = eps / std::sqrt(2.0);
  for (int iteration = 0; iteration < 1000; ++iteration) {
    if (cancelled(config.sampler.cancel)) {
      est.cancelled = true;
      break;
    }
    std::vector<LevelCost> costs;
    for (const auto& s : est.levels) {
      costs.push_back({s.variance(), std::max(s.mean_cost(), 1e-300)});
    }
    const auto target = allocate_samples(costs, eps, config.warmup);
    bool drew = false;
    for (std::size_t l = 0; l < est.levels.size(); ++l) {
      if (target[l] > est.levels[l].n()) {
        draw(l, target[l] - est.levels[l].n());
        drew = true;
      }
    }
    if (drew) continue;

    double alpha = config.alpha.value_or(1.0);
    if (!config.alpha && est.levels.size() >= 4) {
      try {
        const RateFit fit = fit_rates(est.levels);
        if (std::isfinite(fit.alpha_hat)) alpha = std::max(0.5, fit.alpha_hat);
      } catch (const std::invalid_argument&) {
      }
    }
    est.alpha_used = alpha;
    const double ratio = std::pow(2.0, alpha);
    const std::size_t top = est.levels.size() - 1;
    est.bias_estimate =
        std::max(std::abs(est.levels[top].mean()) / (ratio - 1.0),
                 std::abs(est.levels[top - 1].mean()) / (ratio * (ratio - 1.0)));
    if (est.bias_estimate <= bias_target) {
      est.converged = true;
      break;
    }
    if (static_cast<int>(top) >= config.max_level) {
      est.hit_max_level = true;
      break;
    }
    add_level();
    draw(est.levels.size() - 1, config.warmup);
  }

  est.max_level = static_cast<int>(est.levels.size()) - 1;
  for (const auto& s : est.levels) {
    est.value += s.mean();
    est.total_cost += s.total_cost;
    if (s.n() > 0) est.variance_estimate += s.variance() / static_cast<double>(s.n());
  }
  if (est.levels.size() >= 4) {
    try {
      est.rates = fit_rates(est.levels);
    } catch (const std::invalid_argument&) {
    }
  }
  return est;
}

RandomizationLaw::RandomizationLaw(double ratio, double beta, double gamma)
    : ratio_(ratio) {
  const double lower = std::pow(2.0, -beta);
  const double upper = std::pow(2.0, -gamma);
  if (!(ratio > lower && ratio < upper)) {
    throw std::invalid_argument(
        "randomization ratio r = " + std::to_string(ratio) +
        " must satisfy 2^-beta < r < 2^-gamma, i.e. r in (" +
        std::to_string(lower) + ", " + std::to_string(upper) + ")");
  }
}

double RandomizationLaw::survival(int j) const noexcept {
  return std::pow(ratio_, j);
}

int RandomizationLaw::sample(RandomStream& stream, int max_level) const noexcept {
  // P(J >= j) = P(U <= r^j) for U uniform on (0, 1].
  const double j = std::floor(std::log(stream.uniform()) / std::log(ratio_));
  return static_cast<int>(std::min<double>(j, max_level));
}

double UnbiasedResult::expected_cost(const RandomizationLaw& law) const {
  double cost = 0.0;
  for (std::size_t j = 0; j < levels.size(); ++j) {
    if (levels[j].n() == 0) continue;
    cost += levels[j].mean_cost() * law.survival(static_cast<int>(j));
  }
  return cost;
}

UnbiasedResult run_unbiased(const UnbiasedConfig& config,
                            const GradientModel& model,
                            const Observable& observable,
                            const RandomizationLaw& law,
                            std::uint64_t n_replicas) {
  const SamplerConfig& sampler = config.sampler;
  sampler.level.scheme.validate(model);
  model.check_dim(sampler.x0);
  std::vector<LevelPlan> plans;
  for (int j = 0; j <= config.max_level; ++j) {
    plans.push_back(make_level_plan(j, sampler.level));
  }

  struct Block {
    Moments z;
    double cost = 0.0;
    std::vector<LevelStats> levels;
  };
  const std::uint64_t n_blocks = (n_replicas + kBlockSize - 1) / kBlockSize;
  std::vector<Block> blocks(n_blocks);
  Executor executor(sampler.workers);
  executor.for_each_index(n_blocks, [&](std::size_t b) {
    if (cancelled(sampler.cancel)) return;
    Block& block = blocks[b];
    const std::uint64_t begin = b * kBlockSize;
    const std::uint64_t end = std::min(n_replicas, begin + kBlockSize);
    for (std::uint64_t replica = begin; replica < end; ++replica) {
      const StreamKey truncation_key{.seed = sampler.seed,
                                     .domain = Domain::Unbiased,
                                     .level = kTruncationLevel,
                                     .replica = replica};
      RandomStream stream(truncation_key, 0, Tag::Truncation);
      const int deepest = law.sample(stream, config.max_level);
      if (block.levels.size() < static_cast<std::size_t>(deepest) + 1) {
        block.levels.resize(static_cast<std::size_t>(deepest) + 1);
      }
      double z = 0.0;
      for (int j = 0; j <= deepest; ++j) {
        const StreamKey key{.seed = sampler.seed,
                            .domain = Domain::Unbiased,
                            .level = static_cast<std::uint32_t>(j),
                            .replica = replica};
        LevelStats& level = block.levels[static_cast<std::size_t>(j)];
        const DeltaSample sample = draw_with_retry(
            plans[static_cast<std::size_t>(j)], model, observable, sampler.x0,
            key, level.n_failed);
        level.update(sample);
        block.cost += sample.cost;
        z += sample.delta / law.survival(j);
      }
      block.z.add(z);
    }
  });

  UnbiasedResult result;
  Moments z;
  double cost = 0.0;
  for (const auto& block : blocks) {
    z.merge(block.z);
    cost += block.cost;
    if (result.levels.size() < block.levels.size()) {
      result.levels.resize(block.levels.size());
    }
    for (std::size_t j = 0; j < block.levels.size(); ++j) {
      result.levels[j].merge(block.levels[j]);
    }
  }
  for (std::size_t j = 0; j < result.levels.size(); ++j) {
    check_failure_rate(result.levels[j], sampler.max_failure_rate,
                       static_cast<int>(j));
  }
  result.replicas = z.n;
  result.mean = z.mean;
  result.variance = z.variance();
  result.standard_error =
      z.n ? std::sqrt(result.variance / static_cast<double>(z.n)) : 0.0;
  result.mean_cost = z.n ? cost / static_cast<double>(z.n) : 0.0;
  result.deepest_level = static_cast<int>(result.levels.size()) - 1;
  return result;
}

}  // namespace emlmc
