#pragma once

#include "emlmc/coupling.hpp"
#include "emlmc/estimator.hpp"
#include "emlmc/model.hpp"

#include <atomic>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace emlmc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OuSpec {
  double kappa = 0.4;
  Eigen::Index dim = 1;
};

struct LogRegSpec {
  std::optional<std::filesystem::path> fixture;
  std::uint64_t seed = 1;
  std::size_t n_data = 100;
  Eigen::Index dim = 3;
};

struct QuarticSpec {
  Eigen::Index dim = 1;
};

using ModelSpec = std::variant<OuSpec, LogRegSpec, QuarticSpec>;

enum class ObservableKind { SquareNorm, SquareDistanceFromStart };

struct ExperimentConfig {
  ModelSpec model = OuSpec{};
  ObservableKind observable = ObservableKind::SquareNorm;
  StepScheme scheme{};
  SubsampleCoupling coupling = SubsampleCoupling::Union;
  /// Modes compared by the logreg command.
  std::vector<SubsampleCoupling> compare_couplings{
      SubsampleCoupling::Independent, SubsampleCoupling::Union,
      SubsampleCoupling::Stratified};
  Schedule schedule = TheoreticalRho{0.4, 2.0};
  double h0 = 0.5;
  std::vector<double> eps{0.1, 0.05, 0.025, 0.0125};
  std::uint64_t seed = 1;
  std::filesystem::path out = "out";
  unsigned workers = 1;
  bool trace = false;

  std::uint64_t warmup = 1000;
  int max_level = 12;
  std::optional<double> alpha = 1.0;
  double max_failure_rate = 0.01;

  int rates_max_level = 5;
  std::uint64_t rates_samples = 10000;
  int trace_level = 3;
  std::uint64_t trace_paths = 100;

  double ratio = 0.35355339059327373;  // 2^-1.5
  std::uint64_t replicas = 100000;
  double beta = 2.0;

  /// Stop flag polled by the samplers (set from a signal handler).
  const std::atomic<bool>* cancel = nullptr;
};

/// Defaults for a model: OU uses Euler, h0 = 0.5, T_l from the contraction
/// rate with rho = 2; logistic regression uses SGLD with s = 20, union
/// coupling, h0 = 0.02 and T_l = 3(l + 1).
ExperimentConfig default_config(const ModelSpec& model);

/// Parses a JSON document; unknown keys raise ConfigError.
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Model, observable and start point resolved from a config.
struct Problem {
  std::unique_ptr<GradientModel> model;
  Observable observable;
  State x0;
  /// Set for logistic regression: the start point is the posterior mode.
  std::optional<MapResult> map;
  std::optional<LogRegFixture> fixture;
};

Problem build_problem(const ExperimentConfig& config);

LevelConfig level_config(const ExperimentConfig& config);
MlmcConfig mlmc_config(const ExperimentConfig& config, const Problem& problem);

struct RatesReport {
  std::vector<LevelPlan> plans;
  std::vector<LevelStats> levels;
  RateFit fit;
};

/// Fixed-N sampling at levels 0..rates_max_level.
/// Writes levels.csv, rates.json and, with trace, trace.csv.
RatesReport cmd_rates(const ExperimentConfig& config);

struct EstimateRow {
  MlmcEstimate estimate;
  double wall_seconds = 0.0;
};

/// run_mlmc for each eps. Writes estimate.csv, levels_<i>.csv,
/// summary.json and timing.csv.
std::vector<EstimateRow> cmd_estimate(const ExperimentConfig& config);

struct UnbiasedReport {
  UnbiasedResult result;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double expected_cost = 0.0;
};

/// Writes unbiased.json and unbiased_levels.csv. Throws ConfigError when
/// the ratio violates the law constraint.
UnbiasedReport cmd_unbiased(const ExperimentConfig& config);

struct LogregModeResult {
  SubsampleCoupling coupling;
  std::vector<EstimateRow> rows;
};

struct LogregReport {
  State map;
  double map_grad_norm = 0.0;
  std::vector<LogregModeResult> modes;
  /// Mean |fine - coarse|^2 over trace_paths paths at trace_level, per
  /// coupled step.
  std::vector<double> mean_sq_distance;
  double trace_h = 0.0;
};

/// MLMC-SGLD for g(x) = |x - MAP|^2 under each coupling mode. Writes
/// posterior.json, logreg_costs.csv, coupling_distance.csv, timing.csv.
LogregReport cmd_logreg(const ExperimentConfig& config);

}  // namespace emlmc
