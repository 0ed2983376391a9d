#pragma once

#include "emlmc/integrator.hpp"
#include "emlmc/model.hpp"
#include "emlmc/rng.hpp"

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace emlmc {

/// T_l = (log 2 / (2m)) rho (l + 1), rho > 1.
struct TheoreticalRho {
  double m = 1.0;
  double rho = 2.0;
};

/// T_l = (beta / (K zeta)) (l log 2 - log h0), balancing the contraction
/// term exp(-K zeta T) against h_l^beta.
struct OptimalKZeta {
  double k = 1.0;
  double zeta = 0.5;
  double beta = 2.0;
};

/// T_l = a l + b.
struct LinearSchedule {
  double a = 3.0;
  double b = 3.0;
};

using Schedule = std::variant<TheoreticalRho, OptimalKZeta, LinearSchedule>;

/// Unrounded terminal time of level `level`. Throws std::invalid_argument
/// for parameters outside their valid ranges.
double schedule_time(const Schedule& schedule, int level, double h0);

struct LevelConfig {
  double h0 = 0.5;
  Schedule schedule = TheoreticalRho{};
  StepScheme scheme{};
  SubsampleCoupling subsample_mode = SubsampleCoupling::Union;
};

struct LevelPlan {
  int level = 0;
  double h_fine = 0.0;
  /// h_{l-1} = 2 h_l; zero at level 0.
  double h_coarse = 0.0;
  double t_end = 0.0;
  /// T_{l-1}; zero at level 0.
  double t_coupled = 0.0;
  /// Fine-only steps of h_fine; at level 0 the whole single path.
  long burn_steps = 0;
  /// Pair steps (two fine, one coarse) over T_{l-1}.
  long coupled_steps = 0;
  StepScheme scheme{};
  SubsampleCoupling subsample_mode = SubsampleCoupling::Union;
};

/// Builds the plan with T_l rounded up to the grid of h_{l-1} (h0 at level
/// 0) and forced strictly above T_{l-1}, so every step count is integral.
LevelPlan make_level_plan(int level, const LevelConfig& config);

struct Observable {
  std::function<double(const State&)> g;
  std::optional<double> lipschitz_hint;
  std::string name;

  double operator()(const State& x) const { return g(x); }
};

/// |x|^2.
Observable square_norm_observable();
/// |x - center|^2.
Observable square_distance_observable(State center);
Observable constant_observable(double value);

struct DeltaSample {
  double delta = 0.0;
  double cost = 0.0;
  double fine_g = 0.0;
  std::optional<double> coarse_g;
};

/// Gaussian increments actually applied in one pair step.
struct PairIncrements {
  Vector fine_first;
  Vector fine_second;
  Vector coarse;
};

/// Two fine steps of h_coarse/2 driven by xi1, xi2 and one coarse step of
/// h_coarse driven by (xi1 + xi2)/sqrt(2). For SGLD the fine steps use
/// tau_fine_first / tau_fine_second and the coarse step tau_coarse.
std::pair<State, State> coupled_pair_step(
    const GradientModel& model, const State& fine, const State& coarse,
    double h_coarse, const Vector& xi1, const Vector& xi2,
    const StepScheme& scheme, std::span<const std::uint32_t> tau_fine_first = {},
    std::span<const std::uint32_t> tau_fine_second = {},
    std::span<const std::uint32_t> tau_coarse = {},
    PairIncrements* increments = nullptr, CostCounter* cost = nullptr);

/// Fine and coarse states over the coupled phase, one row per pair step.
struct PathTrace {
  struct Row {
    long step = 0;
    double t = 0.0;
    State fine;
    State coarse;
    double sq_distance = 0.0;
  };
  std::vector<Row> rows;
};

/// One realization of the level correction by the shifted coupling.
/// All randomness comes from `key`; throws NumericalError when a step fails.
DeltaSample simulate_delta(const LevelPlan& plan, const GradientModel& model,
                           const Observable& observable, const State& x0,
                           const StreamKey& key, PathTrace* trace = nullptr);

/// Squared distances |X_k - Y_k|^2, k = 0..n_steps, of two chains driven by
/// the same noise (and, for SGLD, the same minibatches).
std::vector<double> contraction_probe(const GradientModel& model,
                                      const State& x0, const State& y0,
                                      const StepScheme& scheme, double h,
                                      long n_steps, const StreamKey& key);

}  // namespace emlmc
