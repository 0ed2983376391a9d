#include "emlmc/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace emlmc {

double schedule_time(const Schedule& schedule, int level, double h0) {
  if (level < 0) throw std::invalid_argument("level must be nonnegative");
  const double l = level;
  return std::visit(
      [&](const auto& s) -> double {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, TheoreticalRho>) {
          if (!(s.rho > 1.0)) throw std::invalid_argument("rho must exceed 1");
          if (!(s.m > 0.0)) throw std::invalid_argument("m must be positive");
          return std::numbers::ln2 / (2.0 * s.m) * s.rho * (l + 1.0);
        } else if constexpr (std::is_same_v<S, OptimalKZeta>) {
          if (!(s.k > 0.0)) throw std::invalid_argument("K must be positive");
          if (!(s.zeta > 0.0 && s.zeta < 1.0)) {
            throw std::invalid_argument("zeta must lie in (0, 1)");
          }
          if (!(s.beta > 0.0)) throw std::invalid_argument("beta must be positive");
          return s.beta / (s.k * s.zeta) * (l * std::numbers::ln2 - std::log(h0));
        } else {
          if (!(s.a > 0.0) || !(s.b > 0.0)) {
            throw std::invalid_argument("linear schedule needs a > 0, b > 0");
          }
          return s.a * l + s.b;
        }
      },
      schedule);
}

namespace {

// Smallest integer k with k * unit >= t, ignoring rounding noise in t/unit.
long ceil_units(double t, double unit) {
  return static_cast<long>(std::ceil(t / unit - 1e-9));
}

}  // namespace

LevelPlan make_level_plan(int level, const LevelConfig& config) {
  if (level < 0) throw std::invalid_argument("level must be nonnegative");
  if (!(config.h0 > 0.0)) throw std::invalid_argument("h0 must be positive");

  // units[l] counts T_l in steps of h_{l-1} (h0 at level 0).
  long units = std::max(1L, ceil_units(schedule_time(config.schedule, 0, config.h0),
                                       config.h0));
  long previous_units = 0;
  for (int l = 1; l <= level; ++l) {
    const double unit = std::ldexp(config.h0, -(l - 1));
    // T_{l-1} expressed in steps of h_{l-1}.
    previous_units = l == 1 ? units : 2 * units;
    units = std::max(ceil_units(schedule_time(config.schedule, l, config.h0), unit),
                     previous_units + 1);
  }

  LevelPlan plan;
  plan.level = level;
  plan.scheme = config.scheme;
  plan.subsample_mode = config.subsample_mode;
  plan.h_fine = std::ldexp(config.h0, -level);
  if (level == 0) {
    plan.t_end = static_cast<double>(units) * config.h0;
    plan.burn_steps = units;
    return plan;
  }
  plan.h_coarse = 2.0 * plan.h_fine;
  plan.t_end = static_cast<double>(units) * plan.h_coarse;
  plan.t_coupled = static_cast<double>(previous_units) * plan.h_coarse;
  plan.burn_steps = 2 * (units - previous_units);
  plan.coupled_steps = previous_units;
  return plan;
}

Observable square_norm_observable() {
  return {[](const State& x) { return x.squaredNorm(); }, std::nullopt,
          "square_norm"};
}

Observable square_distance_observable(State center) {
  return {[c = std::move(center)](const State& x) {
            return (x - c).squaredNorm();
          },
          std::nullopt, "square_distance"};
}

Observable constant_observable(double value) {
  return {[value](const State&) { return value; }, 0.0, "constant"};
}

std::pair<State, State> coupled_pair_step(
    const GradientModel& model, const State& fine, const State& coarse,
    double h_coarse, const Vector& xi1, const Vector& xi2,
    const StepScheme& scheme, std::span<const std::uint32_t> tau_fine_first,
    std::span<const std::uint32_t> tau_fine_second,
    std::span<const std::uint32_t> tau_coarse, PairIncrements* increments,
    CostCounter* cost) {
  if (!(h_coarse > 0.0)) throw std::invalid_argument("step size must be positive");
  CostCounter local;
  CostCounter& counter = cost ? *cost : local;
  const double h_fine = 0.5 * h_coarse;
  const double scale = std::sqrt(2.0 * h_fine);
  Vector dw1 = scale * xi1;
  Vector dw2 = scale * xi2;
  // Equals sqrt(2 h_coarse) (xi1 + xi2) / sqrt(2) and matches the fine
  // increments bit for bit.
  Vector dwc = dw1 + dw2;

  State f = advance(model, scheme, fine, h_fine, dw1, tau_fine_first, counter);
  f = advance(model, scheme, f, h_fine, dw2, tau_fine_second, counter);
  State c = advance(model, scheme, coarse, h_coarse, dwc, tau_coarse, counter);
  if (increments) *increments = {std::move(dw1), std::move(dw2), std::move(dwc)};
  return {std::move(f), std::move(c)};
}

namespace {

struct SoloRun {
  State x;
  double cost = 0.0;
};

SoloRun run_solo(const GradientModel& model, const StepScheme& scheme,
                 const State& x0, double h, long steps, PhiloxKey key) {
  const bool sgld = scheme.kind == SchemeKind::Sgld;
  const double scale = std::sqrt(2.0 * h);
  CostCounter cost;
  State x = x0;
  Vector xi(model.dim());
  Subsample tau;
  for (long k = 0; k < steps; ++k) {
    const auto step = static_cast<std::uint64_t>(k);
    RandomStream noise(key, step, static_cast<std::uint32_t>(Tag::SoloNoise));
    noise.fill_normal({xi.data(), static_cast<std::size_t>(xi.size())});
    cost.units += 1.0;
    if (sgld) {
      RandomStream sub(key, step, static_cast<std::uint32_t>(Tag::SoloSubsample));
      tau = draw_subsample(scheme.batch_size, model.n_data(), sub);
    }
    x = advance(model, scheme, x, h, scale * xi, tau, cost);
  }
  return {std::move(x), cost.units};
}

}  // namespace

DeltaSample simulate_delta(const LevelPlan& plan, const GradientModel& model,
                           const Observable& observable, const State& x0,
                           const StreamKey& key, PathTrace* trace) {
  model.check_dim(x0);
  if (!x0.allFinite()) throw std::invalid_argument("x0 must be finite");
  const PhiloxKey philox = key.philox_key();

  SoloRun solo =
      run_solo(model, plan.scheme, x0, plan.h_fine, plan.burn_steps, philox);
  DeltaSample sample;
  if (plan.level == 0) {
    sample.fine_g = observable(solo.x);
    sample.delta = sample.fine_g;
    sample.cost = solo.cost;
    return sample;
  }

  const bool sgld = plan.scheme.kind == SchemeKind::Sgld;
  const std::size_t n_data = model.n_data();
  const std::size_t s = plan.scheme.batch_size;
  CostCounter cost{solo.cost};
  State fine = std::move(solo.x);
  State coarse = x0;
  Vector xi1(model.dim());
  Vector xi2(model.dim());
  Subsample tau1, tau2, tauc;
  if (trace) {
    trace->rows.clear();
    trace->rows.push_back({0, 0.0, fine, coarse, (fine - coarse).squaredNorm()});
  }
  for (long k = 0; k < plan.coupled_steps; ++k) {
    const auto step = static_cast<std::uint64_t>(k);
    RandomStream n1(philox, step, static_cast<std::uint32_t>(Tag::FirstNoise));
    RandomStream n2(philox, step, static_cast<std::uint32_t>(Tag::SecondNoise));
    n1.fill_normal({xi1.data(), static_cast<std::size_t>(xi1.size())});
    n2.fill_normal({xi2.data(), static_cast<std::size_t>(xi2.size())});
    cost.units += 2.0;
    if (sgld) {
      RandomStream s1(philox, step, static_cast<std::uint32_t>(Tag::FirstSubsample));
      RandomStream s2(philox, step, static_cast<std::uint32_t>(Tag::SecondSubsample));
      RandomStream sc(philox, step, static_cast<std::uint32_t>(Tag::CoarseSubsample));
      tau1 = draw_subsample(s, n_data, s1);
      tau2 = draw_subsample(s, n_data, s2);
      tauc = couple_subsample(tau1, tau2, plan.subsample_mode, s, n_data, sc);
    }
    auto [f, c] = coupled_pair_step(model, fine, coarse, plan.h_coarse, xi1, xi2,
                                    plan.scheme, tau1, tau2, tauc, nullptr, &cost);
    fine = std::move(f);
    coarse = std::move(c);
    if (trace) {
      trace->rows.push_back({k + 1, static_cast<double>(k + 1) * plan.h_coarse,
                             fine, coarse, (fine - coarse).squaredNorm()});
    }
  }
  sample.fine_g = observable(fine);
  sample.coarse_g = observable(coarse);
  sample.delta = sample.fine_g - *sample.coarse_g;
  sample.cost = cost.units;
  return sample;
}

std::vector<double> contraction_probe(const GradientModel& model,
                                      const State& x0, const State& y0,
                                      const StepScheme& scheme, double h,
                                      long n_steps, const StreamKey& key) {
  model.check_dim(x0);
  model.check_dim(y0);
  if (!(h > 0.0)) throw std::invalid_argument("step size must be positive");
  const PhiloxKey philox = key.philox_key();
  const bool sgld = scheme.kind == SchemeKind::Sgld;
  const double scale = std::sqrt(2.0 * h);
  std::vector<double> distances;
  distances.reserve(static_cast<std::size_t>(n_steps) + 1);
  State x = x0;
  State y = y0;
  distances.push_back((x - y).squaredNorm());
  Vector xi(model.dim());
  Subsample tau;
  CostCounter cost;
  for (long k = 0; k < n_steps; ++k) {
    const auto step = static_cast<std::uint64_t>(k);
    RandomStream noise(philox, step, static_cast<std::uint32_t>(Tag::FirstNoise));
    noise.fill_normal({xi.data(), static_cast<std::size_t>(xi.size())});
    if (sgld) {
      RandomStream sub(philox, step, static_cast<std::uint32_t>(Tag::FirstSubsample));
      tau = draw_subsample(scheme.batch_size, model.n_data(), sub);
    }
    const Vector dw = scale * xi;
    x = advance(model, scheme, x, h, dw, tau, cost);
    y = advance(model, scheme, y, h, dw, tau, cost);
    distances.push_back((x - y).squaredNorm());
  }
  return distances;
}

}  // namespace emlmc
