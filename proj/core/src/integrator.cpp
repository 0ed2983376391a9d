#include "emlmc/integrator.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace emlmc {

std::string_view to_string(SchemeKind kind) noexcept {
  switch (kind) {
    case SchemeKind::ExplicitEuler: return "euler";
    case SchemeKind::ImplicitEuler: return "implicit";
    case SchemeKind::Sgld: return "sgld";
  }
  return "unknown";
}

std::string_view to_string(SubsampleCoupling mode) noexcept {
  switch (mode) {
    case SubsampleCoupling::Independent: return "independent";
    case SubsampleCoupling::Union: return "union";
    case SubsampleCoupling::Stratified: return "stratified";
  }
  return "unknown";
}

void StepScheme::validate(const GradientModel& model) const {
  if (kind == SchemeKind::Sgld) {
    if (!model.has_terms()) {
      throw std::invalid_argument("SGLD requires a model with data terms");
    }
    if (batch_size < 1 || batch_size > model.n_data()) {
      throw std::invalid_argument("SGLD batch size must lie in 1..n_data");
    }
  }
  if (kind == SchemeKind::ImplicitEuler) {
    if (!(solver_tol > 0.0) || solver_max_iter < 1) {
      throw std::invalid_argument("implicit solver needs tol > 0, max_iter >= 1");
    }
  }
}

namespace {

void require_positive_step(double h) {
  if (!(h > 0.0)) throw std::invalid_argument("step size must be positive");
}

State finite_or_throw(State y, std::string_view scheme) {
  if (!y.allFinite()) {
    throw NumericalError(std::string(scheme) + " step produced a non-finite state");
  }
  return y;
}

Matrix drift_jacobian(const GradientModel& model, const State& y,
                      CostCounter& cost) {
  if (auto h = model.hessian(y)) {
    cost.units += model.full_gradient_cost();
    return *std::move(h);
  }
  const Eigen::Index d = model.dim();
  Matrix jac(d, d);
  for (Eigen::Index k = 0; k < d; ++k) {
    const double step = 1e-6 * std::max(1.0, std::abs(y[k]));
    State plus = y;
    State minus = y;
    plus[k] += step;
    minus[k] -= step;
    jac.col(k) = (model.grad_full(plus) - model.grad_full(minus)) / (2.0 * step);
  }
  cost.units += 2.0 * static_cast<double>(d) * model.full_gradient_cost();
  return jac;
}

double residual_scale(const Vector& rhs) { return 1.0 + rhs.norm(); }

State solve_implicit(const GradientModel& model, const State& x0, double h,
                     const Vector& rhs, double tol, int max_iter,
                     CostCounter& cost) {
  const Eigen::Index d = model.dim();
  const double target = tol * residual_scale(rhs);
  State y = x0;
  Vector f = y - h * model.grad_full(y) - rhs;
  cost.units += model.full_gradient_cost();
  double norm = f.norm();
  bool newton_ok = true;
  for (int iter = 0; iter < max_iter && norm > target; ++iter) {
    const Matrix jac =
        Matrix::Identity(d, d) - h * drift_jacobian(model, y, cost);
    Eigen::PartialPivLU<Matrix> lu(jac);
    Vector delta = lu.solve(-f);
    if (!delta.allFinite()) {
      newton_ok = false;
      break;
    }
    // Backtrack on the residual norm.
    double t = 1.0;
    State candidate = y + delta;
    Vector fc = candidate - h * model.grad_full(candidate) - rhs;
    cost.units += model.full_gradient_cost();
    while (!(fc.norm() < norm) && t > 1e-8) {
      t *= 0.5;
      candidate = y + t * delta;
      fc = candidate - h * model.grad_full(candidate) - rhs;
      cost.units += model.full_gradient_cost();
    }
    if (!(fc.norm() < norm)) {
      newton_ok = false;
      break;
    }
    y = std::move(candidate);
    f = std::move(fc);
    norm = f.norm();
  }
  if (!newton_ok) {
    // Damped fixed point y <- y - w F(y).
    const double lip = model.lipschitz().value_or(1.0 / h);
    const double w = 1.0 / (1.0 + h * lip);
    for (int iter = 0; iter < max_iter && norm > target; ++iter) {
      y -= w * f;
      f = y - h * model.grad_full(y) - rhs;
      cost.units += model.full_gradient_cost();
      norm = f.norm();
    }
  }
  if (!(norm <= target)) {
    throw NumericalError("implicit Euler solve did not converge (residual " +
                         std::to_string(norm) + ")");
  }
  return y;
}

}  // namespace

State advance(const GradientModel& model, const StepScheme& scheme,
              const State& x, double h, const Vector& increment,
              std::span<const std::uint32_t> tau, CostCounter& cost) {
  switch (scheme.kind) {
    case SchemeKind::ExplicitEuler: {
      cost.units += model.full_gradient_cost();
      return finite_or_throw(x + h * model.grad_full(x) + increment, "Euler");
    }
    case SchemeKind::ImplicitEuler: {
      const Vector rhs = x + increment;
      return finite_or_throw(
          solve_implicit(model, rhs, h, rhs, scheme.solver_tol,
                         scheme.solver_max_iter, cost),
          "implicit Euler");
    }
    case SchemeKind::Sgld: {
      if (tau.empty()) throw std::invalid_argument("SGLD needs a subsample");
      const double scale =
          static_cast<double>(model.n_data()) / static_cast<double>(tau.size());
      cost.units += static_cast<double>(tau.size()) + 1.0;
      return finite_or_throw(x + h * batch_drift(model, x, tau, scale) + increment,
                             "SGLD");
    }
  }
  throw std::logic_error("unknown scheme");
}

State euler_step(const GradientModel& model, const State& x, double h,
                 const Vector& xi) {
  require_positive_step(h);
  model.check_dim(x);
  CostCounter cost;
  return advance(model, StepScheme{.kind = SchemeKind::ExplicitEuler}, x, h,
                 std::sqrt(2.0 * h) * xi, {}, cost);
}

State implicit_euler_step(const GradientModel& model, const State& x, double h,
                          const Vector& xi, double tol, int max_iter) {
  require_positive_step(h);
  model.check_dim(x);
  CostCounter cost;
  const StepScheme scheme{.kind = SchemeKind::ImplicitEuler,
                          .solver_tol = tol,
                          .solver_max_iter = max_iter};
  return advance(model, scheme, x, h, std::sqrt(2.0 * h) * xi, {}, cost);
}

State sgld_step(const GradientModel& model, const State& x, double h,
                const Vector& xi, std::span<const std::uint32_t> tau) {
  if (!model.has_terms()) {
    throw std::invalid_argument("SGLD requires a model with data terms");
  }
  if (!(h >= 0.0)) throw std::invalid_argument("step size must be nonnegative");
  model.check_dim(x);
  CostCounter cost;
  return advance(model, StepScheme{.kind = SchemeKind::Sgld}, x, h,
                 std::sqrt(2.0 * h) * xi, tau, cost);
}

double implicit_residual(const GradientModel& model, const State& y, double h,
                         const Vector& rhs) {
  return (y - h * model.grad_full(y) - rhs).norm();
}

Subsample draw_subsample(std::size_t s, std::size_t n_data,
                         RandomStream& stream) {
  if (s < 1 || n_data < 1) {
    throw std::invalid_argument("subsample needs s >= 1 and n_data >= 1");
  }
  Subsample tau(s);
  for (auto& index : tau) {
    index = stream.uniform_index(static_cast<std::uint32_t>(n_data)) + 1;
  }
  return tau;
}

namespace {

// First k entries of a partial Fisher-Yates shuffle of `pool`.
void partial_shuffle(Subsample& pool, std::size_t k, RandomStream& stream) {
  const auto n = static_cast<std::uint32_t>(pool.size());
  for (std::uint32_t i = 0; i < k; ++i) {
    const std::uint32_t j = i + stream.uniform_index(n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
}

}  // namespace

Subsample couple_subsample(std::span<const std::uint32_t> fine_first,
                           std::span<const std::uint32_t> fine_second,
                           SubsampleCoupling mode, std::size_t s,
                           std::size_t n_data, RandomStream& stream) {
  if (fine_first.size() != s || fine_second.size() != s) {
    throw std::invalid_argument("fine subsamples must both have size s");
  }
  switch (mode) {
    case SubsampleCoupling::Independent:
      return draw_subsample(s, n_data, stream);
    case SubsampleCoupling::Union: {
      Subsample pool(fine_first.begin(), fine_first.end());
      pool.insert(pool.end(), fine_second.begin(), fine_second.end());
      partial_shuffle(pool, s, stream);
      return pool;
    }
    case SubsampleCoupling::Stratified: {
      if (s % 2 != 0) {
        throw std::invalid_argument("stratified coupling requires even s");
      }
      Subsample first(fine_first.begin(), fine_first.end());
      Subsample second(fine_second.begin(), fine_second.end());
      partial_shuffle(first, s / 2, stream);
      partial_shuffle(second, s / 2, stream);
      first.insert(first.end(), second.begin(), second.end());
      return first;
    }
  }
  throw std::logic_error("unknown subsample coupling");
}

}  // namespace emlmc
