#pragma once

#include "emlmc/model.hpp"
#include "emlmc/rng.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace emlmc {

enum class SchemeKind { ExplicitEuler, ImplicitEuler, Sgld };

enum class SubsampleCoupling { Independent, Union, Stratified };

std::string_view to_string(SchemeKind kind) noexcept;
std::string_view to_string(SubsampleCoupling mode) noexcept;

struct StepScheme {
  SchemeKind kind = SchemeKind::ExplicitEuler;
  std::size_t batch_size = 20;
  double solver_tol = 1e-12;
  int solver_max_iter = 50;

  /// Checks the scheme against the model it will run on.
  void validate(const GradientModel& model) const;
};

/// Minibatch tau as 1-based data indices.
using Subsample = std::vector<std::uint32_t>;

/// Running count of the cost unit: one per-datum gradient-term evaluation
/// or one Gaussian vector draw.
struct CostCounter {
  double units = 0.0;
};

/// x + h gradU(x) + sqrt(2h) xi.
State euler_step(const GradientModel& model, const State& x, double h,
                 const Vector& xi);

/// Solves y - h gradU(y) = x + sqrt(2h) xi.
State implicit_euler_step(const GradientModel& model, const State& x, double h,
                          const Vector& xi, double tol = 1e-12,
                          int max_iter = 50);

/// x + h (c(x,0) + (N/s) sum_j c(x, tau_j)) + sqrt(2h) xi.
State sgld_step(const GradientModel& model, const State& x, double h,
                const Vector& xi, std::span<const std::uint32_t> tau);

/// Advances x by one step of `scheme` given the Gaussian increment
/// dW = sqrt(2h) xi directly. `tau` is used only by Sgld.
State advance(const GradientModel& model, const StepScheme& scheme,
              const State& x, double h, const Vector& increment,
              std::span<const std::uint32_t> tau, CostCounter& cost);

/// Residual of the implicit equation at y; used for postcondition checks.
double implicit_residual(const GradientModel& model, const State& y, double h,
                         const Vector& rhs);

/// s i.i.d. uniform draws from {1, ..., n_data}.
Subsample draw_subsample(std::size_t s, std::size_t n_data,
                         RandomStream& stream);

/// Coarse-step minibatch built from the two fine minibatches. Every mode
/// leaves the marginal law of each output entry uniform on {1..n_data}.
Subsample couple_subsample(std::span<const std::uint32_t> fine_first,
                           std::span<const std::uint32_t> fine_second,
                           SubsampleCoupling mode, std::size_t s,
                           std::size_t n_data, RandomStream& stream);

}  // namespace emlmc
