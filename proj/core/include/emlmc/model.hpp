#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace emlmc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Chain position in R^d.
using State = Eigen::VectorXd;

/// Raised when an iterate or drift stops being finite, or a linear solve
/// breaks down.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Component-wise Kahan accumulator for drift sums.
class KahanVector {
 public:
  explicit KahanVector(Eigen::Index dim)
      : sum_(Vector::Zero(dim)), compensation_(Vector::Zero(dim)) {}

  void add(Eigen::Index k, double value) noexcept {
    const double y = value - compensation_[k];
    const double t = sum_[k] + y;
    compensation_[k] = (t - sum_[k]) - y;
    sum_[k] = t;
  }

  const Vector& sum() const noexcept { return sum_; }
  Eigen::Index size() const noexcept { return sum_.size(); }
  double* sum_data() noexcept { return sum_.data(); }
  double* compensation_data() noexcept { return compensation_.data(); }

 private:
  Vector sum_;
  Vector compensation_;
};

/// Target distribution pi ∝ exp(U) described through gradU.
///
/// Data-driven models expose per-datum terms c(x, i), i = 1..n_data, and the
/// prior term c(x, 0); then gradU(x) = c(x,0) + sum_i c(x,i).
class GradientModel {
 public:
  virtual ~GradientModel() = default;

  virtual Eigen::Index dim() const noexcept = 0;
  virtual Vector grad_full(const State& x) const = 0;

  virtual bool has_terms() const noexcept { return false; }
  virtual std::size_t n_data() const noexcept { return 0; }

  /// c(x, i); index 0 is the prior term.
  virtual Vector grad_term(const State& x, std::size_t i) const;

  /// acc += sum_j c(x, indices[j]) in index order. Indices must be >= 1.
  virtual void accumulate_terms(const State& x,
                                std::span<const std::uint32_t> indices,
                                KahanVector& acc) const;

  /// Hessian of U when available analytically.
  virtual std::optional<Matrix> hessian(const State&) const {
    return std::nullopt;
  }

  /// m in <gradU(y) - gradU(x), y - x> <= -m |x - y|^2.
  virtual double strong_convexity() const noexcept = 0;

  /// Lipschitz constant of gradU; empty for polynomial drifts.
  virtual std::optional<double> lipschitz() const noexcept = 0;

  /// Gradient-term evaluations charged for one grad_full call.
  virtual double full_gradient_cost() const noexcept { return 1.0; }

  void check_dim(const State& x) const;
};

/// c(x,0) + scale * sum_j c(x, indices[j]), accumulated in index order.
Vector batch_drift(const GradientModel& model, const State& x,
                   std::span<const std::uint32_t> indices, double scale);

/// dX = -kappa X dt + sqrt(2) dW; invariant law N(0, 1/kappa).
class OuModel final : public GradientModel {
 public:
  OuModel(double kappa, Eigen::Index dim);

  double kappa() const noexcept { return kappa_; }

  Eigen::Index dim() const noexcept override { return dim_; }
  Vector grad_full(const State& x) const override;
  std::optional<Matrix> hessian(const State& x) const override;
  double strong_convexity() const noexcept override { return kappa_; }
  std::optional<double> lipschitz() const noexcept override { return kappa_; }

 private:
  double kappa_;
  Eigen::Index dim_;
};

/// U(x) = -sum_k (x_k^4 / 4 + x_k^2 / 2); gradU = -x^3 - x, not Lipschitz.
class QuarticModel final : public GradientModel {
 public:
  explicit QuarticModel(Eigen::Index dim);

  Eigen::Index dim() const noexcept override { return dim_; }
  Vector grad_full(const State& x) const override;
  std::optional<Matrix> hessian(const State& x) const override;
  double strong_convexity() const noexcept override { return 1.0; }
  std::optional<double> lipschitz() const noexcept override {
    return std::nullopt;
  }

 private:
  Eigen::Index dim_;
};

/// Numerically stable logistic function 1 / (1 + exp(-z)).
double sigmoid(double z) noexcept;

/// log sigmoid(z) without overflow.
double log_sigmoid(double z) noexcept;

/// Bayesian logistic regression posterior with Gaussian prior N(0, C0):
/// pi(x) ∝ exp(-x' P x / 2) prod_i f(y_i x'iota_i), P = C0^{-1}.
class LogRegModel final : public GradientModel {
 public:
  /// `covariates` is n_data x d, labels in {-1, +1}.
  LogRegModel(Matrix covariates, std::vector<int> labels,
              std::optional<Matrix> prior_precision = std::nullopt);

  const Matrix& covariates() const noexcept { return covariates_; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  const Matrix& prior_precision() const noexcept { return prior_precision_; }

  Eigen::Index dim() const noexcept override { return covariates_.cols(); }
  Vector grad_full(const State& x) const override;
  bool has_terms() const noexcept override { return true; }
  std::size_t n_data() const noexcept override { return labels_.size(); }
  Vector grad_term(const State& x, std::size_t i) const override;
  void accumulate_terms(const State& x, std::span<const std::uint32_t> indices,
                        KahanVector& acc) const override;
  std::optional<Matrix> hessian(const State& x) const override;
  double strong_convexity() const noexcept override { return m_; }
  std::optional<double> lipschitz() const noexcept override { return lip_; }
  double full_gradient_cost() const noexcept override {
    return static_cast<double>(labels_.size()) + 1.0;
  }

  /// Unnormalized log posterior.
  double log_posterior(const State& x) const;

 private:
  Matrix covariates_;
  // Row-major copy; the SGLD inner loop walks one datum at a time.
  std::vector<double> rows_;
  std::vector<int> labels_;
  Matrix prior_precision_;
  std::vector<std::uint32_t> all_indices_;
  double m_ = 0.0;
  double lip_ = 0.0;
};

struct LogRegFixture {
  std::uint64_t seed = 0;
  Vector x_true;
  Matrix covariates;
  std::vector<int> labels;

  LogRegModel model() const { return LogRegModel(covariates, labels); }
};

/// True parameter used to generate labels for the default 3-dimensional
/// fixture; for other dimensions the pattern (1, -1, 0.5, ...) repeats.
Vector default_true_parameter(Eigen::Index dim);

/// Covariates: i.i.d. N(0,1) in columns 0..d-2, ones in column d-1.
/// Labels: +1 with probability f(x_true' iota_i).
LogRegFixture generate_logreg_fixture(std::uint64_t seed,
                                      std::size_t n_data = 100,
                                      Eigen::Index dim = 3);

struct NewtonOptions {
  double tol = 1e-10;
  int max_iter = 100;
};

struct MapResult {
  State x;
  double grad_norm = 0.0;
  int iterations = 0;
};

class NonConvergenceError : public NumericalError {
 public:
  NonConvergenceError(const std::string& what, State last, double residual)
      : NumericalError(what), last_(std::move(last)), residual_(residual) {}

  const State& last_iterate() const noexcept { return last_; }
  double residual() const noexcept { return residual_; }

 private:
  State last_;
  double residual_;
};

/// Damped Newton-Raphson for the posterior mode. Throws NonConvergenceError
/// after max_iter iterations and NumericalError on a failed Hessian solve.
MapResult map_newton(const LogRegModel& model, const State& x_init,
                     const NewtonOptions& options = {});
MapResult map_newton(const LogRegModel& model,
                     const NewtonOptions& options = {});

}  // namespace emlmc
