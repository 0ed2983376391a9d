#include "emlmc/model.hpp"

#include "emlmc/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace emlmc {

void GradientModel::check_dim(const State& x) const {
  if (x.size() != dim()) {
    throw std::invalid_argument("state dimension " + std::to_string(x.size()) +
                                " does not match model dimension " +
                                std::to_string(dim()));
  }
}

Vector GradientModel::grad_term(const State&, std::size_t) const {
  throw std::logic_error("model has no per-datum gradient terms");
}

void GradientModel::accumulate_terms(const State&,
                                     std::span<const std::uint32_t>,
                                     KahanVector&) const {
  throw std::logic_error("model has no per-datum gradient terms");
}

Vector batch_drift(const GradientModel& model, const State& x,
                   std::span<const std::uint32_t> indices, double scale) {
  KahanVector acc(model.dim());
  model.accumulate_terms(x, indices, acc);
  return model.grad_term(x, 0) + scale * acc.sum();
}

// ---------------------------------------------------------------- OU --

OuModel::OuModel(double kappa, Eigen::Index dim) : kappa_(kappa), dim_(dim) {
  if (!(kappa > 0.0)) throw std::invalid_argument("OU kappa must be positive");
  if (dim < 1) throw std::invalid_argument("OU dimension must be positive");
}

Vector OuModel::grad_full(const State& x) const {
  check_dim(x);
  return -kappa_ * x;
}

std::optional<Matrix> OuModel::hessian(const State&) const {
  return Matrix(-kappa_ * Matrix::Identity(dim_, dim_));
}

// ----------------------------------------------------------- quartic --

QuarticModel::QuarticModel(Eigen::Index dim) : dim_(dim) {
  if (dim < 1) throw std::invalid_argument("dimension must be positive");
}

Vector QuarticModel::grad_full(const State& x) const {
  check_dim(x);
  return -(x.array().cube() + x.array()).matrix();
}

std::optional<Matrix> QuarticModel::hessian(const State& x) const {
  return Matrix((-3.0 * x.array().square() - 1.0).matrix().asDiagonal());
}

// ---------------------------------------------------------- logistic --

double sigmoid(double z) noexcept {
  // Branch-free form of 1/(1+e^-z) for z >= 0 and e^z/(1+e^z) otherwise.
  const double e = std::exp(-std::abs(z));
  return (z >= 0.0 ? 1.0 : e) / (1.0 + e);
}

double log_sigmoid(double z) noexcept {
  if (z >= 0.0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

LogRegModel::LogRegModel(Matrix covariates, std::vector<int> labels,
                         std::optional<Matrix> prior_precision)
    : covariates_(std::move(covariates)), labels_(std::move(labels)) {
  const Eigen::Index d = covariates_.cols();
  if (d < 1) throw std::invalid_argument("covariate matrix has no columns");
  if (static_cast<std::size_t>(covariates_.rows()) != labels_.size()) {
    throw std::invalid_argument("covariate rows and label count differ");
  }
  for (int y : labels_) {
    if (y != 1 && y != -1) {
      throw std::invalid_argument("labels must be -1 or +1");
    }
  }
  prior_precision_ = prior_precision.value_or(Matrix::Identity(d, d));
  if (prior_precision_.rows() != d || prior_precision_.cols() != d) {
    throw std::invalid_argument("prior precision must be d x d");
  }
  if (!prior_precision_.isApprox(prior_precision_.transpose())) {
    throw std::invalid_argument("prior precision must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(prior_precision_);
  if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() <= 0.0) {
    throw std::invalid_argument("prior precision must be positive definite");
  }
  m_ = eig.eigenvalues().minCoeff();
  // |d c(x,i)/dx| <= |iota_i|^2 / 4 since f(z) f(-z) <= 1/4.
  lip_ = eig.eigenvalues().maxCoeff() +
         0.25 * covariates_.rowwise().squaredNorm().sum();

  rows_.resize(static_cast<std::size_t>(covariates_.size()));
  for (Eigen::Index i = 0; i < covariates_.rows(); ++i) {
    for (Eigen::Index k = 0; k < d; ++k) {
      rows_[static_cast<std::size_t>(i * d + k)] = covariates_(i, k);
    }
  }
  all_indices_.resize(labels_.size());
  std::iota(all_indices_.begin(), all_indices_.end(), 1u);
}

Vector LogRegModel::grad_full(const State& x) const {
  check_dim(x);
  return batch_drift(*this, x, all_indices_, 1.0);
}

Vector LogRegModel::grad_term(const State& x, std::size_t i) const {
  check_dim(x);
  if (i > labels_.size()) {
    throw std::out_of_range("data index " + std::to_string(i) +
                            " out of range 0.." +
                            std::to_string(labels_.size()));
  }
  if (i == 0) return -(prior_precision_ * x);
  const double y = labels_[i - 1];
  const double z = covariates_.row(static_cast<Eigen::Index>(i - 1)).dot(x);
  return (y * sigmoid(-y * z)) *
         covariates_.row(static_cast<Eigen::Index>(i - 1)).transpose();
}

void LogRegModel::accumulate_terms(const State& x,
                                   std::span<const std::uint32_t> indices,
                                   KahanVector& acc) const {
  const Eigen::Index d = covariates_.cols();
  const std::size_t n = labels_.size();
  // Local copies keep the compensated sums in registers: the accumulator
  // could otherwise alias the covariate rows.
  constexpr Eigen::Index kLocal = 8;
  double xs[kLocal], sum[kLocal], comp[kLocal];
  const bool local = d <= kLocal;
  double* s = local ? sum : acc.sum_data();
  double* c = local ? comp : acc.compensation_data();
  const double* xp = local ? xs : x.data();
  if (local) {
    std::copy_n(x.data(), d, xs);
    std::copy_n(acc.sum_data(), d, sum);
    std::copy_n(acc.compensation_data(), d, comp);
  }
  for (std::uint32_t i : indices) {
    if (i < 1 || i > n) {
      throw std::out_of_range("data index " + std::to_string(i) +
                              " out of range 1.." + std::to_string(n));
    }
    const double* row = rows_.data() + static_cast<std::size_t>(i - 1) * d;
    double z = 0.0;
    for (Eigen::Index k = 0; k < d; ++k) z += row[k] * xp[k];
    const double y = labels_[i - 1];
    const double w = y * sigmoid(-y * z);
    for (Eigen::Index k = 0; k < d; ++k) {
      const double v = w * row[k] - c[k];
      const double t = s[k] + v;
      c[k] = (t - s[k]) - v;
      s[k] = t;
    }
  }
  if (local) {
    std::copy_n(sum, d, acc.sum_data());
    std::copy_n(comp, d, acc.compensation_data());
  }
}

std::optional<Matrix> LogRegModel::hessian(const State& x) const {
  check_dim(x);
  Matrix h = -prior_precision_;
  for (Eigen::Index i = 0; i < covariates_.rows(); ++i) {
    const double z = labels_[static_cast<std::size_t>(i)] *
                     covariates_.row(i).dot(x);
    const double w = sigmoid(z) * sigmoid(-z);
    h.noalias() -= w * covariates_.row(i).transpose() * covariates_.row(i);
  }
  return h;
}

double LogRegModel::log_posterior(const State& x) const {
  check_dim(x);
  double value = -0.5 * x.dot(prior_precision_ * x);
  for (Eigen::Index i = 0; i < covariates_.rows(); ++i) {
    value += log_sigmoid(labels_[static_cast<std::size_t>(i)] *
                         covariates_.row(i).dot(x));
  }
  return value;
}

Vector default_true_parameter(Eigen::Index dim) {
  static constexpr double kPattern[] = {1.0, -1.0, 0.5};
  Vector x(dim);
  for (Eigen::Index k = 0; k < dim; ++k) x[k] = kPattern[k % 3];
  return x;
}

LogRegFixture generate_logreg_fixture(std::uint64_t seed, std::size_t n_data,
                                      Eigen::Index dim) {
  if (dim < 1) throw std::invalid_argument("dimension must be positive");
  LogRegFixture fixture;
  fixture.seed = seed;
  fixture.x_true = default_true_parameter(dim);
  fixture.covariates.resize(static_cast<Eigen::Index>(n_data), dim);
  fixture.labels.resize(n_data);
  const StreamKey key{.seed = seed, .domain = Domain::Fixture};
  for (std::size_t i = 0; i < n_data; ++i) {
    RandomStream covariate_stream(key, i, Tag::Generic);
    const auto row = static_cast<Eigen::Index>(i);
    for (Eigen::Index k = 0; k + 1 < dim; ++k) {
      fixture.covariates(row, k) = covariate_stream.normal();
    }
    fixture.covariates(row, dim - 1) = 1.0;
    RandomStream label_stream(key, i, Tag::Truncation);
    const double p = sigmoid(fixture.covariates.row(row).dot(fixture.x_true));
    fixture.labels[i] = label_stream.uniform() <= p ? 1 : -1;
  }
  return fixture;
}

MapResult map_newton(const LogRegModel& model, const NewtonOptions& options) {
  return map_newton(model, State::Zero(model.dim()), options);
}

MapResult map_newton(const LogRegModel& model, const State& x_init,
                     const NewtonOptions& options) {
  if (!(options.tol > 0.0)) throw std::invalid_argument("tol must be positive");
  State x = x_init;
  model.check_dim(x);
  Vector g = model.grad_full(x);
  double residual = g.norm();
  double objective = model.log_posterior(x);
  for (int iter = 0; iter < options.max_iter; ++iter) {
    if (residual <= options.tol) return {x, residual, iter};
    const Matrix neg_hessian = -*model.hessian(x);
    Eigen::LLT<Matrix> llt(neg_hessian);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("Newton step: Hessian is not negative definite");
    }
    Vector step = llt.solve(g);
    if (!step.allFinite()) throw NumericalError("Newton step is not finite");
    // Halve the step while the log posterior decreases.
    State candidate = x + step;
    double candidate_objective = model.log_posterior(candidate);
    for (int halvings = 0;
         candidate_objective < objective && halvings < 50; ++halvings) {
      step *= 0.5;
      candidate = x + step;
      candidate_objective = model.log_posterior(candidate);
    }
    x = std::move(candidate);
    objective = candidate_objective;
    g = model.grad_full(x);
    residual = g.norm();
  }
  if (residual <= options.tol) return {x, residual, options.max_iter};
  throw NonConvergenceError("Newton-Raphson did not converge within " +
                                std::to_string(options.max_iter) +
                                " iterations (residual " +
                                std::to_string(residual) + ")",
                            x, residual);
}

}  // namespace emlmc
