#include "emlmc/integrator.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace emlmc {
// Readable parameter names in gtest output. Found by ADL.
void PrintTo(SubsampleCoupling mode, std::ostream* out) { *out << to_string(mode); }

namespace {

Vector vec(std::initializer_list<double> values) {
  Vector v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index k = 0;
  for (double x : values) v[k++] = x;
  return v;
}

RandomStream test_stream(std::uint64_t seed) {
  return RandomStream(StreamKey{.seed = seed, .domain = Domain::Test}, 0, Tag::Generic);
}

TEST(EulerStep, Examples) {
  const OuModel ou(0.4, 1);
  EXPECT_DOUBLE_EQ(euler_step(ou, vec({1}), 0.5, vec({0}))[0], 0.8);
  EXPECT_DOUBLE_EQ(euler_step(ou, vec({0}), 0.5, vec({1}))[0], 1.0);
  EXPECT_EQ(euler_step(ou, vec({0}), 0.5, vec({0}))[0], 0.0);
  EXPECT_THROW(euler_step(ou, vec({0}), 0.0, vec({0})), std::invalid_argument);
}

TEST(EulerStep, NonFiniteOutputThrows) {
  const QuarticModel q(1);
  EXPECT_THROW(euler_step(q, vec({1e200}), 1.0, vec({0})), NumericalError);
}

TEST(EulerStep, OneStepContractionOnOu) {
  test::Gen gen(21);
  const double kappa = 0.4;
  const OuModel ou(kappa, 3);
  for (int trial = 0; trial < 200; ++trial) {
    const double h = gen.uniform(0.01, 2.0 / kappa - 0.01);
    const State x = gen.normal_vector<State>(3), y = gen.normal_vector<State>(3);
    const Vector xi = gen.normal_vector<Vector>(3);
    const double ratio =
        (euler_step(ou, x, h, xi) - euler_step(ou, y, h, xi)).norm() / (x - y).norm();
    EXPECT_NEAR(ratio, std::abs(1.0 - kappa * h), 1e-12);
  }
}

TEST(ImplicitEulerStep, Examples) {
  EXPECT_NEAR(implicit_euler_step(OuModel(0.4, 1), vec({1}), 0.5, vec({0}))[0],
              1.0 / 1.2, 1e-14);
  EXPECT_EQ(implicit_euler_step(QuarticModel(1), vec({0}), 0.5, vec({0}))[0], 0.0);
  EXPECT_NEAR(implicit_euler_step(OuModel(1.0, 1), vec({2}), 1.0, vec({0}))[0], 1.0,
              1e-14);
}

TEST(ImplicitEulerStep, LinearDriftClosedForm) {
  test::Gen gen(22);
  const double kappa = 0.4;
  const OuModel ou(kappa, 1);
  for (int trial = 0; trial < 1000; ++trial) {
    const double h = gen.uniform(1e-6, 1.0);
    const double x = 3.0 * gen.normal();
    const double xi = gen.normal();
    const double oracle = (x + std::sqrt(2 * h) * xi) / (1 + kappa * h);
    EXPECT_NEAR(implicit_euler_step(ou, vec({x}), h, vec({xi}))[0], oracle, 1e-10);
  }
}

TEST(ImplicitEulerStep, ContractionAnyStep) {
  test::Gen gen(23);
  const OuModel ou(0.4, 2);
  for (double h : {0.1, 1.0, 10.0, 100.0}) {
    const State x = gen.normal_vector<State>(2), y = gen.normal_vector<State>(2);
    const Vector xi = gen.normal_vector<Vector>(2);
    const double ratio = (implicit_euler_step(ou, x, h, xi) -
                          implicit_euler_step(ou, y, h, xi)).norm() /
                         (x - y).norm();
    EXPECT_NEAR(ratio, 1.0 / (1.0 + 0.4 * h), 1e-10);
  }
}

TEST(ImplicitEulerStep, QuarticResidualPostcondition) {
  test::Gen gen(24);
  const QuarticModel q(2);
  for (int trial = 0; trial < 2000; ++trial) {
    const double h = gen.uniform(1e-3, 1.0);
    const State x = gen.normal_vector<State>(2, 3.0);
    const Vector xi = gen.normal_vector<Vector>(2);
    const State y = implicit_euler_step(q, x, h, xi, 1e-12, 50);
    const Vector rhs = x + std::sqrt(2 * h) * xi;
    EXPECT_LE(implicit_residual(q, y, h, rhs), 1e-12 * (1 + rhs.norm()));
  }
}

TEST(ImplicitEulerStep, LargeStartStillConverges) {
  const QuarticModel q(1);
  const State y = implicit_euler_step(q, vec({1e4}), 1.0, vec({0}));
  EXPECT_LE(implicit_residual(q, y, 1.0, vec({1e4})), 1e-12 * (1 + 1e4));
}

TEST(ImplicitEulerStep, NonConvergenceThrows) {
  const QuarticModel q(1);
  EXPECT_THROW(implicit_euler_step(q, vec({50}), 1.0, vec({0}), 1e-300, 1),
               NumericalError);
}

TEST(SgldStep, FullBatchEqualsEulerBitwise) {
  const auto model = generate_logreg_fixture(1).model();
  std::vector<std::uint32_t> all(model.n_data());
  std::iota(all.begin(), all.end(), 1u);
  test::Gen gen(25);
  for (int trial = 0; trial < 50; ++trial) {
    const State x = gen.normal_vector<State>(3);
    const Vector xi = gen.normal_vector<Vector>(3);
    const double h = gen.uniform(1e-3, 0.1);
    EXPECT_EQ(sgld_step(model, x, h, xi, all), euler_step(model, x, h, xi));
  }
}

TEST(SgldStep, ZeroStepIsIdentity) {
  const auto model = generate_logreg_fixture(1).model();
  const State x = vec({0.2, -0.7, 1.1});
  const std::uint32_t tau[] = {3, 4, 5};
  EXPECT_EQ(sgld_step(model, x, 0.0, vec({0, 0, 0}), tau), x);
}

TEST(SgldStep, RepeatedIndexDriftAtZero) {
  const auto model = generate_logreg_fixture(1).model();
  const double n = static_cast<double>(model.n_data());
  const double h = 0.01;
  for (std::uint32_t i : {1u, 17u, 100u}) {
    const std::vector<std::uint32_t> tau(20, i);
    const State x1 = sgld_step(model, State::Zero(3), h, Vector::Zero(3), tau);
    const Vector drift = x1 / h;
    const Vector oracle = n * 0.5 * model.labels()[i - 1] *
                          model.covariates().row(i - 1).transpose();
    EXPECT_LT((drift - oracle).norm(), 1e-12 * oracle.norm());
  }
}

TEST(SgldStep, RequiresDataTerms) {
  const OuModel ou(0.4, 1);
  const std::uint32_t tau[] = {1};
  EXPECT_THROW(sgld_step(ou, vec({0}), 0.1, vec({0}), tau), std::invalid_argument);
}

TEST(StepScheme, Validate) {
  const auto model = generate_logreg_fixture(1).model();
  EXPECT_NO_THROW((StepScheme{.kind = SchemeKind::Sgld, .batch_size = 20}.validate(model)));
  EXPECT_THROW((StepScheme{.kind = SchemeKind::Sgld, .batch_size = 0}.validate(model)),
               std::invalid_argument);
  EXPECT_THROW((StepScheme{.kind = SchemeKind::Sgld, .batch_size = 101}.validate(model)),
               std::invalid_argument);
  EXPECT_THROW((StepScheme{.kind = SchemeKind::Sgld}.validate(OuModel(1, 1))),
               std::invalid_argument);
  EXPECT_THROW((StepScheme{.kind = SchemeKind::ImplicitEuler, .solver_tol = 0}.validate(model)),
               std::invalid_argument);
}

TEST(StepCost, UnitsPerScheme) {
  const auto model = generate_logreg_fixture(1).model();
  const std::uint32_t tau[] = {1, 2, 3, 4};
  CostCounter cost;
  advance(model, StepScheme{.kind = SchemeKind::Sgld}, State::Zero(3), 0.01,
          Vector::Zero(3), tau, cost);
  EXPECT_EQ(cost.units, 5.0);
  CostCounter full;
  advance(model, StepScheme{}, State::Zero(3), 0.01, Vector::Zero(3), {}, full);
  EXPECT_EQ(full.units, 101.0);
}

TEST(DrawSubsample, SingleAtomAndDeterminism) {
  auto s1 = test_stream(1);
  EXPECT_EQ(draw_subsample(7, 1, s1), Subsample(7, 1));
  auto a = test_stream(2);
  auto b = test_stream(2);
  EXPECT_EQ(draw_subsample(50, 100, a), draw_subsample(50, 100, b));
  EXPECT_THROW(draw_subsample(0, 5, a), std::invalid_argument);
}

TEST(DrawSubsample, FrequenciesUniform) {
  auto stream = test_stream(3);
  const auto tau = draw_subsample(100000, 10, stream);
  std::vector<std::uint64_t> counts(10, 0);
  for (auto i : tau) {
    ASSERT_GE(i, 1u);
    ASSERT_LE(i, 10u);
    ++counts[i - 1];
  }
  EXPECT_GT(test::chi_square_uniform_p(counts), 1e-3);
}

TEST(CoupleSubsample, UnionSupport) {
  auto stream = test_stream(4);
  const std::uint32_t f1[] = {1, 2}, f2[] = {3, 4};
  for (int trial = 0; trial < 200; ++trial) {
    auto out = couple_subsample(f1, f2, SubsampleCoupling::Union, 2, 10, stream);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_NE(out[0], out[1]);
    for (auto i : out) EXPECT_TRUE(i >= 1 && i <= 4);
  }
}

TEST(CoupleSubsample, UnionIsWithoutReplacementFromPool) {
  auto stream = test_stream(5);
  const std::uint32_t f1[] = {1, 1, 2}, f2[] = {3, 3, 3};
  for (int trial = 0; trial < 200; ++trial) {
    auto out = couple_subsample(f1, f2, SubsampleCoupling::Union, 3, 10, stream);
    EXPECT_LE(std::count(out.begin(), out.end(), 1u), 2);
    EXPECT_LE(std::count(out.begin(), out.end(), 2u), 1);
  }
}

TEST(CoupleSubsample, StratifiedLayout) {
  auto stream = test_stream(6);
  const std::uint32_t f1[] = {5, 5}, f2[] = {7, 9};
  for (int trial = 0; trial < 100; ++trial) {
    auto out = couple_subsample(f1, f2, SubsampleCoupling::Stratified, 2, 10, stream);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0], 5u);
    EXPECT_TRUE(out[1] == 7u || out[1] == 9u);
  }
  const std::uint32_t odd1[] = {1, 2, 3}, odd2[] = {4, 5, 6};
  EXPECT_THROW(couple_subsample(odd1, odd2, SubsampleCoupling::Stratified, 3, 10, stream),
               std::invalid_argument);
}

TEST(CoupleSubsample, SizeMismatchThrows) {
  auto stream = test_stream(7);
  const std::uint32_t f1[] = {1, 2}, f2[] = {3};
  EXPECT_THROW(couple_subsample(f1, f2, SubsampleCoupling::Union, 2, 10, stream),
               std::invalid_argument);
}

class MarginalLaw : public ::testing::TestWithParam<SubsampleCoupling> {};

TEST_P(MarginalLaw, EveryCoordinateUniform) {
  constexpr std::size_t n_data = 10, s = 4;
  constexpr int trials = 100000;
  std::vector<std::vector<std::uint64_t>> counts(s, std::vector<std::uint64_t>(n_data, 0));
  for (int t = 0; t < trials; ++t) {
    RandomStream stream(StreamKey{.seed = 8, .domain = Domain::Test,
                                  .replica = static_cast<std::uint64_t>(t)},
                        0, Tag::Generic);
    const auto f1 = draw_subsample(s, n_data, stream);
    const auto f2 = draw_subsample(s, n_data, stream);
    const auto c = couple_subsample(f1, f2, GetParam(), s, n_data, stream);
    for (std::size_t j = 0; j < s; ++j) ++counts[j][c[j] - 1];
  }
  for (const auto& coordinate : counts) {
    EXPECT_GT(test::chi_square_uniform_p(coordinate), 1e-3);
  }
}

INSTANTIATE_TEST_SUITE_P(AllModes, MarginalLaw,
                         ::testing::Values(SubsampleCoupling::Independent,
                                           SubsampleCoupling::Union,
                                           SubsampleCoupling::Stratified),
                         [](const auto& info) {
                           return std::string(to_string(info.param));
                         });

}  // namespace
}  // namespace emlmc
