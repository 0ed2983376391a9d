#include "emlmc/coupling.hpp"
#include "emlmc/integrator.hpp"
#include "emlmc/model.hpp"
#include "emlmc/rng.hpp"

#include <benchmark/benchmark.h>

namespace {

using namespace emlmc;

LogRegModel make_logreg() {
  auto fixture = generate_logreg_fixture(1);
  return LogRegModel(fixture.covariates, fixture.labels);
}

void BM_Philox(benchmark::State& state) {
  std::array<std::uint32_t, 4> counter{};
  const std::array<std::uint32_t, 2> key{1, 2};
  for (auto _ : state) {
    benchmark::DoNotOptimize(philox4x32_10(counter, key));
    ++counter[0];
  }
}
BENCHMARK(BM_Philox);

void BM_EulerOu(benchmark::State& state) {
  const OuModel model(0.4, state.range(0));
  RandomStream stream(StreamKey{.seed = 1, .domain = Domain::Probe}, 0, Tag::Generic);
  State x = State::Zero(state.range(0));
  Vector xi(state.range(0));
  for (auto _ : state) {
    stream.fill_normal({xi.data(), static_cast<std::size_t>(xi.size())});
    x = euler_step(model, x, 0.01, xi);
    benchmark::DoNotOptimize(x.data());
  }
}
BENCHMARK(BM_EulerOu)->Arg(1)->Arg(10);

void BM_SgldLogReg(benchmark::State& state) {
  const auto model = make_logreg();
  RandomStream stream(StreamKey{.seed = 1, .domain = Domain::Probe}, 0, Tag::Generic);
  const auto s = static_cast<std::size_t>(state.range(0));
  State x = State::Zero(model.dim());
  Vector xi(model.dim());
  for (auto _ : state) {
    stream.fill_normal({xi.data(), static_cast<std::size_t>(xi.size())});
    const auto tau = draw_subsample(s, model.n_data(), stream);
    x = sgld_step(model, x, 0.01, xi, tau);
    benchmark::DoNotOptimize(x.data());
  }
  state.counters["terms/s"] = benchmark::Counter(
      static_cast<double>(state.iterations() * s), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_SgldLogReg)->Arg(20)->Arg(100);

void BM_CoupledSgldPair(benchmark::State& state) {
  const auto model = make_logreg();
  RandomStream stream(StreamKey{.seed = 1, .domain = Domain::Probe}, 0, Tag::Generic);
  const auto mode = static_cast<SubsampleCoupling>(state.range(0));
  const StepScheme scheme{.kind = SchemeKind::Sgld, .batch_size = 20};
  State fine = State::Zero(model.dim());
  State coarse = State::Zero(model.dim());
  Vector xi1(model.dim()), xi2(model.dim());
  for (auto _ : state) {
    stream.fill_normal({xi1.data(), static_cast<std::size_t>(xi1.size())});
    stream.fill_normal({xi2.data(), static_cast<std::size_t>(xi2.size())});
    const auto t1 = draw_subsample(20, model.n_data(), stream);
    const auto t2 = draw_subsample(20, model.n_data(), stream);
    const auto tc = couple_subsample(t1, t2, mode, 20, model.n_data(), stream);
    auto [f, c] = coupled_pair_step(model, fine, coarse, 0.01, xi1, xi2, scheme,
                                    t1, t2, tc);
    fine = std::move(f);
    coarse = std::move(c);
    benchmark::DoNotOptimize(fine.data());
  }
}
BENCHMARK(BM_CoupledSgldPair)
    ->Arg(static_cast<int>(SubsampleCoupling::Independent))
    ->Arg(static_cast<int>(SubsampleCoupling::Union))
    ->Arg(static_cast<int>(SubsampleCoupling::Stratified));

void BM_ImplicitQuartic(benchmark::State& state) {
  const QuarticModel model(1);
  RandomStream stream(StreamKey{.seed = 1, .domain = Domain::Probe}, 0, Tag::Generic);
  State x = State::Zero(1);
  Vector xi(1);
  for (auto _ : state) {
    stream.fill_normal({xi.data(), 1});
    x = implicit_euler_step(model, x, 0.5, xi, 1e-12, 50);
    benchmark::DoNotOptimize(x.data());
  }
}
BENCHMARK(BM_ImplicitQuartic);

void BM_SimulateDeltaOu(benchmark::State& state) {
  const OuModel model(0.4, 1);
  const LevelConfig config{.h0 = 0.5, .schedule = TheoreticalRho{0.4, 2.0}};
  const auto plan = make_level_plan(static_cast<int>(state.range(0)), config);
  const auto obs = square_norm_observable();
  const State x0 = State::Zero(1);
  std::uint64_t replica = 0;
  for (auto _ : state) {
    const StreamKey key{.seed = 1, .domain = Domain::Mlmc,
                        .level = static_cast<std::uint32_t>(plan.level),
                        .replica = replica++};
    benchmark::DoNotOptimize(simulate_delta(plan, model, obs, x0, key).delta);
  }
}
BENCHMARK(BM_SimulateDeltaOu)->DenseRange(1, 4);

}  // namespace

BENCHMARK_MAIN();
