#include "emlmc/experiment.hpp"

#include "emlmc/io.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace emlmc {

using nlohmann::json;

namespace {

void reject_unknown(const json& object, std::string_view where,
                    std::initializer_list<std::string_view> allowed) {
  if (!object.is_object()) {
    throw ConfigError(std::string(where) + " must be a JSON object");
  }
  for (const auto& [key, _] : object.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) {
      throw ConfigError("unknown key '" + key + "' in " + std::string(where));
    }
  }
}

template <class T>
void read(const json& object, const char* key, T& target) {
  if (object.contains(key)) target = object.at(key).get<T>();
}

SubsampleCoupling parse_coupling(const std::string& name) {
  if (name == "independent") return SubsampleCoupling::Independent;
  if (name == "union") return SubsampleCoupling::Union;
  if (name == "stratified") return SubsampleCoupling::Stratified;
  throw ConfigError("unknown coupling mode '" + name + "'");
}

ModelSpec parse_model(const json& m) {
  const auto type = m.at("type").get<std::string>();
  if (type == "ou") {
    reject_unknown(m, "model", {"type", "kappa", "dim"});
    OuSpec spec;
    read(m, "kappa", spec.kappa);
    read(m, "dim", spec.dim);
    return spec;
  }
  if (type == "logreg") {
    reject_unknown(m, "model", {"type", "fixture", "seed", "n_data", "dim"});
    LogRegSpec spec;
    if (m.contains("fixture")) spec.fixture = m.at("fixture").get<std::string>();
    read(m, "seed", spec.seed);
    read(m, "n_data", spec.n_data);
    read(m, "dim", spec.dim);
    return spec;
  }
  if (type == "quartic") {
    reject_unknown(m, "model", {"type", "dim"});
    QuarticSpec spec;
    read(m, "dim", spec.dim);
    return spec;
  }
  throw ConfigError("unknown model type '" + type + "'");
}

Schedule parse_schedule(const json& s, const Schedule& fallback) {
  const auto type = s.at("type").get<std::string>();
  if (type == "theoretical") {
    reject_unknown(s, "schedule", {"type", "m", "rho"});
    TheoreticalRho t = std::holds_alternative<TheoreticalRho>(fallback)
                           ? std::get<TheoreticalRho>(fallback)
                           : TheoreticalRho{};
    read(s, "m", t.m);
    read(s, "rho", t.rho);
    return t;
  }
  if (type == "optimal") {
    reject_unknown(s, "schedule", {"type", "K", "zeta", "beta"});
    OptimalKZeta t;
    read(s, "K", t.k);
    read(s, "zeta", t.zeta);
    read(s, "beta", t.beta);
    return t;
  }
  if (type == "linear") {
    reject_unknown(s, "schedule", {"type", "a", "b"});
    LinearSchedule t;
    read(s, "a", t.a);
    read(s, "b", t.b);
    return t;
  }
  throw ConfigError("unknown schedule type '" + type + "'");
}

void validate(const ExperimentConfig& c) {
  if (!(c.h0 > 0.0)) throw ConfigError("h0 must be positive");
  for (double e : c.eps) {
    if (!(e > 0.0)) throw ConfigError("eps values must be positive");
  }
  if (c.workers < 1) throw ConfigError("workers must be at least 1");
  if (c.rates_max_level < 0 || c.trace_level < 0) {
    throw ConfigError("levels must be nonnegative");
  }
  if (c.max_level < 2) throw ConfigError("mlmc.max_level must be at least 2");
  if (c.scheme.kind == SchemeKind::Sgld &&
      !std::holds_alternative<LogRegSpec>(c.model)) {
    throw ConfigError("sgld scheme requires the logreg model");
  }
  try {
    (void)make_level_plan(std::max(c.rates_max_level, 1), LevelConfig{c.h0, c.schedule});
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid schedule: ") + e.what());
  }
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

void prepare_out(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
}

std::string fit_json(const RateFit& fit) {
  json warnings = fit.warnings;
  std::ostringstream out;
  auto number = [](double v) { return std::isfinite(v) ? format_double(v) : "null"; };
  out << "{\"alpha_hat\": " << number(fit.alpha_hat)
      << ", \"beta_hat\": " << number(fit.beta_hat) << ", \"r2\": " << number(fit.r2)
      << ", \"r2_alpha\": " << number(fit.r2_alpha)
      << ", \"warnings\": " << warnings.dump() << "}\n";
  return out.str();
}

EstimateRow timed_mlmc(const MlmcConfig& mc, const Problem& problem, double eps) {
  const auto start = std::chrono::steady_clock::now();
  EstimateRow row{run_mlmc(mc, *problem.model, problem.observable, eps)};
  row.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return row;
}

}  // namespace

ExperimentConfig default_config(const ModelSpec& model) {
  ExperimentConfig c;
  c.model = model;
  if (const auto* ou = std::get_if<OuSpec>(&model)) {
    c.scheme.kind = SchemeKind::ExplicitEuler;
    c.h0 = 0.5;
    c.schedule = TheoreticalRho{ou->kappa, 2.0};
    c.observable = ObservableKind::SquareNorm;
  } else if (std::holds_alternative<QuarticSpec>(model)) {
    c.scheme.kind = SchemeKind::ImplicitEuler;
    c.h0 = 0.5;
    c.schedule = TheoreticalRho{1.0, 2.0};
    c.observable = ObservableKind::SquareNorm;
  } else {
    c.scheme.kind = SchemeKind::Sgld;
    c.scheme.batch_size = 20;
    c.coupling = SubsampleCoupling::Union;
    c.h0 = 0.02;
    c.schedule = LinearSchedule{3.0, 3.0};
    c.observable = ObservableKind::SquareDistanceFromStart;
  }
  return c;
}

ExperimentConfig parse_config(std::string_view text) {
  try {
    const json doc = json::parse(text);
    reject_unknown(doc, "config",
                   {"model", "observable", "scheme", "compare_couplings", "schedule",
                    "h0", "eps", "seed", "out", "workers", "trace", "mlmc", "rates",
                    "unbiased"});
    ExperimentConfig c =
        default_config(doc.contains("model") ? parse_model(doc.at("model")) : OuSpec{});
    if (doc.contains("observable")) {
      const auto name = doc.at("observable").get<std::string>();
      if (name == "square_norm") {
        c.observable = ObservableKind::SquareNorm;
      } else if (name == "square_distance") {
        c.observable = ObservableKind::SquareDistanceFromStart;
      } else {
        throw ConfigError("unknown observable '" + name + "'");
      }
    }
    if (doc.contains("scheme")) {
      const json& s = doc.at("scheme");
      reject_unknown(s, "scheme",
                     {"type", "batch_size", "coupling", "solver_tol", "solver_max_iter"});
      const auto type = s.at("type").get<std::string>();
      if (type == "euler") {
        c.scheme.kind = SchemeKind::ExplicitEuler;
      } else if (type == "implicit") {
        c.scheme.kind = SchemeKind::ImplicitEuler;
      } else if (type == "sgld") {
        c.scheme.kind = SchemeKind::Sgld;
      } else {
        throw ConfigError("unknown scheme '" + type + "'");
      }
      read(s, "batch_size", c.scheme.batch_size);
      read(s, "solver_tol", c.scheme.solver_tol);
      read(s, "solver_max_iter", c.scheme.solver_max_iter);
      if (s.contains("coupling")) c.coupling = parse_coupling(s.at("coupling").get<std::string>());
    }
    if (doc.contains("compare_couplings")) {
      c.compare_couplings.clear();
      for (const auto& name : doc.at("compare_couplings")) {
        c.compare_couplings.push_back(parse_coupling(name.get<std::string>()));
      }
    }
    if (doc.contains("schedule")) c.schedule = parse_schedule(doc.at("schedule"), c.schedule);
    read(doc, "h0", c.h0);
    read(doc, "eps", c.eps);
    read(doc, "seed", c.seed);
    if (doc.contains("out")) c.out = doc.at("out").get<std::string>();
    read(doc, "workers", c.workers);
    read(doc, "trace", c.trace);
    if (doc.contains("mlmc")) {
      const json& m = doc.at("mlmc");
      reject_unknown(m, "mlmc", {"warmup", "max_level", "alpha", "max_failure_rate"});
      read(m, "warmup", c.warmup);
      read(m, "max_level", c.max_level);
      read(m, "max_failure_rate", c.max_failure_rate);
      if (m.contains("alpha")) {
        if (m.at("alpha").is_string()) {
          if (m.at("alpha").get<std::string>() != "fit") {
            throw ConfigError("mlmc.alpha must be a number or \"fit\"");
          }
          c.alpha.reset();
        } else {
          c.alpha = m.at("alpha").get<double>();
        }
      }
    }
    if (doc.contains("rates")) {
      const json& r = doc.at("rates");
      reject_unknown(r, "rates", {"max_level", "samples", "trace_level", "trace_paths"});
      read(r, "max_level", c.rates_max_level);
      read(r, "samples", c.rates_samples);
      read(r, "trace_level", c.trace_level);
      read(r, "trace_paths", c.trace_paths);
    }
    if (doc.contains("unbiased")) {
      const json& u = doc.at("unbiased");
      reject_unknown(u, "unbiased", {"ratio", "replicas", "beta"});
      read(u, "ratio", c.ratio);
      read(u, "replicas", c.replicas);
      read(u, "beta", c.beta);
    }
    validate(c);
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

Problem build_problem(const ExperimentConfig& config) {
  Problem p;
  std::visit(
      [&](const auto& spec) {
        using S = std::decay_t<decltype(spec)>;
        if constexpr (std::is_same_v<S, OuSpec>) {
          p.model = std::make_unique<OuModel>(spec.kappa, spec.dim);
          p.x0 = State::Zero(spec.dim);
        } else if constexpr (std::is_same_v<S, QuarticSpec>) {
          p.model = std::make_unique<QuarticModel>(spec.dim);
          p.x0 = State::Zero(spec.dim);
        } else {
          p.fixture = spec.fixture ? load_fixture(*spec.fixture)
                                   : generate_logreg_fixture(spec.seed, spec.n_data, spec.dim);
          auto model = std::make_unique<LogRegModel>(p.fixture->model());
          p.map = map_newton(*model);
          p.x0 = p.map->x;
          p.model = std::move(model);
        }
      },
      config.model);
  p.observable = config.observable == ObservableKind::SquareNorm
                     ? square_norm_observable()
                     : square_distance_observable(p.x0);
  return p;
}

LevelConfig level_config(const ExperimentConfig& config) {
  return LevelConfig{config.h0, config.schedule, config.scheme, config.coupling};
}

MlmcConfig mlmc_config(const ExperimentConfig& config, const Problem& problem) {
  MlmcConfig mc;
  mc.sampler.level = level_config(config);
  mc.sampler.x0 = problem.x0;
  mc.sampler.seed = config.seed;
  mc.sampler.workers = config.workers;
  mc.sampler.max_failure_rate = config.max_failure_rate;
  mc.sampler.cancel = config.cancel;
  mc.warmup = config.warmup;
  mc.max_level = config.max_level;
  mc.alpha = config.alpha;
  return mc;
}

RatesReport cmd_rates(const ExperimentConfig& config) {
  const Problem problem = build_problem(config);
  const MlmcConfig mc = mlmc_config(config, problem);
  config.scheme.validate(*problem.model);
  prepare_out(config.out);

  RatesReport report;
  for (int l = 0; l <= config.rates_max_level; ++l) {
    report.plans.push_back(make_level_plan(l, mc.sampler.level));
    report.levels.push_back(sample_level(mc.sampler, report.plans.back(), *problem.model,
                                         problem.observable, 0, config.rates_samples));
  }
  {
    std::ofstream out(config.out / "levels.csv", std::ios::binary);
    write_level_table(out, report.plans, report.levels);
  }
  if (config.rates_max_level >= 3) {
    report.fit = fit_rates(report.levels);
    write_file(config.out / "rates.json", fit_json(report.fit));
  }
  if (config.trace) {
    const LevelPlan plan = make_level_plan(std::max(1, config.trace_level), mc.sampler.level);
    PathTrace trace;
    const StreamKey key{.seed = config.seed,
                        .domain = Domain::Probe,
                        .level = static_cast<std::uint32_t>(plan.level)};
    (void)simulate_delta(plan, *problem.model, problem.observable, problem.x0, key, &trace);
    std::ofstream out(config.out / "trace.csv", std::ios::binary);
    write_trace(out, trace);
  }
  return report;
}

std::vector<EstimateRow> cmd_estimate(const ExperimentConfig& config) {
  const Problem problem = build_problem(config);
  const MlmcConfig mc = mlmc_config(config, problem);
  prepare_out(config.out);

  std::ostringstream table, timing;
  CsvWriter csv(table), timing_csv(timing);
  csv.row({"eps", "value", "cost", "cost_eps2", "max_level", "bias_estimate",
           "variance_estimate", "converged"});
  timing_csv.row({"eps", "wall_seconds", "wall_eps2"});
  std::vector<EstimateRow> rows;
  for (std::size_t i = 0; i < config.eps.size(); ++i) {
    const double eps = config.eps[i];
    EstimateRow row = timed_mlmc(mc, problem, eps);
    const auto& e = row.estimate;
    csv.row({format_double(eps), format_double(e.value), format_double(e.total_cost),
             format_double(e.total_cost * eps * eps), std::to_string(e.max_level),
             format_double(e.bias_estimate), format_double(e.variance_estimate),
             e.converged ? "1" : "0"});
    timing_csv.row({format_double(eps), format_double(row.wall_seconds),
                    format_double(row.wall_seconds * eps * eps)});
    std::ofstream levels(config.out / ("levels_" + std::to_string(i) + ".csv"),
                         std::ios::binary);
    write_level_table(levels, e.plans, e.levels);
    rows.push_back(std::move(row));
    if (e.cancelled) break;
  }
  write_file(config.out / "estimate.csv", table.str());
  write_file(config.out / "timing.csv", timing.str());
  std::string summary_text = "[";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    summary_text += (i ? ",\n " : "\n ") + summary_json(rows[i].estimate);
  }
  write_file(config.out / "summary.json", summary_text + "\n]\n");
  return rows;
}

UnbiasedReport cmd_unbiased(const ExperimentConfig& config) {
  std::optional<RandomizationLaw> law;
  try {
    law.emplace(config.ratio, config.beta, 1.0);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const Problem problem = build_problem(config);
  const MlmcConfig mc = mlmc_config(config, problem);
  prepare_out(config.out);

  UnbiasedConfig uc;
  uc.sampler = mc.sampler;
  UnbiasedReport report;
  report.result = run_unbiased(uc, *problem.model, problem.observable, *law, config.replicas);
  const auto& r = report.result;
  report.ci_low = r.mean - 4.0 * r.standard_error;
  report.ci_high = r.mean + 4.0 * r.standard_error;
  report.expected_cost = r.expected_cost(*law);

  std::ostringstream out;
  out << "{\"ratio\": " << format_double(config.ratio)
      << ", \"replicas\": " << r.replicas << ", \"mean\": " << format_double(r.mean)
      << ", \"variance\": " << format_double(r.variance)
      << ", \"standard_error\": " << format_double(r.standard_error)
      << ", \"ci_low\": " << format_double(report.ci_low)
      << ", \"ci_high\": " << format_double(report.ci_high)
      << ", \"mean_cost\": " << format_double(r.mean_cost)
      << ", \"expected_cost\": " << format_double(report.expected_cost)
      << ", \"deepest_level\": " << r.deepest_level << "}\n";
  write_file(config.out / "unbiased.json", out.str());

  std::vector<LevelPlan> plans;
  for (std::size_t j = 0; j < r.levels.size(); ++j) {
    plans.push_back(make_level_plan(static_cast<int>(j), mc.sampler.level));
  }
  std::ofstream levels(config.out / "unbiased_levels.csv", std::ios::binary);
  write_level_table(levels, plans, r.levels);
  return report;
}

LogregReport cmd_logreg(const ExperimentConfig& config) {
  if (!std::holds_alternative<LogRegSpec>(config.model)) {
    throw ConfigError("logreg command requires a logreg model");
  }
  const Problem problem = build_problem(config);
  prepare_out(config.out);

  LogregReport report;
  report.map = problem.map->x;
  report.map_grad_norm = problem.model->grad_full(report.map).norm();

  std::ostringstream costs, timing;
  CsvWriter csv(costs), timing_csv(timing);
  csv.row({"coupling", "eps", "value", "std_error", "cost", "cost_eps2", "max_level"});
  timing_csv.row({"coupling", "eps", "wall_seconds", "wall_eps2"});
  for (SubsampleCoupling mode : config.compare_couplings) {
    ExperimentConfig mode_config = config;
    mode_config.coupling = mode;
    const MlmcConfig mc = mlmc_config(mode_config, problem);
    LogregModeResult result{mode, {}};
    for (double eps : config.eps) {
      EstimateRow row = timed_mlmc(mc, problem, eps);
      const auto& e = row.estimate;
      const std::string name(to_string(mode));
      csv.row({name, format_double(eps), format_double(e.value),
               format_double(std::sqrt(e.variance_estimate)), format_double(e.total_cost),
               format_double(e.total_cost * eps * eps), std::to_string(e.max_level)});
      timing_csv.row({name, format_double(eps), format_double(row.wall_seconds),
                      format_double(row.wall_seconds * eps * eps)});
      result.rows.push_back(std::move(row));
      if (e.cancelled) break;
    }
    report.modes.push_back(std::move(result));
  }

  // Average coupled-phase distance, union-coupled by default.
  LevelConfig trace_levels = level_config(config);
  const LevelPlan plan = make_level_plan(std::max(1, config.trace_level), trace_levels);
  report.trace_h = plan.h_coarse;
  report.mean_sq_distance.assign(static_cast<std::size_t>(plan.coupled_steps) + 1, 0.0);
  for (std::uint64_t path = 0; path < config.trace_paths; ++path) {
    PathTrace trace;
    const StreamKey key{.seed = config.seed,
                        .domain = Domain::Probe,
                        .level = static_cast<std::uint32_t>(plan.level),
                        .replica = path};
    (void)simulate_delta(plan, *problem.model, problem.observable, problem.x0, key, &trace);
    for (std::size_t k = 0; k < trace.rows.size(); ++k) {
      report.mean_sq_distance[k] += trace.rows[k].sq_distance;
    }
  }
  std::ostringstream distance;
  CsvWriter dcsv(distance);
  dcsv.row({"level", "step", "t", "mean_sq_distance"});
  for (std::size_t k = 0; k < report.mean_sq_distance.size(); ++k) {
    if (config.trace_paths) report.mean_sq_distance[k] /= static_cast<double>(config.trace_paths);
    dcsv.row({std::to_string(plan.level), std::to_string(k),
              format_double(static_cast<double>(k) * plan.h_coarse),
              format_double(report.mean_sq_distance[k])});
  }

  std::ostringstream posterior;
  posterior << "{\"map\": [";
  for (Eigen::Index k = 0; k < report.map.size(); ++k) {
    posterior << (k ? ", " : "") << format_double(report.map[k]);
  }
  posterior << "], \"map_grad_norm\": " << format_double(report.map_grad_norm)
            << ", \"estimates\": [";
  bool first = true;
  for (const auto& m : report.modes) {
    for (const auto& row : m.rows) {
      posterior << (first ? "" : ", ") << "{\"coupling\": \"" << to_string(m.coupling)
                << "\", \"summary\": " << summary_json(row.estimate) << "}";
      first = false;
    }
  }
  posterior << "]}\n";

  write_file(config.out / "posterior.json", posterior.str());
  write_file(config.out / "logreg_costs.csv", costs.str());
  write_file(config.out / "coupling_distance.csv", distance.str());
  write_file(config.out / "timing.csv", timing.str());
  return report;
}

}  // namespace emlmc
