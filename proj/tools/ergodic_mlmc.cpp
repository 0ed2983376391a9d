// ergodic-mlmc: multilevel Monte Carlo for Langevin invariant measures.
//
//   ergodic-mlmc <rates|estimate|unbiased|logreg> --config <path>
//       [--seed u64] [--eps 0.05,0.025] [--out dir] [--workers n] [--trace]
//
// Exit codes: 0 success, 2 config or IO error, 3 numerical failure,
// 130 interrupted (partial results flushed).

#include "emlmc/experiment.hpp"
#include "emlmc/io.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <iostream>
#include <sstream>

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted.store(true); }

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitInterrupted = 130;

std::vector<double> parse_eps_list(const std::string& text) {
  std::vector<double> values;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size()) throw emlmc::ConfigError("bad --eps entry '" + item + "'");
    values.push_back(v);
  }
  if (values.empty()) throw emlmc::ConfigError("--eps list is empty");
  return values;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uniform-in-time multilevel Monte Carlo for Langevin dynamics"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string eps_text;
  std::string out_dir;
  std::optional<unsigned> workers;
  bool trace = false;

  const char* commands[][2] = {
      {"rates", "Fixed-N sampling per level and variance/weak rate fit"},
      {"estimate", "Adaptive MLMC for each eps"},
      {"unbiased", "Randomized-truncation unbiased estimator"},
      {"logreg", "MLMC-SGLD study for Bayesian logistic regression"}};
  for (const auto& [name, description] : commands) {
    auto* sub = app.add_subcommand(name, description);
    sub->add_option("--config", config_path, "JSON experiment config")->required();
    sub->add_option("--seed", seed, "Global seed");
    sub->add_option("--eps", eps_text, "Comma-separated target RMSE list");
    sub->add_option("--out", out_dir, "Output directory");
    sub->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--trace", trace, "Write per-path distance traces");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    emlmc::ExperimentConfig config = emlmc::load_config(config_path);
    if (seed) config.seed = *seed;
    if (!eps_text.empty()) config.eps = parse_eps_list(eps_text);
    if (!out_dir.empty()) config.out = out_dir;
    if (workers) config.workers = *workers;
    if (const char* env = std::getenv("ERGODIC_MLMC_WORKERS")) {
      const int n = std::atoi(env);
      if (n < 1) throw emlmc::ConfigError("ERGODIC_MLMC_WORKERS must be a positive integer");
      config.workers = static_cast<unsigned>(n);
    }
    if (trace) config.trace = true;
    config.cancel = &g_interrupted;

    if (command == "rates") {
      const auto report = emlmc::cmd_rates(config);
      std::cout << "beta_hat " << emlmc::format_double(report.fit.beta_hat)
                << " alpha_hat " << emlmc::format_double(report.fit.alpha_hat) << '\n';
    } else if (command == "estimate") {
      for (const auto& row : emlmc::cmd_estimate(config)) {
        std::cout << emlmc::summary_json(row.estimate) << '\n';
      }
    } else if (command == "unbiased") {
      const auto report = emlmc::cmd_unbiased(config);
      std::cout << "mean " << emlmc::format_double(report.result.mean) << " ci ["
                << emlmc::format_double(report.ci_low) << ", "
                << emlmc::format_double(report.ci_high) << "] mean_cost "
                << emlmc::format_double(report.result.mean_cost) << '\n';
    } else {
      const auto report = emlmc::cmd_logreg(config);
      std::cout << "map_grad_norm " << emlmc::format_double(report.map_grad_norm) << '\n';
      for (const auto& mode : report.modes) {
        for (const auto& row : mode.rows) {
          std::cout << emlmc::to_string(mode.coupling) << ' '
                    << emlmc::summary_json(row.estimate) << '\n';
        }
      }
    }
  } catch (const emlmc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const emlmc::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  }
  if (g_interrupted.load()) {
    std::cerr << "interrupted; partial results written\n";
    return kExitInterrupted;
  }
  return 0;
}
