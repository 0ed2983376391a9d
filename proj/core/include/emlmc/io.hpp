#pragma once

#include "emlmc/coupling.hpp"
#include "emlmc/estimator.hpp"
#include "emlmc/model.hpp"

#include <filesystem>
#include <initializer_list>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace emlmc {

/// Decimal form with 17 significant digits; round-trips exactly.
std::string format_double(double value);

/// RFC 4180 writer: CRLF line endings, fields quoted when needed.
class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}

  void row(const std::vector<std::string>& fields);
  void row(std::initializer_list<std::string> fields) {
    row(std::vector<std::string>(fields));
  }

 private:
  std::ostream& out_;
};

/// level,h,T,n_samples,mean,variance,cost,kurtosis (cost = mean per sample).
void write_level_table(std::ostream& out, std::span<const LevelPlan> plans,
                       std::span<const LevelStats> levels);

/// step,t,fine_0..,coarse_0..,sq_distance.
void write_trace(std::ostream& out, const PathTrace& trace);

/// {eps, value, bias_estimate, total_cost, alpha_hat, beta_hat} plus
/// diagnostic fields, as a JSON object string.
std::string summary_json(const MlmcEstimate& estimate);

/// {"seed", "x_true", "n_data", "dim", "iota" (row-major), "labels"} with
/// 17-significant-digit floats.
std::string fixture_to_json(const LogRegFixture& fixture);
LogRegFixture fixture_from_json(std::string_view text);

void save_fixture(const std::filesystem::path& path, const LogRegFixture& fixture);
LogRegFixture load_fixture(const std::filesystem::path& path);

}  // namespace emlmc
