#include "emlmc/io.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace emlmc {

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof(buffer), value,
                                    std::chars_format::general, 17);
  return std::string(buffer, result.ptr);
}

namespace {

std::string json_number(double value) {
  // JSON has no NaN/Inf literals.
  return std::isfinite(value) ? format_double(value) : "null";
}

std::string quote_csv(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string quoted = "\"";
  for (char c : field) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  return quoted + "\"";
}

}  // namespace

void CsvWriter::row(const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out_ << ',';
    out_ << quote_csv(fields[i]);
  }
  out_ << "\r\n";
}

void write_level_table(std::ostream& out, std::span<const LevelPlan> plans,
                       std::span<const LevelStats> levels) {
  CsvWriter csv(out);
  csv.row({"level", "h", "T", "n_samples", "mean", "variance", "cost", "kurtosis"});
  for (std::size_t l = 0; l < levels.size() && l < plans.size(); ++l) {
    const auto& s = levels[l];
    csv.row({std::to_string(plans[l].level), format_double(plans[l].h_fine),
             format_double(plans[l].t_end), std::to_string(s.n()),
             format_double(s.mean()), format_double(s.variance()),
             format_double(s.mean_cost()), format_double(s.delta.kurtosis())});
  }
}

void write_trace(std::ostream& out, const PathTrace& trace) {
  CsvWriter csv(out);
  const Eigen::Index d = trace.rows.empty() ? 0 : trace.rows.front().fine.size();
  std::vector<std::string> header{"step", "t"};
  for (Eigen::Index k = 0; k < d; ++k) header.push_back("fine_" + std::to_string(k));
  for (Eigen::Index k = 0; k < d; ++k) header.push_back("coarse_" + std::to_string(k));
  header.push_back("sq_distance");
  csv.row(header);
  for (const auto& r : trace.rows) {
    std::vector<std::string> fields{std::to_string(r.step), format_double(r.t)};
    for (Eigen::Index k = 0; k < d; ++k) fields.push_back(format_double(r.fine[k]));
    for (Eigen::Index k = 0; k < d; ++k) fields.push_back(format_double(r.coarse[k]));
    fields.push_back(format_double(r.sq_distance));
    csv.row(fields);
  }
}

std::string summary_json(const MlmcEstimate& e) {
  const double alpha = e.rates ? e.rates->alpha_hat : std::nan("");
  const double beta = e.rates ? e.rates->beta_hat : std::nan("");
  std::ostringstream out;
  out << "{\"eps\": " << json_number(e.eps)
      << ", \"value\": " << json_number(e.value)
      << ", \"bias_estimate\": " << json_number(e.bias_estimate)
      << ", \"total_cost\": " << json_number(e.total_cost)
      << ", \"alpha_hat\": " << json_number(alpha)
      << ", \"beta_hat\": " << json_number(beta)
      << ", \"variance_estimate\": " << json_number(e.variance_estimate)
      << ", \"max_level\": " << e.max_level
      << ", \"converged\": " << (e.converged ? "true" : "false")
      << ", \"hit_max_level\": " << (e.hit_max_level ? "true" : "false") << "}";
  return out.str();
}

std::string fixture_to_json(const LogRegFixture& fixture) {
  std::ostringstream out;
  out << "{\n  \"seed\": " << fixture.seed << ",\n  \"n_data\": "
      << fixture.labels.size() << ",\n  \"dim\": " << fixture.covariates.cols()
      << ",\n  \"x_true\": [";
  for (Eigen::Index k = 0; k < fixture.x_true.size(); ++k) {
    out << (k ? ", " : "") << format_double(fixture.x_true[k]);
  }
  out << "],\n  \"iota\": [";
  bool first = true;
  for (Eigen::Index i = 0; i < fixture.covariates.rows(); ++i) {
    for (Eigen::Index k = 0; k < fixture.covariates.cols(); ++k) {
      out << (first ? "" : ", ") << format_double(fixture.covariates(i, k));
      first = false;
    }
  }
  out << "],\n  \"labels\": [";
  for (std::size_t i = 0; i < fixture.labels.size(); ++i) {
    out << (i ? ", " : "") << fixture.labels[i];
  }
  out << "]\n}\n";
  return out.str();
}

LogRegFixture fixture_from_json(std::string_view text) {
  const auto doc = nlohmann::json::parse(text);
  for (const auto& [key, _] : doc.items()) {
    if (key != "seed" && key != "n_data" && key != "dim" && key != "x_true" &&
        key != "iota" && key != "labels") {
      throw std::invalid_argument("unknown fixture key: " + key);
    }
  }
  LogRegFixture fixture;
  fixture.seed = doc.at("seed").get<std::uint64_t>();
  const auto x_true = doc.at("x_true").get<std::vector<double>>();
  const auto iota = doc.at("iota").get<std::vector<double>>();
  fixture.labels = doc.at("labels").get<std::vector<int>>();
  const auto n = static_cast<Eigen::Index>(fixture.labels.size());
  const auto d = static_cast<Eigen::Index>(x_true.size());
  if (doc.contains("n_data") && doc["n_data"].get<Eigen::Index>() != n) {
    throw std::invalid_argument("fixture n_data does not match labels");
  }
  if (doc.contains("dim") && doc["dim"].get<Eigen::Index>() != d) {
    throw std::invalid_argument("fixture dim does not match x_true");
  }
  if (static_cast<Eigen::Index>(iota.size()) != n * d) {
    throw std::invalid_argument("fixture iota has wrong length");
  }
  fixture.x_true = Eigen::Map<const Vector>(x_true.data(), d);
  fixture.covariates.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) {
      fixture.covariates(i, k) = iota[static_cast<std::size_t>(i * d + k)];
    }
  }
  return fixture;
}

void save_fixture(const std::filesystem::path& path, const LogRegFixture& fixture) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << fixture_to_json(fixture);
}

LogRegFixture load_fixture(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return fixture_from_json(text.str());
}

}  // namespace emlmc
