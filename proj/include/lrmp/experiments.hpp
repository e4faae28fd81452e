#pragma once

#include "lrmp/builtin_models.hpp"
#include "lrmp/estimators.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace lrmp {

/// One estimator of a sweep. `scheme` empty means the experiment's default scheme.
struct EstimatorSpec {
  std::string name;  // mp1, mp2, gk1, gk2, nemd
  std::string scheme;

  /// "mp1" or "mp1:bca" (estimator, optional scheme override).
  static EstimatorSpec parse(const std::string& s);
  std::string to_string() const { return scheme.empty() ? name : name + ":" + scheme; }
};

/// Ground truth echoed into every row. `source` is one of "paper", "nemd-oracle", "gaussian-integral".
struct ReferenceSpec {
  std::string source;
  std::map<std::string, double> values;  // observable name -> value
};

struct ExperimentConfig {
  std::string model = "example1";
  ModelOverrides overrides;
  std::string scheme = "bacab";
  std::vector<EstimatorSpec> estimators;
  std::vector<double> dt_grid;
  double t_final = 100;
  double t_burn = 20;
  double t_warmup = 0;  // weight-only steps between burn-in and accumulation (MP)
  std::int64_t n_realizations = 10000;
  std::uint64_t seed = 1;
  std::vector<double> checkpoints;  // physical times
  double eta = 0.05;
  NemdDifference nemd_difference = NemdDifference::Forward;
  bool coupled = true;
  std::optional<double> g_coefficient;  // g = c * 2 phi; empty means c = beta / (4 gamma)
  std::optional<double> center;         // GK centre; empty means the grand mean
  std::string response = "eta";         // "eta", or "beta" (example2 only: d/d beta via F = p)
  std::optional<ReferenceSpec> reference;
  std::string output_path;
  int workers = 0;
  bool record_timing = false;

  /// Throws ConfigError on any invalid field or estimator/scheme pairing.
  void validate() const;
};

/// Column order of the CSV.
inline const std::vector<std::string>& result_columns() {
  static const std::vector<std::string> cols = {
      "example",     "observable",      "scheme",          "estimator",        "dt",
      "n_steps",     "n_realizations",  "seed",            "estimate",         "stderr",
      "bias",        "reference_value", "reference_source", "checkpoint_time", "checkpoint_variance",
      "wall_seconds"};
  return cols;
}

struct ResultRow {
  std::string example;
  std::string observable;
  std::string scheme;
  std::string estimator;
  double dt = 0;
  std::int64_t n_steps = 0;
  std::int64_t n_realizations = 0;
  std::uint64_t seed = 0;
  double estimate = 0;
  double stderr_ = 0;
  std::optional<double> bias;
  std::optional<double> reference_value;
  std::string reference_source;
  std::optional<double> checkpoint_time;  // empty on summary rows
  std::optional<double> checkpoint_variance;
  std::optional<double> wall_seconds;

  bool is_summary() const { return !checkpoint_time.has_value(); }
};

/// N = round(T / h), at least 1.
std::int64_t steps_for(double t, double h);

/// Scale mapping the eta-response to the reported quantity (1, or -gamma/beta for "beta").
double response_scale(const ExperimentConfig& cfg);

std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg);

std::string format_csv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> parse_csv(const std::string& text);

/// Write `content` to a temporary sibling then rename over `path`.
void write_file_atomic(const std::string& path, const std::string& content);

/// key=value sidecar describing the configuration, build version and seed.
std::string format_metadata(const ExperimentConfig& cfg);

/// CSV plus sidecar (`<output_path>.meta`); returns the rows.
std::vector<ResultRow> run_and_write(const ExperimentConfig& cfg);

struct SlopeFit {
  double slope = 0;
  double intercept = 0;
  double r2 = 0;
  int n_used = 0;
  std::vector<std::string> warnings;
};

/// Least squares of log|bias| on log dt. Nonpositive values are dropped with a warning; fewer than
/// two surviving points throws std::invalid_argument.
SlopeFit fit_slope(const std::vector<std::pair<double, double>>& points);

/// Ordinary least squares y = a + b x with coefficient of determination.
SlopeFit fit_line(const std::vector<std::pair<double, double>>& points);

struct VarianceGrowth {
  std::string estimator;
  std::string scheme;
  std::string observable;
  double dt = 0;
  double slope = 0;  // of Var against T
  double r2 = 0;
  double ratio = 0;  // Var(T_max) / Var(checkpoint nearest T_max / 8)
  double t_max = 0;
  double t_low = 0;
};

/// One entry per (estimator, scheme, observable, dt) with at least three checkpoint rows.
std::vector<VarianceGrowth> variance_growth_diagnostics(const std::vector<ResultRow>& rows);

/// Closed-form responses from Gaussian moments of the harmonic examples (empty for example3):
/// example1 d/d eta E|q|^2 = 2 / (beta omega^2); example2 d/d beta of E|q|^2 and E(p1^4 + p2^4).
std::optional<ReferenceSpec> gaussian_reference(const std::string& model, const ModelOverrides& overrides,
                                                const std::string& response);

/// Built-in experiment for example n in {1, 2, 3}.
ExperimentConfig example_preset(int n);

}  // namespace lrmp
