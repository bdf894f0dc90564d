#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gfi/core.hpp"
#include "gfi/network_model.hpp"

namespace gfi::harness {

enum class ModelKind { tensor, mc, network, linear };

ModelKind parse_model_kind(const std::string& name);
std::string to_string(ModelKind kind);

/// Data-generating knobs. `p` is the observation probability for matrix
/// completion and the covariate count for the network and linear models.
struct ScenarioConfig {
  std::size_t n = 0;
  std::size_t rank = 2;          // R: fitted rank (tensor, mc) and true rank (mc)
  double p = 0.0;
  double p_w = 0.2;
  double p_b = 0.0;
  double s = 0.0;
  double sigma = 1.0;
  std::string image = "rank_exact";
  std::size_t image_size = 16;
};

struct GfiSettings {
  double c = 0.05;
  std::optional<double> lambda;  // empty: cross-validation
  std::optional<double> sigma;   // empty: model estimator
  bool gauss_newton_only = false;
  std::size_t cv_folds = 10;
  std::size_t cv_grid_size = 8;
  double tol = 0.0;
  std::size_t max_iters = 0;
  bool literal_refit = false;
};

struct ExperimentConfig {
  ModelKind model = ModelKind::linear;
  std::size_t replicates = 1;
  std::size_t draws = 1000;
  std::vector<double> levels{0.90, 0.95, 0.99};
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  GfiSettings gfi;
  ScenarioConfig scenario;

  void validate() const;
};

/// Parses the flat `[experiment]` / `[gfi]` / `[scenario]` key = value format.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::filesystem::path& path);

struct CoverageCell {
  std::string group;
  double level = 0.0;
  double coverage = 0.0;
  double mean_width = 0.0;
  std::size_t count = 0;

  friend bool operator==(const CoverageCell&, const CoverageCell&) = default;
};

struct GroupError {
  std::string group;
  std::size_t count = 0;
  double bias = 0.0;  // mean of (estimate - truth)
  double rmse = 0.0;  // root mean square of (estimate - truth)

  friend bool operator==(const GroupError&, const GroupError&) = default;
};

struct CoverageReport {
  std::string model;
  std::size_t replicates_requested = 0;
  std::size_t replicates_completed = 0;
  std::vector<std::string> failures;
  std::vector<CoverageCell> coverage;
  std::vector<GroupError> errors;
  /// Scalar diagnostics averaged over completed replicates (e.g. lambda,
  /// sigma_hat, acceptance_rate, completion_error).
  std::map<std::string, double> metrics;

  const CoverageCell& cell(const std::string& group, double level) const;
  const GroupError& error(const std::string& group) const;

  friend bool operator==(const CoverageReport&, const CoverageReport&) = default;
};

std::string to_json(const CoverageReport& report);
CoverageReport report_from_json(const std::string& text);

/// One row of estimates.csv.
struct TargetEstimate {
  std::size_t replicate = 0;
  std::size_t target_id = 0;
  std::string group;
  double truth = 0.0;
  double point_mean = 0.0;
  double point_median = 0.0;
  std::vector<LevelInterval> intervals;  // scalar lower/upper per level
  bool baseline = false;                 // comparison method, not a sampler output
};

struct ExperimentResult {
  CoverageReport report;
  std::vector<TargetEstimate> estimates;
};

/// Generates every replicate, runs the sampler and aggregates coverage.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

/// JSON dump of the dataset generated for one replicate, including the truth.
std::string dataset_json(const ExperimentConfig& cfg, std::size_t replicate);

/// Writes summary.json, coverage.csv and estimates.csv into `dir`.
void write_outputs(const ExperimentResult& result, const std::filesystem::path& dir);

std::string coverage_csv(const CoverageReport& report);
std::string estimates_csv(const std::vector<TargetEstimate>& estimates);

/// Grid value with the smallest mean held-out squared error over `folds`
/// random folds of the noise slots; ties go to the larger value.
double cv_lambda(const AdditiveNoiseModel& model, const std::vector<double>& grid,
                 std::size_t folds, const SolverSettings& settings, Rng& rng);

/// `count` log-spaced values from lo to hi inclusive.
std::vector<double> log_grid(double lo, double hi, std::size_t count);

struct OlsIntervals {
  Vector estimate;
  std::vector<LevelInterval> intervals;
};

/// Least squares with classical known-sigma normal intervals.
OlsIntervals ols_baseline(const Matrix& x, const Vector& y, double sigma,
                          const std::vector<double>& levels);

/// Formats a double with 17 significant digits.
std::string format_double(double v);

}  // namespace gfi::harness
