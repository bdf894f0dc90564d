#pragma once

// Model-agnostic fiducial sampler: perturb the data with fresh noise, refit
// the penalized model, remove the penalty-induced shift, and keep the draws
// whose loss passes a Tukey-fence acceptance rule.
//
// Objective convention: every model minimizes
//     1/2 * ||Y - G(theta) - U*||^2 + 1/2 * penalty(theta)
// where penalty() is written on the usual (unhalved) scale, e.g.
// lambda * ||theta||_1. The minimizer is the same as for the unhalved form,
// and the stationarity equation reads -J^T r + xi = 0 with xi = grad(penalty)/2.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gfi/numerics.hpp"

namespace gfi {

using numerics::RandomStream;
using numerics::Rng;

/// Describes how a flat parameter vector is laid out for one model family.
struct Layout {
  std::string kind;
  std::vector<std::size_t> dims;

  friend bool operator==(const Layout&, const Layout&) = default;
};

struct ParameterPoint {
  Vector flat;
  std::vector<bool> active;
  Layout layout;

  ParameterPoint() = default;
  ParameterPoint(Vector values, Layout layout_);
  ParameterPoint(Vector values, std::vector<bool> mask, Layout layout_);

  std::size_t size() const { return static_cast<std::size_t>(flat.size()); }
  std::size_t active_count() const;
};

/// Indices of the true entries of a mask.
std::vector<Eigen::Index> active_indices(const std::vector<bool>& mask);

/// Mask that is true exactly where v is non-zero.
std::vector<bool> nonzero_mask(const Vector& v);

struct FitResult {
  ParameterPoint theta;
  bool converged = true;
  std::size_t iterations = 0;
  /// Final value of the internal (halved) objective.
  double objective = 0.0;
};

/// Model-specific solver knobs shared by all plugins.
struct SolverSettings {
  double tol = 0.0;            // 0 selects the model default
  std::size_t max_iters = 0;   // 0 selects the model default
};

/// Contract every additive-noise model plugin fulfils. A model instance owns
/// (or shares) its data and is used read-only from many threads at once.
class AdditiveNoiseModel {
 public:
  virtual ~AdditiveNoiseModel() = default;

  /// Number of observation slots that receive noise.
  virtual std::size_t noise_size() const = 0;
  /// Observed responses on the noise slots.
  virtual const Vector& observed() const = 0;
  /// Fitted responses G(X_i, theta) on the noise slots.
  virtual Vector predict(const ParameterPoint& theta) const = 0;

  /// Minimizes 1/2||Y - G - u*||^2 + 1/2 penalty(theta). `lambda` is on the
  /// unhalved scale. `rng` serves any randomized initialization.
  virtual FitResult fit(const Vector& u_star, double lambda, const SolverSettings& settings,
                        Rng& rng) const = 0;

  /// xi(theta) = 1/2 grad penalty(theta), full length (zero where undefined).
  virtual Vector penalty_gradient(const ParameterPoint& theta, double lambda) const = 0;

  /// Rows are grad G(X_i, theta), one per noise slot.
  virtual Matrix jacobian(const ParameterPoint& theta) const = 0;

  /// sum_i w_i * Hess G(X_i, theta).
  virtual Matrix weighted_curvature(const ParameterPoint& theta, const Vector& weights) const = 0;

  /// H(theta) on all coordinates; default assembles hessian_default().
  virtual Matrix hessian(const Vector& u_star, const ParameterPoint& theta,
                         bool gauss_newton_only) const;

  /// Coordinates eligible for debiasing; default excludes exact zeros.
  virtual std::vector<bool> active_mask(const ParameterPoint& theta) const;

  /// One-step bias correction; default is gfi::debias().
  virtual ParameterPoint debias(const Vector& u_star, const ParameterPoint& theta_star,
                                double lambda, double c, bool gauss_newton_only) const;

  /// Noise scale estimated from the observed data alone.
  virtual double estimate_sigma(double lambda, const SolverSettings& settings, Rng& rng) const = 0;

  /// Refits without the held-out slots and returns the summed squared
  /// prediction error on them.
  virtual double held_out_error(const std::vector<std::size_t>& held_out, double lambda,
                                const SolverSettings& settings, Rng& rng) const = 0;

  /// Quantities reported for a parameter point (defaults to theta itself).
  virtual Vector targets(const ParameterPoint& theta) const { return theta.flat; }
};

/// sum_i [ -Hess G_i * (Y_i - G_i - U*_i) + grad G_i grad G_i^T ]; the curvature
/// term is skipped when gauss_newton_only is set.
Matrix hessian_default(const AdditiveNoiseModel& model, const Vector& u_star,
                       const ParameterPoint& theta, bool gauss_newton_only);

/// The correction pinv_c(H) * xi.
Vector debias_step(const Matrix& h, const Vector& xi, double c);

/// theta* + pinv_c(H) xi on the active coordinates; inactive entries keep
/// their fitted values.
ParameterPoint debias(const AdditiveNoiseModel& model, const Vector& u_star,
                      const ParameterPoint& theta_star, double lambda, double c,
                      bool gauss_newton_only);

/// rho(Y, G(theta) + u*) = ||Y - G(theta) - u*||^2.
double draw_loss(const AdditiveNoiseModel& model, const Vector& u_star,
                 const ParameterPoint& theta);

struct FilterResult {
  double epsilon = 0.0;
  std::vector<bool> accepted;
};

/// epsilon = Q3 + 1.5 (Q3 - Q1); a loss is accepted iff loss <= epsilon.
FilterResult acceptance_filter(const std::vector<double>& losses);

struct SigmaChoice {
  std::optional<double> known;  // empty: estimate from data
};

struct GfiConfig {
  std::size_t m = 1000;
  double c = 0.05;
  double lambda = 0.0;
  SigmaChoice sigma;
  SolverSettings solver;
  std::uint64_t seed = 0;
  bool gauss_newton_only = false;
  std::size_t workers = 1;
  /// Abort when more than this fraction of draws fail.
  double max_failure_fraction = 0.2;

  void validate() const;
};

struct FiducialDraw {
  Vector u_star;
  ParameterPoint theta_star;
  ParameterPoint theta_de;
  double loss = 0.0;
  bool accepted = false;
  bool failed = false;
  bool converged = true;
  std::string failure;
};

struct FiducialSample {
  std::vector<FiducialDraw> draws;
  double epsilon = 0.0;
  double sigma_used = 0.0;

  std::size_t accepted_count() const;
  std::size_t failed_count() const;
};

/// Runs the perturb / optimize / debias loop followed by the acceptance filter.
/// Draw i (1-based) always uses stream (cfg.seed, i), so the result does not
/// depend on cfg.workers.
FiducialSample run_autogfi(const AdditiveNoiseModel& model, const GfiConfig& cfg);

/// Noise scale used by run_autogfi for this model and config.
double resolve_sigma(const AdditiveNoiseModel& model, const GfiConfig& cfg);

struct LevelInterval {
  double level = 0.0;
  Vector lower;
  Vector upper;
};

struct SummaryReport {
  Vector point_mean;
  Vector point_median;
  std::vector<LevelInterval> intervals;

  const LevelInterval& at(double level) const;
};

/// Per-coordinate mean, median and percentile intervals over a set of draws.
SummaryReport summarize(const std::vector<Vector>& values, const std::vector<double>& levels);

/// summarize() over the accepted theta_de draws.
SummaryReport summarize(const FiducialSample& sample, const std::vector<double>& levels);

/// summarize() over model.targets(theta_de) of the accepted draws.
SummaryReport summarize_targets(const AdditiveNoiseModel& model, const FiducialSample& sample,
                                const std::vector<double>& levels);

/// Runs `task(i)` for i in [0, count) on up to `workers` threads.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& task);

}  // namespace gfi
