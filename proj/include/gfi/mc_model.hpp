#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "gfi/core.hpp"

namespace gfi::mc {

using Entry = std::pair<std::size_t, std::size_t>;

/// Y restricted to the observed index set. values[k] belongs to omega[k].
class ObservedMatrix {
 public:
  ObservedMatrix(std::size_t rows, std::size_t cols, std::vector<Entry> omega, Vector values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return omega_.size(); }
  const std::vector<Entry>& omega() const { return omega_; }
  const Vector& values() const { return values_; }

  /// Observed-entry indices in row i / column j.
  const std::vector<std::size_t>& row_entries(std::size_t i) const { return by_row_[i]; }
  const std::vector<std::size_t>& col_entries(std::size_t j) const { return by_col_[j]; }

  /// Zero-filled dense view f(Y).
  Matrix dense() const;
  /// Zero-filled dense view of arbitrary values on omega.
  Matrix scatter(const Vector& on_omega) const;
  /// |omega| / (rows * cols).
  double fraction_observed() const;
  /// Entries not in omega, row-major.
  std::vector<Entry> missing() const;
  /// Keeps the listed observed entries.
  ObservedMatrix subset(const std::vector<std::size_t>& keep) const;

 private:
  std::size_t rows_, cols_;
  std::vector<Entry> omega_;
  Vector values_;
  std::vector<std::vector<std::size_t>> by_row_, by_col_;
};

/// Copies the entries of m listed in omega.
ObservedMatrix project_omega(const Matrix& m, const std::vector<Entry>& omega);

struct FactorPair {
  Matrix a;  // rows x R
  Matrix b;  // cols x R

  std::size_t rank() const { return static_cast<std::size_t>(a.cols()); }
  Matrix product() const { return a * b.transpose(); }
  /// (vec A, vec B), column-major.
  Vector flatten() const;
  static FactorPair unflatten(std::size_t rows, std::size_t cols, std::size_t rank,
                              const Vector& flat);
};

struct AlsSettings {
  double tol = 1e-9;  // relative objective decrease
  std::size_t max_iters = 500;
};

struct AlsResult {
  FactorPair factors;
  bool converged = false;
  std::size_t iterations = 0;
  double objective = 0.0;
};

/// 1/2 ||Y - f(AB^T) - U*||^2 + 1/2 lambda (||A||^2 + ||B||^2).
double mc_objective(const ObservedMatrix& y, const Vector& u_star, const FactorPair& f,
                    double lambda);

/// Spectral initialization from the rank-R SVD of (Y - f(U*)) / p_hat followed
/// by alternating row-wise ridge updates.
AlsResult two_stage_fit(const ObservedMatrix& y, const Vector& u_star, std::size_t rank,
                        double lambda, const AlsSettings& settings = {});

/// 1.4826 * MAD of the observed residuals after one fit at u* = 0. Returns 0
/// when all residuals coincide.
double mad_sigma(const ObservedMatrix& y, std::size_t rank, double lambda,
                 const AlsSettings& settings = {});

/// Largest singular value of f(Y); anchors the default lambda grid.
double spectral_norm(const ObservedMatrix& y);

class McModel final : public AdditiveNoiseModel {
 public:
  McModel(std::shared_ptr<const ObservedMatrix> data, std::size_t rank, AlsSettings settings = {});

  const ObservedMatrix& data() const { return *data_; }
  std::size_t rank() const { return rank_; }
  Layout layout() const;
  FactorPair factors(const ParameterPoint& theta) const;
  const std::vector<Entry>& missing() const { return missing_; }

  std::size_t noise_size() const override { return data_->size(); }
  const Vector& observed() const override { return data_->values(); }
  Vector predict(const ParameterPoint& theta) const override;
  FitResult fit(const Vector& u_star, double lambda, const SolverSettings& settings,
                Rng& rng) const override;
  Vector penalty_gradient(const ParameterPoint& theta, double lambda) const override;
  Matrix jacobian(const ParameterPoint& theta) const override;
  Matrix weighted_curvature(const ParameterPoint& theta, const Vector& weights) const override;
  /// Assembled from the sparse observation pattern rather than from J^T J.
  Matrix hessian(const Vector& u_star, const ParameterPoint& theta,
                 bool gauss_newton_only) const override;
  /// Quadratic penalty: every coordinate is active.
  std::vector<bool> active_mask(const ParameterPoint& theta) const override;
  double estimate_sigma(double lambda, const SolverSettings& settings, Rng& rng) const override;
  double held_out_error(const std::vector<std::size_t>& held_out, double lambda,
                        const SolverSettings& settings, Rng& rng) const override;
  /// Entries of AB^T at the unobserved positions, in missing() order.
  Vector targets(const ParameterPoint& theta) const override;

 private:
  AlsSettings merged(const SolverSettings& s) const;

  std::shared_ptr<const ObservedMatrix> data_;
  std::size_t rank_;
  AlsSettings settings_;
  std::vector<Entry> missing_;
};

/// Point estimates and percentile intervals of the missing entries.
SummaryReport mc_complete(const McModel& model, const FiducialSample& sample,
                          const std::vector<double>& levels);

}  // namespace gfi::mc
