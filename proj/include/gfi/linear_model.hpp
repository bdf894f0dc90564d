#pragma once

#include "gfi/core.hpp"

namespace gfi::linear {

/// Y = X theta + U with an optional ridge penalty lambda * ||theta||^2.
/// With X a single column of ones this is the location model.
class LinearModel final : public AdditiveNoiseModel {
 public:
  LinearModel(Matrix x, Vector y);

  static LinearModel location(const Vector& y);

  const Matrix& design() const { return x_; }

  std::size_t noise_size() const override { return static_cast<std::size_t>(y_.size()); }
  const Vector& observed() const override { return y_; }
  Vector predict(const ParameterPoint& theta) const override;
  FitResult fit(const Vector& u_star, double lambda, const SolverSettings& settings,
                Rng& rng) const override;
  Vector penalty_gradient(const ParameterPoint& theta, double lambda) const override;
  Matrix jacobian(const ParameterPoint& theta) const override;
  Matrix weighted_curvature(const ParameterPoint& theta, const Vector& weights) const override;
  std::vector<bool> active_mask(const ParameterPoint& theta) const override;
  /// sqrt(RSS / (n - p)) of the fit at u* = 0.
  double estimate_sigma(double lambda, const SolverSettings& settings, Rng& rng) const override;
  double held_out_error(const std::vector<std::size_t>& held_out, double lambda,
                        const SolverSettings& settings, Rng& rng) const override;

  /// Closed-form ridge solution (X^T X + lambda I)^{-1} X^T v.
  Vector solve(const Vector& v, double lambda) const;

 private:
  Layout layout() const;

  Matrix x_;
  Vector y_;
  Matrix gram_;
};

}  // namespace gfi::linear
