#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "gfi/core.hpp"

namespace gfi::tensor {

using Shape = std::vector<std::size_t>;

/// Number of entries of a tensor with the given shape.
std::size_t volume(const Shape& shape);

/// Rank-R CP factors; factors[d] is p_d x R and column r holds beta_d^(r).
struct CpFactors {
  Shape shape;
  std::size_t rank = 0;
  std::vector<Matrix> factors;

  CpFactors() = default;
  CpFactors(Shape shape_, std::size_t rank_);

  std::size_t order() const { return shape.size(); }
  std::size_t parameter_count() const;

  /// Concatenation of vec(factors[d]) over d, i.e. offset_d + r * p_d + i.
  Vector flatten() const;
  static CpFactors unflatten(const Shape& shape, std::size_t rank, const Vector& flat);

  void validate() const;
};

/// vec(sum_r beta_1^(r) o ... o beta_D^(r)), first index varying fastest.
Vector cp_compose(const CpFactors& f);

/// <X, B> for one predictor tensor given in vec order.
double tr_predict(const Vector& x_vec, const Shape& x_shape, const CpFactors& f);

struct TensorDataset {
  Shape shape;
  Matrix x;  // n x volume(shape); row i is vec(X_i)
  Vector y;

  std::size_t n() const { return static_cast<std::size_t>(y.size()); }
  void validate() const;
  TensorDataset subset(const std::vector<Eigen::Index>& rows) const;
};

/// Design of the mode-d subproblem: column r * p_d + i is the derivative of
/// <X_k, B> with respect to beta_d^(r)[i].
Matrix mode_design(const TensorDataset& data, const CpFactors& f, std::size_t mode);

struct BlockRelaxationSettings {
  double tol = 1e-8;             // relative objective decrease per cycle
  std::size_t max_cycles = 200;
  double cd_tol = 1e-12;         // coordinate-descent stopping rule
  std::size_t cd_max_sweeps = 2000;
};

struct BlockRelaxationResult {
  CpFactors factors;
  bool converged = false;
  std::size_t cycles = 0;
  double objective = 0.0;
  std::vector<double> objective_trace;  // after each cycle
};

/// 1/2 ||response - <X, B>||^2 + 1/2 lambda sum_{d,r} ||beta_d^(r)||_1.
double penalized_objective(const TensorDataset& data, const Vector& response,
                           const CpFactors& f, double lambda);

/// Cyclic block relaxation: each mode subproblem is a lasso solved exactly by
/// coordinate descent with soft-thresholding. Starts from `initial` when
/// given, otherwise from i.i.d. normal factors with variance 1/sqrt(p_d R).
BlockRelaxationResult block_relaxation_fit(const TensorDataset& data, const Vector& response,
                                           std::size_t rank, double lambda,
                                           const BlockRelaxationSettings& settings, Rng& rng,
                                           const std::optional<CpFactors>& initial = std::nullopt);

struct SigmaEstimate {
  double value = 0.0;
  bool degenerate = false;  // zero residual; value is the floor
};

/// sqrt(RSS / n) of a single fit with u* = 0.
SigmaEstimate sigma_mle(const TensorDataset& data, std::size_t rank, double lambda,
                        const BlockRelaxationSettings& settings, Rng& rng);

class TensorModel final : public AdditiveNoiseModel {
 public:
  TensorModel(std::shared_ptr<const TensorDataset> data, std::size_t rank,
              BlockRelaxationSettings settings = {});

  const TensorDataset& data() const { return *data_; }
  std::size_t rank() const { return rank_; }
  Layout layout() const;
  CpFactors factors(const ParameterPoint& theta) const;

  std::size_t noise_size() const override { return data_->n(); }
  const Vector& observed() const override { return data_->y; }
  Vector predict(const ParameterPoint& theta) const override;
  FitResult fit(const Vector& u_star, double lambda, const SolverSettings& settings,
                Rng& rng) const override;
  Vector penalty_gradient(const ParameterPoint& theta, double lambda) const override;
  Matrix jacobian(const ParameterPoint& theta) const override;
  Matrix weighted_curvature(const ParameterPoint& theta, const Vector& weights) const override;
  double estimate_sigma(double lambda, const SolverSettings& settings, Rng& rng) const override;
  double held_out_error(const std::vector<std::size_t>& held_out, double lambda,
                        const SolverSettings& settings, Rng& rng) const override;
  /// vec(B) composed from the factors.
  Vector targets(const ParameterPoint& theta) const override;

 private:
  BlockRelaxationSettings merged(const SolverSettings& s) const;

  std::shared_ptr<const TensorDataset> data_;
  std::size_t rank_;
  BlockRelaxationSettings settings_;
};

}  // namespace gfi::tensor
