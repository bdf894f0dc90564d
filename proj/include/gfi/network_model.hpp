#pragma once

#include <memory>
#include <vector>

#include "gfi/core.hpp"

namespace gfi::network {

/// D - A for a symmetric hollow 0/1 adjacency matrix.
Matrix laplacian(const Matrix& adjacency);

struct NetworkDataset {
  Matrix adjacency;  // n x n
  Matrix x;          // n x p, centered columns
  Vector y;

  std::size_t n() const { return static_cast<std::size_t>(y.size()); }
  std::size_t p() const { return static_cast<std::size_t>(x.cols()); }
  void validate() const;
};

struct RncParams {
  Vector alpha;
  Vector beta;

  /// (alpha, beta).
  Vector flatten() const;
  static RncParams unflatten(std::size_t n, std::size_t p, const Vector& flat);
};

/// Eigendecomposition of L plus the pieces shared by every draw.
struct GraphSpectrum {
  Vector mu;         // eigenvalues of L, ascending, with round-off clamped to 0
  Matrix v;          // eigenvectors
  Vector root;       // sqrt(mu), 0 on the null space
  Vector inv_root;   // pseudo-inverse of root
  std::vector<bool> null;  // eigenvalue treated as zero

  explicit GraphSpectrum(const Matrix& l);

  Matrix sqrt() const;            // L^{1/2}
  Matrix pinv_sqrt() const;       // (L^{1/2})^+
  Matrix range_projector() const; // P_L
  Matrix pinv() const;            // L^+
};

/// Minimizer of ||v - X beta - alpha||^2 + lambda alpha^T L alpha with
/// v = Y - u*. Requires lambda > 0.
RncParams rnc_fit(const NetworkDataset& data, const GraphSpectrum& spectrum,
                  const Vector& u_star, double lambda);
RncParams rnc_fit(const NetworkDataset& data, const Vector& u_star, double lambda);

/// Same minimizer by direct elimination on the (n + p) normal equations.
RncParams rnc_fit_dense(const Matrix& lap, const Matrix& x, const Vector& v, double lambda);

struct NrDebiasOptions {
  double c = 0.05;
  /// Refit beta from the observed Y and L^{+1/2} eta_de alone instead of
  /// minimizing the perturbed loss over beta.
  bool literal_refit = false;
};

/// Debias in eta = L^{1/2} alpha coordinates with beta held at beta*, map back
/// to alpha, then refit beta.
RncParams nr_debias(const NetworkDataset& data, const GraphSpectrum& spectrum,
                    const Vector& u_star, const RncParams& theta_star, double lambda,
                    const NrDebiasOptions& options);

/// Unpenalized loss in eta coordinates with beta and the null-space part of
/// alpha held at the given values: 1/2 ||v - X beta - (I - P_L) alpha - L^{+1/2} eta||^2.
double eta_loss(const NetworkDataset& data, const GraphSpectrum& spectrum, const Vector& u_star,
                const RncParams& anchor, const Vector& eta);

/// Hessian of eta_loss, i.e. L^+.
Matrix eta_hessian(const GraphSpectrum& spectrum);

/// Cross-validated noise scale: sqrt of the mean validation MSPE over node
/// folds, with validation effects filled in by Laplacian interpolation.
double mspe_sigma(const NetworkDataset& data, double lambda, std::size_t folds, Rng& rng);

/// Fits on the nodes outside `held_out` and predicts the held-out responses,
/// returned in ascending node order.
Vector predict_held_out(const NetworkDataset& data, const std::vector<std::size_t>& held_out,
                        double lambda);

class NetworkModel final : public AdditiveNoiseModel {
 public:
  NetworkModel(std::shared_ptr<const NetworkDataset> data, bool literal_refit = false);

  const NetworkDataset& data() const { return *data_; }
  const GraphSpectrum& spectrum() const { return spectrum_; }
  Layout layout() const;
  RncParams params(const ParameterPoint& theta) const;

  std::size_t noise_size() const override { return data_->n(); }
  const Vector& observed() const override { return data_->y; }
  Vector predict(const ParameterPoint& theta) const override;
  FitResult fit(const Vector& u_star, double lambda, const SolverSettings& settings,
                Rng& rng) const override;
  /// lambda L alpha on the alpha block, zero on beta.
  Vector penalty_gradient(const ParameterPoint& theta, double lambda) const override;
  Matrix jacobian(const ParameterPoint& theta) const override;
  Matrix weighted_curvature(const ParameterPoint& theta, const Vector& weights) const override;
  std::vector<bool> active_mask(const ParameterPoint& theta) const override;
  ParameterPoint debias(const Vector& u_star, const ParameterPoint& theta_star, double lambda,
                        double c, bool gauss_newton_only) const override;
  double estimate_sigma(double lambda, const SolverSettings& settings, Rng& rng) const override;
  double held_out_error(const std::vector<std::size_t>& held_out, double lambda,
                        const SolverSettings& settings, Rng& rng) const override;
  /// The fixed effects beta.
  Vector targets(const ParameterPoint& theta) const override;

 private:
  std::shared_ptr<const NetworkDataset> data_;
  Matrix lap_;
  GraphSpectrum spectrum_;
  bool literal_refit_;
  Eigen::LDLT<Matrix> xtx_;
};

}  // namespace gfi::network
