#pragma once

#include <array>
#include <string>

#include "gfi/mc_model.hpp"
#include "gfi/network_model.hpp"
#include "gfi/tensor_model.hpp"

namespace gfi::simgen {

// ---- stochastic block model -------------------------------------------------

/// Three equal blocks; edge probability p_w inside a block and p_b across.
struct SbmSpec {
  std::size_t n = 0;
  double p_w = 0.0;
  double p_b = 0.0;

  void validate() const;
};

/// Block (0, 1 or 2) of node i in an n-node three-block model.
std::size_t sbm_block(std::size_t i, std::size_t n);

Matrix gen_sbm(const SbmSpec& spec, Rng& rng);

// ---- matrix completion ------------------------------------------------------

/// A and B with orthonormal columns from the QR factorization of Gaussian
/// matrices (signs fixed so that diag(R) > 0).
mc::FactorPair gen_orthonormal_factors(std::size_t n, std::size_t rank, Rng& rng);

struct McInstance {
  Matrix truth;  // M = A B^T
  std::shared_ptr<const mc::ObservedMatrix> observed;
};

/// Square n x n rank-R truth, each entry observed independently with
/// probability p_obs, N(0, sigma^2) noise on the observed entries.
McInstance gen_mc_instance(std::size_t n, std::size_t rank, double p_obs, double sigma, Rng& rng);

// ---- tensor regression ------------------------------------------------------

enum class CoefficientKind { rank_exact, shapes, dense_image };

CoefficientKind parse_coefficient_kind(const std::string& name);
std::string to_string(CoefficientKind kind);

struct ImageOptions {
  std::size_t rank = 3;        // rank_exact: number of rank-one blocks
  std::size_t rectangles = 2;  // shapes
  std::size_t disks = 1;       // shapes
};

struct TensorCoefficient {
  tensor::Shape shape;
  Vector values;          // vec order, first index fastest
  double sparsity = 0.0;  // fraction of non-zero entries
};

/// Fraction of entries with |v| > 0.
double sparsity(const Vector& values);

/// Programmatic 2D coefficient images: exact low rank with sparse factors,
/// piecewise-constant rectangles and disks, or a smooth everywhere-nonzero
/// field.
TensorCoefficient gen_tensor_coefficient(CoefficientKind kind, const tensor::Shape& shape,
                                         Rng& rng, const ImageOptions& options = {});

/// n standard-normal predictors and Y_i = <X_i, B> + N(0, sigma^2).
std::shared_ptr<const tensor::TensorDataset> gen_tensor_dataset(const TensorCoefficient& coef,
                                                                std::size_t n, double sigma,
                                                                Rng& rng);

// ---- network regression -----------------------------------------------------

struct NrTruth {
  Vector alpha;
  Vector beta;
};

/// beta ~ N(1, I_p); alpha_i ~ N(eta_{block(i)}, s^2).
NrTruth gen_nr_truth(std::size_t n, std::size_t p, double s,
                     const std::array<double, 3>& eta_means, Rng& rng);

/// Standard-normal covariates with centered columns.
Matrix gen_centered_covariates(std::size_t n, std::size_t p, Rng& rng);

/// Y = X beta + alpha + N(0, sigma^2).
Vector gen_nr_response(const Matrix& x, const NrTruth& truth, double sigma, Rng& rng);

}  // namespace gfi::simgen
