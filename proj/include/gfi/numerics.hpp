#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace gfi {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Raised when a caller violates a documented precondition.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a numerical routine cannot produce a usable answer.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace numerics {

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
struct SymmetricEigen {
  Vector values;
  Matrix vectors;
};

void require_symmetric(const Matrix& a, double tol, const char* what);

/// Full eigendecomposition of a symmetric matrix, eigenvalues ascending.
/// Uses LAPACK dsyevd when it passes a one-time self-check, Eigen otherwise.
SymmetricEigen symmetric_eigen(const Matrix& a);

/// Whether symmetric_eigen is backed by LAPACK on this machine.
bool lapack_eigensolver_active();

/// Cutoff below which singular values of a spectrum are treated as zero.
/// For c > 0 this is c * zeta_1; for c == 0 a machine-scale cutoff.
double truncation_cutoff(const Vector& eigenvalues, double c);

/// Moore-Penrose inverse of a symmetric matrix where every singular value
/// strictly below c * zeta_1 is zeroed. c == 0 drops only values at round-off
/// scale (zeta_1 * 1e-12 * n).
Matrix truncated_pinv(const Matrix& h, double c);

/// Applies truncated_pinv(h, c) to v without materializing the inverse.
Vector apply_truncated_pinv(const Matrix& h, double c, const Vector& v);

/// Same as apply_truncated_pinv but reuses a decomposition of h.
Vector apply_truncated_pinv(const SymmetricEigen& eig, double c, const Vector& v);

struct SqrtPair {
  Matrix sqrt;       // L^{1/2}
  Matrix pinv_sqrt;  // (L^{1/2})^+
};

/// Square root and pseudo-inverse square root of a symmetric PSD matrix.
/// Eigenvalues below 1e-10 * lambda_max are treated as zero.
SqrtPair matrix_sqrt_and_pinv_sqrt(const Matrix& l);

/// Linear-interpolation quantile with h = (n - 1) q + 1 on 1-based order
/// statistics.
double quantile(std::span<const double> values, double q);

/// quantile() for input that is already sorted ascending.
double quantile_sorted(std::span<const double> sorted, double q);

double median(std::span<const double> values);

/// 1.4826 * median(|x - median(x)|).
double mad_scale(std::span<const double> values);

/// Standard normal quantile function.
double normal_quantile(double p);

// ---------------------------------------------------------------------------
// Random numbers

/// Philox4x32-10 block function.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

std::uint64_t splitmix64(std::uint64_t x);

/// Immutable descriptor of an independent random sequence.
struct RandomStream {
  std::uint64_t master_seed = 0;
  std::uint64_t stream_id = 0;

  /// A stream keyed by (this stream, tag); distinct tags give distinct streams.
  RandomStream child(std::uint64_t tag) const;

  friend bool operator==(const RandomStream&, const RandomStream&) = default;
};

/// Counter-based generator over a RandomStream. Output depends only on the
/// descriptor and how many values were requested before.
class Rng {
 public:
  explicit Rng(RandomStream stream) : stream_(stream) {}

  const RandomStream& stream() const { return stream_; }

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);

 private:
  void refill();

  RandomStream stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int used_ = 4;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

Vector gaussian(Rng& rng, std::size_t n, double sigma);
Vector gaussian(const RandomStream& stream, std::size_t n, double sigma);

/// Random permutation of 0..n-1 (Fisher-Yates).
std::vector<std::size_t> permutation(Rng& rng, std::size_t n);

}  // namespace numerics
}  // namespace gfi
