#include "gfi/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <mutex>
#include <numbers>
#include <optional>

#include <boost/math/distributions/normal.hpp>
#include <lapacke.h>

extern "C" void openblas_set_num_threads(int);

namespace gfi::numerics {

namespace {

// Parallelism lives in the draw/replicate pool; BLAS stays single-threaded so
// results do not depend on how work is spread across threads.
void pin_blas_threads() {
  static std::once_flag once;
  std::call_once(once, [] { openblas_set_num_threads(1); });
}

SymmetricEigen eigen_fallback(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a);
  if (es.info() != Eigen::Success) throw SolverError("symmetric_eigen: eigensolver failed");
  return {es.eigenvalues(), es.eigenvectors()};
}

bool lapack_dsyevd(const Matrix& a, SymmetricEigen& out) {
  const auto n = static_cast<lapack_int>(a.rows());
  out.values.resize(n);
  out.vectors = a;
  return LAPACKE_dsyevd(LAPACK_COL_MAJOR, 'V', 'L', n, out.vectors.data(), n,
                        out.values.data()) == 0;
}

// Some OpenBLAS builds dispatch to a kernel that returns garbage on newer
// CPUs. Check once on a matrix large enough to hit the blocked code path.
bool probe_lapack() {
  pin_blas_threads();
  const Eigen::Index n = 160;
  Matrix a(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      a(i, j) = a(j, i) = std::sin(0.37 * static_cast<double>(i * n + j) + 1.0);
    }
  }
  SymmetricEigen e;
  if (!lapack_dsyevd(a, e)) return false;
  const double orth = (e.vectors.transpose() * e.vectors - Matrix::Identity(n, n)).norm();
  const double resid = (a * e.vectors - e.vectors * e.values.asDiagonal()).norm();
  const bool ok = e.values.allFinite() && e.vectors.allFinite() && orth < 1e-9 && resid < 1e-9 * std::max(1.0, a.norm());
  if (!ok) {
    std::fprintf(stderr,
                 "gfi: LAPACK eigensolver failed its self-check; using the slower Eigen "
                 "solver (for OpenBLAS, try setting OPENBLAS_CORETYPE)\n");
  }
  return ok;
}

}  // namespace

bool lapack_eigensolver_active() {
  static const bool ok = probe_lapack();
  return ok;
}

void require_symmetric(const Matrix& a, double tol, const char* what) {
  if (a.rows() != a.cols()) {
    throw ContractError(std::string(what) + ": matrix is not square");
  }
  if (!a.allFinite()) {
    throw ContractError(std::string(what) + ": matrix has non-finite entries");
  }
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > tol * scale) {
    throw ContractError(std::string(what) + ": matrix is not symmetric");
  }
}

SymmetricEigen symmetric_eigen(const Matrix& a) {
  if (a.rows() == 0) return {Vector(0), Matrix(0, 0)};
  if (!lapack_eigensolver_active()) return eigen_fallback(a);
  SymmetricEigen out;
  if (!lapack_dsyevd(a, out) || !out.values.allFinite()) return eigen_fallback(a);
  return out;
}

double truncation_cutoff(const Vector& eigenvalues, double c) {
  if (eigenvalues.size() == 0) return 0.0;
  const double zeta1 = eigenvalues.cwiseAbs().maxCoeff();
  if (c > 0.0) return c * zeta1;
  return zeta1 * 1e-12 * static_cast<double>(eigenvalues.size());
}

namespace {

Vector inverted_spectrum(const Vector& values, double c) {
  const double cutoff = truncation_cutoff(values, c);
  Vector inv(values.size());
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const double s = std::abs(values(i));
    inv(i) = (s < cutoff || s == 0.0) ? 0.0 : 1.0 / values(i);
  }
  return inv;
}

void check_threshold(double c) {
  if (!(c >= 0.0) || !(c < 1.0)) {
    throw ContractError("truncated_pinv: threshold constant must lie in [0, 1)");
  }
}

}  // namespace

Matrix truncated_pinv(const Matrix& h, double c) {
  check_threshold(c);
  require_symmetric(h, 1e-8, "truncated_pinv");
  const SymmetricEigen eig = symmetric_eigen(h);
  const Vector inv = inverted_spectrum(eig.values, c);
  return eig.vectors * inv.asDiagonal() * eig.vectors.transpose();
}

namespace {

// Only the dropped eigenpairs need vectors. Replace their eigenvalues by
// zeta_1, project them out of v and solve the shifted system, which has the
// same kept eigenpairs and condition number at most 1 / c. Returns nothing
// when LAPACK reports trouble so the caller can take the full path.
std::optional<Vector> apply_by_shifted_solve(const Matrix& h, double c, const Vector& v) {
  const auto n = static_cast<lapack_int>(h.rows());
  Matrix reduced = h;
  Vector diag(n), off(std::max<lapack_int>(n - 1, 1)), tau(std::max<lapack_int>(n - 1, 1));
  if (LAPACKE_dsytrd(LAPACK_COL_MAJOR, 'L', n, reduced.data(), n, diag.data(), off.data(),
                     tau.data()) != 0) {
    return std::nullopt;
  }
  Vector values = diag;
  Vector scratch = off;
  if (LAPACKE_dsterf(n, values.data(), scratch.data()) != 0) return std::nullopt;

  const double cutoff = truncation_cutoff(values, c);
  const double zeta1 = values.cwiseAbs().maxCoeff();
  if (!(zeta1 > 0.0)) return Vector::Zero(n);
  lapack_int first = -1, last = -1;
  for (lapack_int i = 0; i < n; ++i) {
    const double s = std::abs(values(i));
    if (s < cutoff || s == 0.0) {
      if (first < 0) first = i;
      last = i;
    }
  }
  const lapack_int k = first < 0 ? 0 : last - first + 1;
  if (k > n / 2) return std::nullopt;

  Matrix shifted = h;
  Vector rhs = v;
  if (k > 0) {
    lapack_int found = 0, nsplit = 0;
    Vector w(n);
    std::vector<lapack_int> iblock(n), isplit(n), ifail(k);
    if (LAPACKE_dstebz('I', 'B', n, 0.0, 0.0, first + 1, last + 1, 0.0, diag.data(), off.data(),
                       &found, &nsplit, w.data(), iblock.data(), isplit.data()) != 0 ||
        found != k) {
      return std::nullopt;
    }
    Matrix z(n, k);
    if (LAPACKE_dstein(LAPACK_COL_MAJOR, n, diag.data(), off.data(), k, w.data(), iblock.data(),
                       isplit.data(), z.data(), n, ifail.data()) != 0) {
      return std::nullopt;
    }
    if (n > 1 && LAPACKE_dormtr(LAPACK_COL_MAJOR, 'L', 'L', 'N', n, k, reduced.data(), n,
                                tau.data(), z.data(), n) != 0) {
      return std::nullopt;
    }
    if ((z.transpose() * z - Matrix::Identity(k, k)).cwiseAbs().maxCoeff() > 1e-8) {
      return std::nullopt;
    }
    const Vector lift = zeta1 - w.head(k).array();
    shifted.noalias() += z * lift.asDiagonal() * z.transpose();
    rhs.noalias() -= z * (z.transpose() * v);
  }
  std::vector<lapack_int> pivots(n);
  if (LAPACKE_dsysv(LAPACK_COL_MAJOR, 'L', n, 1, shifted.data(), n, pivots.data(), rhs.data(),
                    n) != 0 ||
      !rhs.allFinite()) {
    return std::nullopt;
  }
  return rhs;
}

}  // namespace

Vector apply_truncated_pinv(const Matrix& h, double c, const Vector& v) {
  check_threshold(c);
  require_symmetric(h, 1e-8, "truncated_pinv");
  if (v.size() != h.rows()) {
    throw ContractError("apply_truncated_pinv: dimension mismatch");
  }
  if (h.rows() == 0) return Vector(0);
  if (lapack_eigensolver_active()) {
    if (auto out = apply_by_shifted_solve(h, c, v)) return *out;
  }
  return apply_truncated_pinv(symmetric_eigen(h), c, v);
}

Vector apply_truncated_pinv(const SymmetricEigen& eig, double c, const Vector& v) {
  const Vector inv = inverted_spectrum(eig.values, c);
  const Vector coeffs = eig.vectors.transpose() * v;
  return eig.vectors * inv.cwiseProduct(coeffs);
}

SqrtPair matrix_sqrt_and_pinv_sqrt(const Matrix& l) {
  require_symmetric(l, 1e-8, "matrix_sqrt");
  const Eigen::Index n = l.rows();
  SqrtPair out{Matrix::Zero(n, n), Matrix::Zero(n, n)};
  if (n == 0) return out;
  const SymmetricEigen eig = symmetric_eigen(l);
  const double top = std::max(0.0, eig.values.maxCoeff());
  if (eig.values.minCoeff() < -1e-10 * std::max(1.0, top)) {
    throw ContractError("matrix_sqrt: matrix is not positive semidefinite");
  }
  Vector root(n), inv_root(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mu = eig.values(i);
    if (top == 0.0 || mu < 1e-10 * top) {
      root(i) = 0.0;
      inv_root(i) = 0.0;
    } else {
      root(i) = std::sqrt(mu);
      inv_root(i) = 1.0 / root(i);
    }
  }
  out.sqrt = eig.vectors * root.asDiagonal() * eig.vectors.transpose();
  out.pinv_sqrt = eig.vectors * inv_root.asDiagonal() * eig.vectors.transpose();
  return out;
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ContractError("quantile: empty input");
  if (!(q >= 0.0 && q <= 1.0)) throw ContractError("quantile: q outside [0, 1]");
  const double h = static_cast<double>(sorted.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = static_cast<std::size_t>(std::ceil(h));
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double quantile(std::span<const double> values, double q) {
  if (values.empty()) throw ContractError("quantile: empty input");
  std::vector<double> sorted(values.begin(), values.end());
  for (double v : sorted) {
    if (std::isnan(v)) throw ContractError("quantile: NaN in input");
  }
  std::sort(sorted.begin(), sorted.end());
  return quantile_sorted(sorted, q);
}

double median(std::span<const double> values) { return quantile(values, 0.5); }

double mad_scale(std::span<const double> values) {
  const double center = median(values);
  std::vector<double> dev(values.size());
  std::transform(values.begin(), values.end(), dev.begin(),
                 [center](double v) { return std::abs(v - center); });
  return 1.4826 * median(dev);
}

double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

// ---------------------------------------------------------------------------

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

RandomStream RandomStream::child(std::uint64_t tag) const {
  return RandomStream{splitmix64(master_seed ^ splitmix64(stream_id + 0x632BE59BD9B4E019ull)),
                      tag};
}

void Rng::refill() {
  // Counter words: [block lo, block hi, stream lo, stream hi]; key = seed.
  const std::array<std::uint32_t, 4> ctr = {
      static_cast<std::uint32_t>(block_), static_cast<std::uint32_t>(block_ >> 32),
      static_cast<std::uint32_t>(stream_.stream_id),
      static_cast<std::uint32_t>(stream_.stream_id >> 32)};
  const std::array<std::uint32_t, 2> key = {
      static_cast<std::uint32_t>(stream_.master_seed),
      static_cast<std::uint32_t>(stream_.master_seed >> 32)};
  buffer_ = philox4x32(ctr, key);
  ++block_;
  used_ = 0;
}

std::uint32_t Rng::next_u32() {
  if (used_ == 4) refill();
  return buffer_[used_++];
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t hi = next_u32();
  return (hi << 32) | next_u32();
}

double Rng::uniform() {
  // 53 random bits, shifted by half an ulp so 0 is never produced.
  const std::uint64_t bits = next_u64() >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw ContractError("Rng::below: empty range");
  // Reject the top partial bucket so the modulo is unbiased.
  const std::uint64_t bound = n;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return static_cast<std::size_t>(x % bound);
}

Vector gaussian(Rng& rng, std::size_t n, double sigma) {
  if (!(sigma > 0.0)) throw ContractError("gaussian: sigma must be positive");
  Vector out(static_cast<Eigen::Index>(n));
  for (auto& x : out) x = sigma * rng.normal();
  return out;
}

Vector gaussian(const RandomStream& stream, std::size_t n, double sigma) {
  Rng rng(stream);
  return gaussian(rng, n, sigma);
}

std::vector<std::size_t> permutation(Rng& rng, std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::swap(idx[i - 1], idx[rng.below(i)]);
  }
  return idx;
}

}  // namespace gfi::numerics
