#include "gfi/mc_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/SVD>

namespace gfi::mc {

ObservedMatrix::ObservedMatrix(std::size_t rows, std::size_t cols, std::vector<Entry> omega,
                               Vector values)
    : rows_(rows), cols_(cols), omega_(std::move(omega)), values_(std::move(values)),
      by_row_(rows), by_col_(cols) {
  if (rows_ == 0 || cols_ == 0) throw ContractError("ObservedMatrix: empty shape");
  if (omega_.empty()) throw ContractError("ObservedMatrix: no observed entries");
  if (static_cast<std::size_t>(values_.size()) != omega_.size()) {
    throw ContractError("ObservedMatrix: one value per observed entry");
  }
  if (!values_.allFinite()) throw ContractError("ObservedMatrix: non-finite value");
  std::vector<bool> seen(rows_ * cols_, false);
  for (std::size_t k = 0; k < omega_.size(); ++k) {
    const auto [i, j] = omega_[k];
    if (i >= rows_ || j >= cols_) throw ContractError("ObservedMatrix: index out of range");
    if (seen[i * cols_ + j]) throw ContractError("ObservedMatrix: duplicate index");
    seen[i * cols_ + j] = true;
    by_row_[i].push_back(k);
    by_col_[j].push_back(k);
  }
}

Matrix ObservedMatrix::scatter(const Vector& on_omega) const {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_));
  for (std::size_t k = 0; k < omega_.size(); ++k) {
    m(static_cast<Eigen::Index>(omega_[k].first), static_cast<Eigen::Index>(omega_[k].second)) =
        on_omega(static_cast<Eigen::Index>(k));
  }
  return m;
}

Matrix ObservedMatrix::dense() const { return scatter(values_); }

double ObservedMatrix::fraction_observed() const {
  return static_cast<double>(omega_.size()) / static_cast<double>(rows_ * cols_);
}

std::vector<Entry> ObservedMatrix::missing() const {
  std::vector<bool> seen(rows_ * cols_, false);
  for (const auto& [i, j] : omega_) seen[i * cols_ + j] = true;
  std::vector<Entry> out;
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t j = 0; j < cols_; ++j) {
      if (!seen[i * cols_ + j]) out.emplace_back(i, j);
    }
  }
  return out;
}

ObservedMatrix ObservedMatrix::subset(const std::vector<std::size_t>& keep) const {
  std::vector<Entry> omega;
  Vector values(static_cast<Eigen::Index>(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    omega.push_back(omega_.at(keep[k]));
    values(static_cast<Eigen::Index>(k)) = values_(static_cast<Eigen::Index>(keep[k]));
  }
  return ObservedMatrix(rows_, cols_, std::move(omega), std::move(values));
}

ObservedMatrix project_omega(const Matrix& m, const std::vector<Entry>& omega) {
  Vector values(static_cast<Eigen::Index>(omega.size()));
  for (std::size_t k = 0; k < omega.size(); ++k) {
    const auto [i, j] = omega[k];
    if (i >= static_cast<std::size_t>(m.rows()) || j >= static_cast<std::size_t>(m.cols())) {
      throw ContractError("project_omega: index out of range");
    }
    values(static_cast<Eigen::Index>(k)) =
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  return ObservedMatrix(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()),
                        omega, std::move(values));
}

Vector FactorPair::flatten() const {
  Vector flat(a.size() + b.size());
  flat.head(a.size()) = a.reshaped();
  flat.tail(b.size()) = b.reshaped();
  return flat;
}

FactorPair FactorPair::unflatten(std::size_t rows, std::size_t cols, std::size_t rank,
                                 const Vector& flat) {
  const auto m = static_cast<Eigen::Index>(rows);
  const auto n = static_cast<Eigen::Index>(cols);
  const auto r = static_cast<Eigen::Index>(rank);
  if (flat.size() != r * (m + n)) throw ContractError("FactorPair: flat vector has the wrong length");
  FactorPair f;
  f.a = flat.head(m * r).reshaped(m, r);
  f.b = flat.tail(n * r).reshaped(n, r);
  return f;
}

namespace {

Vector fitted_on_omega(const ObservedMatrix& y, const FactorPair& f) {
  Vector out(static_cast<Eigen::Index>(y.size()));
  for (std::size_t k = 0; k < y.size(); ++k) {
    const auto [i, j] = y.omega()[k];
    out(static_cast<Eigen::Index>(k)) =
        f.a.row(static_cast<Eigen::Index>(i)).dot(f.b.row(static_cast<Eigen::Index>(j)));
  }
  return out;
}

// Exact ridge update of every row of `target` with `other` held fixed.
// `Small` is an R x R matrix type; a bounded-size one avoids heap traffic.
template <class Small>
void update_rows_impl(const ObservedMatrix& y, const Vector& v, double lambda, bool by_row,
                      const Matrix& other, Matrix& target) {
  using SmallVec = Eigen::Matrix<double, Small::RowsAtCompileTime, 1, 0, Small::MaxRowsAtCompileTime, 1>;
  const Eigen::Index r = target.cols();
  const Matrix other_t = other.transpose();  // partner rows as contiguous columns
  Small gram(r, r);
  SmallVec rhs(r);
  for (Eigen::Index t = 0; t < target.rows(); ++t) {
    const auto& entries = by_row ? y.row_entries(static_cast<std::size_t>(t))
                                 : y.col_entries(static_cast<std::size_t>(t));
    gram.setIdentity();
    gram *= lambda;
    rhs.setZero();
    for (auto k : entries) {
      const auto [i, j] = y.omega()[k];
      const double* col = other_t.data() + static_cast<Eigen::Index>(by_row ? j : i) * r;
      const double vk = v(static_cast<Eigen::Index>(k));
      for (Eigen::Index a = 0; a < r; ++a) {
        for (Eigen::Index b = 0; b <= a; ++b) gram(a, b) += col[a] * col[b];
        rhs(a) += vk * col[a];
      }
    }
    gram = gram.template selfadjointView<Eigen::Lower>();
    Eigen::LLT<Small> llt(gram);
    if (llt.info() == Eigen::Success) {
      target.row(t) = llt.solve(rhs).transpose();
    } else {
      // Too few observations on this line for an unpenalized solve; take the
      // minimum-norm minimizer.
      target.row(t) = Matrix(gram).completeOrthogonalDecomposition().solve(Vector(rhs)).transpose();
    }
  }
}

void update_rows(const ObservedMatrix& y, const Vector& v, double lambda, bool by_row,
                 const Matrix& other, Matrix& target) {
  using Bounded = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 8, 8>;
  if (target.cols() <= 8) {
    update_rows_impl<Bounded>(y, v, lambda, by_row, other, target);
  } else {
    update_rows_impl<Matrix>(y, v, lambda, by_row, other, target);
  }
}

// Among all pairs with the same product A B^T, the balanced SVD factors
// minimize ||A||^2 + ||B||^2. The loss term is unchanged.
void balance(FactorPair& f) {
  const auto r = f.a.cols();
  Eigen::HouseholderQR<Matrix> qa(f.a), qb(f.b);
  const Matrix ra = qa.matrixQR().topRows(r).triangularView<Eigen::Upper>();
  const Matrix rb = qb.matrixQR().topRows(r).triangularView<Eigen::Upper>();
  Eigen::JacobiSVD<Matrix> svd(ra * rb.transpose(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector root = svd.singularValues().cwiseSqrt();
  Matrix pa = Matrix::Zero(f.a.rows(), r), pb = Matrix::Zero(f.b.rows(), r);
  pa.topRows(r) = svd.matrixU() * root.asDiagonal();
  pb.topRows(r) = svd.matrixV() * root.asDiagonal();
  f.a = qa.householderQ() * pa;
  f.b = qb.householderQ() * pb;
}

// Rank-r truncated SVD split as (U S^{1/2}, V S^{1/2}), via the eigenvectors
// of the smaller Gram matrix. Only the leading pairs are needed.
FactorPair top_singular_pairs(const Matrix& z, Eigen::Index r) {
  const bool tall = z.rows() >= z.cols();
  const Matrix gram = tall ? Matrix(z.transpose() * z) : Matrix(z * z.transpose());
  const auto eig = numerics::symmetric_eigen(gram);
  const Eigen::Index k = gram.rows();
  Matrix small(k, r), large(tall ? z.rows() : z.cols(), r);
  Vector root(r);
  for (Eigen::Index t = 0; t < r; ++t) {
    const Vector vec = eig.vectors.col(k - 1 - t);
    const double sv = std::sqrt(std::max(eig.values(k - 1 - t), 0.0));
    small.col(t) = vec;
    const Vector image = tall ? Vector(z * vec) : Vector(z.transpose() * vec);
    large.col(t) = sv > 0.0 ? Vector(image / sv) : Vector::Zero(large.rows());
    root(t) = std::sqrt(sv);
  }
  FactorPair f;
  f.a = (tall ? large : small) * root.asDiagonal();
  f.b = (tall ? small : large) * root.asDiagonal();
  return f;
}

}  // namespace

double mc_objective(const ObservedMatrix& y, const Vector& u_star, const FactorPair& f,
                    double lambda) {
  const Vector r = y.values() - u_star - fitted_on_omega(y, f);
  return 0.5 * r.squaredNorm() + 0.5 * lambda * (f.a.squaredNorm() + f.b.squaredNorm());
}

AlsResult two_stage_fit(const ObservedMatrix& y, const Vector& u_star, std::size_t rank,
                        double lambda, const AlsSettings& settings) {
  if (rank == 0 || rank > std::min(y.rows(), y.cols())) {
    throw ContractError("two_stage_fit: rank must lie in [1, min(rows, cols)]");
  }
  if (!(lambda >= 0.0)) throw ContractError("two_stage_fit: lambda must be >= 0");
  if (static_cast<std::size_t>(u_star.size()) != y.size()) {
    throw ContractError("two_stage_fit: noise vector length differs from |omega|");
  }
  const Vector v = y.values() - u_star;
  const auto r = static_cast<Eigen::Index>(rank);

  // Stage 1: spectral initialization.
  const Matrix z = y.scatter(v) / y.fraction_observed();
  AlsResult out;
  out.factors = top_singular_pairs(z, r);

  // Stage 2: alternating ridge least squares.
  double prev = mc_objective(y, u_star, out.factors, lambda);
  if (!std::isfinite(prev)) throw SolverError("two_stage_fit: objective is not finite");
  double last = prev;  // objective after the latest half-step
  auto check = [&](double obj) {
    if (!std::isfinite(obj)) throw SolverError("two_stage_fit: objective is not finite");
    if (obj > last + 1e-10 * std::max(1.0, std::abs(last))) {
      throw SolverError("two_stage_fit: alternating update increased the objective");
    }
    last = obj;
  };
  for (std::size_t it = 0; it < settings.max_iters; ++it) {
    update_rows(y, v, lambda, true, out.factors.b, out.factors.a);
    check(mc_objective(y, u_star, out.factors, lambda));
    update_rows(y, v, lambda, false, out.factors.a, out.factors.b);
    if (lambda > 0.0) balance(out.factors);
    const double obj = mc_objective(y, u_star, out.factors, lambda);
    check(obj);
    out.iterations = it + 1;
    const double decrease = prev - obj;
    prev = obj;
    if (decrease <= settings.tol * obj) {
      out.converged = true;
      break;
    }
  }
  out.objective = prev;
  return out;
}

double mad_sigma(const ObservedMatrix& y, std::size_t rank, double lambda,
                 const AlsSettings& settings) {
  if (y.size() < 2) throw ContractError("mad_sigma: need at least two observed entries");
  const Vector zero = Vector::Zero(static_cast<Eigen::Index>(y.size()));
  const auto fit = two_stage_fit(y, zero, rank, lambda, settings);
  const Vector resid = y.values() - fitted_on_omega(y, fit.factors);
  return numerics::mad_scale(std::span<const double>(resid.data(), resid.size()));
}

double spectral_norm(const ObservedMatrix& y) {
  Eigen::BDCSVD<Matrix> svd(y.dense());
  return svd.singularValues()(0);
}

// ---------------------------------------------------------------------------

McModel::McModel(std::shared_ptr<const ObservedMatrix> data, std::size_t rank,
                 AlsSettings settings)
    : data_(std::move(data)), rank_(rank), settings_(settings) {
  if (!data_) throw ContractError("McModel: missing data");
  if (rank_ == 0 || rank_ > std::min(data_->rows(), data_->cols())) {
    throw ContractError("McModel: rank must lie in [1, min(rows, cols)]");
  }
  missing_ = data_->missing();
}

Layout McModel::layout() const { return {"factor_pair", {data_->rows(), data_->cols(), rank_}}; }

FactorPair McModel::factors(const ParameterPoint& theta) const {
  return FactorPair::unflatten(data_->rows(), data_->cols(), rank_, theta.flat);
}

AlsSettings McModel::merged(const SolverSettings& s) const {
  AlsSettings out = settings_;
  if (s.tol > 0.0) out.tol = s.tol;
  if (s.max_iters > 0) out.max_iters = s.max_iters;
  return out;
}

Vector McModel::predict(const ParameterPoint& theta) const {
  return fitted_on_omega(*data_, factors(theta));
}

FitResult McModel::fit(const Vector& u_star, double lambda, const SolverSettings& settings,
                       Rng&) const {
  const auto res = two_stage_fit(*data_, u_star, rank_, lambda, merged(settings));
  FitResult out;
  out.theta = ParameterPoint(res.factors.flatten(), layout());
  out.converged = res.converged;
  out.iterations = res.iterations;
  out.objective = res.objective;
  return out;
}

Vector McModel::penalty_gradient(const ParameterPoint& theta, double lambda) const {
  return lambda * theta.flat;
}

Matrix McModel::jacobian(const ParameterPoint& theta) const {
  const FactorPair f = factors(theta);
  const auto m = static_cast<Eigen::Index>(data_->rows());
  const auto n = static_cast<Eigen::Index>(data_->cols());
  const auto r = static_cast<Eigen::Index>(rank_);
  Matrix jac = Matrix::Zero(static_cast<Eigen::Index>(data_->size()), r * (m + n));
  for (std::size_t k = 0; k < data_->size(); ++k) {
    const auto i = static_cast<Eigen::Index>(data_->omega()[k].first);
    const auto j = static_cast<Eigen::Index>(data_->omega()[k].second);
    const auto row = static_cast<Eigen::Index>(k);
    for (Eigen::Index s = 0; s < r; ++s) {
      jac(row, s * m + i) = f.b(j, s);
      jac(row, r * m + s * n + j) = f.a(i, s);
    }
  }
  return jac;
}

Matrix McModel::weighted_curvature(const ParameterPoint& theta, const Vector& weights) const {
  const auto m = static_cast<Eigen::Index>(data_->rows());
  const auto n = static_cast<Eigen::Index>(data_->cols());
  const auto r = static_cast<Eigen::Index>(rank_);
  if (theta.flat.size() != r * (m + n)) throw ContractError("McModel: parameter length mismatch");
  Matrix c = Matrix::Zero(r * (m + n), r * (m + n));
  for (std::size_t k = 0; k < data_->size(); ++k) {
    const auto i = static_cast<Eigen::Index>(data_->omega()[k].first);
    const auto j = static_cast<Eigen::Index>(data_->omega()[k].second);
    const double w = weights(static_cast<Eigen::Index>(k));
    for (Eigen::Index s = 0; s < r; ++s) {
      c(s * m + i, r * m + s * n + j) += w;
      c(r * m + s * n + j, s * m + i) += w;
    }
  }
  return c;
}

Matrix McModel::hessian(const Vector& u_star, const ParameterPoint& theta,
                        bool gauss_newton_only) const {
  const FactorPair f = factors(theta);
  const auto m = static_cast<Eigen::Index>(data_->rows());
  const auto n = static_cast<Eigen::Index>(data_->cols());
  const auto r = static_cast<Eigen::Index>(rank_);
  const Eigen::Index off_b = r * m;
  Matrix h = Matrix::Zero(r * (m + n), r * (m + n));
  Vector resid = Vector::Zero(static_cast<Eigen::Index>(data_->size()));
  if (!gauss_newton_only) resid = data_->values() - u_star - fitted_on_omega(*data_, f);

  for (std::size_t k = 0; k < data_->size(); ++k) {
    const auto i = static_cast<Eigen::Index>(data_->omega()[k].first);
    const auto j = static_cast<Eigen::Index>(data_->omega()[k].second);
    const double w = resid(static_cast<Eigen::Index>(k));
    for (Eigen::Index s = 0; s < r; ++s) {
      for (Eigen::Index t = 0; t < r; ++t) {
        h(s * m + i, t * m + i) += f.b(j, s) * f.b(j, t);
        h(off_b + s * n + j, off_b + t * n + j) += f.a(i, s) * f.a(i, t);
        // d/dA(i,s) d/dB(j,t) of 1/2 r^2 = b_js a_it - r delta_st.
        const double cross = f.b(j, s) * f.a(i, t) - (s == t ? w : 0.0);
        h(s * m + i, off_b + t * n + j) += cross;
        h(off_b + t * n + j, s * m + i) += cross;
      }
    }
  }
  return h;
}

std::vector<bool> McModel::active_mask(const ParameterPoint& theta) const {
  return std::vector<bool>(theta.size(), true);
}

double McModel::estimate_sigma(double lambda, const SolverSettings& settings, Rng&) const {
  return mad_sigma(*data_, rank_, lambda, merged(settings));
}

double McModel::held_out_error(const std::vector<std::size_t>& held_out, double lambda,
                               const SolverSettings& settings, Rng&) const {
  std::vector<bool> is_held(data_->size(), false);
  for (auto k : held_out) is_held.at(k) = true;
  std::vector<std::size_t> keep;
  for (std::size_t k = 0; k < is_held.size(); ++k) {
    if (!is_held[k]) keep.push_back(k);
  }
  const ObservedMatrix train = data_->subset(keep);
  const Vector zero = Vector::Zero(static_cast<Eigen::Index>(train.size()));
  const auto res = two_stage_fit(train, zero, rank_, lambda, merged(settings));
  double err = 0.0;
  for (auto k : held_out) {
    const auto [i, j] = data_->omega()[k];
    const double pred = res.factors.a.row(static_cast<Eigen::Index>(i))
                            .dot(res.factors.b.row(static_cast<Eigen::Index>(j)));
    const double d = data_->values()(static_cast<Eigen::Index>(k)) - pred;
    err += d * d;
  }
  return err;
}

Vector McModel::targets(const ParameterPoint& theta) const {
  const FactorPair f = factors(theta);
  Vector out(static_cast<Eigen::Index>(missing_.size()));
  for (std::size_t k = 0; k < missing_.size(); ++k) {
    out(static_cast<Eigen::Index>(k)) = f.a.row(static_cast<Eigen::Index>(missing_[k].first))
                                            .dot(f.b.row(static_cast<Eigen::Index>(missing_[k].second)));
  }
  return out;
}

SummaryReport mc_complete(const McModel& model, const FiducialSample& sample,
                          const std::vector<double>& levels) {
  std::vector<Vector> values;
  for (const auto& d : sample.draws) {
    if (d.accepted) values.push_back(model.targets(d.theta_de));
  }
  if (values.empty()) throw ContractError("mc_complete: no accepted draws");
  // A lone draw summarizes to itself.
  if (values.size() == 1) values.push_back(values.front());
  return summarize(values, levels);
}

}  // namespace gfi::mc
