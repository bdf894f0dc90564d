#include "gfi/tensor_model.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

namespace gfi::tensor {

std::size_t volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

CpFactors::CpFactors(Shape shape_, std::size_t rank_) : shape(std::move(shape_)), rank(rank_) {
  for (auto p : shape) {
    factors.emplace_back(Matrix::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(rank)));
  }
}

std::size_t CpFactors::parameter_count() const {
  return rank * std::accumulate(shape.begin(), shape.end(), std::size_t{0});
}

void CpFactors::validate() const {
  if (shape.empty() || rank == 0) throw ContractError("CpFactors: order and rank must be >= 1");
  if (factors.size() != shape.size()) throw ContractError("CpFactors: one factor per mode");
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (factors[d].rows() != static_cast<Eigen::Index>(shape[d]) ||
        factors[d].cols() != static_cast<Eigen::Index>(rank)) {
      throw ContractError("CpFactors: factor shape does not match");
    }
    if (!factors[d].allFinite()) throw ContractError("CpFactors: non-finite entry");
  }
}

Vector CpFactors::flatten() const {
  Vector flat(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index offset = 0;
  for (const auto& f : factors) {
    flat.segment(offset, f.size()) = f.reshaped();
    offset += f.size();
  }
  return flat;
}

CpFactors CpFactors::unflatten(const Shape& shape, std::size_t rank, const Vector& flat) {
  CpFactors out(shape, rank);
  if (static_cast<std::size_t>(flat.size()) != out.parameter_count()) {
    throw ContractError("CpFactors: flat vector has the wrong length");
  }
  Eigen::Index offset = 0;
  for (auto& f : out.factors) {
    f.reshaped() = flat.segment(offset, f.size());
    offset += f.size();
  }
  return out;
}

namespace {

// Kronecker product of column r over modes [first, last), first mode fastest.
Vector kron_modes(const CpFactors& f, std::size_t r, std::size_t first, std::size_t last) {
  Vector acc = Vector::Ones(1);
  for (std::size_t d = first; d < last; ++d) {
    const auto col = f.factors[d].col(static_cast<Eigen::Index>(r));
    Vector next(acc.size() * col.size());
    for (Eigen::Index j = 0; j < col.size(); ++j) {
      next.segment(j * acc.size(), acc.size()) = acc * col(j);
    }
    acc = std::move(next);
  }
  return acc;
}

std::vector<std::size_t> offsets(const Shape& shape, std::size_t rank) {
  std::vector<std::size_t> off(shape.size());
  std::size_t acc = 0;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    off[d] = acc;
    acc += shape[d] * rank;
  }
  return off;
}

double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

}  // namespace

Vector cp_compose(const CpFactors& f) {
  f.validate();
  Vector b = Vector::Zero(static_cast<Eigen::Index>(volume(f.shape)));
  for (std::size_t r = 0; r < f.rank; ++r) b += kron_modes(f, r, 0, f.order());
  return b;
}

double tr_predict(const Vector& x_vec, const Shape& x_shape, const CpFactors& f) {
  if (x_shape != f.shape || static_cast<std::size_t>(x_vec.size()) != volume(x_shape)) {
    throw ContractError("tr_predict: predictor shape does not match the coefficient");
  }
  return x_vec.dot(cp_compose(f));
}

void TensorDataset::validate() const {
  if (shape.empty()) throw ContractError("TensorDataset: empty shape");
  if (y.size() == 0) throw ContractError("TensorDataset: no observations");
  if (x.rows() != y.size() || static_cast<std::size_t>(x.cols()) != volume(shape)) {
    throw ContractError("TensorDataset: predictor matrix has the wrong size");
  }
}

TensorDataset TensorDataset::subset(const std::vector<Eigen::Index>& rows) const {
  return {shape, x(rows, Eigen::all), y(rows)};
}

Matrix mode_design(const TensorDataset& data, const CpFactors& f, std::size_t mode) {
  const Eigen::Index n = data.x.rows();
  const auto pd = static_cast<Eigen::Index>(f.shape[mode]);
  Eigen::Index low = 1;
  for (std::size_t e = 0; e < mode; ++e) low *= static_cast<Eigen::Index>(f.shape[e]);
  const Eigen::Index slab = low * pd;
  const Eigen::Index high = data.x.cols() / slab;

  Matrix z(n, pd * static_cast<Eigen::Index>(f.rank));
  const auto rank = static_cast<Eigen::Index>(f.rank);
  if (f.order() == 2 && mode == 0) {
    // Entry (k, a + h p_0) sits at row k + n a, column h of the reshaped X.
    const Matrix c = data.x.reshaped(n * pd, high) * f.factors[1];
    for (Eigen::Index r = 0; r < rank; ++r) z.middleCols(r * pd, pd) = c.col(r).reshaped(n, pd);
    return z;
  }
  if (f.order() == 2 && mode == 1) {
    for (Eigen::Index h = 0; h < pd; ++h) {
      const Matrix c = data.x.middleCols(h * low, low) * f.factors[0];
      for (Eigen::Index r = 0; r < rank; ++r) z.col(r * pd + h) = c.col(r);
    }
    return z;
  }
  for (std::size_t r = 0; r < f.rank; ++r) {
    const Vector w_low = kron_modes(f, r, 0, mode);
    const Vector w_high = kron_modes(f, r, mode + 1, f.order());
    // Contract the trailing modes first: n x (low * p_d).
    Matrix t = Matrix::Zero(n, slab);
    for (Eigen::Index h = 0; h < high; ++h) {
      if (w_high(h) != 0.0) t.noalias() += w_high(h) * data.x.middleCols(h * slab, slab);
    }
    auto block = z.middleCols(static_cast<Eigen::Index>(r) * pd, pd);
    for (Eigen::Index a = 0; a < pd; ++a) {
      block.col(a).noalias() = t.middleCols(a * low, low) * w_low;
    }
  }
  return z;
}

double penalized_objective(const TensorDataset& data, const Vector& response,
                           const CpFactors& f, double lambda) {
  const Vector resid = response - data.x * cp_compose(f);
  double l1 = 0.0;
  for (const auto& m : f.factors) l1 += m.cwiseAbs().sum();
  return 0.5 * resid.squaredNorm() + 0.5 * lambda * l1;
}

namespace {

// Lasso 1/2||v - Z b||^2 + t ||b||_1 by cyclic coordinate descent on the Gram
// matrix, warm-started at b.
void lasso_cd(const Matrix& gram, const Vector& zv, double t, Vector& b,
              const BlockRelaxationSettings& s) {
  Vector gb = gram * b;
  const Eigen::Index k = b.size();
  for (std::size_t sweep = 0; sweep < s.cd_max_sweeps; ++sweep) {
    double max_step = 0.0;
    double scale = 0.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      const double gjj = gram(j, j);
      double next = 0.0;
      if (gjj > 0.0) {
        const double rho = zv(j) - (gb(j) - gjj * b(j));
        next = soft_threshold(rho, t) / gjj;
      }
      const double delta = next - b(j);
      if (delta != 0.0) {
        gb.noalias() += gram.col(j) * delta;
        b(j) = next;
        max_step = std::max(max_step, std::abs(delta) * std::sqrt(gjj));
      }
      scale = std::max(scale, std::abs(b(j)) * std::sqrt(std::max(gjj, 0.0)));
    }
    if (max_step <= s.cd_tol * std::max(1.0, scale)) return;
  }
}

}  // namespace

BlockRelaxationResult block_relaxation_fit(const TensorDataset& data, const Vector& response,
                                           std::size_t rank, double lambda,
                                           const BlockRelaxationSettings& settings, Rng& rng,
                                           const std::optional<CpFactors>& initial) {
  data.validate();
  if (rank == 0) throw ContractError("block_relaxation_fit: rank must be >= 1");
  if (!(lambda >= 0.0)) throw ContractError("block_relaxation_fit: lambda must be >= 0");
  if (response.size() != data.y.size()) {
    throw ContractError("block_relaxation_fit: response length mismatch");
  }

  BlockRelaxationResult out;
  if (initial) {
    out.factors = *initial;
    if (out.factors.shape != data.shape || out.factors.rank != rank) {
      throw ContractError("block_relaxation_fit: initial factors do not match");
    }
  } else {
    out.factors = CpFactors(data.shape, rank);
    for (std::size_t d = 0; d < data.shape.size(); ++d) {
      const double sd = std::pow(static_cast<double>(data.shape[d] * rank), -0.25);
      for (auto& v : out.factors.factors[d].reshaped()) v = rng.normal(0.0, sd);
    }
  }

  double prev = penalized_objective(data, response, out.factors, lambda);
  if (!std::isfinite(prev)) throw SolverError("block_relaxation_fit: objective is not finite");
  const double threshold = 0.5 * lambda;

  for (std::size_t cycle = 0; cycle < settings.max_cycles; ++cycle) {
    for (std::size_t d = 0; d < data.shape.size(); ++d) {
      const Matrix z = mode_design(data, out.factors, d);
      Matrix gram = Matrix::Zero(z.cols(), z.cols());
      gram.selfadjointView<Eigen::Lower>().rankUpdate(z.transpose());
      gram = gram.selfadjointView<Eigen::Lower>();
      const Vector zv = z.transpose() * response;
      Vector b = out.factors.factors[d].reshaped();
      lasso_cd(gram, zv, threshold, b, settings);
      out.factors.factors[d].reshaped() = b;
    }
    const double obj = penalized_objective(data, response, out.factors, lambda);
    if (!std::isfinite(obj)) throw SolverError("block_relaxation_fit: objective is not finite");
    // Each block update is an exact minimization, so the objective cannot rise
    // beyond round-off.
    if (obj > prev + 1e-9 * std::max(1.0, std::abs(prev))) {
      throw SolverError("block_relaxation_fit: objective increased");
    }
    out.objective_trace.push_back(obj);
    out.cycles = cycle + 1;
    const double decrease = prev - obj;
    prev = obj;
    if (decrease <= settings.tol * std::max(std::abs(obj), std::numeric_limits<double>::min())) {
      out.converged = true;
      break;
    }
  }
  out.objective = prev;
  return out;
}

SigmaEstimate sigma_mle(const TensorDataset& data, std::size_t rank, double lambda,
                        const BlockRelaxationSettings& settings, Rng& rng) {
  if (data.n() < 2) throw ContractError("sigma_mle: need at least two observations");
  const auto fit = block_relaxation_fit(data, data.y, rank, lambda, settings, rng);
  const Vector resid = data.y - data.x * cp_compose(fit.factors);
  const double rss = resid.squaredNorm();
  if (rss == 0.0) return {std::numeric_limits<double>::epsilon(), true};
  return {std::sqrt(rss / static_cast<double>(data.n())), false};
}

// ---------------------------------------------------------------------------

TensorModel::TensorModel(std::shared_ptr<const TensorDataset> data, std::size_t rank,
                         BlockRelaxationSettings settings)
    : data_(std::move(data)), rank_(rank), settings_(settings) {
  if (!data_) throw ContractError("TensorModel: missing data");
  data_->validate();
  if (rank_ == 0) throw ContractError("TensorModel: rank must be >= 1");
}

Layout TensorModel::layout() const {
  Layout l{"cp", {rank_}};
  l.dims.insert(l.dims.end(), data_->shape.begin(), data_->shape.end());
  return l;
}

CpFactors TensorModel::factors(const ParameterPoint& theta) const {
  return CpFactors::unflatten(data_->shape, rank_, theta.flat);
}

BlockRelaxationSettings TensorModel::merged(const SolverSettings& s) const {
  BlockRelaxationSettings out = settings_;
  if (s.tol > 0.0) out.tol = s.tol;
  if (s.max_iters > 0) out.max_cycles = s.max_iters;
  return out;
}

Vector TensorModel::predict(const ParameterPoint& theta) const {
  return data_->x * cp_compose(factors(theta));
}

FitResult TensorModel::fit(const Vector& u_star, double lambda, const SolverSettings& settings,
                           Rng& rng) const {
  const Vector response = data_->y - u_star;
  auto res = block_relaxation_fit(*data_, response, rank_, lambda, merged(settings), rng);
  FitResult out;
  out.theta = ParameterPoint(res.factors.flatten(), layout());
  out.converged = res.converged;
  out.iterations = res.cycles;
  out.objective = res.objective;
  return out;
}

Vector TensorModel::penalty_gradient(const ParameterPoint& theta, double lambda) const {
  // Subgradient of 1/2 lambda |x| at non-zero entries; zero entries are inactive.
  return theta.flat.unaryExpr([lambda](double v) {
    return v > 0.0 ? 0.5 * lambda : (v < 0.0 ? -0.5 * lambda : 0.0);
  });
}

Matrix TensorModel::jacobian(const ParameterPoint& theta) const {
  const CpFactors f = factors(theta);
  Matrix jac(data_->x.rows(), static_cast<Eigen::Index>(f.parameter_count()));
  const auto off = offsets(f.shape, rank_);
  for (std::size_t d = 0; d < f.order(); ++d) {
    const Matrix z = mode_design(*data_, f, d);
    jac.middleCols(static_cast<Eigen::Index>(off[d]), z.cols()) = z;
  }
  return jac;
}

Matrix TensorModel::weighted_curvature(const ParameterPoint& theta, const Vector& weights) const {
  const CpFactors f = factors(theta);
  const auto dim = static_cast<Eigen::Index>(f.parameter_count());
  Matrix c = Matrix::Zero(dim, dim);
  const std::size_t order = f.order();
  if (order < 2) return c;

  // Hess <X_k, B> only couples different modes of the same rank-one term, so
  // the weighted sum only needs W = sum_k w_k X_k.
  const Vector w = data_->x.transpose() * weights;
  const auto off = offsets(f.shape, rank_);
  const auto total = static_cast<std::size_t>(w.size());
  std::vector<std::size_t> idx(order);

  for (std::size_t r = 0; r < rank_; ++r) {
    for (std::size_t d = 0; d < order; ++d) {
      for (std::size_t e = d + 1; e < order; ++e) {
        std::fill(idx.begin(), idx.end(), 0);
        for (std::size_t k = 0; k < total; ++k) {
          double coef = w(static_cast<Eigen::Index>(k));
          for (std::size_t g = 0; g < order && coef != 0.0; ++g) {
            if (g != d && g != e) {
              coef *= f.factors[g](static_cast<Eigen::Index>(idx[g]), static_cast<Eigen::Index>(r));
            }
          }
          if (coef != 0.0) {
            const auto row = static_cast<Eigen::Index>(off[d] + r * f.shape[d] + idx[d]);
            const auto col = static_cast<Eigen::Index>(off[e] + r * f.shape[e] + idx[e]);
            c(row, col) += coef;
          }
          for (std::size_t g = 0; g < order; ++g) {
            if (++idx[g] < f.shape[g]) break;
            idx[g] = 0;
          }
        }
      }
    }
  }
  const Matrix upper = c;
  c += upper.transpose();
  return c;
}

double TensorModel::estimate_sigma(double lambda, const SolverSettings& settings, Rng& rng) const {
  return sigma_mle(*data_, rank_, lambda, merged(settings), rng).value;
}

double TensorModel::held_out_error(const std::vector<std::size_t>& held_out, double lambda,
                                   const SolverSettings& settings, Rng& rng) const {
  std::vector<bool> is_held(data_->n(), false);
  for (auto i : held_out) is_held.at(i) = true;
  std::vector<Eigen::Index> train, test;
  for (std::size_t i = 0; i < is_held.size(); ++i) {
    (is_held[i] ? test : train).push_back(static_cast<Eigen::Index>(i));
  }
  const TensorDataset sub = data_->subset(train);
  const auto res = block_relaxation_fit(sub, sub.y, rank_, lambda, merged(settings), rng);
  const Vector b = cp_compose(res.factors);
  return (data_->y(test) - data_->x(test, Eigen::all) * b).squaredNorm();
}

Vector TensorModel::targets(const ParameterPoint& theta) const {
  return cp_compose(factors(theta));
}

}  // namespace gfi::tensor
