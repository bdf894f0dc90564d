#include "gfi/network_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gfi::network {

Matrix laplacian(const Matrix& adjacency) {
  if (adjacency.rows() != adjacency.cols()) throw ContractError("laplacian: adjacency not square");
  if (!(adjacency - adjacency.transpose()).isZero(0.0)) {
    throw ContractError("laplacian: adjacency not symmetric");
  }
  for (Eigen::Index i = 0; i < adjacency.rows(); ++i) {
    if (adjacency(i, i) != 0.0) throw ContractError("laplacian: adjacency has self-loops");
  }
  Matrix l = -adjacency;
  l.diagonal() = adjacency.rowwise().sum();
  return l;
}

void NetworkDataset::validate() const {
  const auto n = y.size();
  if (n == 0) throw ContractError("NetworkDataset: no nodes");
  if (adjacency.rows() != n || adjacency.cols() != n) {
    throw ContractError("NetworkDataset: adjacency size differs from node count");
  }
  if (x.rows() != n) throw ContractError("NetworkDataset: covariate rows differ from node count");
  if (!x.allFinite() || !y.allFinite()) throw ContractError("NetworkDataset: non-finite data");
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double a = adjacency(i, j);
      if ((a != 0.0 && a != 1.0) || a != adjacency(j, i) || (i == j && a != 0.0)) {
        throw ContractError("NetworkDataset: adjacency must be symmetric, hollow and 0/1");
      }
    }
  }
  if (x.cols() > 0 && x.colwise().mean().cwiseAbs().maxCoeff() >= 1e-8) {
    throw ContractError("NetworkDataset: covariates must be centered");
  }
}

Vector RncParams::flatten() const {
  Vector flat(alpha.size() + beta.size());
  flat << alpha, beta;
  return flat;
}

RncParams RncParams::unflatten(std::size_t n, std::size_t p, const Vector& flat) {
  if (static_cast<std::size_t>(flat.size()) != n + p) {
    throw ContractError("RncParams: flat vector has the wrong length");
  }
  return {flat.head(static_cast<Eigen::Index>(n)), flat.tail(static_cast<Eigen::Index>(p))};
}

GraphSpectrum::GraphSpectrum(const Matrix& l) {
  numerics::require_symmetric(l, 1e-8, "GraphSpectrum");
  auto eig = numerics::symmetric_eigen(l);
  mu = std::move(eig.values);
  v = std::move(eig.vectors);
  const Eigen::Index n = mu.size();
  const double top = n > 0 ? std::max(0.0, mu.maxCoeff()) : 0.0;
  if (n > 0 && mu.minCoeff() < -1e-10 * std::max(1.0, top)) {
    throw ContractError("GraphSpectrum: Laplacian is not positive semidefinite");
  }
  root.resize(n);
  inv_root.resize(n);
  null.assign(static_cast<std::size_t>(n), false);
  for (Eigen::Index k = 0; k < n; ++k) {
    if (top == 0.0 || mu(k) < 1e-10 * top) {
      mu(k) = 0.0;
      root(k) = 0.0;
      inv_root(k) = 0.0;
      null[static_cast<std::size_t>(k)] = true;
    } else {
      root(k) = std::sqrt(mu(k));
      inv_root(k) = 1.0 / root(k);
    }
  }
}

Matrix GraphSpectrum::sqrt() const { return v * root.asDiagonal() * v.transpose(); }

Matrix GraphSpectrum::pinv_sqrt() const { return v * inv_root.asDiagonal() * v.transpose(); }

Matrix GraphSpectrum::range_projector() const {
  Vector d(mu.size());
  for (Eigen::Index k = 0; k < d.size(); ++k) d(k) = null[static_cast<std::size_t>(k)] ? 0.0 : 1.0;
  return v * d.asDiagonal() * v.transpose();
}

Matrix GraphSpectrum::pinv() const {
  return v * inv_root.cwiseAbs2().asDiagonal() * v.transpose();
}

namespace {

void check_lambda(double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw ContractError("rnc_fit: lambda must be positive");
  }
}

bool ldlt_singular(const Eigen::LDLT<Matrix>& f) {
  if (f.info() != Eigen::Success) return true;
  if (f.rows() == 0) return false;
  const Vector d = f.vectorD().cwiseAbs();
  return d.minCoeff() <= 1e-12 * std::max(d.maxCoeff(), 1e-300);
}

}  // namespace

RncParams rnc_fit(const NetworkDataset& data, const GraphSpectrum& s, const Vector& u_star,
                  double lambda) {
  check_lambda(lambda);
  if (u_star.size() != data.y.size()) throw ContractError("rnc_fit: noise length mismatch");
  const Vector vt = s.v.transpose() * (data.y - u_star);
  const Vector shrink = (1.0 + lambda * s.mu.array()).inverse();
  RncParams out;
  if (data.p() == 0) {
    out.beta = Vector();
    out.alpha = s.v * shrink.cwiseProduct(vt);
    return out;
  }
  // Profiling out alpha leaves weighted least squares in beta with
  // W = lambda L (I + lambda L)^{-1}, diagonal in the eigenbasis of L.
  const Matrix xt = s.v.transpose() * data.x;
  const Vector w = Vector::Ones(s.mu.size()) - shrink;
  const Matrix xwx = xt.transpose() * w.asDiagonal() * xt;
  Eigen::LDLT<Matrix> f(xwx);
  if (ldlt_singular(f)) {
    throw SolverError("rnc_fit: covariates are not identifiable from the network penalty");
  }
  out.beta = f.solve(xt.transpose() * w.cwiseProduct(vt));
  out.alpha = s.v * shrink.cwiseProduct(vt - xt * out.beta);
  return out;
}

RncParams rnc_fit(const NetworkDataset& data, const Vector& u_star, double lambda) {
  return rnc_fit(data, GraphSpectrum(laplacian(data.adjacency)), u_star, lambda);
}

RncParams rnc_fit_dense(const Matrix& lap, const Matrix& x, const Vector& v, double lambda) {
  check_lambda(lambda);
  const Eigen::Index n = lap.rows();
  const Eigen::Index p = x.cols();
  Matrix k(n + p, n + p);
  k.topLeftCorner(n, n) = Matrix::Identity(n, n) + lambda * lap;
  k.topRightCorner(n, p) = x;
  k.bottomLeftCorner(p, n) = x.transpose();
  k.bottomRightCorner(p, p) = x.transpose() * x;
  Vector rhs(n + p);
  rhs << v, x.transpose() * v;
  Eigen::LDLT<Matrix> f(k);
  if (ldlt_singular(f)) throw SolverError("rnc_fit: normal equations are singular");
  const Vector sol = f.solve(rhs);
  return {sol.head(n), sol.tail(p)};
}

Matrix eta_hessian(const GraphSpectrum& spectrum) { return spectrum.pinv(); }

double eta_loss(const NetworkDataset& data, const GraphSpectrum& s, const Vector& u_star,
                const RncParams& anchor, const Vector& eta) {
  // (I - P_L) alpha + L^{+1/2} eta, built in the eigenbasis.
  Vector coords = s.v.transpose() * eta;
  const Vector a = s.v.transpose() * anchor.alpha;
  for (Eigen::Index k = 0; k < coords.size(); ++k) {
    coords(k) = s.null[static_cast<std::size_t>(k)] ? a(k) : coords(k) * s.inv_root(k);
  }
  const Vector r = data.y - u_star - data.x * anchor.beta - s.v * coords;
  return 0.5 * r.squaredNorm();
}

RncParams nr_debias(const NetworkDataset& data, const GraphSpectrum& s, const Vector& u_star,
                    const RncParams& theta_star, double lambda, const NrDebiasOptions& options) {
  const Eigen::Index n = s.mu.size();
  if (theta_star.alpha.size() != n || u_star.size() != n) {
    throw ContractError("nr_debias: dimension mismatch");
  }
  Eigen::LDLT<Matrix> xtx(data.x.transpose() * data.x);
  if (data.p() > 0 && ldlt_singular(xtx)) throw ContractError("nr_debias: X is rank deficient");

  const Vector a = s.v.transpose() * theta_star.alpha;
  const Vector eta = s.v * s.root.cwiseProduct(a);
  const Vector xi = lambda * eta;
  const std::vector<bool> mask = nonzero_mask(eta);
  const auto idx = active_indices(mask);

  Vector eta_de = eta;
  if (static_cast<Eigen::Index>(idx.size()) == n) {
    // All coordinates active: H = L^+ shares the eigenvectors of L.
    numerics::SymmetricEigen h{s.inv_root.cwiseAbs2(), s.v};
    eta_de += numerics::apply_truncated_pinv(h, options.c, xi);
  } else if (!idx.empty()) {
    const Matrix h = eta_hessian(s);
    eta_de(idx) += debias_step(h(idx, idx), xi(idx), options.c);
  }

  // alpha_de = (I - P_L) alpha* + L^{+1/2} eta_de.
  Vector coords = s.v.transpose() * eta_de;
  for (Eigen::Index k = 0; k < n; ++k) {
    coords(k) = s.null[static_cast<std::size_t>(k)] ? a(k) : coords(k) * s.inv_root(k);
  }
  RncParams out;
  out.alpha = s.v * coords;
  if (data.p() == 0) {
    out.beta = Vector();
  } else if (options.literal_refit) {
    const Vector cohesion = s.v * (s.inv_root.cwiseProduct(s.v.transpose() * eta_de));
    out.beta = xtx.solve(data.x.transpose() * (data.y - cohesion));
  } else {
    out.beta = xtx.solve(data.x.transpose() * (data.y - u_star - out.alpha));
  }
  return out;
}

Vector predict_held_out(const NetworkDataset& data, const std::vector<std::size_t>& held_out,
                        double lambda) {
  const auto n = static_cast<Eigen::Index>(data.n());
  std::vector<bool> is_held(data.n(), false);
  for (auto i : held_out) is_held.at(i) = true;
  std::vector<Eigen::Index> train, val;
  for (Eigen::Index i = 0; i < n; ++i) {
    (is_held[static_cast<std::size_t>(i)] ? val : train).push_back(i);
  }
  if (train.empty()) throw ContractError("predict_held_out: no training nodes");

  const Matrix l_train = laplacian(data.adjacency(train, train));
  const RncParams fit =
      rnc_fit_dense(l_train, data.x(train, Eigen::all), data.y(train), lambda);

  // Validation effects minimize alpha^T L alpha with the training effects
  // fixed; components cut off from the training nodes get the mean effect.
  const auto nv = static_cast<Eigen::Index>(val.size());
  const Matrix a_vv = data.adjacency(val, val);
  const Vector to_train = data.adjacency(val, train).rowwise().sum();
  std::vector<int> component(static_cast<std::size_t>(nv), -1);
  std::vector<bool> anchored;
  for (Eigen::Index start = 0; start < nv; ++start) {
    if (component[static_cast<std::size_t>(start)] >= 0) continue;
    const int id = static_cast<int>(anchored.size());
    bool touches = false;
    std::vector<Eigen::Index> stack{start};
    component[static_cast<std::size_t>(start)] = id;
    while (!stack.empty()) {
      const Eigen::Index u = stack.back();
      stack.pop_back();
      touches = touches || to_train(u) > 0.0;
      for (Eigen::Index w = 0; w < nv; ++w) {
        if (a_vv(u, w) != 0.0 && component[static_cast<std::size_t>(w)] < 0) {
          component[static_cast<std::size_t>(w)] = id;
          stack.push_back(w);
        }
      }
    }
    anchored.push_back(touches);
  }

  Vector alpha_v = Vector::Constant(nv, fit.alpha.mean());
  std::vector<Eigen::Index> solve_local, solve_global;
  for (Eigen::Index k = 0; k < nv; ++k) {
    if (anchored[static_cast<std::size_t>(component[static_cast<std::size_t>(k)])]) {
      solve_local.push_back(k);
      solve_global.push_back(val[static_cast<std::size_t>(k)]);
    }
  }
  if (!solve_local.empty()) {
    const Matrix l = laplacian(data.adjacency);
    const Matrix l_vv = l(solve_global, solve_global);
    const Vector rhs = -(l(solve_global, train) * fit.alpha);
    const Vector sol = l_vv.ldlt().solve(rhs);
    alpha_v(solve_local) = sol;
  }
  return data.x(val, Eigen::all) * fit.beta + alpha_v;
}

double mspe_sigma(const NetworkDataset& data, double lambda, std::size_t folds, Rng& rng) {
  if (folds < 2) throw ContractError("mspe_sigma: need at least two folds");
  if (data.n() < 2 * folds) throw ContractError("mspe_sigma: too few nodes for the fold count");
  const auto perm = numerics::permutation(rng, data.n());
  double total = 0.0;
  for (std::size_t k = 0; k < folds; ++k) {
    std::vector<std::size_t> held;
    for (std::size_t i = k; i < perm.size(); i += folds) held.push_back(perm[i]);
    std::sort(held.begin(), held.end());
    const Vector pred = predict_held_out(data, held, lambda);
    std::vector<Eigen::Index> idx(held.begin(), held.end());
    total += (data.y(idx) - pred).squaredNorm() / static_cast<double>(held.size());
  }
  return std::sqrt(total / static_cast<double>(folds));
}

// ---------------------------------------------------------------------------

NetworkModel::NetworkModel(std::shared_ptr<const NetworkDataset> data, bool literal_refit)
    : data_(data ? std::move(data) : throw ContractError("NetworkModel: missing data")),
      lap_((data_->validate(), laplacian(data_->adjacency))),
      spectrum_(lap_),
      literal_refit_(literal_refit),
      xtx_(data_->x.transpose() * data_->x) {
  if (data_->p() > 0 && ldlt_singular(xtx_)) {
    throw ContractError("NetworkModel: covariates are rank deficient");
  }
}

Layout NetworkModel::layout() const { return {"rnc", {data_->n(), data_->p()}}; }

RncParams NetworkModel::params(const ParameterPoint& theta) const {
  return RncParams::unflatten(data_->n(), data_->p(), theta.flat);
}

Vector NetworkModel::predict(const ParameterPoint& theta) const {
  const RncParams p = params(theta);
  return data_->x * p.beta + p.alpha;
}

FitResult NetworkModel::fit(const Vector& u_star, double lambda, const SolverSettings&,
                            Rng&) const {
  const RncParams p = rnc_fit(*data_, spectrum_, u_star, lambda);
  FitResult out;
  out.theta = ParameterPoint(p.flatten(), layout());
  const Vector r = data_->y - u_star - data_->x * p.beta - p.alpha;
  out.objective = 0.5 * r.squaredNorm() + 0.5 * lambda * p.alpha.dot(lap_ * p.alpha);
  out.iterations = 1;
  return out;
}

Vector NetworkModel::penalty_gradient(const ParameterPoint& theta, double lambda) const {
  const RncParams p = params(theta);
  Vector xi = Vector::Zero(theta.flat.size());
  xi.head(p.alpha.size()) = lambda * (lap_ * p.alpha);
  return xi;
}

Matrix NetworkModel::jacobian(const ParameterPoint&) const {
  const auto n = static_cast<Eigen::Index>(data_->n());
  Matrix jac(n, n + static_cast<Eigen::Index>(data_->p()));
  jac << Matrix::Identity(n, n), data_->x;
  return jac;
}

Matrix NetworkModel::weighted_curvature(const ParameterPoint& theta, const Vector&) const {
  return Matrix::Zero(theta.flat.size(), theta.flat.size());
}

std::vector<bool> NetworkModel::active_mask(const ParameterPoint& theta) const {
  return std::vector<bool>(theta.size(), true);
}

ParameterPoint NetworkModel::debias(const Vector& u_star, const ParameterPoint& theta_star,
                                    double lambda, double c, bool) const {
  const RncParams de = nr_debias(*data_, spectrum_, u_star, params(theta_star), lambda,
                                 {c, literal_refit_});
  return ParameterPoint(de.flatten(), layout());
}

double NetworkModel::estimate_sigma(double lambda, const SolverSettings&, Rng& rng) const {
  return mspe_sigma(*data_, lambda, 10, rng);
}

double NetworkModel::held_out_error(const std::vector<std::size_t>& held_out, double lambda,
                                    const SolverSettings&, Rng&) const {
  std::vector<std::size_t> held = held_out;
  std::sort(held.begin(), held.end());
  const Vector pred = predict_held_out(*data_, held, lambda);
  std::vector<Eigen::Index> idx(held.begin(), held.end());
  return (data_->y(idx) - pred).squaredNorm();
}

Vector NetworkModel::targets(const ParameterPoint& theta) const { return params(theta).beta; }

}  // namespace gfi::network
