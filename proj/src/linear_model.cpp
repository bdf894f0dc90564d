#include "gfi/linear_model.hpp"

#include <algorithm>
#include <cmath>

namespace gfi::linear {

namespace {

Vector ridge_solve(const Matrix& gram, const Vector& rhs, double lambda) {
  Matrix a = gram;
  a.diagonal().array() += lambda;
  Eigen::LDLT<Matrix> ldlt(a);
  const Vector d = ldlt.vectorD();
  const double top = d.cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || d.minCoeff() <= 1e-12 * std::max(top, 1e-300)) {
    throw SolverError("linear model: normal equations are singular");
  }
  return ldlt.solve(rhs);
}

}  // namespace

LinearModel::LinearModel(Matrix x, Vector y) : x_(std::move(x)), y_(std::move(y)) {
  if (x_.rows() != y_.size() || x_.rows() == 0) {
    throw ContractError("LinearModel: design rows must match response length");
  }
  gram_ = x_.transpose() * x_;
}

LinearModel LinearModel::location(const Vector& y) {
  return LinearModel(Matrix::Ones(y.size(), 1), y);
}

Layout LinearModel::layout() const {
  return {"linear", {static_cast<std::size_t>(x_.cols())}};
}

Vector LinearModel::predict(const ParameterPoint& theta) const { return x_ * theta.flat; }

Vector LinearModel::solve(const Vector& v, double lambda) const {
  if (lambda < 0.0) throw ContractError("LinearModel: lambda must be non-negative");
  return ridge_solve(gram_, x_.transpose() * v, lambda);
}

FitResult LinearModel::fit(const Vector& u_star, double lambda, const SolverSettings&,
                           Rng&) const {
  FitResult out;
  const Vector v = y_ - u_star;
  out.theta = ParameterPoint(solve(v, lambda), layout());
  out.objective = 0.5 * (v - x_ * out.theta.flat).squaredNorm() +
                  0.5 * lambda * out.theta.flat.squaredNorm();
  return out;
}

Vector LinearModel::penalty_gradient(const ParameterPoint& theta, double lambda) const {
  return lambda * theta.flat;
}

Matrix LinearModel::jacobian(const ParameterPoint&) const { return x_; }

Matrix LinearModel::weighted_curvature(const ParameterPoint& theta, const Vector&) const {
  return Matrix::Zero(theta.flat.size(), theta.flat.size());
}

std::vector<bool> LinearModel::active_mask(const ParameterPoint& theta) const {
  return std::vector<bool>(theta.size(), true);
}

double LinearModel::estimate_sigma(double lambda, const SolverSettings&, Rng&) const {
  const auto n = y_.size();
  const auto p = x_.cols();
  if (n <= p) throw ContractError("LinearModel: need more observations than coefficients");
  const Vector theta = solve(y_, lambda);
  return std::sqrt((y_ - x_ * theta).squaredNorm() / static_cast<double>(n - p));
}

double LinearModel::held_out_error(const std::vector<std::size_t>& held_out, double lambda,
                                   const SolverSettings&, Rng&) const {
  std::vector<bool> is_held(static_cast<std::size_t>(y_.size()), false);
  for (auto i : held_out) is_held.at(i) = true;
  std::vector<Eigen::Index> train;
  for (std::size_t i = 0; i < is_held.size(); ++i) {
    if (!is_held[i]) train.push_back(static_cast<Eigen::Index>(i));
  }
  const Matrix xt = x_(train, Eigen::all);
  const Vector theta = ridge_solve(xt.transpose() * xt, xt.transpose() * y_(train), lambda);
  double sse = 0.0;
  for (auto i : held_out) {
    const auto r = static_cast<Eigen::Index>(i);
    sse += std::pow(y_(r) - x_.row(r).dot(theta), 2);
  }
  return sse;
}

}  // namespace gfi::linear
