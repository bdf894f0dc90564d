#include "gfi/core.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace gfi {

ParameterPoint::ParameterPoint(Vector values, Layout layout_)
    : flat(std::move(values)), active(static_cast<std::size_t>(flat.size()), true),
      layout(std::move(layout_)) {}

ParameterPoint::ParameterPoint(Vector values, std::vector<bool> mask, Layout layout_)
    : flat(std::move(values)), active(std::move(mask)), layout(std::move(layout_)) {
  if (active.size() != static_cast<std::size_t>(flat.size())) {
    throw ContractError("ParameterPoint: mask length differs from parameter length");
  }
}

std::size_t ParameterPoint::active_count() const {
  return static_cast<std::size_t>(std::count(active.begin(), active.end(), true));
}

std::vector<Eigen::Index> active_indices(const std::vector<bool>& mask) {
  std::vector<Eigen::Index> idx;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) idx.push_back(static_cast<Eigen::Index>(i));
  }
  return idx;
}

std::vector<bool> nonzero_mask(const Vector& v) {
  std::vector<bool> mask(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) mask[static_cast<std::size_t>(i)] = v(i) != 0.0;
  return mask;
}

Matrix AdditiveNoiseModel::hessian(const Vector& u_star, const ParameterPoint& theta,
                                   bool gauss_newton_only) const {
  return hessian_default(*this, u_star, theta, gauss_newton_only);
}

std::vector<bool> AdditiveNoiseModel::active_mask(const ParameterPoint& theta) const {
  return nonzero_mask(theta.flat);
}

ParameterPoint AdditiveNoiseModel::debias(const Vector& u_star, const ParameterPoint& theta_star,
                                          double lambda, double c,
                                          bool gauss_newton_only) const {
  return gfi::debias(*this, u_star, theta_star, lambda, c, gauss_newton_only);
}

Matrix hessian_default(const AdditiveNoiseModel& model, const Vector& u_star,
                       const ParameterPoint& theta, bool gauss_newton_only) {
  const Matrix jac = model.jacobian(theta);
  Matrix h = Matrix::Zero(jac.cols(), jac.cols());
  h.selfadjointView<Eigen::Lower>().rankUpdate(jac.transpose());
  h = h.selfadjointView<Eigen::Lower>();
  if (!gauss_newton_only) {
    const Vector residual = model.observed() - model.predict(theta) - u_star;
    h -= model.weighted_curvature(theta, residual);
  }
  return h;
}

Vector debias_step(const Matrix& h, const Vector& xi, double c) {
  if (h.rows() != xi.size() || h.cols() != xi.size()) {
    throw ContractError("debias: dimension mismatch between H and xi");
  }
  if (!h.allFinite() || !xi.allFinite()) {
    throw SolverError("debias: non-finite Hessian or penalty gradient");
  }
  if (xi.size() == 0) return Vector();
  return numerics::apply_truncated_pinv(h, c, xi);
}

ParameterPoint debias(const AdditiveNoiseModel& model, const Vector& u_star,
                      const ParameterPoint& theta_star, double lambda, double c,
                      bool gauss_newton_only) {
  const std::vector<bool> mask = model.active_mask(theta_star);
  const Vector xi = model.penalty_gradient(theta_star, lambda);
  if (mask.size() != theta_star.size() || static_cast<std::size_t>(xi.size()) != theta_star.size()) {
    throw ContractError("debias: mask, penalty gradient and parameter lengths differ");
  }
  ParameterPoint out(theta_star.flat, mask, theta_star.layout);
  const auto idx = active_indices(mask);
  if (idx.empty()) return out;

  const Vector xi_active = xi(idx);
  if (xi_active.isZero(0.0)) return out;

  const Matrix h = model.hessian(u_star, theta_star, gauss_newton_only);
  if (h.rows() != xi.size() || h.cols() != xi.size()) {
    throw ContractError("debias: Hessian dimension mismatch");
  }
  const Matrix h_active = h(idx, idx);
  out.flat(idx) += debias_step(h_active, xi_active, c);
  return out;
}

double draw_loss(const AdditiveNoiseModel& model, const Vector& u_star,
                 const ParameterPoint& theta) {
  return (model.observed() - model.predict(theta) - u_star).squaredNorm();
}

FilterResult acceptance_filter(const std::vector<double>& losses) {
  if (losses.size() < 2) throw ContractError("acceptance_filter: need at least two losses");
  for (double v : losses) {
    if (!std::isfinite(v)) throw ContractError("acceptance_filter: non-finite loss");
  }
  std::vector<double> sorted = losses;
  std::sort(sorted.begin(), sorted.end());
  const double q1 = numerics::quantile_sorted(sorted, 0.25);
  const double q3 = numerics::quantile_sorted(sorted, 0.75);
  FilterResult out;
  out.epsilon = q3 + 1.5 * (q3 - q1);
  out.accepted.reserve(losses.size());
  for (double v : losses) out.accepted.push_back(v <= out.epsilon);
  return out;
}

void GfiConfig::validate() const {
  if (m < 2) throw ContractError("GfiConfig: need at least two draws");
  if (!(c >= 0.0 && c < 1.0)) throw ContractError("GfiConfig: c must lie in [0, 1)");
  if (!(lambda >= 0.0)) throw ContractError("GfiConfig: lambda must be non-negative");
  if (sigma.known && !(*sigma.known > 0.0)) {
    throw ContractError("GfiConfig: known sigma must be positive");
  }
}

std::size_t FiducialSample::accepted_count() const {
  return static_cast<std::size_t>(
      std::count_if(draws.begin(), draws.end(), [](const auto& d) { return d.accepted; }));
}

std::size_t FiducialSample::failed_count() const {
  return static_cast<std::size_t>(
      std::count_if(draws.begin(), draws.end(), [](const auto& d) { return d.failed; }));
}

void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& task) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

namespace {
constexpr std::uint64_t kSigmaTag = 0x5167;
}

double resolve_sigma(const AdditiveNoiseModel& model, const GfiConfig& cfg) {
  if (cfg.sigma.known) return *cfg.sigma.known;
  Rng rng(RandomStream{cfg.seed, 0}.child(kSigmaTag));
  const double sigma = model.estimate_sigma(cfg.lambda, cfg.solver, rng);
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw SolverError("run_autogfi: estimated noise scale is not positive");
  }
  return sigma;
}

FiducialSample run_autogfi(const AdditiveNoiseModel& model, const GfiConfig& cfg) {
  cfg.validate();
  FiducialSample sample;
  sample.sigma_used = resolve_sigma(model, cfg);
  sample.draws.resize(cfg.m);

  const std::size_t slots = model.noise_size();
  parallel_for(cfg.m, cfg.workers, [&](std::size_t k) {
    FiducialDraw& draw = sample.draws[k];
    Rng rng(RandomStream{cfg.seed, k + 1});
    draw.u_star = numerics::gaussian(rng, slots, sample.sigma_used);
    try {
      FitResult fit = model.fit(draw.u_star, cfg.lambda, cfg.solver, rng);
      draw.converged = fit.converged;
      draw.theta_star = std::move(fit.theta);
      draw.theta_de =
          model.debias(draw.u_star, draw.theta_star, cfg.lambda, cfg.c, cfg.gauss_newton_only);
      draw.loss = draw_loss(model, draw.u_star, draw.theta_de);
      if (!std::isfinite(draw.loss) || !draw.theta_de.flat.allFinite()) {
        throw SolverError("non-finite debiased parameters");
      }
    } catch (const std::exception& e) {
      draw.failed = true;
      draw.failure = e.what();
    }
  });

  const std::size_t failed = sample.failed_count();
  if (static_cast<double>(failed) > cfg.max_failure_fraction * static_cast<double>(cfg.m)) {
    std::string first;
    for (const auto& d : sample.draws) {
      if (d.failed) {
        first = d.failure;
        break;
      }
    }
    throw SolverError("run_autogfi: " + std::to_string(failed) + " of " +
                      std::to_string(cfg.m) + " draws failed; first failure: " + first);
  }

  std::vector<double> losses;
  losses.reserve(cfg.m - failed);
  for (const auto& d : sample.draws) {
    if (!d.failed) losses.push_back(d.loss);
  }
  const FilterResult filter = acceptance_filter(losses);
  sample.epsilon = filter.epsilon;
  std::size_t j = 0;
  for (auto& d : sample.draws) {
    if (!d.failed) d.accepted = filter.accepted[j++];
  }
  if (sample.accepted_count() == 0) throw SolverError("run_autogfi: no draw was accepted");
  return sample;
}

const LevelInterval& SummaryReport::at(double level) const {
  for (const auto& iv : intervals) {
    if (std::abs(iv.level - level) < 1e-12) return iv;
  }
  throw ContractError("SummaryReport: level not present");
}

SummaryReport summarize(const std::vector<Vector>& values, const std::vector<double>& levels) {
  if (values.size() < 2) throw ContractError("summarize: need at least two accepted draws");
  for (double level : levels) {
    if (!(level > 0.0 && level < 1.0)) throw ContractError("summarize: level outside (0, 1)");
  }
  const Eigen::Index dim = values.front().size();
  for (const auto& v : values) {
    if (v.size() != dim) throw ContractError("summarize: draws differ in length");
  }
  const auto n = values.size();

  SummaryReport report;
  report.point_mean = Vector::Zero(dim);
  report.point_median.resize(dim);
  for (double level : levels) {
    report.intervals.push_back({level, Vector(dim), Vector(dim)});
  }
  std::vector<double> column(n);
  for (Eigen::Index j = 0; j < dim; ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = values[i](j);
    std::sort(column.begin(), column.end());
    double sum = 0.0;
    for (double x : column) sum += x;
    report.point_mean(j) = sum / static_cast<double>(n);
    report.point_median(j) = numerics::quantile_sorted(column, 0.5);
    for (auto& iv : report.intervals) {
      const double alpha = 1.0 - iv.level;
      iv.lower(j) = numerics::quantile_sorted(column, alpha / 2.0);
      iv.upper(j) = numerics::quantile_sorted(column, 1.0 - alpha / 2.0);
    }
  }
  return report;
}

SummaryReport summarize(const FiducialSample& sample, const std::vector<double>& levels) {
  std::vector<Vector> values;
  for (const auto& d : sample.draws) {
    if (d.accepted) values.push_back(d.theta_de.flat);
  }
  return summarize(values, levels);
}

SummaryReport summarize_targets(const AdditiveNoiseModel& model, const FiducialSample& sample,
                                const std::vector<double>& levels) {
  std::vector<Vector> values;
  for (const auto& d : sample.draws) {
    if (d.accepted) values.push_back(model.targets(d.theta_de));
  }
  return summarize(values, levels);
}

}  // namespace gfi
