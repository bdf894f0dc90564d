// Acceptance checks. Usage: acceptance <criterion 1-9>
// Prints one PASS/FAIL line with the measured values and exits non-zero on FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "gfi/harness.hpp"
#include "gfi/linear_model.hpp"
#include "gfi/mc_model.hpp"
#include "gfi/network_model.hpp"
#include "gfi/tensor_model.hpp"

using namespace gfi;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

harness::ExperimentConfig config(const std::string& name) {
  return harness::load_config(std::filesystem::path(GFI_CONFIG_DIR) / name);
}

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (auto& v : m.reshaped()) v = rng.normal();
  return m;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// Relative Frobenius error of a Hessian against central second differences
// of `loss` at `theta`.
double fd_error(const Matrix& h, const Vector& theta, const std::function<double(const Vector&)>& loss,
                double step) {
  const Eigen::Index n = theta.size();
  Matrix fd(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      auto at = [&](double si, double sj) {
        Vector t = theta;
        t(i) += si * step;
        t(j) += sj * step;
        return loss(t);
      };
      fd(i, j) = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * step * step);
    }
  }
  return (h - fd).norm() / h.norm();
}

double half_loss(const AdditiveNoiseModel& model, const Layout& layout, const Vector& u,
                 const Vector& flat) {
  return 0.5 * (model.observed() - model.predict(ParameterPoint(flat, layout)) - u).squaredNorm();
}

Outcome debias_identity() {
  Rng rng(RandomStream{101, 1});
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = static_cast<Eigen::Index>(10 + rng.below(41));
    const auto p = static_cast<Eigen::Index>(2 + rng.below(9));
    const Matrix x = random_matrix(rng, n, p);
    const Vector y = random_matrix(rng, n, 1).col(0);
    const Vector u = random_matrix(rng, n, 1).col(0);
    const linear::LinearModel model(x, y);
    const double lambda = 0.1 + 10.0 * rng.uniform();
    const auto fit = model.fit(u, lambda, {}, rng);
    const auto de = model.debias(u, fit.theta, lambda, 0.0, false);
    const Vector ols = x.colPivHouseholderQr().solve(y - u);
    worst = std::max(worst, (de.flat - ols).cwiseAbs().maxCoeff());
  }
  return {worst < 1e-8, "max_abs_error=" + fmt("%.3g", worst)};
}

Outcome location_coverage() {
  const std::size_t n = 25, datasets = 500;
  const double sigma = 1.0, truth = 0.0;
  std::size_t hits = 0;
  double ratio = 0.0;
  for (std::size_t k = 0; k < datasets; ++k) {
    const Vector y = numerics::gaussian(RandomStream{102, k}, n, sigma);
    const auto model = linear::LinearModel::location(y);
    GfiConfig cfg;
    cfg.m = 1000;
    cfg.lambda = 0.0;
    cfg.sigma.known = sigma;
    cfg.seed = 1000 + k;
    const auto sample = run_autogfi(model, cfg);
    const auto summary = summarize(sample, {0.95});
    const auto& iv = summary.at(0.95);
    if (iv.lower(0) <= truth && truth <= iv.upper(0)) ++hits;
    double mean = 0.0, var = 0.0;
    std::size_t count = 0;
    for (const auto& d : sample.draws) {
      if (!d.accepted) continue;
      mean += d.theta_de.flat(0);
      ++count;
    }
    mean /= static_cast<double>(count);
    for (const auto& d : sample.draws) {
      if (d.accepted) var += std::pow(d.theta_de.flat(0) - mean, 2);
    }
    var /= static_cast<double>(count - 1);
    ratio += var / (sigma * sigma / static_cast<double>(n));
  }
  const double coverage = static_cast<double>(hits) / datasets;
  ratio /= static_cast<double>(datasets);
  const bool pass = coverage >= 0.925 && coverage <= 0.975 && std::abs(ratio - 1.0) <= 0.1;
  return {pass, "coverage95=" + fmt("%.4f", coverage) + " variance_ratio=" + fmt("%.4f", ratio)};
}

Outcome linear_covariance() {
  Rng rng(RandomStream{103, 1});
  const Matrix x = random_matrix(rng, 50, 4);
  const double sigma = 0.8;
  const Vector y = x * Eigen::Vector4d(1.0, -0.5, 0.0, 2.0) + sigma * random_matrix(rng, 50, 1).col(0);
  const linear::LinearModel model(x, y);
  GfiConfig cfg;
  cfg.m = 5000;
  cfg.lambda = 0.0;
  cfg.sigma.known = sigma;
  cfg.seed = 103;
  const auto sample = run_autogfi(model, cfg);
  Matrix draws(4, static_cast<Eigen::Index>(sample.draws.size()));
  for (std::size_t i = 0; i < sample.draws.size(); ++i) {
    draws.col(static_cast<Eigen::Index>(i)) = sample.draws[i].theta_star.flat;
  }
  const Matrix centered = draws.colwise() - draws.rowwise().mean();
  const Matrix cov = centered * centered.transpose() / static_cast<double>(draws.cols() - 1);
  const Matrix want = sigma * sigma * (x.transpose() * x).inverse();
  const double err = (cov - want).norm() / want.norm();
  return {err < 0.1, "relative_frobenius=" + fmt("%.4f", err)};
}

Outcome hessian_oracle() {
  Rng rng(RandomStream{104, 1});
  double tensor_err = 0.0, mc_err = 0.0, network_err = 0.0, eta_err = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    {
      auto data = std::make_shared<tensor::TensorDataset>();
      data->shape = {3, 4};
      data->x = random_matrix(rng, 15, 12);
      data->y = random_matrix(rng, 15, 1).col(0);
      const tensor::TensorModel model(data, 2);
      const Vector theta = random_matrix(rng, 14, 1).col(0);
      const Vector u = random_matrix(rng, 15, 1).col(0);
      const Matrix h = model.hessian(u, ParameterPoint(theta, model.layout()), false);
      tensor_err = std::max(tensor_err, fd_error(h, theta, [&](const Vector& t) {
        return half_loss(model, model.layout(), u, t);
      }, 1e-4));
    }
    {
      std::vector<mc::Entry> omega;
      for (std::size_t i = 0; i < 4; ++i) {
        for (std::size_t j = 0; j < 4; ++j) {
          if (rng.bernoulli(0.75) || (i == j)) omega.emplace_back(i, j);
        }
      }
      const auto y = std::make_shared<const mc::ObservedMatrix>(mc::project_omega(random_matrix(rng, 4, 4), omega));
      const mc::McModel model(y, 2);
      const Vector theta = random_matrix(rng, 16, 1).col(0);
      const Vector u = numerics::gaussian(rng, y->size(), 0.5);
      const Matrix h = model.hessian(u, ParameterPoint(theta, model.layout()), false);
      mc_err = std::max(mc_err, fd_error(h, theta, [&](const Vector& t) {
        return half_loss(model, model.layout(), u, t);
      }, 1e-4));
    }
    {
      auto data = std::make_shared<network::NetworkDataset>();
      Matrix a = Matrix::Zero(8, 8);
      for (Eigen::Index i = 0; i < 8; ++i) {
        a(i, (i + 1) % 8) = a((i + 1) % 8, i) = 1.0;
        for (Eigen::Index j = i + 2; j < 8; ++j) {
          if (rng.bernoulli(0.3)) a(i, j) = a(j, i) = 1.0;
        }
      }
      data->adjacency = a;
      Matrix x = random_matrix(rng, 8, 2);
      data->x = x.rowwise() - x.colwise().mean();
      data->y = random_matrix(rng, 8, 1).col(0);
      const network::NetworkModel model(data);
      const Vector theta = random_matrix(rng, 10, 1).col(0);
      const Vector u = numerics::gaussian(rng, 8, 0.5);
      const Matrix h = model.hessian(u, ParameterPoint(theta, model.layout()), false);
      network_err = std::max(network_err, fd_error(h, theta, [&](const Vector& t) {
        return half_loss(model, model.layout(), u, t);
      }, 1e-3));
      // The curvature used by the eta-space debias step.
      const network::RncParams anchor{numerics::gaussian(rng, 8, 1.0), numerics::gaussian(rng, 2, 1.0)};
      const Vector eta = numerics::gaussian(rng, 8, 1.0);
      eta_err = std::max(eta_err, fd_error(network::eta_hessian(model.spectrum()), eta, [&](const Vector& e) {
        return network::eta_loss(*data, model.spectrum(), u, anchor, e);
      }, 1e-3));
    }
  }
  const bool pass = tensor_err < 1e-4 && mc_err < 1e-4 && network_err < 1e-4 && eta_err < 1e-4;
  return {pass, "tensor=" + fmt("%.3g", tensor_err) + " mc=" + fmt("%.3g", mc_err) +
                    " network=" + fmt("%.3g", network_err) + " network_eta=" + fmt("%.3g", eta_err)};
}

Outcome network_coverage() {
  const auto result = harness::run_experiment(config("network_desk.toml"));
  const auto& r = result.report;
  const double coverage = r.cell("beta", 0.90).coverage;
  const double rmse = r.error("beta").rmse, ols = r.error("beta_ols").rmse;
  const bool pass = coverage >= 0.86 && coverage <= 0.94 && rmse < ols;
  return {pass, "coverage90=" + fmt("%.4f", coverage) + " width90=" + fmt("%.4f", r.cell("beta", 0.90).mean_width) +
                    " rmse=" + fmt("%.4f", rmse) + " ols_rmse=" + fmt("%.4f", ols) +
                    " ols_coverage90=" + fmt("%.4f", r.cell("beta_ols", 0.90).coverage)};
}

Outcome mc_completion() {
  const auto dense = harness::run_experiment(config("mc_desk_p04.toml")).report;
  const auto sparse = harness::run_experiment(config("mc_desk_p02.toml")).report;
  const double err_dense = dense.metrics.at("completion_error");
  const double err_sparse = sparse.metrics.at("completion_error");
  const double coverage = dense.cell("missing", 0.95).coverage;
  const bool pass = err_dense < err_sparse && coverage >= 0.90 && coverage <= 0.98;
  return {pass, "error_p04=" + fmt("%.4f", err_dense) + " error_p02=" + fmt("%.4f", err_sparse) +
                    " coverage95_p04=" + fmt("%.4f", coverage) +
                    " coverage95_p02=" + fmt("%.4f", sparse.cell("missing", 0.95).coverage)};
}

Outcome tensor_coverage() {
  const auto r = harness::run_experiment(config("tensor_desk.toml")).report;
  const double nonzero = r.cell("nonzero", 0.90).coverage;
  const double zero = r.cell("zero", 0.90).coverage;
  const auto& ez = r.error("zero");
  const auto& en = r.error("nonzero");
  const double rmse = std::sqrt((static_cast<double>(ez.count) * ez.rmse * ez.rmse +
                                 static_cast<double>(en.count) * en.rmse * en.rmse) /
                                static_cast<double>(ez.count + en.count));
  const bool pass = nonzero >= 0.80 && nonzero <= 0.96 && zero >= 0.95 && rmse < 0.05;
  return {pass, "nonzero_coverage90=" + fmt("%.4f", nonzero) + " zero_coverage90=" + fmt("%.4f", zero) +
                    " pixel_rmse=" + fmt("%.4f", rmse) + " lambda=" + fmt("%.4g", r.metrics.at("lambda"))};
}

Outcome filter_examples() {
  const auto a = acceptance_filter({1, 2, 3, 4, 100});
  const auto b = acceptance_filter({2.5, 2.5, 2.5});
  const auto c = acceptance_filter({0, 0, 0, 0, 1e-9});
  const bool pass = a.epsilon == 7.0 && a.accepted == std::vector<bool>{true, true, true, true, false} &&
                    b.epsilon == 2.5 && b.accepted == std::vector<bool>{true, true, true} &&
                    c.epsilon == 0.0 && c.accepted == std::vector<bool>{true, true, true, true, false};
  std::ostringstream out;
  out << "epsilons=" << a.epsilon << "," << b.epsilon << "," << c.epsilon;
  return {pass, out.str()};
}

Outcome determinism() {
  std::string detail;
  bool pass = true;
  for (const char* name : {"smoke.toml", "network_desk.toml", "mc_desk_p04.toml"}) {
    auto cfg = config(name);
    cfg.replicates = std::min<std::size_t>(cfg.replicates, 8);
    cfg.draws = std::min<std::size_t>(cfg.draws, 60);
    if (cfg.model == harness::ModelKind::mc) cfg.scenario.n = 30;
    cfg.workers = 1;
    const auto one = harness::coverage_csv(harness::run_experiment(cfg).report);
    cfg.workers = 4;
    const auto four = harness::coverage_csv(harness::run_experiment(cfg).report);
    const bool same = one == four;
    pass = pass && same;
    detail += std::string(detail.empty() ? "" : " ") + harness::to_string(cfg.model) + "=" +
              (same ? "identical" : "different");
  }
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  // Criterion id -> (check, runtime limit in seconds).
  const std::map<int, std::pair<std::function<Outcome()>, double>> checks{
      {1, {debias_identity, 5.0}},     {2, {location_coverage, 60.0}}, {3, {linear_covariance, 30.0}},
      {4, {hessian_oracle, 30.0}},     {5, {network_coverage, 600.0}}, {6, {mc_completion, 900.0}},
      {7, {tensor_coverage, 1200.0}},  {8, {filter_examples, 1.0}},    {9, {determinism, 600.0}},
  };
  if (argc != 2 || !checks.count(std::atoi(argv[1]))) {
    std::fprintf(stderr, "usage: %s <criterion 1-9>\n", argv[0]);
    return 2;
  }
  const int id = std::atoi(argv[1]);
  const auto& [check, limit] = checks.at(id);
  const auto start = std::chrono::steady_clock::now();
  Outcome outcome;
  try {
    outcome = check();
  } catch (const std::exception& e) {
    outcome = {false, std::string("error: ") + e.what()};
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool in_time = seconds < limit;
  const bool pass = outcome.pass && in_time;
  std::printf("criterion %d %s %s runtime=%.1fs limit=%.0fs%s\n", id, pass ? "PASS" : "FAIL",
              outcome.detail.c_str(), seconds, limit, in_time ? "" : " (over limit)");
  return pass ? 0 : 1;
}
