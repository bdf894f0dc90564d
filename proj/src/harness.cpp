#include "gfi/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>

#include "json.hpp"

#include "gfi/linear_model.hpp"
#include "gfi/mc_model.hpp"
#include "gfi/simgen.hpp"
#include "gfi/tensor_model.hpp"

namespace gfi::harness {

using nlohmann::json;

namespace {

constexpr std::uint64_t kTruthStream = ~std::uint64_t{0};
constexpr std::uint64_t kDataTag = 0xDA7Aull;
constexpr std::uint64_t kCvStream = std::uint64_t{1} << 62;
const std::vector<double> kCsvLevels{0.90, 0.95, 0.99};

std::size_t as_count(double v, const char* what) {
  if (!(v >= 0.0) || v != std::floor(v)) {
    throw ContractError(std::string("config: scenario p must be a whole number of ") + what);
  }
  return static_cast<std::size_t>(v);
}

// Truth that stays fixed across replicates.
struct SharedTruth {
  simgen::TensorCoefficient coefficient;
  Matrix adjacency;
  Matrix x;
  simgen::NrTruth nr;
  Vector theta;
};

SharedTruth make_shared_truth(const ExperimentConfig& cfg) {
  SharedTruth t;
  Rng rng(RandomStream{cfg.seed, kTruthStream});
  const auto& s = cfg.scenario;
  switch (cfg.model) {
    case ModelKind::tensor:
      t.coefficient = simgen::gen_tensor_coefficient(simgen::parse_coefficient_kind(s.image),
                                                     {s.image_size, s.image_size}, rng);
      break;
    case ModelKind::network: {
      const std::size_t p = as_count(s.p, "covariates");
      t.adjacency = simgen::gen_sbm({s.n, s.p_w, s.p_b}, rng);
      t.x = simgen::gen_centered_covariates(s.n, p, rng);
      t.nr = simgen::gen_nr_truth(s.n, p, s.s, {-1.0, 0.0, 1.0}, rng);
      break;
    }
    case ModelKind::linear: {
      const std::size_t p = as_count(s.p, "covariates");
      t.x.resize(static_cast<Eigen::Index>(s.n), static_cast<Eigen::Index>(p));
      for (auto& v : t.x.reshaped<Eigen::RowMajor>()) v = rng.normal();
      t.theta.resize(static_cast<Eigen::Index>(p));
      for (auto& v : t.theta) v = rng.normal();
      break;
    }
    case ModelKind::mc:
      break;
  }
  return t;
}

// Everything one replicate needs to run the sampler and score its output.
struct Replicate {
  std::unique_ptr<AdditiveNoiseModel> model;
  Vector truth;
  std::vector<std::string> groups;
  std::function<std::vector<double>()> grid;
  std::function<void(const SummaryReport&, std::map<std::string, double>&)> extra_metrics;
  std::function<std::vector<TargetEstimate>(std::size_t, const std::vector<double>&)> baseline;
};

Replicate make_replicate(const ExperimentConfig& cfg, const SharedTruth& shared, std::size_t r) {
  Rng rng(RandomStream{cfg.seed, r}.child(kDataTag));
  const auto& s = cfg.scenario;
  const std::size_t grid_size = cfg.gfi.cv_grid_size;
  Replicate rep;

  switch (cfg.model) {
    case ModelKind::linear: {
      Vector y = shared.x * shared.theta;
      for (auto& v : y) v += s.sigma > 0.0 ? rng.normal(0.0, s.sigma) : 0.0;
      auto model = std::make_unique<linear::LinearModel>(shared.x, y);
      const double top = numerics::symmetric_eigen(shared.x.transpose() * shared.x).values.maxCoeff();
      rep.grid = [top, grid_size] { return log_grid(1e-4 * top, top, grid_size); };
      rep.model = std::move(model);
      rep.truth = shared.theta;
      rep.groups.assign(static_cast<std::size_t>(shared.theta.size()), "theta");
      break;
    }
    case ModelKind::tensor: {
      auto data = simgen::gen_tensor_dataset(shared.coefficient, s.n, s.sigma, rng);
      const double top = (data->x.transpose() * data->y).cwiseAbs().maxCoeff();
      rep.grid = [top, grid_size] { return log_grid(1e-3 * top, top, grid_size); };
      rep.model = std::make_unique<tensor::TensorModel>(data, s.rank);
      rep.truth = shared.coefficient.values;
      for (double v : shared.coefficient.values) rep.groups.push_back(v == 0.0 ? "zero" : "nonzero");
      break;
    }
    case ModelKind::mc: {
      auto inst = simgen::gen_mc_instance(s.n, s.rank, s.p, s.sigma, rng);
      auto model = std::make_unique<mc::McModel>(inst.observed, s.rank);
      const double top = mc::spectral_norm(*inst.observed);
      rep.grid = [top, grid_size] { return log_grid(1e-4 * top, top, grid_size); };
      rep.truth.resize(static_cast<Eigen::Index>(model->missing().size()));
      for (std::size_t k = 0; k < model->missing().size(); ++k) {
        const auto [i, j] = model->missing()[k];
        rep.truth(static_cast<Eigen::Index>(k)) =
            inst.truth(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      }
      rep.groups.assign(model->missing().size(), "missing");
      const Vector truth = rep.truth;
      rep.extra_metrics = [truth](const SummaryReport& rpt, std::map<std::string, double>& m) {
        const double denom = truth.norm();
        m["completion_error"] = denom > 0.0 ? (rpt.point_mean - truth).norm() / denom : 0.0;
      };
      rep.model = std::move(model);
      break;
    }
    case ModelKind::network: {
      auto data = std::make_shared<network::NetworkDataset>();
      data->adjacency = shared.adjacency;
      data->x = shared.x;
      data->y = simgen::gen_nr_response(shared.x, shared.nr, s.sigma, rng);
      const double degree_sum = shared.adjacency.sum();
      const double scale = degree_sum > 0.0 ? static_cast<double>(s.n) / degree_sum : 1.0;
      rep.grid = [scale, grid_size] { return log_grid(1e-2 * scale, 1e2 * scale, grid_size); };
      rep.model = std::make_unique<network::NetworkModel>(data, cfg.gfi.literal_refit);
      rep.truth = shared.nr.beta;
      rep.groups.assign(static_cast<std::size_t>(shared.nr.beta.size()), "beta");
      const double sigma = s.sigma;
      const Vector beta = shared.nr.beta;
      rep.baseline = [data, sigma, beta](std::size_t replicate, const std::vector<double>& levels) {
        std::vector<TargetEstimate> out;
        if (!(sigma > 0.0)) return out;
        const auto ols = ols_baseline(data->x, data->y, sigma, levels);
        for (Eigen::Index j = 0; j < beta.size(); ++j) {
          TargetEstimate e;
          e.replicate = replicate;
          e.target_id = static_cast<std::size_t>(j);
          e.group = "beta_ols";
          e.truth = beta(j);
          e.point_mean = e.point_median = ols.estimate(j);
          for (const auto& iv : ols.intervals) {
            e.intervals.push_back({iv.level, Vector::Constant(1, iv.lower(j)),
                                   Vector::Constant(1, iv.upper(j))});
          }
          e.baseline = true;
          out.push_back(std::move(e));
        }
        return out;
      };
      break;
    }
  }
  return rep;
}

struct ReplicateOutcome {
  bool ok = false;
  std::string failure;
  std::vector<TargetEstimate> estimates;
  std::map<std::string, double> metrics;
};

std::vector<double> all_levels(const std::vector<double>& levels) {
  std::set<double> merged(levels.begin(), levels.end());
  merged.insert(kCsvLevels.begin(), kCsvLevels.end());
  return {merged.begin(), merged.end()};
}

ReplicateOutcome run_replicate(const ExperimentConfig& cfg, const SharedTruth& shared,
                               std::size_t r) {
  ReplicateOutcome out;
  try {
    Replicate rep = make_replicate(cfg, shared, r);
    GfiConfig g;
    g.m = cfg.draws;
    g.c = cfg.gfi.c;
    g.sigma.known = cfg.gfi.sigma;
    g.solver.tol = cfg.gfi.tol;
    g.solver.max_iters = cfg.gfi.max_iters;
    g.seed = RandomStream{cfg.seed, r}.child(0).master_seed;
    g.gauss_newton_only = cfg.gfi.gauss_newton_only;
    g.workers = 1;
    if (cfg.gfi.lambda) {
      g.lambda = *cfg.gfi.lambda;
    } else {
      Rng cv_rng(RandomStream{g.seed, kCvStream});
      g.lambda = cv_lambda(*rep.model, rep.grid(), cfg.gfi.cv_folds, g.solver, cv_rng);
    }

    const FiducialSample sample = run_autogfi(*rep.model, g);
    const auto levels = all_levels(cfg.levels);
    const SummaryReport summary = summarize_targets(*rep.model, sample, levels);

    for (Eigen::Index t = 0; t < rep.truth.size(); ++t) {
      TargetEstimate e;
      e.replicate = r;
      e.target_id = static_cast<std::size_t>(t);
      e.group = rep.groups[static_cast<std::size_t>(t)];
      e.truth = rep.truth(t);
      e.point_mean = summary.point_mean(t);
      e.point_median = summary.point_median(t);
      for (const auto& iv : summary.intervals) {
        e.intervals.push_back(
            {iv.level, Vector::Constant(1, iv.lower(t)), Vector::Constant(1, iv.upper(t))});
      }
      out.estimates.push_back(std::move(e));
    }
    if (rep.baseline) {
      auto extra = rep.baseline(r, levels);
      out.estimates.insert(out.estimates.end(), extra.begin(), extra.end());
    }
    out.metrics["lambda"] = g.lambda;
    out.metrics["sigma_used"] = sample.sigma_used;
    out.metrics["acceptance_rate"] =
        static_cast<double>(sample.accepted_count()) / static_cast<double>(sample.draws.size());
    out.metrics["failed_draws"] = static_cast<double>(sample.failed_count());
    if (rep.extra_metrics) rep.extra_metrics(summary, out.metrics);
    out.ok = true;
  } catch (const std::exception& e) {
    out.failure = "replicate " + std::to_string(r) + ": " + e.what();
    out.estimates.clear();
  }
  return out;
}

}  // namespace

std::vector<double> log_grid(double lo, double hi, std::size_t count) {
  if (!(lo > 0.0) || !(hi >= lo) || count == 0) throw ContractError("log_grid: invalid range");
  if (count == 1) return {hi};
  std::vector<double> grid(count);
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t k = 0; k < count; ++k) {
    grid[k] = std::exp(a + (b - a) * static_cast<double>(k) / static_cast<double>(count - 1));
  }
  grid.front() = lo;
  grid.back() = hi;
  return grid;
}

double cv_lambda(const AdditiveNoiseModel& model, const std::vector<double>& grid,
                 std::size_t folds, const SolverSettings& settings, Rng& rng) {
  if (grid.empty()) throw ContractError("cv_lambda: empty grid");
  if (folds < 2) throw ContractError("cv_lambda: need at least two folds");
  if (grid.size() == 1) return grid.front();
  const std::size_t n = model.noise_size();
  if (n < folds) throw ContractError("cv_lambda: fewer observations than folds");

  const auto perm = numerics::permutation(rng, n);
  std::vector<std::vector<std::size_t>> held(folds);
  for (std::size_t i = 0; i < n; ++i) held[i % folds].push_back(perm[i]);
  for (auto& h : held) std::sort(h.begin(), h.end());

  std::vector<double> sorted = grid;
  std::sort(sorted.begin(), sorted.end());
  double best = sorted.back();
  double best_err = std::numeric_limits<double>::infinity();
  // Fits share a seed per fold so every grid value sees the same starts.
  const std::uint64_t fold_seed = rng.next_u64();
  for (double lambda : sorted) {
    double err = 0.0;
    for (std::size_t k = 0; k < folds; ++k) {
      Rng fit_rng(RandomStream{fold_seed, k});
      err += model.held_out_error(held[k], lambda, settings, fit_rng);
    }
    err /= static_cast<double>(n);
    if (std::isfinite(err) && err <= best_err) {
      best_err = err;
      best = lambda;
    }
  }
  return best;
}

OlsIntervals ols_baseline(const Matrix& x, const Vector& y, double sigma,
                          const std::vector<double>& levels) {
  if (x.rows() != y.size()) throw ContractError("ols_baseline: dimension mismatch");
  if (!(sigma > 0.0)) throw ContractError("ols_baseline: sigma must be positive");
  const Matrix xtx = x.transpose() * x;
  Eigen::LDLT<Matrix> f(xtx);
  const Vector d = f.vectorD().cwiseAbs();
  if (x.cols() == 0 || f.info() != Eigen::Success ||
      d.minCoeff() <= 1e-12 * std::max(d.maxCoeff(), 1e-300)) {
    throw ContractError("ols_baseline: design is rank deficient");
  }
  OlsIntervals out;
  out.estimate = f.solve(x.transpose() * y);
  const Vector se = sigma * f.solve(Matrix::Identity(x.cols(), x.cols())).diagonal().cwiseSqrt();
  for (double level : levels) {
    const double z = numerics::normal_quantile(0.5 + level / 2.0);
    out.intervals.push_back({level, out.estimate - z * se, out.estimate + z * se});
  }
  return out;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const SharedTruth shared = make_shared_truth(cfg);
  std::vector<ReplicateOutcome> outcomes(cfg.replicates);
  parallel_for(cfg.replicates, cfg.workers,
               [&](std::size_t r) { outcomes[r] = run_replicate(cfg, shared, r); });

  ExperimentResult result;
  CoverageReport& rep = result.report;
  rep.model = to_string(cfg.model);
  rep.replicates_requested = cfg.replicates;
  std::map<std::string, double> metric_sums;
  for (auto& o : outcomes) {
    if (!o.ok) {
      rep.failures.push_back(o.failure);
      continue;
    }
    ++rep.replicates_completed;
    for (const auto& [k, v] : o.metrics) metric_sums[k] += v;
    for (auto& e : o.estimates) result.estimates.push_back(std::move(e));
  }
  if (static_cast<double>(rep.failures.size()) > 0.1 * static_cast<double>(cfg.replicates)) {
    throw SolverError("run_experiment: " + std::to_string(rep.failures.size()) + " of " +
                      std::to_string(cfg.replicates) + " replicates failed; first: " +
                      rep.failures.front());
  }
  for (const auto& [k, v] : metric_sums) {
    rep.metrics[k] = v / static_cast<double>(rep.replicates_completed);
  }

  std::vector<std::string> groups;
  for (const auto& e : result.estimates) {
    if (std::find(groups.begin(), groups.end(), e.group) == groups.end()) groups.push_back(e.group);
  }
  for (const auto& g : groups) {
    GroupError err{g, 0, 0.0, 0.0};
    for (const auto& e : result.estimates) {
      if (e.group != g) continue;
      const double d = e.point_mean - e.truth;
      ++err.count;
      err.bias += d;
      err.rmse += d * d;
    }
    err.bias /= static_cast<double>(err.count);
    err.rmse = std::sqrt(err.rmse / static_cast<double>(err.count));
    rep.errors.push_back(err);

    for (double level : cfg.levels) {
      CoverageCell cell{g, level, 0.0, 0.0, 0};
      for (const auto& e : result.estimates) {
        if (e.group != g) continue;
        for (const auto& iv : e.intervals) {
          if (iv.level != level) continue;
          const double lo = iv.lower(0), hi = iv.upper(0);
          ++cell.count;
          if (lo <= e.truth && e.truth <= hi) cell.coverage += 1.0;
          cell.mean_width += hi - lo;
        }
      }
      if (cell.count > 0) {
        cell.coverage /= static_cast<double>(cell.count);
        cell.mean_width /= static_cast<double>(cell.count);
      }
      rep.coverage.push_back(cell);
    }
  }
  return result;
}

// ---- reports ----------------------------------------------------------------

const CoverageCell& CoverageReport::cell(const std::string& group, double level) const {
  for (const auto& c : coverage) {
    if (c.group == group && std::abs(c.level - level) < 1e-12) return c;
  }
  throw ContractError("CoverageReport: no cell for group '" + group + "'");
}

const GroupError& CoverageReport::error(const std::string& group) const {
  for (const auto& e : errors) {
    if (e.group == group) return e;
  }
  throw ContractError("CoverageReport: no error entry for group '" + group + "'");
}

std::string to_json(const CoverageReport& r) {
  json j;
  j["model"] = r.model;
  j["replicates_requested"] = r.replicates_requested;
  j["replicates_completed"] = r.replicates_completed;
  j["failures"] = r.failures;
  j["coverage"] = json::array();
  for (const auto& c : r.coverage) {
    j["coverage"].push_back({{"group", c.group},
                             {"level", c.level},
                             {"coverage", c.coverage},
                             {"mean_width", c.mean_width},
                             {"count", c.count}});
  }
  j["errors"] = json::array();
  for (const auto& e : r.errors) {
    j["errors"].push_back({{"group", e.group}, {"count", e.count}, {"bias", e.bias}, {"rmse", e.rmse}});
  }
  j["metrics"] = r.metrics;
  return j.dump(2) + "\n";
}

CoverageReport report_from_json(const std::string& text) {
  const json j = json::parse(text);
  CoverageReport r;
  r.model = j.at("model").get<std::string>();
  r.replicates_requested = j.at("replicates_requested").get<std::size_t>();
  r.replicates_completed = j.at("replicates_completed").get<std::size_t>();
  r.failures = j.at("failures").get<std::vector<std::string>>();
  for (const auto& c : j.at("coverage")) {
    r.coverage.push_back({c.at("group").get<std::string>(), c.at("level").get<double>(),
                          c.at("coverage").get<double>(), c.at("mean_width").get<double>(),
                          c.at("count").get<std::size_t>()});
  }
  for (const auto& e : j.at("errors")) {
    r.errors.push_back({e.at("group").get<std::string>(), e.at("count").get<std::size_t>(),
                        e.at("bias").get<double>(), e.at("rmse").get<double>()});
  }
  r.metrics = j.at("metrics").get<std::map<std::string, double>>();
  return r;
}

std::string coverage_csv(const CoverageReport& report) {
  std::string out = "group,level,coverage,mean_width\n";
  for (const auto& c : report.coverage) {
    out += c.group + "," + format_double(c.level) + "," + format_double(c.coverage) + "," +
           format_double(c.mean_width) + "\n";
  }
  return out;
}

std::string estimates_csv(const std::vector<TargetEstimate>& estimates) {
  std::string out =
      "replicate,target_id,truth,point_mean,point_median,lo90,hi90,lo95,hi95,lo99,hi99\n";
  for (const auto& e : estimates) {
    if (e.baseline) continue;
    out += std::to_string(e.replicate) + "," + std::to_string(e.target_id) + "," +
           format_double(e.truth) + "," + format_double(e.point_mean) + "," +
           format_double(e.point_median);
    for (double level : kCsvLevels) {
      const auto it = std::find_if(e.intervals.begin(), e.intervals.end(),
                                   [level](const LevelInterval& iv) { return iv.level == level; });
      if (it == e.intervals.end()) {
        out += ",,";
      } else {
        out += "," + format_double(it->lower(0)) + "," + format_double(it->upper(0));
      }
    }
    out += "\n";
  }
  return out;
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ContractError("cannot write " + path.string());
  out << text;
}

std::vector<std::vector<double>> rows_of(const Matrix& m) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out[static_cast<std::size_t>(i)].assign(m.row(i).begin(), m.row(i).end());
  }
  return out;
}

std::vector<double> vec_of(const Vector& v) { return {v.begin(), v.end()}; }

}  // namespace

void write_outputs(const ExperimentResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file(dir / "summary.json", to_json(result.report));
  write_file(dir / "coverage.csv", coverage_csv(result.report));
  write_file(dir / "estimates.csv", estimates_csv(result.estimates));
}

std::string dataset_json(const ExperimentConfig& cfg, std::size_t replicate) {
  cfg.validate();
  const SharedTruth shared = make_shared_truth(cfg);
  Replicate rep = make_replicate(cfg, shared, replicate);
  json j;
  j["model"] = to_string(cfg.model);
  j["replicate"] = replicate;
  j["truth"] = vec_of(rep.truth);
  j["observed"] = vec_of(rep.model->observed());
  switch (cfg.model) {
    case ModelKind::linear:
      j["x"] = rows_of(static_cast<const linear::LinearModel&>(*rep.model).design());
      break;
    case ModelKind::tensor: {
      const auto& d = static_cast<const tensor::TensorModel&>(*rep.model).data();
      j["shape"] = d.shape;
      j["x"] = rows_of(d.x);
      j["sparsity"] = shared.coefficient.sparsity;
      break;
    }
    case ModelKind::mc: {
      const auto& d = static_cast<const mc::McModel&>(*rep.model).data();
      j["rows"] = d.rows();
      j["cols"] = d.cols();
      j["omega"] = d.omega();
      j["missing"] = static_cast<const mc::McModel&>(*rep.model).missing();
      break;
    }
    case ModelKind::network: {
      const auto& d = static_cast<const network::NetworkModel&>(*rep.model).data();
      std::vector<std::pair<Eigen::Index, Eigen::Index>> edges;
      for (Eigen::Index a = 0; a < d.adjacency.rows(); ++a) {
        for (Eigen::Index b = a + 1; b < d.adjacency.cols(); ++b) {
          if (d.adjacency(a, b) != 0.0) edges.emplace_back(a, b);
        }
      }
      j["edges"] = edges;
      j["x"] = rows_of(d.x);
      j["alpha"] = vec_of(shared.nr.alpha);
      break;
    }
  }
  return j.dump() + "\n";
}

}  // namespace gfi::harness
