#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "gfi/harness.hpp"
#include "gfi/linear_model.hpp"
#include "gfi/simgen.hpp"
#include "json.hpp"

using namespace gfi;
using namespace gfi::harness;

namespace {

ExperimentConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string first_line(const std::string& text) { return text.substr(0, text.find('\n')); }

ExperimentConfig tiny(ModelKind model) {
  ExperimentConfig cfg;
  cfg.model = model;
  cfg.replicates = 1;
  cfg.draws = 2;
  cfg.seed = 3;
  cfg.gfi.lambda = 0.5;
  cfg.gfi.sigma = 0.5;
  auto& s = cfg.scenario;
  s.sigma = 0.5;
  switch (model) {
    case ModelKind::linear: s.n = 12; s.p = 2; break;
    case ModelKind::tensor: s.n = 30; s.rank = 1; s.image_size = 4; break;
    case ModelKind::mc: s.n = 8; s.rank = 1; s.p = 0.5; break;
    case ModelKind::network: s.n = 12; s.p = 2; s.p_w = 0.5; break;
  }
  return cfg;
}

}  // namespace

TEST_CASE("config parsing") {
  const auto cfg = parse(R"(
# comment
[experiment]
model = "network"
replicates = 7
draws = 300
levels = [0.9, 0.95]
seed = 42
workers = 2

[gfi]
c = 0.1
lambda = "cv"
sigma = 0.25      # known noise
cv_folds = 5
literal_refit = true

[scenario]
n = 90
p = 5
p_w = 0.2
sigma = 0.5
image = "shapes"
)");
  CHECK(cfg.model == ModelKind::network);
  CHECK(cfg.replicates == 7);
  CHECK(cfg.draws == 300);
  CHECK(cfg.levels == std::vector<double>{0.9, 0.95});
  CHECK(cfg.seed == 42);
  CHECK(cfg.workers == 2);
  CHECK(cfg.gfi.c == 0.1);
  CHECK(!cfg.gfi.lambda);
  CHECK(cfg.gfi.sigma == 0.25);
  CHECK(cfg.gfi.cv_folds == 5);
  CHECK(cfg.gfi.literal_refit);
  CHECK(cfg.scenario.n == 90);
  CHECK(cfg.scenario.p == 5.0);
  CHECK(cfg.scenario.image == "shapes");

  const auto defaults = parse("[scenario]\nn = 10\n");
  CHECK(defaults.levels == std::vector<double>{0.90, 0.95, 0.99});
  CHECK(defaults.draws == 1000);
  CHECK(defaults.gfi.c == 0.05);
  CHECK(defaults.gfi.cv_folds == 10);
}

TEST_CASE("config errors name the offending line") {
  CHECK_THROWS_WITH_AS(parse("[experiment]\nbogus = 1\n"), doctest::Contains("line 2"), ContractError);
  CHECK_THROWS_AS(parse("[nowhere]\n"), ContractError);
  CHECK_THROWS_AS(parse("n = 3\n"), ContractError);
  CHECK_THROWS_AS(parse("[scenario]\nn = -3\n"), ContractError);
  CHECK_THROWS_AS(parse("[scenario]\nn = 10\n[experiment]\nlevels = [1.5]\n"), ContractError);
  CHECK_THROWS_AS(parse("[scenario]\nn = 10\n[experiment]\nreplicates = 0\n"), ContractError);
  CHECK_THROWS_AS(parse("[experiment]\nmodel = \"dog\"\n"), ContractError);
}

TEST_CASE("log grid") {
  const auto g = log_grid(0.01, 100.0, 5);
  REQUIRE(g.size() == 5);
  CHECK(g.front() == 0.01);
  CHECK(g[2] == doctest::Approx(1.0));
  CHECK(g.back() == 100.0);
  CHECK(log_grid(0.5, 2.0, 1) == std::vector<double>{2.0});
  CHECK_THROWS_AS(log_grid(0.0, 1.0, 3), ContractError);
}

TEST_CASE("cross-validation picks the expected end of the grid") {
  Rng one(RandomStream{0, 0});
  CHECK(cv_lambda(linear::LinearModel::location(Eigen::Vector3d(1, 2, 3)), {4.2}, 2, {}, one) == 4.2);

  int largest = 0, smallest = 0;
  for (std::uint64_t run = 0; run < 20; ++run) {
    Rng rng(RandomStream{1, run});
    Matrix x(60, 4);
    for (auto& v : x.reshaped()) v = rng.normal();
    // The grid the harness uses for linear models.
    const double top = numerics::symmetric_eigen(x.transpose() * x).values.maxCoeff();
    const std::vector<double> grid = log_grid(1e-4 * top, top, 8);
    const Vector noise = numerics::gaussian(rng, 60, 1.0);
    const linear::LinearModel pure(x, noise);
    if (cv_lambda(pure, grid, 10, {}, rng) == grid.back()) ++largest;
    const linear::LinearModel exact(x, x * Eigen::Vector4d(1.0, -2.0, 0.5, 3.0));
    if (cv_lambda(exact, grid, 10, {}, rng) == grid.front()) ++smallest;
  }
  CHECK(largest >= 16);
  CHECK(smallest == 20);
}

TEST_CASE("OLS baseline intervals") {
  const Vector y = Eigen::Vector3d(0.5, -1.0, 2.0);
  const auto ols = ols_baseline(Matrix::Identity(3, 3), y, 2.0, {0.9, 0.95});
  CHECK(ols.estimate == y);
  const double z = numerics::normal_quantile(0.975);
  CHECK((ols.intervals[1].upper - y).cwiseAbs().maxCoeff() == doctest::Approx(z * 2.0));
  CHECK((y - ols.intervals[1].lower).cwiseAbs().minCoeff() == doctest::Approx(z * 2.0));
  Matrix rank_def(3, 2);
  rank_def << 1, 2, 1, 2, 1, 2;
  CHECK_THROWS_AS(ols_baseline(rank_def, y, 1.0, {0.9}), ContractError);
}

TEST_CASE("OLS baseline covers at the nominal rate without network effects") {
  Rng rng(RandomStream{2, 1});
  const Matrix x = simgen::gen_centered_covariates(60, 3, rng);
  std::size_t hits = 0, total = 0;
  for (int sim = 0; sim < 500; ++sim) {
    const Vector y = numerics::gaussian(rng, 60, 0.5);
    const auto ols = ols_baseline(x, y, 0.5, {0.9});
    for (Eigen::Index j = 0; j < 3; ++j) {
      ++total;
      if (ols.intervals[0].lower(j) <= 0.0 && 0.0 <= ols.intervals[0].upper(j)) ++hits;
    }
  }
  const double coverage = static_cast<double>(hits) / static_cast<double>(total);
  CHECK(coverage >= 0.86);
  CHECK(coverage <= 0.94);
}

TEST_CASE("report JSON round-trips") {
  CoverageReport r;
  r.model = "mc";
  r.replicates_requested = 3;
  r.replicates_completed = 2;
  r.failures = {"replicate 1: boom"};
  r.coverage = {{"missing", 0.95, 0.9345, 0.1 / 3.0, 12}, {"missing", 0.9, 1.0, 1e-300, 12}};
  r.errors = {{"missing", 24, -1.0 / 7.0, 0.123456789012345678}};
  r.metrics = {{"lambda", 3.14159}, {"completion_error", 0.0724}};
  CHECK(report_from_json(to_json(r)) == r);
  CHECK(r.cell("missing", 0.9).coverage == 1.0);
  CHECK_THROWS_AS(r.cell("zero", 0.9), ContractError);
}

TEST_CASE("smoke run for every model") {
  const auto dir = std::filesystem::temp_directory_path() / "gfi_harness_smoke";
  for (auto kind : {ModelKind::linear, ModelKind::tensor, ModelKind::mc, ModelKind::network}) {
    CAPTURE(to_string(kind));
    const auto result = run_experiment(tiny(kind));
    CHECK(result.report.replicates_completed == 1);
    REQUIRE(!result.report.coverage.empty());
    for (const auto& c : result.report.coverage) {
      const double hits = c.coverage * static_cast<double>(c.count);
      CHECK(std::abs(hits - std::round(hits)) < 1e-9);
      CHECK(c.coverage >= 0.0);
      CHECK(c.coverage <= 1.0);
      CHECK(c.mean_width >= 0.0);
    }
    std::filesystem::remove_all(dir);
    write_outputs(result, dir);
    CHECK(first_line(read_file(dir / "coverage.csv")) == "group,level,coverage,mean_width");
    CHECK(first_line(read_file(dir / "estimates.csv")) ==
          "replicate,target_id,truth,point_mean,point_median,lo90,hi90,lo95,hi95,lo99,hi99");
    CHECK(report_from_json(read_file(dir / "summary.json")) == result.report);
    const auto dataset = nlohmann::json::parse(dataset_json(tiny(kind), 0));
    CHECK(dataset.at("model") == to_string(kind));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("groups partition the targets") {
  auto cfg = tiny(ModelKind::tensor);
  cfg.replicates = 2;
  cfg.draws = 20;
  cfg.scenario.image_size = 6;
  const auto result = run_experiment(cfg);
  std::size_t zero = 0, nonzero = 0;
  for (const auto& e : result.estimates) (e.truth == 0.0 ? zero : nonzero) += 1;
  CHECK(result.report.error("zero").count == zero);
  CHECK(result.report.error("nonzero").count == nonzero);
  CHECK(zero + nonzero == 2 * 36);
}

TEST_CASE("network runs report the OLS baseline") {
  auto cfg = tiny(ModelKind::network);
  cfg.draws = 30;
  const auto result = run_experiment(cfg);
  CHECK(result.report.error("beta").count == 2);
  CHECK(result.report.error("beta_ols").count == 2);
  CHECK(result.report.cell("beta_ols", 0.9).count == 2);
}

TEST_CASE("worker count does not change the outputs") {
  auto cfg = tiny(ModelKind::linear);
  cfg.replicates = 6;
  cfg.draws = 50;
  cfg.gfi.lambda.reset();
  cfg.gfi.sigma.reset();
  cfg.workers = 1;
  const auto one = run_experiment(cfg);
  cfg.workers = 3;
  const auto three = run_experiment(cfg);
  CHECK(coverage_csv(one.report) == coverage_csv(three.report));
  CHECK(estimates_csv(one.estimates) == estimates_csv(three.estimates));
  CHECK(to_json(one.report) == to_json(three.report));
}

TEST_CASE("replicate failures beyond ten percent abort the run") {
  auto cfg = tiny(ModelKind::linear);
  cfg.scenario.n = 2;
  cfg.scenario.p = 3;  // more coefficients than observations: every fit fails
  cfg.gfi.lambda = 0.0;
  CHECK_THROWS_AS(run_experiment(cfg), SolverError);
}
