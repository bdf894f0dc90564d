#include "gfi/simgen.hpp"

#include <algorithm>
#include <cmath>

namespace gfi::simgen {

void SbmSpec::validate() const {
  if (n == 0 || n % 3 != 0) throw ContractError("SbmSpec: n must be a positive multiple of 3");
  if (!(p_b >= 0.0 && p_b <= p_w && p_w <= 1.0)) {
    throw ContractError("SbmSpec: need 0 <= p_b <= p_w <= 1");
  }
}

std::size_t sbm_block(std::size_t i, std::size_t n) { return i / (n / 3); }

Matrix gen_sbm(const SbmSpec& spec, Rng& rng) {
  spec.validate();
  const auto n = static_cast<Eigen::Index>(spec.n);
  Matrix a = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const bool same = sbm_block(static_cast<std::size_t>(i), spec.n) ==
                        sbm_block(static_cast<std::size_t>(j), spec.n);
      if (rng.bernoulli(same ? spec.p_w : spec.p_b)) {
        a(i, j) = 1.0;
        a(j, i) = 1.0;
      }
    }
  }
  return a;
}

namespace {

Matrix orthonormal_columns(std::size_t n, std::size_t rank, Rng& rng) {
  Matrix g(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(rank));
  for (auto& v : g.reshaped()) v = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(g.rows(), g.cols());
  const Matrix r = qr.matrixQR().topRows(g.cols()).triangularView<Eigen::Upper>();
  for (Eigen::Index k = 0; k < g.cols(); ++k) {
    if (r(k, k) < 0.0) q.col(k) *= -1.0;
  }
  return q;
}

}  // namespace

mc::FactorPair gen_orthonormal_factors(std::size_t n, std::size_t rank, Rng& rng) {
  if (rank == 0 || rank > n) throw ContractError("gen_orthonormal_factors: need 1 <= R <= n");
  mc::FactorPair f;
  f.a = orthonormal_columns(n, rank, rng);
  f.b = orthonormal_columns(n, rank, rng);
  return f;
}

McInstance gen_mc_instance(std::size_t n, std::size_t rank, double p_obs, double sigma, Rng& rng) {
  if (!(p_obs > 0.0 && p_obs <= 1.0)) throw ContractError("gen_mc_instance: p must lie in (0, 1]");
  if (!(sigma >= 0.0)) throw ContractError("gen_mc_instance: sigma must be >= 0");
  const auto f = gen_orthonormal_factors(n, rank, rng);
  McInstance out;
  out.truth = f.product();
  std::vector<mc::Entry> omega;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (rng.bernoulli(p_obs)) omega.emplace_back(i, j);
    }
  }
  if (omega.empty()) omega.emplace_back(rng.below(n), rng.below(n));
  Vector values(static_cast<Eigen::Index>(omega.size()));
  for (std::size_t k = 0; k < omega.size(); ++k) {
    const double noise = sigma > 0.0 ? rng.normal(0.0, sigma) : 0.0;
    values(static_cast<Eigen::Index>(k)) =
        out.truth(static_cast<Eigen::Index>(omega[k].first),
                  static_cast<Eigen::Index>(omega[k].second)) + noise;
  }
  out.observed = std::make_shared<const mc::ObservedMatrix>(n, n, std::move(omega), std::move(values));
  return out;
}

CoefficientKind parse_coefficient_kind(const std::string& name) {
  if (name == "rank_exact") return CoefficientKind::rank_exact;
  if (name == "shapes") return CoefficientKind::shapes;
  if (name == "dense_image") return CoefficientKind::dense_image;
  throw ContractError("unknown coefficient image '" + name + "'");
}

std::string to_string(CoefficientKind kind) {
  switch (kind) {
    case CoefficientKind::rank_exact: return "rank_exact";
    case CoefficientKind::shapes: return "shapes";
    case CoefficientKind::dense_image: return "dense_image";
  }
  return "unknown";
}

double sparsity(const Vector& values) {
  if (values.size() == 0) return 0.0;
  const auto nz = (values.array().abs() > 0.0).count();
  return static_cast<double>(nz) / static_cast<double>(values.size());
}

namespace {

// Random interval [lo, hi) covering between a quarter and a half of 0..p.
std::pair<std::size_t, std::size_t> random_interval(std::size_t p, Rng& rng) {
  const std::size_t min_len = std::max<std::size_t>(1, p / 4);
  const std::size_t max_len = std::max(min_len, p / 2);
  const std::size_t len = min_len + rng.below(max_len - min_len + 1);
  const std::size_t lo = rng.below(p - len + 1);
  return {lo, lo + len};
}

}  // namespace

TensorCoefficient gen_tensor_coefficient(CoefficientKind kind, const tensor::Shape& shape,
                                         Rng& rng, const ImageOptions& options) {
  if (shape.size() != 2 || shape[0] == 0 || shape[1] == 0) {
    throw ContractError("gen_tensor_coefficient: shape must be 2D and non-empty");
  }
  const std::size_t p1 = shape[0], p2 = shape[1];
  Matrix img = Matrix::Zero(static_cast<Eigen::Index>(p1), static_cast<Eigen::Index>(p2));

  switch (kind) {
    case CoefficientKind::rank_exact: {
      tensor::CpFactors f(shape, std::max<std::size_t>(1, options.rank));
      for (std::size_t r = 0; r < f.rank; ++r) {
        for (std::size_t d = 0; d < 2; ++d) {
          const auto [lo, hi] = random_interval(shape[d], rng);
          for (std::size_t i = lo; i < hi; ++i) {
            f.factors[d](static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r)) = 1.0;
          }
        }
      }
      if (options.rank == 0) f.factors[0].setZero();
      img = tensor::cp_compose(f).reshaped(img.rows(), img.cols());
      break;
    }
    case CoefficientKind::shapes: {
      for (std::size_t k = 0; k < options.rectangles; ++k) {
        const auto [r0, r1] = random_interval(p1, rng);
        const auto [c0, c1] = random_interval(p2, rng);
        img.block(static_cast<Eigen::Index>(r0), static_cast<Eigen::Index>(c0),
                  static_cast<Eigen::Index>(r1 - r0), static_cast<Eigen::Index>(c1 - c0))
            .setOnes();
      }
      for (std::size_t k = 0; k < options.disks; ++k) {
        const double radius = 0.15 * static_cast<double>(std::min(p1, p2)) *
                              (1.0 + rng.uniform());
        const double ci = radius + rng.uniform() * (static_cast<double>(p1) - 2.0 * radius);
        const double cj = radius + rng.uniform() * (static_cast<double>(p2) - 2.0 * radius);
        for (std::size_t i = 0; i < p1; ++i) {
          for (std::size_t j = 0; j < p2; ++j) {
            const double di = static_cast<double>(i) + 0.5 - ci;
            const double dj = static_cast<double>(j) + 0.5 - cj;
            if (di * di + dj * dj <= radius * radius) {
              img(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = 1.0;
            }
          }
        }
      }
      break;
    }
    case CoefficientKind::dense_image: {
      // Sum of a few Gaussian bumps on a positive floor: smooth, no zeros.
      const int bumps = 4;
      for (int b = 0; b < bumps; ++b) {
        const double ci = rng.uniform() * static_cast<double>(p1);
        const double cj = rng.uniform() * static_cast<double>(p2);
        const double width = (0.1 + 0.15 * rng.uniform()) * static_cast<double>(std::min(p1, p2));
        const double height = 0.5 + rng.uniform();
        for (std::size_t i = 0; i < p1; ++i) {
          for (std::size_t j = 0; j < p2; ++j) {
            const double di = static_cast<double>(i) - ci;
            const double dj = static_cast<double>(j) - cj;
            img(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) +=
                height * std::exp(-(di * di + dj * dj) / (2.0 * width * width));
          }
        }
      }
      img.array() += 0.05;
      break;
    }
  }

  TensorCoefficient out;
  out.shape = shape;
  out.values = img.reshaped();
  out.sparsity = sparsity(out.values);
  return out;
}

std::shared_ptr<const tensor::TensorDataset> gen_tensor_dataset(const TensorCoefficient& coef,
                                                                std::size_t n, double sigma,
                                                                Rng& rng) {
  if (n == 0) throw ContractError("gen_tensor_dataset: n must be >= 1");
  if (!(sigma >= 0.0)) throw ContractError("gen_tensor_dataset: sigma must be >= 0");
  auto data = std::make_shared<tensor::TensorDataset>();
  data->shape = coef.shape;
  data->x.resize(static_cast<Eigen::Index>(n), coef.values.size());
  for (auto& v : data->x.reshaped<Eigen::RowMajor>()) v = rng.normal();
  data->y = data->x * coef.values;
  if (sigma > 0.0) {
    for (auto& v : data->y) v += rng.normal(0.0, sigma);
  }
  return data;
}

NrTruth gen_nr_truth(std::size_t n, std::size_t p, double s,
                     const std::array<double, 3>& eta_means, Rng& rng) {
  if (n == 0 || n % 3 != 0) throw ContractError("gen_nr_truth: n must be a positive multiple of 3");
  if (!(s >= 0.0)) throw ContractError("gen_nr_truth: s must be >= 0");
  NrTruth t;
  t.beta.resize(static_cast<Eigen::Index>(p));
  for (auto& v : t.beta) v = rng.normal(1.0, 1.0);
  t.alpha.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const double mean = eta_means[sbm_block(i, n)];
    t.alpha(static_cast<Eigen::Index>(i)) = s > 0.0 ? rng.normal(mean, s) : mean;
  }
  return t;
}

Matrix gen_centered_covariates(std::size_t n, std::size_t p, Rng& rng) {
  Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  for (auto& v : x.reshaped<Eigen::RowMajor>()) v = rng.normal();
  if (n > 0) x.rowwise() -= x.colwise().mean();
  return x;
}

Vector gen_nr_response(const Matrix& x, const NrTruth& truth, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw ContractError("gen_nr_response: sigma must be >= 0");
  Vector y = x * truth.beta + truth.alpha;
  if (sigma > 0.0) {
    for (auto& v : y) v += rng.normal(0.0, sigma);
  }
  return y;
}

}  // namespace gfi::simgen
