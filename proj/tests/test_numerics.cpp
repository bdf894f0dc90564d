#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "gfi/numerics.hpp"

using namespace gfi;
using namespace gfi::numerics;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (auto& v : m.reshaped()) v = rng.normal();
  return m;
}

double max_abs(const Matrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("truncated_pinv drops values below the cutoff") {
  const Matrix h = Eigen::Vector3d(10.0, 1.0, 0.4).asDiagonal();
  const Matrix want = Eigen::Vector3d(0.1, 1.0, 0.0).asDiagonal();
  CHECK(max_abs(truncated_pinv(h, 0.05) - want) < 1e-15);
  CHECK(max_abs(truncated_pinv(Matrix::Identity(3, 3), 0.05) - Matrix::Identity(3, 3)) < 1e-15);
  CHECK(max_abs(truncated_pinv(Matrix::Zero(4, 4), 0.05)) == 0.0);
}

TEST_CASE("truncated_pinv satisfies the Moore-Penrose conditions on rank-deficient input") {
  Rng rng(RandomStream{7, 1});
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix b = random_matrix(rng, 6, 4);
    const Matrix h = b * b.transpose();
    const Matrix p = truncated_pinv(h, 0.0);
    const double scale = max_abs(h);
    CHECK(max_abs(h * p * h - h) < 1e-8 * scale);
    CHECK(max_abs(p * h * p - p) < 1e-8 * max_abs(p));
    CHECK(max_abs((h * p).transpose() - h * p) < 1e-8);
    CHECK(max_abs((p * h).transpose() - p * h) < 1e-8);
  }
}

TEST_CASE("truncated_pinv uses singular values for indefinite input") {
  // Eigenvalue -3 has singular value 3 and must survive a 0.05 * 10 cutoff.
  const Matrix h = Eigen::Vector3d(10.0, -3.0, 0.2).asDiagonal();
  const Matrix p = truncated_pinv(h, 0.05);
  CHECK(p(0, 0) == doctest::Approx(0.1));
  CHECK(p(1, 1) == doctest::Approx(-1.0 / 3.0));
  CHECK(p(2, 2) == 0.0);
}

TEST_CASE("truncated_pinv rejects bad input") {
  Matrix asym(2, 2);
  asym << 1.0, 2.0, 0.0, 1.0;
  CHECK_THROWS_AS(truncated_pinv(asym, 0.05), ContractError);
  CHECK_THROWS_AS(truncated_pinv(Matrix::Identity(2, 3), 0.05), ContractError);
  CHECK_THROWS_AS(truncated_pinv(Matrix::Identity(2, 2), -0.1), ContractError);
}

TEST_CASE("apply_truncated_pinv agrees with the materialized inverse") {
  Rng rng(RandomStream{11, 2});
  for (Eigen::Index n : {5, 40, 130}) {
    for (Eigen::Index rank : {n, n - 3, n / 2 + 1}) {
      const Matrix b = random_matrix(rng, n, rank);
      Matrix h = b * b.transpose();
      // A few small eigenvalues just above and below the cutoff.
      const Vector dir = random_matrix(rng, n, 1).col(0).normalized();
      h += 1e-3 * h.norm() * dir * dir.transpose();
      const Vector v = random_matrix(rng, n, 1).col(0);
      for (double c : {0.0, 0.05, 0.3}) {
        const Vector want = truncated_pinv(h, c) * v;
        const Vector got = apply_truncated_pinv(h, c, v);
        CHECK((got - want).norm() <= 1e-7 * std::max(1.0, want.norm()));
        const Vector reuse = apply_truncated_pinv(symmetric_eigen(h), c, v);
        CHECK((reuse - want).norm() <= 1e-7 * std::max(1.0, want.norm()));
      }
    }
  }
}

TEST_CASE("symmetric_eigen returns an orthonormal decomposition") {
  Rng rng(RandomStream{3, 3});
  for (Eigen::Index n : {1, 7, 90, 200}) {
    const Matrix b = random_matrix(rng, n, n);
    const Matrix a = b + b.transpose();
    const auto e = symmetric_eigen(a);
    CHECK(std::is_sorted(e.values.begin(), e.values.end()));
    const Matrix id = Matrix::Identity(n, n);
    CHECK(max_abs(e.vectors.transpose() * e.vectors - id) < 1e-10);
    CHECK(max_abs(e.vectors * e.values.asDiagonal() * e.vectors.transpose() - a) <
          1e-10 * std::max(1.0, max_abs(a)));
  }
}

TEST_CASE("matrix square roots of a Laplacian") {
  Matrix l(2, 2);
  l << 1.0, -1.0, -1.0, 1.0;
  const auto s = matrix_sqrt_and_pinv_sqrt(l);
  CHECK(max_abs(s.sqrt - l / std::sqrt(2.0)) < 1e-14);
  // Eigenvalues {0, 2}: the pinv root scales the same vector by 1/sqrt(2).
  CHECK(max_abs(s.pinv_sqrt - l / (2.0 * std::sqrt(2.0))) < 1e-14);
  CHECK(max_abs(s.sqrt * s.sqrt - l) < 1e-14);

  const auto z = matrix_sqrt_and_pinv_sqrt(Matrix::Zero(3, 3));
  CHECK(max_abs(z.sqrt) == 0.0);
  CHECK(max_abs(z.pinv_sqrt) == 0.0);

  const auto i = matrix_sqrt_and_pinv_sqrt(Matrix::Identity(3, 3));
  CHECK(max_abs(i.sqrt - Matrix::Identity(3, 3)) < 1e-14);
  CHECK(max_abs(i.pinv_sqrt - Matrix::Identity(3, 3)) < 1e-14);

  Matrix asym(2, 2);
  asym << 1.0, 0.5, 0.0, 1.0;
  CHECK_THROWS_AS(matrix_sqrt_and_pinv_sqrt(asym), ContractError);
}

TEST_CASE("quantile interpolates order statistics") {
  const std::vector<double> a{1, 2, 3, 4, 100};
  CHECK(quantile(a, 0.25) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(quantile(a, 0.75) == doctest::Approx(4.0).epsilon(1e-15));
  const std::vector<double> one{5.0};
  for (double q : {0.0, 0.3, 1.0}) CHECK(quantile(one, q) == 5.0);
  std::vector<double> hundred(100);
  std::iota(hundred.begin(), hundred.end(), 1.0);
  std::reverse(hundred.begin(), hundred.end());
  CHECK(quantile(hundred, 0.025) == doctest::Approx(3.475).epsilon(1e-14));
  CHECK(quantile(hundred, 0.975) == doctest::Approx(97.525).epsilon(1e-14));
  CHECK(quantile(hundred, 0.0) == 1.0);
  CHECK(quantile(hundred, 1.0) == 100.0);
}

TEST_CASE("quantile rejects empty input, NaN and bad levels") {
  CHECK_THROWS_AS(quantile(std::vector<double>{}, 0.5), ContractError);
  CHECK_THROWS_AS(quantile(std::vector<double>{1.0, NAN}, 0.5), ContractError);
  CHECK_THROWS_AS(quantile(std::vector<double>{1.0}, 1.5), ContractError);
}

TEST_CASE("median and MAD scale") {
  CHECK(median(std::vector<double>{-1, 0, 1, 2}) == 0.5);
  CHECK(mad_scale(std::vector<double>{-1, 0, 1, 2}) == doctest::Approx(1.4826));
  CHECK(mad_scale(std::vector<double>{0, 0, 0}) == 0.0);
}

TEST_CASE("normal quantile") {
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0));
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(0.95) == doctest::Approx(1.6448536269514722).epsilon(1e-12));
}

TEST_CASE("Philox4x32-10 known-answer vectors") {
  using W = std::array<std::uint32_t, 4>;
  CHECK(philox4x32({0, 0, 0, 0}, {0, 0}) == W{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
        W{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
        W{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("gaussian sampling") {
  CHECK(gaussian(RandomStream{1, 1}, 0, 2.0).size() == 0);
  const Vector v = gaussian(RandomStream{42, 9}, 100000, 2.0);
  const double mean = v.mean();
  const double sd = std::sqrt((v.array() - mean).square().sum() / (v.size() - 1.0));
  CHECK(std::abs(mean) < 0.05);
  CHECK(std::abs(sd - 2.0) < 0.05);
  CHECK(gaussian(RandomStream{42, 9}, 1000, 2.0) == gaussian(RandomStream{42, 9}, 1000, 2.0));
  CHECK(gaussian(RandomStream{42, 9}, 10, 1.0) != gaussian(RandomStream{42, 10}, 10, 1.0));
  CHECK_THROWS_AS(gaussian(RandomStream{1, 1}, 3, 0.0), ContractError);
}

TEST_CASE("streams are reproducible and distinct") {
  const RandomStream s{5, 6};
  CHECK(s.child(1) == s.child(1));
  CHECK(!(s.child(1) == s.child(2)));
  CHECK(!(s.child(1) == RandomStream{5, 7}.child(1)));
  Rng a(s), b(s);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng u(RandomStream{8, 8});
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double x = u.uniform();
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  CHECK(lo > 0.0);
  CHECK(hi < 1.0);
}

TEST_CASE("permutation covers every index once") {
  Rng rng(RandomStream{2, 2});
  auto p = permutation(rng, 50);
  std::sort(p.begin(), p.end());
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == i);
  std::vector<std::size_t> counts(5, 0);
  for (int i = 0; i < 5000; ++i) ++counts[rng.below(5)];
  for (auto c : counts) CHECK(std::abs(static_cast<double>(c) - 1000.0) < 4.0 * std::sqrt(800.0));
}
