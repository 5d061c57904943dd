#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "fondue/core_math.hpp"
#include "fondue/errors.hpp"

using namespace fondue;

namespace {

// Sorts every other row by distance, computed the same way the library does
// (sum of squared coordinate differences, then sqrt).
std::vector<std::vector<std::pair<double, std::int64_t>>> brute_force(const Matrix& x, int k) {
  std::vector<std::vector<std::pair<double, std::int64_t>>> out;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    std::vector<std::pair<double, std::int64_t>> all;
    for (Eigen::Index j = 0; j < x.rows(); ++j) {
      if (i == j) continue;
      double s = 0.0;
      for (Eigen::Index c = 0; c < x.cols(); ++c) s += (x(i, c) - x(j, c)) * (x(i, c) - x(j, c));
      all.emplace_back(std::sqrt(s), j);
    }
    std::sort(all.begin(), all.end());
    all.resize(static_cast<std::size_t>(k));
    out.push_back(all);
  }
  return out;
}

}  // namespace

TEST_CASE("knn on three points on a line") {
  Matrix x(3, 1);
  x << 0, 1, 3;
  const auto r = pairwise_knn(x, 2);
  CHECK(r.distances(0, 0) == 1.0);
  CHECK(r.distances(0, 1) == 3.0);
  CHECK(r.indices(0, 0) == 1);
  CHECK(r.indices(0, 1) == 2);
  CHECK(r.distances(2, 0) == 2.0);
  CHECK(r.removed == 0);
}

TEST_CASE("exact duplicates are removed once") {
  Matrix x(4, 2);
  x << 0, 0, 1, 0, 1, 0, 0, 2;
  const auto r = pairwise_knn(x, 2, 0.0);
  CHECK(r.removed == 1);
  CHECK(r.kept_rows == std::vector<std::int64_t>{0, 1, 3});
  for (Eigen::Index i = 0; i < r.distances.rows(); ++i) CHECK(r.distances(i, 0) > 0.0);
}

TEST_CASE("too few rows after dedup") {
  Matrix x = Matrix::Zero(5, 3);
  CHECK_THROWS_AS(pairwise_knn(x, 2), DegenerateData);
  CHECK_THROWS_AS(pairwise_knn(Matrix::Zero(2, 3), 2), DegenerateData);
  CHECK_THROWS_AS(pairwise_knn(Matrix::Ones(5, 3), 0), ConfigError);
}

TEST_CASE("knn matches the brute-force oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto n = static_cast<Eigen::Index>(10 + rng.below(191));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(6));
    const int k = static_cast<int>(1 + rng.below(8));
    const Matrix x = gaussian_sample(n, d, rng);
    const auto r = pairwise_knn(x, k);
    REQUIRE(r.removed == 0);
    const auto oracle = brute_force(x, k);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) {
        CHECK(r.distances(i, j) == oracle[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].first);
        CHECK(r.indices(i, j) == oracle[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].second);
      }
  }
}

TEST_CASE("knn on 50 points in R^4 with k=5") {
  Rng rng(0);
  const Matrix x = gaussian_sample(50, 4, rng);
  const auto r = pairwise_knn(x, 5);
  const auto oracle = brute_force(x, 5);
  for (Eigen::Index i = 0; i < 50; ++i)
    for (int j = 0; j < 5; ++j)
      CHECK(r.distances(i, j) == oracle[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].first);
}

TEST_CASE("knn distances follow a row permutation") {
  Rng rng(3);
  const Matrix x = gaussian_sample(120, 3, rng);
  std::vector<std::int64_t> perm(120);
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<std::int64_t>(i);
  shuffle(perm, rng);
  const Matrix y = take_rows(x, perm);
  const auto a = pairwise_knn(x, 6);
  const auto b = pairwise_knn(y, 6);
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const auto orig = perm[static_cast<std::size_t>(i)];
    CHECK(b.distances.row(i) == a.distances.row(orig));
    for (int j = 0; j < 6; ++j) CHECK(perm[static_cast<std::size_t>(b.indices(i, j))] == a.indices(orig, j));
  }
}

TEST_CASE("subsample") {
  Rng rng(0);
  const auto all = subsample(10, 1.0, rng);
  CHECK(all.size() == 10);
  CHECK(all.front() == 0);
  CHECK(all.back() == 9);

  Rng a(0), b(0);
  CHECK(subsample(10, 0.8, a) == subsample(10, 0.8, b));

  Rng c(1);
  const auto big = subsample(10000, 0.8, c);
  CHECK(big.size() == 8000);
  CHECK(std::set<std::int64_t>(big.begin(), big.end()).size() == 8000);
  CHECK(std::is_sorted(big.begin(), big.end()));
  CHECK(big.back() < 10000);

  CHECK_THROWS_AS(subsample(10, 0.0, rng), ConfigError);
  CHECK_THROWS_AS(subsample(10, 1.5, rng), ConfigError);
  CHECK_THROWS_AS(subsample(2, 0.5, rng), ConfigError);
}

TEST_CASE("gaussian sample moments") {
  Rng rng(11);
  const Matrix g = gaussian_sample(1000, 1000, rng);
  const double m = g.mean();
  const double var = (g.array() - m).square().sum() / static_cast<double>(g.size() - 1);
  CHECK(std::abs(m) < 0.01);
  CHECK(std::abs(var - 1.0) < 0.01);

  Rng a(5), b(5);
  CHECK(gaussian_sample(20, 7, a) == gaussian_sample(20, 7, b));
  CHECK_THROWS_AS(gaussian_sample(0, 3, a), ConfigError);
}

TEST_CASE("rng streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42);
  CHECK(c.split(1).next_u64() != c.split(2).next_u64());
  // Splitting depends on the seed only, not on consumed state.
  Rng d(42);
  d.next_u64();
  CHECK(Rng(42).split(9).next_u64() == d.split(9).next_u64());

  Rng u(3);
  for (int i = 0; i < 10000; ++i) {
    const double x = u.uniform();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    CHECK(u.below(7) < 7);
  }
}

TEST_CASE("mean and sample sd") {
  const std::vector<double> xs{1, 2, 3, 4};
  CHECK(mean(xs) == doctest::Approx(2.5));
  CHECK(stddev(xs) == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(stddev(std::vector<double>{3.0}) == 0.0);
}
