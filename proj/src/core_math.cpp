#include "fondue/core_math.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>
#include <utility>

#include "fondue/errors.hpp"

namespace fondue {

bool all_finite(const Matrix& m) { return m.allFinite(); }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

Rng Rng::split(std::uint64_t stream) const {
  return Rng(splitmix64(seed_ ^ splitmix64(stream + 0x632BE59BD9B4E019ULL)));
}

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t bound) {
  if (bound <= 1) return 0;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % bound;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

namespace {

double squared_distance(const double* a, const double* b, Eigen::Index dim) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < dim; ++c) {
    const double d = a[c] - b[c];
    s += d * d;
  }
  return s;
}

// Greedy near-duplicate filter. Candidates are located through a sort on the
// first coordinate, since |x0_i - x0_j| <= ||x_i - x_j||.
std::vector<std::int64_t> dedup_rows(const Matrix& data, double eps) {
  const Eigen::Index n = data.rows();
  const Eigen::Index dim = data.cols();
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    const double xa = data(a, 0), xb = data(b, 0);
    return xa < xb || (xa == xb && a < b);
  });
  std::vector<double> first(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) first[i] = data(order[i], 0);

  const double eps2 = eps * eps;
  std::vector<char> kept(static_cast<std::size_t>(n), 1);
  std::vector<std::int64_t> out;
  out.reserve(order.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x0 = data(i, 0);
    auto lo = std::lower_bound(first.begin(), first.end(), x0 - eps);
    auto hi = std::upper_bound(first.begin(), first.end(), x0 + eps);
    for (auto it = lo; it != hi; ++it) {
      const std::int64_t j = order[static_cast<std::size_t>(it - first.begin())];
      if (j >= i || !kept[static_cast<std::size_t>(j)]) continue;
      if (squared_distance(data.row(i).data(), data.row(j).data(), dim) <= eps2) {
        kept[static_cast<std::size_t>(i)] = 0;
        break;
      }
    }
    if (kept[static_cast<std::size_t>(i)]) out.push_back(i);
  }
  return out;
}

}  // namespace

KnnResult pairwise_knn(const Matrix& data, int k, double dedup_epsilon) {
  if (k < 1) throw ConfigError("pairwise_knn: k must be >= 1");
  if (dedup_epsilon < 0.0) throw ConfigError("pairwise_knn: dedup_epsilon must be >= 0");
  if (data.cols() < 1) throw DegenerateData("pairwise_knn: data has no columns");
  if (data.rows() < k + 1) {
    throw DegenerateData("pairwise_knn: need at least k+1=" + std::to_string(k + 1) +
                         " rows, got " + std::to_string(data.rows()));
  }

  KnnResult out;
  out.kept_rows = dedup_rows(data, dedup_epsilon);
  out.removed = static_cast<std::size_t>(data.rows()) - out.kept_rows.size();
  const auto m = static_cast<Eigen::Index>(out.kept_rows.size());
  if (m < k + 1) {
    throw DegenerateData("pairwise_knn: only " + std::to_string(m) +
                         " rows survive deduplication, need k+1=" + std::to_string(k + 1));
  }

  // Compact copy so the inner loop walks contiguous rows.
  const Matrix pts = take_rows(data, out.kept_rows);
  const Eigen::Index dim = pts.cols();
  out.distances.resize(m, k);
  out.indices.resize(m, k);

  std::vector<std::pair<double, Eigen::Index>> cand(static_cast<std::size_t>(m - 1));
  const auto by_distance = [](const auto& a, const auto& b) {
    return a.first < b.first || (a.first == b.first && a.second < b.second);
  };
  for (Eigen::Index i = 0; i < m; ++i) {
    const double* qi = pts.row(i).data();
    std::size_t c = 0;
    for (Eigen::Index j = 0; j < m; ++j) {
      if (j == i) continue;
      cand[c++] = {squared_distance(qi, pts.row(j).data(), dim), j};
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end(), by_distance);
    for (int r = 0; r < k; ++r) {
      out.distances(i, r) = std::sqrt(cand[static_cast<std::size_t>(r)].first);
      out.indices(i, r) = out.kept_rows[static_cast<std::size_t>(cand[static_cast<std::size_t>(r)].second)];
    }
  }
  return out;
}

std::vector<std::int64_t> subsample(std::size_t n, double fraction, Rng& rng) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("subsample: fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  const auto m = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  if (m < 2) throw ConfigError("subsample: floor(fraction*n) must be >= 2");
  std::vector<std::int64_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  if (m == n) return ids;
  // Partial Fisher-Yates: the first m slots form the sample.
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

Matrix gaussian_sample(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  if (rows < 1 || cols < 1) throw ConfigError("gaussian_sample: shape must be positive");
  Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = rng.normal();
  return out;
}

Matrix take_rows(const Matrix& data, std::span<const std::int64_t> ids) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), data.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = data.row(ids[i]);
  return out;
}

void shuffle(std::span<std::int64_t> ids, Rng& rng) {
  for (std::size_t i = ids.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(ids[i - 1], ids[j]);
  }
}

double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double stddev(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double mu = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

}  // namespace fondue
