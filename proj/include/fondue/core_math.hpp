#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace fondue {

// Row-major dense matrices. Estimators run on Matrix (64-bit); training may
// use MatrixF and widen before estimation.
template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVectorT = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixT<double>;
using MatrixF = MatrixT<float>;
using IndexMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

bool all_finite(const Matrix& m);

/// Seeded random source.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard; uniform and normal variates are derived here rather than through
/// <random> distributions, which are implementation-defined. Streams are
/// split by hashing (seed, stream id) with SplitMix64 so independent
/// consumers (weight init, shuffling, sampling noise, subsampling) never
/// share state.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "mt19937_64+splitmix64-split+box-muller";

  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }

  /// Independent generator derived from this one's seed (not its state).
  Rng split(std::uint64_t stream) const;

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, bound), rejection-sampled (no modulo bias).
  std::uint64_t below(std::uint64_t bound);
  double normal();

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

struct KnnResult {
  Matrix distances;     // rows × k, ascending per row
  IndexMatrix indices;  // neighbour ids into the original data rows
  std::vector<std::int64_t> kept_rows;  // original ids of surviving query rows
  std::size_t removed = 0;              // rows dropped as near-duplicates
};

/// Exact k nearest neighbours under Euclidean distance, self excluded.
///
/// Near-duplicates are removed first: scanning rows in order, a row is dropped
/// when an earlier kept row lies within `dedup_epsilon`. Surviving rows are
/// then both the query set and the reference set, so every reported distance
/// exceeds `dedup_epsilon`. Ties are broken toward the smaller row id.
/// Throws DegenerateData when fewer than k+1 rows survive.
KnnResult pairwise_knn(const Matrix& data, int k, double dedup_epsilon = 1e-12);

/// Uniform subset of floor(fraction*n) indices of [0, n), returned ascending.
std::vector<std::int64_t> subsample(std::size_t n, double fraction, Rng& rng);

Matrix gaussian_sample(Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// Row gather: result row i is data row ids[i].
Matrix take_rows(const Matrix& data, std::span<const std::int64_t> ids);

/// In-place Fisher-Yates shuffle driven by Rng::below.
void shuffle(std::span<std::int64_t> ids, Rng& rng);

double mean(std::span<const double> xs);
/// Sample standard deviation (n-1 denominator); 0 for fewer than two values.
double stddev(std::span<const double> xs);

}  // namespace fondue
