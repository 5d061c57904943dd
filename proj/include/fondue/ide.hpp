#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fondue/core_math.hpp"

namespace fondue {

enum class Estimator { mle, twonn };
enum class Averaging { levina, mackay };

std::string to_string(Estimator e);
std::string to_string(Averaging a);
Averaging parse_averaging(const std::string& s);

struct MleConfig {
  std::vector<int> ks{3, 5, 10, 20};
  // Fraction of points subsampled (without replacement) in each run.
  double anchor = 0.8;
  int runs = 5;
  Averaging averaging = Averaging::levina;
  double dedup_epsilon = 1e-12;

  void validate() const;
};

struct TwonnConfig {
  // Fraction of the sorted ratios kept for the regression.
  double anchor = 0.9;
  double dedup_epsilon = 1e-12;

  void validate() const;
};

struct IdeResult {
  Estimator estimator = Estimator::mle;
  std::optional<int> k;
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n_used = 0;
  // Points whose neighbourhood was degenerate (T_k == T_1), averaged per run.
  std::size_t n_degenerate = 0;
  std::size_t n_duplicates = 0;
};

/// Fixed-k maximum-likelihood dimension at one point:
///   [ (1/(k-1)) * sum_{j<k} log(T_k / T_j) ]^-1
/// from the ascending distances T_1..T_k to its k nearest neighbours.
double mle_point_estimate(std::span<const double> neighbor_distances);

/// Aggregate per-point estimates: levina is the arithmetic mean, mackay the
/// inverse of the mean of inverses.
double aggregate_point_estimates(std::span<const double> estimates, Averaging averaging);

/// cfg.runs independent runs, each over an anchor-sized subsample; the
/// returned mean and sd are across runs. `k` overrides cfg.ks.
IdeResult mle_dataset_estimate(const Matrix& data, int k, const MleConfig& cfg, const Rng& rng);

struct SweepEntry {
  std::optional<IdeResult> result;
  std::string error;
};
using KSweep = std::map<int, SweepEntry>;

/// One entry per k in cfg.ks. Individual failures are recorded in the entry;
/// the sweep throws only if every k fails. Each k sees the same subsamples.
KSweep mle_k_sweep(const Matrix& data, const MleConfig& cfg, const Rng& rng);

struct StableIde {
  IdeResult result;
  bool stable = false;
  std::vector<int> plateau_ks;
};

/// Longest run of consecutive ks (ascending) whose means lie within
/// rel_tol * (run mean) of each other; returns the plateau average, ties
/// going to larger k. Without a plateau of length >= 2 the largest-k entry is
/// returned with stable=false.
StableIde select_stable_ide(const KSweep& sweep, double rel_tol = 0.1);

/// Slope through the origin of the (log r, -log(1 - F(r))) points built
/// from the second/first neighbour-distance ratios, keeping the smallest
/// floor(anchor * N) ratios.
IdeResult twonn_estimate(const Matrix& data, const TwonnConfig& cfg);

/// The regression step on its own: d = sum x*y / sum x^2.
double slope_through_origin(std::span<const double> x, std::span<const double> y);

}  // namespace fondue
