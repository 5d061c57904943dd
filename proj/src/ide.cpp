#include "fondue/ide.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>

#include "fondue/errors.hpp"

namespace fondue {

std::string to_string(Estimator e) { return e == Estimator::mle ? "mle" : "twonn"; }
std::string to_string(Averaging a) { return a == Averaging::levina ? "levina" : "mackay"; }

Averaging parse_averaging(const std::string& s) {
  if (s == "levina") return Averaging::levina;
  if (s == "mackay") return Averaging::mackay;
  throw ConfigError("unknown averaging '" + s + "' (expected levina or mackay)");
}

void MleConfig::validate() const {
  if (ks.empty()) throw ConfigError("mle: ks must not be empty");
  for (int k : ks)
    if (k < 2) throw ConfigError("mle: every k must be >= 2, got " + std::to_string(k));
  if (!(anchor > 0.0 && anchor <= 1.0)) throw ConfigError("mle: anchor must lie in (0, 1]");
  if (runs < 1) throw ConfigError("mle: runs must be >= 1");
  if (dedup_epsilon < 0.0) throw ConfigError("mle: dedup_epsilon must be >= 0");
}

void TwonnConfig::validate() const {
  if (!(anchor > 0.0 && anchor < 1.0)) throw ConfigError("twonn: anchor must lie in (0, 1)");
  if (dedup_epsilon < 0.0) throw ConfigError("twonn: dedup_epsilon must be >= 0");
}

namespace {

enum class PointStatus { ok, degenerate_neighborhood, bad_distance };

PointStatus point_estimate(std::span<const double> t, double& out) {
  const std::size_t k = t.size();
  const double tk = t[k - 1];
  if (!(t[0] > 0.0)) return PointStatus::bad_distance;
  double s = 0.0;
  for (std::size_t j = 0; j + 1 < k; ++j) {
    if (!(t[j] > 0.0) || t[j] > tk) return PointStatus::bad_distance;
    s += std::log(tk / t[j]);
  }
  if (!(s > 0.0)) return PointStatus::degenerate_neighborhood;
  out = static_cast<double>(k - 1) / s;
  return PointStatus::ok;
}

struct RunOutcome {
  double estimate = 0.0;
  std::size_t used = 0;
  std::size_t degenerate = 0;
};

RunOutcome estimate_from_knn(const KnnResult& knn, int k, Averaging averaging) {
  std::vector<double> per_point;
  per_point.reserve(static_cast<std::size_t>(knn.distances.rows()));
  RunOutcome run;
  for (Eigen::Index i = 0; i < knn.distances.rows(); ++i) {
    std::span<const double> row(knn.distances.row(i).data(), static_cast<std::size_t>(k));
    double d = 0.0;
    switch (point_estimate(row, d)) {
      case PointStatus::ok: per_point.push_back(d); break;
      case PointStatus::degenerate_neighborhood: ++run.degenerate; break;
      case PointStatus::bad_distance:
        throw DegenerateData("mle: non-positive neighbour distance at query row " + std::to_string(i));
    }
  }
  if (per_point.empty()) throw EstimationFailed("mle: every neighbourhood is degenerate");
  run.estimate = aggregate_point_estimates(per_point, averaging);
  run.used = per_point.size();
  return run;
}

struct PerK {
  std::vector<double> estimates;
  std::size_t used = std::numeric_limits<std::size_t>::max();
  std::size_t degenerate = 0;
  std::size_t duplicates = 0;
  std::exception_ptr failure;
  std::string error;
};

// Shared body of the single-k estimate and the sweep. Each run draws its
// subsample from its own stream, and one kNN pass at the largest k serves
// every smaller k in that run.
std::map<int, PerK> run_mle(const Matrix& data, std::vector<int> ks, const MleConfig& cfg,
                            const Rng& rng) {
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  std::map<int, PerK> acc;
  for (int k : ks) acc[k];

  for (int r = 0; r < cfg.runs; ++r) {
    Rng run_rng = rng.split(static_cast<std::uint64_t>(r));
    const auto ids = subsample(static_cast<std::size_t>(data.rows()), cfg.anchor, run_rng);
    const Matrix sub = take_rows(data, ids);

    std::optional<KnnResult> shared;
    try {
      shared = pairwise_knn(sub, ks.back(), cfg.dedup_epsilon);
    } catch (const DegenerateData&) {
      // Some smaller k may still be feasible; handled per k below.
    }
    for (int k : ks) {
      PerK& slot = acc[k];
      if (slot.failure) continue;
      try {
        const KnnResult knn = shared ? *shared : pairwise_knn(sub, k, cfg.dedup_epsilon);
        const RunOutcome out = estimate_from_knn(knn, k, cfg.averaging);
        slot.estimates.push_back(out.estimate);
        slot.used = std::min(slot.used, out.used);
        slot.degenerate = std::max(slot.degenerate, out.degenerate);
        slot.duplicates = std::max(slot.duplicates, knn.removed);
      } catch (const Error& e) {
        slot.failure = std::current_exception();
        slot.error = e.what();
      }
    }
  }
  return acc;
}

IdeResult to_result(int k, const PerK& slot) {
  IdeResult res;
  res.estimator = Estimator::mle;
  res.k = k;
  res.mean = mean(slot.estimates);
  res.sd = stddev(slot.estimates);
  res.n_used = slot.used;
  res.n_degenerate = slot.degenerate;
  res.n_duplicates = slot.duplicates;
  return res;
}

}  // namespace

double mle_point_estimate(std::span<const double> neighbor_distances) {
  if (neighbor_distances.size() < 2) throw ConfigError("mle_point_estimate: need k >= 2 distances");
  if (!std::is_sorted(neighbor_distances.begin(), neighbor_distances.end()))
    throw DegenerateData("mle_point_estimate: distances must be ascending");
  double d = 0.0;
  switch (point_estimate(neighbor_distances, d)) {
    case PointStatus::ok: return d;
    case PointStatus::degenerate_neighborhood:
      throw DegenerateNeighborhood("mle_point_estimate: T_k equals T_1");
    case PointStatus::bad_distance: break;
  }
  throw DegenerateData("mle_point_estimate: distances must be positive");
}

double aggregate_point_estimates(std::span<const double> estimates, Averaging averaging) {
  if (estimates.empty()) throw EstimationFailed("no point estimates to aggregate");
  if (averaging == Averaging::levina) return mean(estimates);
  double inv = 0.0;
  for (double d : estimates) inv += 1.0 / d;
  return static_cast<double>(estimates.size()) / inv;
}

IdeResult mle_dataset_estimate(const Matrix& data, int k, const MleConfig& cfg, const Rng& rng) {
  MleConfig single = cfg;
  single.ks = {k};
  single.validate();
  const auto acc = run_mle(data, single.ks, single, rng);
  const PerK& slot = acc.at(k);
  if (slot.failure) std::rethrow_exception(slot.failure);
  return to_result(k, slot);
}

KSweep mle_k_sweep(const Matrix& data, const MleConfig& cfg, const Rng& rng) {
  cfg.validate();
  const auto acc = run_mle(data, cfg.ks, cfg, rng);
  KSweep sweep;
  bool any = false;
  for (const auto& [k, slot] : acc) {
    SweepEntry entry;
    if (!slot.failure) {
      entry.result = to_result(k, slot);
      any = true;
    } else {
      entry.error = slot.error;
    }
    sweep.emplace(k, std::move(entry));
  }
  if (!any) throw EstimationFailed("mle_k_sweep: every k failed (" + acc.begin()->second.error + ")");
  return sweep;
}

StableIde select_stable_ide(const KSweep& sweep, double rel_tol) {
  if (!(rel_tol > 0.0)) throw ConfigError("select_stable_ide: rel_tol must be > 0");
  std::vector<const IdeResult*> ok;
  for (const auto& [k, entry] : sweep)
    if (entry.result) ok.push_back(&*entry.result);
  if (ok.empty()) throw EstimationFailed("select_stable_ide: no successful sweep entries");

  // For each start, extend while max-min stays within rel_tol of the run mean.
  std::size_t best_start = 0, best_len = 0;
  for (std::size_t s = 0; s < ok.size(); ++s) {
    double lo = ok[s]->mean, hi = ok[s]->mean, sum = ok[s]->mean;
    std::size_t len = 1;
    for (std::size_t e = s + 1; e < ok.size(); ++e) {
      const double v = ok[e]->mean;
      const double nlo = std::min(lo, v), nhi = std::max(hi, v), nsum = sum + v;
      if (nhi - nlo > rel_tol * (nsum / static_cast<double>(len + 1))) break;
      lo = nlo, hi = nhi, sum = nsum, ++len;
    }
    if (len >= best_len) best_start = s, best_len = len;
  }

  StableIde out;
  if (best_len < 2) {
    out.result = *ok.back();
    out.stable = false;
    out.plateau_ks = {*ok.back()->k};
    return out;
  }
  std::vector<double> means, sds;
  for (std::size_t i = best_start; i < best_start + best_len; ++i) {
    means.push_back(ok[i]->mean);
    sds.push_back(ok[i]->sd);
    out.plateau_ks.push_back(*ok[i]->k);
  }
  out.result = *ok[best_start + best_len - 1];
  out.result.mean = mean(means);
  out.result.sd = mean(sds);
  out.stable = true;
  return out;
}

double slope_through_origin(std::span<const double> x, std::span<const double> y) {
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += x[i] * y[i];
    sxx += x[i] * x[i];
  }
  if (!(sxx > 0.0)) throw EstimationFailed("twonn: all neighbour ratios equal 1");
  return sxy / sxx;
}

IdeResult twonn_estimate(const Matrix& data, const TwonnConfig& cfg) {
  cfg.validate();
  if (data.rows() < 3) throw DegenerateData("twonn: need at least 3 points");
  const KnnResult knn = pairwise_knn(data, 2, cfg.dedup_epsilon);
  const auto n = static_cast<std::size_t>(knn.distances.rows());

  std::vector<double> ratios(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    ratios[i] = knn.distances(row, 1) / knn.distances(row, 0);
  }
  std::sort(ratios.begin(), ratios.end());
  // Ratios within a few ulps of 1 come from equidistant neighbours.
  constexpr double kUnitRatioTol = 64 * std::numeric_limits<double>::epsilon();
  if (ratios.back() - 1.0 <= kUnitRatioTol) throw EstimationFailed("twonn: all neighbour ratios equal 1");

  const auto keep = static_cast<std::size_t>(std::floor(cfg.anchor * static_cast<double>(n)));
  if (keep < 1) throw EstimationFailed("twonn: anchor keeps no points");
  std::vector<double> x(keep), y(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    const double f = static_cast<double>(i + 1) / static_cast<double>(n);
    x[i] = std::log(ratios[i]);
    y[i] = -std::log1p(-f);
  }

  IdeResult res;
  res.estimator = Estimator::twonn;
  res.mean = slope_through_origin(x, y);
  res.sd = 0.0;
  res.n_used = n;
  res.n_duplicates = knn.removed;
  if (!(res.mean > 0.0) || !std::isfinite(res.mean))
    throw EstimationFailed("twonn: non-positive slope");
  return res;
}

}  // namespace fondue
