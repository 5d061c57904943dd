#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "fondue/core_math.hpp"
#include "fondue/errors.hpp"
#include "fondue/ide.hpp"
#include "fondue/latent_analysis.hpp"
#include "fondue/vae.hpp"

namespace fondue {

struct IdePair {
  double ide_z = 0.0;
  double ide_mu = 0.0;
  double gap() const { return ide_z - ide_mu; }
};

/// Source of (IDE_z, IDE_mu) for a latent dimensionality trained for a given
/// number of epochs. Must be deterministic in (p, epochs, seed).
class IdeOracle {
 public:
  virtual ~IdeOracle() = default;
  virtual IdePair query(int latent_dim, int epochs) = 0;
  virtual std::uint64_t seed() const = 0;
  virtual std::string estimator() const { return "mle"; }
  virtual std::optional<int> estimator_k() const { return 20; }
};

/// Oracle backed by a plain function; the test-fixture oracle.
class FunctionOracle : public IdeOracle {
 public:
  using Fn = std::function<IdePair(int latent_dim, int epochs)>;
  explicit FunctionOracle(Fn fn, std::uint64_t seed = 0) : fn_(std::move(fn)), seed_(seed) {}
  IdePair query(int latent_dim, int epochs) override {
    ++calls_;
    return fn_(latent_dim, epochs);
  }
  std::uint64_t seed() const override { return seed_; }
  int calls() const { return calls_; }

 private:
  Fn fn_;
  std::uint64_t seed_;
  int calls_ = 0;
};

struct TrainedOracleConfig {
  VaeConfig vae;
  MleConfig mle{{20}, 0.8, 5, Averaging::levina, 1e-12};
  int k = 20;
  // Use the stable-plateau rule over mle.ks instead of the single k.
  bool use_plateau = false;
  double rel_tol = 0.1;
  // Rows of the dataset used as the probe batch (taken from the front).
  std::size_t probe_rows = 10000;
  std::optional<std::filesystem::path> checkpoint_dir;
};

/// Trains a VAE per query and estimates IDE_z and IDE_mu of its
/// representations on the probe rows.
class TrainedVaeOracle : public IdeOracle {
 public:
  TrainedVaeOracle(const Matrix& data, TrainedOracleConfig cfg);

  IdePair query(int latent_dim, int epochs) override;
  std::uint64_t seed() const override { return cfg_.vae.seed; }
  std::optional<int> estimator_k() const override;

  /// Training plus representation extraction, shared with the variable-type
  /// baseline.
  Representations train_and_extract(int latent_dim, int epochs);

  int trainings() const { return trainings_; }
  const std::map<std::pair<int, int>, std::filesystem::path>& checkpoints() const { return checkpoints_; }

 private:
  const Matrix& data_;
  Matrix probe_;
  TrainedOracleConfig cfg_;
  int trainings_ = 0;
  std::map<std::pair<int, int>, std::filesystem::path> checkpoints_;
};

struct CacheEntry {
  int p = 0;
  int epochs = 0;
  std::uint64_t seed = 0;
  double ide_z = 0.0;
  double ide_mu = 0.0;
  std::string estimator = "mle";
  std::optional<int> k;

  bool operator==(const CacheEntry&) const = default;
};

/// Memo of oracle results keyed by (seed, epochs, p). When bound to a file,
/// every insert is appended as one JSON line, and loading replays the lines.
class MemCache {
 public:
  using Key = std::tuple<std::uint64_t, int, int>;

  MemCache() = default;
  /// Loads `path` if it exists and appends future inserts to it.
  static MemCache open(const std::filesystem::path& path);
  static MemCache load(const std::filesystem::path& path);

  const CacheEntry* find(std::uint64_t seed, int epochs, int p) const;
  void insert(const CacheEntry& e);
  void save(const std::filesystem::path& path) const;
  void merge(const MemCache& other);

  std::size_t size() const { return entries_.size(); }
  const std::map<Key, CacheEntry>& entries() const { return entries_; }
  const std::optional<std::filesystem::path>& path() const { return path_; }

 private:
  std::map<Key, CacheEntry> entries_;
  std::optional<std::filesystem::path> path_;
};

std::string to_json_line(const CacheEntry& e);
CacheEntry cache_entry_from_json_line(const std::string& line);

/// Wraps an oracle failure with the latent dimension being queried; the
/// original error is nested.
class OracleError : public Error {
 public:
  OracleError(int p, const std::string& what)
      : Error("oracle failed at p=" + std::to_string(p) + ": " + what), p_(p) {}
  int p() const noexcept { return p_; }

 private:
  int p_;
};

struct MemLookup {
  IdePair ide;
  bool cached = false;
};

/// Memoized oracle query: trains at most once per (seed, epochs, p).
MemLookup get_mem(MemCache& cache, int p, int epochs, IdeOracle& oracle);

struct FondueConfig {
  // Threshold in percent of the data IDE.
  double t_percent = 20.0;
  double ide_data = 0.0;
  int epochs = 1;
  std::optional<int> max_dim;  // default 16 * ceil(ide_data)

  int resolved_max_dim() const;
  double threshold() const { return t_percent / 100.0 * ide_data; }
  int initial_p() const { return static_cast<int>(std::lround(ide_data)); }
  void validate() const;
};

struct FondueStep {
  int l = 0;
  int p = 0;
  std::optional<int> u;  // unset means unbounded
  IdePair ide;
  bool within = false;
  bool cached = false;
};

struct FondueResult {
  int p = 0;
  double threshold = 0.0;
  std::optional<int> final_u;
  std::vector<FondueStep> steps;
  int oracle_calls = 0;
  // Cached evaluations for this seed and budget contradict the monotone
  // assumption (some within-threshold dim lies above an exceeding dim).
  bool non_monotone = false;
};

/// Doubling then bisection over the latent dimension: returns the largest p
/// with IDE_z - IDE_mu <= threshold when the gap is monotone in p.
/// Throws SearchCapped when max_dim is within threshold and no upper bound
/// was ever found, NoFeasibleDimension when even p = 1 exceeds it.
FondueResult run_fondue(const FondueConfig& cfg, IdeOracle& oracle, MemCache& cache);

struct StableOutcome {
  int p = 0;
  int epochs_used = 0;
  std::vector<int> predictions;
  std::vector<FondueResult> runs;
};

/// Runs fondue at each budget of an ascending schedule and stops at the
/// first prediction repeated for two consecutive budgets, reporting the
/// earlier budget. Throws Unstable when no two consecutive runs agree.
StableOutcome fondue_stable(const FondueConfig& cfg, const std::function<IdeOracle&(int epochs)>& oracle_for,
                            const std::vector<int>& epoch_schedule, MemCache& cache);

struct FondueVarResult {
  int n = 0;
  std::vector<int> trained_dims;
  std::vector<VariableTypeReport> reports;
};

/// Variable-type baseline. Starts at round(2 * data_ide) latent dims and
/// doubles until the classifier reports a passive variable (keep_mixed) or
/// any mixed or passive variable (otherwise); returns av + mv or av.
/// `trainer(dim, epochs)` produces whatever `classifier` consumes; the
/// classifier returns a VariableTypeReport.
template <typename Trainer, typename Classifier>
FondueVarResult fondue_var(double data_ide, int epochs, bool keep_mixed, Trainer&& trainer,
                           Classifier&& classifier, std::optional<int> max_dim = std::nullopt) {
  if (!(data_ide >= 1.0)) throw ConfigError("fondue_var: data_ide must be >= 1");
  if (epochs < 1) throw ConfigError("fondue_var: epochs must be >= 1");
  const int cap = max_dim.value_or(16 * static_cast<int>(std::ceil(data_ide)));
  FondueVarResult out;
  int dims = std::max(1, static_cast<int>(std::lround(2.0 * data_ide)));
  while (true) {
    if (dims > cap) throw SearchCapped(cap);
    const VariableTypeReport rep = classifier(trainer(dims, epochs));
    out.trained_dims.push_back(dims);
    out.reports.push_back(rep);
    if (keep_mixed && rep.passive > 0) {
      out.n = rep.active + rep.mixed;
      return out;
    }
    if (!keep_mixed && (rep.mixed > 0 || rep.passive > 0)) {
      out.n = rep.active;
      return out;
    }
    dims *= 2;
  }
}

}  // namespace fondue
