#include "fondue/search.hpp"

#include <cassert>
#include <exception>
#include <fstream>

#include <nlohmann/json.hpp>

namespace fondue {

// ---------------------------------------------------------------------------
// TrainedVaeOracle

TrainedVaeOracle::TrainedVaeOracle(const Matrix& data, TrainedOracleConfig cfg)
    : data_(data), cfg_(std::move(cfg)) {
  cfg_.vae.input_dim = static_cast<int>(data.cols());
  cfg_.vae.validate();
  cfg_.mle.validate();
  const auto rows = std::min<Eigen::Index>(data.rows(), static_cast<Eigen::Index>(cfg_.probe_rows));
  if (rows < cfg_.k + 1) throw ConfigError("trained oracle: probe has fewer than k+1 rows");
  probe_ = data.topRows(rows);
}

std::optional<int> TrainedVaeOracle::estimator_k() const {
  if (cfg_.use_plateau) return std::nullopt;
  return cfg_.k;
}

Representations TrainedVaeOracle::train_and_extract(int latent_dim, int epochs) {
  VaeConfig vc = cfg_.vae;
  vc.latent_dim = latent_dim;
  const TrainResult tr = train(vc, data_, epochs);
  ++trainings_;
  if (cfg_.checkpoint_dir) {
    std::filesystem::create_directories(*cfg_.checkpoint_dir);
    const auto path = *cfg_.checkpoint_dir / ("vae_p" + std::to_string(latent_dim) + "_e" + std::to_string(epochs) +
                                              "_s" + std::to_string(vc.seed) + ".fndv");
    save_checkpoint(path, vc, tr.params);
    checkpoints_[{latent_dim, epochs}] = path;
  }
  return extract_representations(vc, tr.params, probe_, Rng(vc.seed).split(0xE5));
}

IdePair TrainedVaeOracle::query(int latent_dim, int epochs) {
  const Representations rep = train_and_extract(latent_dim, epochs);
  const Rng est_rng = Rng(cfg_.vae.seed).split(0x1DE);
  if (cfg_.use_plateau) {
    const auto z = select_stable_ide(mle_k_sweep(rep.z, cfg_.mle, est_rng), cfg_.rel_tol);
    const auto mu = select_stable_ide(mle_k_sweep(rep.mu, cfg_.mle, est_rng), cfg_.rel_tol);
    return {z.result.mean, mu.result.mean};
  }
  return {mle_dataset_estimate(rep.z, cfg_.k, cfg_.mle, est_rng).mean,
          mle_dataset_estimate(rep.mu, cfg_.k, cfg_.mle, est_rng).mean};
}

// ---------------------------------------------------------------------------
// MemCache

std::string to_json_line(const CacheEntry& e) {
  nlohmann::json j{{"p", e.p},           {"epochs", e.epochs},       {"seed", e.seed},
                   {"ide_z", e.ide_z},   {"ide_mu", e.ide_mu},       {"estimator", e.estimator},
                   {"k", e.k ? nlohmann::json(*e.k) : nlohmann::json(nullptr)}};
  return j.dump();
}

CacheEntry cache_entry_from_json_line(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  CacheEntry e;
  e.p = j.at("p").get<int>();
  e.epochs = j.at("epochs").get<int>();
  e.seed = j.at("seed").get<std::uint64_t>();
  e.ide_z = j.at("ide_z").get<double>();
  e.ide_mu = j.at("ide_mu").get<double>();
  e.estimator = j.at("estimator").get<std::string>();
  if (!j.at("k").is_null()) e.k = j["k"].get<int>();
  return e;
}

MemCache MemCache::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("memcache: cannot open " + path.string());
  MemCache cache;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(f, line)) {
    if (!line.empty()) {
      CacheEntry e;
      try {
        e = cache_entry_from_json_line(line);
      } catch (const nlohmann::json::exception& ex) {
        throw FormatError(std::string("memcache: bad record: ") + ex.what(), offset);
      }
      if (cache.find(e.seed, e.epochs, e.p)) throw FormatError("memcache: duplicate record", offset);
      cache.entries_.emplace(Key{e.seed, e.epochs, e.p}, e);
    }
    offset += line.size() + 1;
  }
  return cache;
}

MemCache MemCache::open(const std::filesystem::path& path) {
  MemCache cache = std::filesystem::exists(path) ? load(path) : MemCache{};
  cache.path_ = path;
  return cache;
}

const CacheEntry* MemCache::find(std::uint64_t seed, int epochs, int p) const {
  const auto it = entries_.find(Key{seed, epochs, p});
  return it == entries_.end() ? nullptr : &it->second;
}

void MemCache::insert(const CacheEntry& e) {
  if (!entries_.emplace(Key{e.seed, e.epochs, e.p}, e).second)
    throw ConfigError("memcache: entry for p=" + std::to_string(e.p) + " already present");
  if (path_) {
    if (path_->has_parent_path()) std::filesystem::create_directories(path_->parent_path());
    std::ofstream f(*path_, std::ios::app);
    f << to_json_line(e) << '\n';
    if (!f) throw ConfigError("memcache: cannot append to " + path_->string());
  }
}

void MemCache::save(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ConfigError("memcache: cannot open " + path.string());
  for (const auto& [key, e] : entries_) f << to_json_line(e) << '\n';
}

void MemCache::merge(const MemCache& other) {
  for (const auto& [key, e] : other.entries_) {
    const auto it = entries_.find(key);
    if (it == entries_.end())
      entries_.emplace(key, e);
    else if (!(it->second == e))
      throw ConfigError("memcache: conflicting records for p=" + std::to_string(e.p));
  }
}

// ---------------------------------------------------------------------------
// Search

MemLookup get_mem(MemCache& cache, int p, int epochs, IdeOracle& oracle) {
  if (p < 1) throw ConfigError("get_mem: p must be >= 1");
  if (const CacheEntry* hit = cache.find(oracle.seed(), epochs, p)) return {{hit->ide_z, hit->ide_mu}, true};
  IdePair ide;
  try {
    ide = oracle.query(p, epochs);
  } catch (const Error& e) {
    std::throw_with_nested(OracleError(p, e.what()));
  }
  cache.insert({p, epochs, oracle.seed(), ide.ide_z, ide.ide_mu, oracle.estimator(), oracle.estimator_k()});
  return {ide, false};
}

int FondueConfig::resolved_max_dim() const {
  return max_dim.value_or(16 * static_cast<int>(std::ceil(ide_data)));
}

void FondueConfig::validate() const {
  if (!(t_percent > 0.0)) throw ConfigError("fondue: t_percent must be > 0");
  if (!(ide_data >= 0.5) || !std::isfinite(ide_data))
    throw ConfigError("fondue: ide_data must be finite and >= 0.5 so the first probe is >= 1");
  if (epochs < 1) throw ConfigError("fondue: epochs must be >= 1");
  if (resolved_max_dim() < static_cast<int>(std::ceil(ide_data)))
    throw ConfigError("fondue: max_dim must be >= ceil(ide_data)");
}

FondueResult run_fondue(const FondueConfig& cfg, IdeOracle& oracle, MemCache& cache) {
  cfg.validate();
  const int cap = cfg.resolved_max_dim();
  FondueResult res;
  res.threshold = cfg.threshold();

  int l = 0;
  std::optional<int> u;
  int p = cfg.initial_p();
  while (p != l) {
    assert(l <= p && (!u || p <= *u));
    FondueStep step{l, p, u, {}, false, false};
    const MemLookup got = get_mem(cache, p, cfg.epochs, oracle);
    if (!got.cached) ++res.oracle_calls;
    step.ide = got.ide;
    step.cached = got.cached;
    step.within = got.ide.gap() <= res.threshold;
    res.steps.push_back(step);

    if (step.within) {
      l = p;
      if (u) {
        p = std::min(2 * p, *u);
      } else {
        if (p >= cap) throw SearchCapped(cap);
        p = std::min(2 * p, cap);
      }
    } else {
      u = p;
      p = (l + *u) / 2;
    }
  }
  if (p == 0) throw NoFeasibleDimension();
  res.p = p;
  res.final_u = u;

  // Within one search the probes are always consistent, so look at every
  // evaluation cached for this seed and budget, including earlier searches.
  std::optional<int> lowest_exceeding;
  int highest_within = 0;
  for (const auto& [key, e] : cache.entries()) {
    if (e.seed != oracle.seed() || e.epochs != cfg.epochs) continue;
    if (e.ide_z - e.ide_mu <= res.threshold)
      highest_within = std::max(highest_within, e.p);
    else
      lowest_exceeding = std::min(lowest_exceeding.value_or(e.p), e.p);
  }
  res.non_monotone = lowest_exceeding && highest_within > *lowest_exceeding;
  return res;
}

StableOutcome fondue_stable(const FondueConfig& cfg, const std::function<IdeOracle&(int epochs)>& oracle_for,
                            const std::vector<int>& epoch_schedule, MemCache& cache) {
  if (epoch_schedule.size() < 2) throw ConfigError("fondue_stable: schedule needs at least two budgets");
  for (std::size_t i = 1; i < epoch_schedule.size(); ++i)
    if (epoch_schedule[i] <= epoch_schedule[i - 1])
      throw ConfigError("fondue_stable: schedule must be strictly ascending");

  StableOutcome out;
  for (std::size_t i = 0; i < epoch_schedule.size(); ++i) {
    FondueConfig run = cfg;
    run.epochs = epoch_schedule[i];
    out.runs.push_back(run_fondue(run, oracle_for(run.epochs), cache));
    out.predictions.push_back(out.runs.back().p);
    if (i > 0 && out.predictions[i] == out.predictions[i - 1]) {
      out.p = out.predictions[i];
      out.epochs_used = epoch_schedule[i - 1];
      return out;
    }
  }
  throw Unstable(out.predictions);
}

}  // namespace fondue
