#include "fondue/run_config.hpp"

#include <fstream>

#include <Eigen/Core>

#include "fondue/errors.hpp"

namespace fondue {

void RunConfig::validate() const {
  if (seeds.empty()) throw ConfigError("run config: seeds must not be empty");
  mle.validate();
  twonn.validate();
  if (!(stable_rel_tol > 0.0)) throw ConfigError("run config: stable_rel_tol must be > 0");
  vae.validate();
  if (train_epochs < 1) throw ConfigError("run config: train_epochs must be >= 1");
  if (probe_rows < 2) throw ConfigError("run config: probe_rows must be >= 2");
  if (!(tau > 0.0)) throw ConfigError("run config: tau must be > 0");
  if (!(delta > 0.0 && delta < 0.5)) throw ConfigError("run config: delta must lie in (0, 0.5)");
  if (!(t_percent > 0.0)) throw ConfigError("run config: t_percent must be > 0");
  if (ide_data && !(*ide_data >= 0.5)) throw ConfigError("run config: ide_data must be >= 0.5");
  if (max_dim && *max_dim < 1) throw ConfigError("run config: max_dim must be >= 1");
  if (epoch_schedule.empty()) throw ConfigError("run config: epoch_schedule must not be empty");
  for (int e : epoch_schedule)
    if (e < 1) throw ConfigError("run config: epoch budgets must be >= 1");
  if (oracle_k < 2) throw ConfigError("run config: oracle k must be >= 2");
}

namespace {

template <typename T>
nlohmann::json opt(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, std::optional<T>& out) {
  if (!j.contains(key)) return;
  if (j[key].is_null())
    out.reset();
  else
    out = j[key].get<T>();
}

}  // namespace

nlohmann::json to_json(const RunConfig& c) {
  return {
      {"data", c.data},
      {"out", c.out.string()},
      {"seeds", c.seeds},
      {"mle",
       {{"ks", c.mle.ks},
        {"anchor", c.mle.anchor},
        {"runs", c.mle.runs},
        {"averaging", to_string(c.mle.averaging)},
        {"dedup_epsilon", c.mle.dedup_epsilon}}},
      {"twonn", {{"anchor", c.twonn.anchor}, {"dedup_epsilon", c.twonn.dedup_epsilon}}},
      {"stable_rel_tol", c.stable_rel_tol},
      {"vae", to_json(c.vae)},
      {"train_epochs", c.train_epochs},
      {"probe_rows", c.probe_rows},
      {"checkpoint", opt(c.checkpoint)},
      {"variables", {{"tau", c.tau}, {"delta", c.delta}}},
      {"fondue",
       {{"t_percent", c.t_percent},
        {"ide_data", opt(c.ide_data)},
        {"max_dim", opt(c.max_dim)},
        {"epoch_schedule", c.epoch_schedule},
        {"k", c.oracle_k},
        {"use_plateau", c.use_plateau},
        {"baseline", c.baseline == Baseline::fondue ? "fondue" : "var"},
        {"keep_mixed", c.keep_mixed},
        {"cache", opt(c.cache)}}},
  };
}

RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c) {
  try {
    if (!j.is_object()) throw ConfigError("run config: expected a JSON object");
    c.data = j.value("data", c.data);
    if (j.contains("out")) c.out = j["out"].get<std::string>();
    c.seeds = j.value("seeds", c.seeds);
    if (j.contains("mle")) {
      const auto& m = j["mle"];
      c.mle.ks = m.value("ks", c.mle.ks);
      c.mle.anchor = m.value("anchor", c.mle.anchor);
      c.mle.runs = m.value("runs", c.mle.runs);
      if (m.contains("averaging")) c.mle.averaging = parse_averaging(m["averaging"].get<std::string>());
      c.mle.dedup_epsilon = m.value("dedup_epsilon", c.mle.dedup_epsilon);
    }
    if (j.contains("twonn")) {
      c.twonn.anchor = j["twonn"].value("anchor", c.twonn.anchor);
      c.twonn.dedup_epsilon = j["twonn"].value("dedup_epsilon", c.twonn.dedup_epsilon);
    }
    c.stable_rel_tol = j.value("stable_rel_tol", c.stable_rel_tol);
    if (j.contains("vae")) {
      nlohmann::json merged = to_json(c.vae);
      merged.update(j["vae"]);
      c.vae = vae_config_from_json(merged);
    }
    c.train_epochs = j.value("train_epochs", c.train_epochs);
    c.probe_rows = j.value("probe_rows", c.probe_rows);
    read_opt(j, "checkpoint", c.checkpoint);
    if (j.contains("variables")) {
      c.tau = j["variables"].value("tau", c.tau);
      c.delta = j["variables"].value("delta", c.delta);
    }
    if (j.contains("fondue")) {
      const auto& f = j["fondue"];
      c.t_percent = f.value("t_percent", c.t_percent);
      read_opt(f, "ide_data", c.ide_data);
      read_opt(f, "max_dim", c.max_dim);
      c.epoch_schedule = f.value("epoch_schedule", c.epoch_schedule);
      c.oracle_k = f.value("k", c.oracle_k);
      c.use_plateau = f.value("use_plateau", c.use_plateau);
      if (f.contains("baseline")) {
        const auto b = f["baseline"].get<std::string>();
        if (b != "fondue" && b != "var") throw ConfigError("run config: baseline must be fondue or var");
        c.baseline = b == "var" ? Baseline::var : Baseline::fondue;
      }
      c.keep_mixed = f.value("keep_mixed", c.keep_mixed);
      read_opt(f, "cache", c.cache);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  // Accept either a bare RunConfig or an artifact that embeds one.
  if (j.contains("run_config")) j = j["run_config"];
  return run_config_from_json(j, std::move(base));
}

nlohmann::json provenance() {
  return {{"tool", kToolName},
          {"version", kToolVersion},
          {"rng", Rng::kAlgorithm},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"conventions",
           {{"mle_anchor", "each run subsamples floor(anchor*N) points without replacement; mean/sd across runs"},
            {"twonn_cdf", "F(r_(i)) = i/N, regression through the origin on the smallest floor(anchor*N) ratios"},
            {"recon_reduction", "Bernoulli NLL summed over pixels, averaged over the batch"},
            {"fondue_threshold", "threshold = t_percent/100 * ide_data; first probe round(ide_data)"},
            {"variable_types", "per-example KL < tau marks passive; fraction >= 1-delta passive, <= delta active"}}}};
}

}  // namespace fondue
