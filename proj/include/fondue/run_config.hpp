#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fondue/ide.hpp"
#include "fondue/vae.hpp"

namespace fondue {

inline constexpr const char* kToolName = "fondue";
inline constexpr const char* kToolVersion = "0.1.0";

enum class Baseline { fondue, var };

/// Everything a command needs, defaulting to the standard recipe: MLE over
/// k = 3, 5, 10, 20 with 5 runs at anchor 0.8, TwoNN anchor 0.9, Adam
/// (1e-4, 0.9, 0.999, 1e-8), batch 64, beta 1, and a 20% FONDUE threshold.
struct RunConfig {
  std::string data;
  std::filesystem::path out = "out";
  std::vector<std::uint64_t> seeds{0};

  MleConfig mle;
  TwonnConfig twonn;
  double stable_rel_tol = 0.1;

  VaeConfig vae;
  int train_epochs = 2;
  std::size_t probe_rows = 10000;
  std::optional<std::string> checkpoint;  // train: load instead of training

  double tau = 0.1;
  double delta = 0.05;

  double t_percent = 20.0;
  std::optional<double> ide_data;
  std::optional<int> max_dim;
  std::vector<int> epoch_schedule{1, 2};
  int oracle_k = 20;
  bool use_plateau = false;
  Baseline baseline = Baseline::fondue;
  bool keep_mixed = true;
  std::optional<std::string> cache;

  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
/// Fields present in `j` override those of `base`.
RunConfig run_config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

/// Provenance block embedded in every emitted artifact.
nlohmann::json provenance();

}  // namespace fondue
