#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fondue/datagen.hpp"
#include "fondue/ide.hpp"
#include "fondue/latent_analysis.hpp"
#include "fondue/run_config.hpp"
#include "fondue/search.hpp"
#include "fondue/vae.hpp"

namespace fondue {

/// Process exit code for a failure: 2 config/input, 3 search outcome,
/// 4 numerical or estimation failure, 1 anything else. Nested causes of an
/// OracleError decide the code.
int exit_code_for(std::exception_ptr error);

/// Formats a double so that it round-trips (%.17g); non-finite as nan/inf.
std::string format_double(double v);

// gen ----------------------------------------------------------------------

struct GenRequest {
  std::string kind = "hyperplane";  // hyperplane | manifold | gaussian | sprites
  std::size_t n = 4000;
  int d = 5;
  int ambient = 20;
  double noise = 0.0;
  std::uint64_t seed = 0;
  MiniSpritesConfig sprites;
  std::filesystem::path output;
};

nlohmann::json to_json(const GenRequest& req);

/// Generates the dataset and writes it (plus sidecar) to req.output.
Dataset run_gen(const GenRequest& req);

// ide ----------------------------------------------------------------------

struct IdeReport {
  std::uint64_t seed = 0;
  KSweep sweep;
  std::optional<IdeResult> twonn;
  std::string twonn_error;
  StableIde stable;
};

/// MLE k-sweep, TwoNN and the stable-k selection on cfg.data, once per seed.
/// Writes <out>/ide.csv and <out>/ide.json.
std::vector<IdeReport> run_ide(const RunConfig& cfg);

// train --------------------------------------------------------------------

struct LayerIde {
  std::string layer;
  int width = 0;
  std::optional<IdeResult> result;
  std::string error;
};

struct TrainReport {
  std::uint64_t seed = 0;
  std::vector<EpochLoss> trace;  // empty when a checkpoint was loaded
  std::vector<LayerIde> layers;
  VariableTypeReport variables;
  std::filesystem::path checkpoint;
};

/// Trains one VAE per seed (or loads cfg.checkpoint), then estimates the
/// IDE of every representation on the probe rows. Writes, per seed,
/// checkpoint, losses.csv, layer_ide.csv and variables.csv under
/// <out>/seed_<s>/, and <out>/train.json.
std::vector<TrainReport> run_train(const RunConfig& cfg);

// fondue -------------------------------------------------------------------

struct FondueSeedReport {
  std::uint64_t seed = 0;
  double ide_data = 0.0;
  int p = 0;
  int epochs_used = 0;
  std::vector<int> predictions;
  int models_trained = 0;
  double wall_seconds = 0.0;
  std::string error;  // set when the seed failed
  int exit_code = 0;
  nlohmann::json detail;
};

struct FondueSummary {
  std::vector<FondueSeedReport> seeds;
  std::optional<double> p_mean;
  std::optional<double> p_sd;
  int exit_code = 0;
};

/// FONDUE (or the variable-type baseline) once per seed with a persistent
/// memo cache. Writes <out>/fondue.json and the merged cache. Per-seed
/// failures are recorded rather than thrown; the summary's exit code is the
/// first failing seed's.
FondueSummary run_fondue_command(const RunConfig& cfg, std::ostream& log);

// report -------------------------------------------------------------------

/// Merges artifacts (.json, .jsonl, .csv) into one deterministic document.
nlohmann::json build_report(const std::vector<std::filesystem::path>& inputs);
void write_report(const std::vector<std::filesystem::path>& inputs, const std::filesystem::path& out);

/// Loads the FNDS file named by cfg.data.
Dataset load_data(const RunConfig& cfg);

}  // namespace fondue
