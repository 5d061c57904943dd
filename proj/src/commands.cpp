#include "fondue/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

namespace fondue {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int classify(const std::exception& e) {
  if (dynamic_cast<const OracleError*>(&e)) {
    try {
      std::rethrow_if_nested(e);
    } catch (const std::exception& inner) {
      return classify(inner);
    } catch (...) {
      return 1;
    }
    return 4;
  }
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const DegenerateData*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e))
    return 2;
  if (dynamic_cast<const SearchCapped*>(&e) || dynamic_cast<const Unstable*>(&e) ||
      dynamic_cast<const NoFeasibleDimension*>(&e))
    return 3;
  if (dynamic_cast<const NumericalError*>(&e) || dynamic_cast<const EstimationFailed*>(&e) ||
      dynamic_cast<const DegenerateNeighborhood*>(&e))
    return 4;
  return 1;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ConfigError("cannot write " + path.string());
  return f;
}

void write_json(const fs::path& path, const json& j) {
  auto f = open_out(path);
  f << j.dump(2) << '\n';
}

json meta_summary(const DatasetMeta& meta) {
  json j = to_json(meta);
  // Factor tables can be as large as the data itself.
  j.erase("factors");
  return j;
}

json to_json(const IdeResult& r) {
  return {{"estimator", to_string(r.estimator)},
          {"k", r.k ? json(*r.k) : json(nullptr)},
          {"mean", r.mean},
          {"sd", r.sd},
          {"n_used", r.n_used},
          {"n_degenerate", r.n_degenerate},
          {"n_duplicates", r.n_duplicates}};
}

std::string csv_result_cells(const std::optional<IdeResult>& r) {
  if (!r) return "nan,nan,,,";
  return format_double(r->mean) + "," + format_double(r->sd) + "," + std::to_string(r->n_used) + "," +
         std::to_string(r->n_duplicates) + "," + std::to_string(r->n_degenerate);
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

std::string config_comment(const RunConfig& cfg) { return "# run_config " + to_json(cfg).dump(); }

}  // namespace

int exit_code_for(std::exception_ptr error) {
  if (!error) return 0;
  try {
    std::rethrow_exception(error);
  } catch (const std::exception& e) {
    return classify(e);
  } catch (...) {
    return 1;
  }
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Dataset load_data(const RunConfig& cfg) {
  if (cfg.data.empty()) throw ConfigError("no data file given");
  return read_dataset(cfg.data);
}

// ---------------------------------------------------------------------------
// gen

json to_json(const GenRequest& r) {
  json sprites{{"side", r.sprites.side},
               {"n_x", r.sprites.n_x},
               {"n_y", r.sprites.n_y},
               {"n_scale", r.sprites.n_scale},
               {"min_half", r.sprites.min_half},
               {"max_half", r.sprites.max_half},
               {"n_shapes", r.sprites.shapes.size()}};
  return {{"kind", r.kind}, {"n", r.n},         {"d", r.d},
          {"ambient", r.ambient}, {"noise", r.noise}, {"seed", r.seed},
          {"sprites", sprites}, {"output", r.output.string()}};
}

Dataset run_gen(const GenRequest& req) {
  if (req.output.empty()) throw ConfigError("gen: output path required");
  Rng rng(req.seed);
  Dataset ds;
  if (req.kind == "hyperplane")
    ds = gen_hyperplane(req.n, req.d, req.ambient, req.noise, rng);
  else if (req.kind == "manifold")
    ds = gen_nonlinear_manifold(req.n, req.d, req.ambient, rng);
  else if (req.kind == "gaussian")
    ds = gen_gaussian(req.n, req.d, req.ambient, rng);
  else if (req.kind == "sprites")
    ds = gen_mini_sprites(req.sprites);
  else
    throw ConfigError("gen: unknown kind '" + req.kind + "'");
  ds.meta.params["request"] = to_json(req);
  ds.meta.params["provenance"] = provenance();
  write_dataset(req.output, ds.data, ds.meta);
  ds.data = quantize_to_float(ds.data);
  return ds;
}

// ---------------------------------------------------------------------------
// ide

std::vector<IdeReport> run_ide(const RunConfig& cfg) {
  cfg.validate();
  const Dataset ds = load_data(cfg);
  std::vector<IdeReport> reports;
  for (std::uint64_t seed : cfg.seeds) {
    IdeReport rep;
    rep.seed = seed;
    rep.sweep = mle_k_sweep(ds.data, cfg.mle, Rng(seed));
    try {
      rep.twonn = twonn_estimate(ds.data, cfg.twonn);
    } catch (const Error& e) {
      rep.twonn_error = e.what();
    }
    rep.stable = select_stable_ide(rep.sweep, cfg.stable_rel_tol);
    reports.push_back(std::move(rep));
  }

  auto csv = open_out(cfg.out / "ide.csv");
  csv << config_comment(cfg) << '\n';
  csv << "seed,estimator,k,mean,sd,n_used,n_duplicates,n_degenerate,in_plateau,stable,error\n";
  json results = json::array();
  for (const auto& rep : reports) {
    const std::string stable = rep.stable.stable ? "1" : "0";
    json mle = json::object();
    for (const auto& [k, entry] : rep.sweep) {
      const bool in_plateau =
          std::find(rep.stable.plateau_ks.begin(), rep.stable.plateau_ks.end(), k) != rep.stable.plateau_ks.end();
      csv << rep.seed << ",mle," << k << "," << csv_result_cells(entry.result) << "," << (in_plateau ? 1 : 0) << ","
          << stable << "," << csv_escape(entry.error) << '\n';
      mle[std::to_string(k)] = entry.result ? to_json(*entry.result) : json{{"error", entry.error}};
    }
    csv << rep.seed << ",twonn,," << csv_result_cells(rep.twonn) << ",0,," << csv_escape(rep.twonn_error) << '\n';
    csv << rep.seed << ",mle_stable,," << csv_result_cells(rep.stable.result) << ",," << stable << ",\n";
    results.push_back({{"seed", rep.seed},
                       {"mle", mle},
                       {"twonn", rep.twonn ? to_json(*rep.twonn) : json{{"error", rep.twonn_error}}},
                       {"stable",
                        {{"mean", rep.stable.result.mean},
                         {"sd", rep.stable.result.sd},
                         {"stable", rep.stable.stable},
                         {"plateau_ks", rep.stable.plateau_ks}}}});
  }
  write_json(cfg.out / "ide.json", {{"command", "ide"},
                                    {"run_config", to_json(cfg)},
                                    {"provenance", provenance()},
                                    {"dataset", meta_summary(ds.meta)},
                                    {"results", results}});
  return reports;
}

// ---------------------------------------------------------------------------
// train

std::vector<TrainReport> run_train(const RunConfig& cfg) {
  cfg.validate();
  const Dataset ds = load_data(cfg);
  const auto probe_n = std::min<Eigen::Index>(ds.data.rows(), static_cast<Eigen::Index>(cfg.probe_rows));
  const Matrix probe = ds.data.topRows(probe_n);

  std::vector<TrainReport> reports;
  json results = json::array();
  for (std::uint64_t seed : cfg.seeds) {
    TrainReport rep;
    rep.seed = seed;
    const fs::path dir = cfg.out / ("seed_" + std::to_string(seed));
    fs::create_directories(dir);

    VaeConfig vc = cfg.vae;
    vc.input_dim = static_cast<int>(ds.data.cols());
    vc.seed = seed;
    VaeParams<float> params;
    if (cfg.checkpoint) {
      auto [loaded_cfg, loaded] = load_checkpoint(*cfg.checkpoint);
      if (loaded_cfg.input_dim != vc.input_dim)
        throw ConfigError("checkpoint input_dim " + std::to_string(loaded_cfg.input_dim) +
                          " does not match the data (" + std::to_string(vc.input_dim) + ")");
      vc = loaded_cfg;
      params = std::move(loaded);
      rep.checkpoint = *cfg.checkpoint;
    } else {
      TrainResult tr = train(vc, ds.data, cfg.train_epochs);
      params = std::move(tr.params);
      rep.trace = std::move(tr.trace);
      rep.checkpoint = dir / "vae.fndv";
      save_checkpoint(rep.checkpoint, vc, params);
    }

    const Representations reps = extract_representations(vc, params, probe, Rng(vc.seed).split(0xE5));
    std::vector<std::pair<std::string, const Matrix*>> layers{{"input", &probe}};
    for (std::size_t i = 0; i < reps.encoder_activations.size(); ++i)
      layers.emplace_back("encoder_" + std::to_string(i + 1), &reps.encoder_activations[i]);
    layers.emplace_back("mu", &reps.mu);
    layers.emplace_back("log_var", &reps.log_var);
    layers.emplace_back("z", &reps.z);
    for (std::size_t i = 0; i < reps.decoder_activations.size(); ++i)
      layers.emplace_back("decoder_" + std::to_string(i + 1), &reps.decoder_activations[i]);
    layers.emplace_back("output", &reps.output);

    for (const auto& [name, m] : layers) {
      LayerIde li{name, static_cast<int>(m->cols()), std::nullopt, {}};
      try {
        li.result = mle_dataset_estimate(*m, cfg.oracle_k, cfg.mle, Rng(seed));
      } catch (const Error& e) {
        li.error = e.what();
      }
      rep.layers.push_back(std::move(li));
    }
    rep.variables = classify_variables(per_example_dim_kl(reps.mu, reps.log_var), cfg.tau, cfg.delta);

    {
      auto f = open_out(dir / "losses.csv");
      f << config_comment(cfg) << '\n' << "epoch,split,recon,kl,total\n";
      for (const auto& e : rep.trace) {
        f << e.epoch << ",train," << format_double(e.train.recon) << "," << format_double(e.train.kl) << ","
          << format_double(e.train.total) << '\n';
        f << e.epoch << ",held_out," << format_double(e.held_out.recon) << "," << format_double(e.held_out.kl)
          << "," << format_double(e.held_out.total) << '\n';
      }
    }
    {
      auto f = open_out(dir / "layer_ide.csv");
      f << config_comment(cfg) << '\n' << "layer,width,k,mean,sd,n_used,n_duplicates,n_degenerate,error\n";
      for (const auto& li : rep.layers)
        f << li.layer << "," << li.width << "," << cfg.oracle_k << "," << csv_result_cells(li.result) << ","
          << csv_escape(li.error) << '\n';
    }
    {
      auto f = open_out(dir / "variables.csv");
      f << config_comment(cfg) << '\n' << "dim,type,passive_fraction\n";
      for (std::size_t j = 0; j < rep.variables.labels.size(); ++j)
        f << j << "," << to_string(rep.variables.labels[j]) << "," << format_double(rep.variables.passive_fraction[j])
          << '\n';
    }

    json layer_json = json::array();
    for (const auto& li : rep.layers)
      layer_json.push_back({{"layer", li.layer},
                            {"width", li.width},
                            {"ide", li.result ? to_json(*li.result) : json{{"error", li.error}}}});
    json trace_json = json::array();
    for (const auto& e : rep.trace)
      trace_json.push_back({{"epoch", e.epoch},
                            {"train", {{"recon", e.train.recon}, {"kl", e.train.kl}, {"total", e.train.total}}},
                            {"held_out",
                             {{"recon", e.held_out.recon}, {"kl", e.held_out.kl}, {"total", e.held_out.total}}}});
    results.push_back({{"seed", seed},
                       {"vae", to_json(vc)},
                       {"checkpoint", rep.checkpoint.string()},
                       {"losses", trace_json},
                       {"layers", layer_json},
                       {"variables",
                        {{"active", rep.variables.active},
                         {"mixed", rep.variables.mixed},
                         {"passive", rep.variables.passive}}}});
    reports.push_back(std::move(rep));
  }
  write_json(cfg.out / "train.json", {{"command", "train"},
                                      {"run_config", to_json(cfg)},
                                      {"provenance", provenance()},
                                      {"dataset", meta_summary(ds.meta)},
                                      {"probe_rows", probe_n},
                                      {"results", results}});
  return reports;
}

// ---------------------------------------------------------------------------
// fondue

namespace {

json steps_json(const FondueResult& r) {
  json steps = json::array();
  for (const auto& s : r.steps)
    steps.push_back({{"l", s.l},
                     {"p", s.p},
                     {"u", s.u ? json(*s.u) : json(nullptr)},
                     {"ide_z", s.ide.ide_z},
                     {"ide_mu", s.ide.ide_mu},
                     {"gap", s.ide.gap()},
                     {"within", s.within},
                     {"cached", s.cached}});
  return {{"p", r.p},
          {"threshold", r.threshold},
          {"oracle_calls", r.oracle_calls},
          {"non_monotone", r.non_monotone},
          {"steps", steps}};
}

}  // namespace

FondueSummary run_fondue_command(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const Dataset ds = load_data(cfg);
  fs::create_directories(cfg.out);
  const fs::path cache_path = cfg.cache ? fs::path(*cfg.cache) : cfg.out / "memcache.jsonl";
  MemCache cache = MemCache::open(cache_path);

  FondueSummary summary;
  for (std::uint64_t seed : cfg.seeds) {
    FondueSeedReport rep;
    rep.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    std::optional<TrainedVaeOracle> oracle;
    try {
      rep.ide_data = cfg.ide_data ? *cfg.ide_data : mle_dataset_estimate(ds.data, cfg.oracle_k, cfg.mle, Rng(seed)).mean;

      TrainedOracleConfig oc;
      oc.vae = cfg.vae;
      oc.vae.seed = seed;
      oc.mle = cfg.mle;
      if (!cfg.use_plateau) oc.mle.ks = {cfg.oracle_k};
      oc.k = cfg.oracle_k;
      oc.use_plateau = cfg.use_plateau;
      oc.rel_tol = cfg.stable_rel_tol;
      oc.probe_rows = cfg.probe_rows;
      oc.checkpoint_dir = cfg.out / "checkpoints";
      oracle.emplace(ds.data, oc);

      FondueConfig fc;
      fc.t_percent = cfg.t_percent;
      fc.ide_data = rep.ide_data;
      fc.max_dim = cfg.max_dim;

      if (cfg.baseline == Baseline::fondue) {
        json runs = json::array();
        if (cfg.epoch_schedule.size() >= 2) {
          const StableOutcome out =
              fondue_stable(fc, [&](int) -> IdeOracle& { return *oracle; }, cfg.epoch_schedule, cache);
          rep.p = out.p;
          rep.epochs_used = out.epochs_used;
          rep.predictions = out.predictions;
          for (const auto& r : out.runs) runs.push_back(steps_json(r));
        } else {
          fc.epochs = cfg.epoch_schedule.front();
          const FondueResult r = run_fondue(fc, *oracle, cache);
          rep.p = r.p;
          rep.epochs_used = fc.epochs;
          rep.predictions = {r.p};
          runs.push_back(steps_json(r));
        }
        rep.detail = {{"threshold", fc.threshold()}, {"runs", runs}};
      } else {
        auto trainer = [&](int dims, int epochs) { return oracle->train_and_extract(dims, epochs); };
        auto classifier = [&](const Representations& r) {
          return classify_variables(per_example_dim_kl(r.mu, r.log_var), cfg.tau, cfg.delta);
        };
        json budgets = json::array();
        for (int e : cfg.epoch_schedule) {
          const FondueVarResult vr = fondue_var(rep.ide_data, e, cfg.keep_mixed, trainer, classifier, cfg.max_dim);
          rep.predictions.push_back(vr.n);
          json tried = json::array();
          for (std::size_t i = 0; i < vr.trained_dims.size(); ++i)
            tried.push_back({{"dims", vr.trained_dims[i]},
                             {"active", vr.reports[i].active},
                             {"mixed", vr.reports[i].mixed},
                             {"passive", vr.reports[i].passive}});
          budgets.push_back({{"epochs", e}, {"n", vr.n}, {"trained", tried}});
        }
        rep.p = rep.predictions.back();
        rep.epochs_used = cfg.epoch_schedule.back();
        rep.detail = {{"budgets", budgets}};
      }
    } catch (const Unstable& e) {
      rep.predictions = e.predictions();
      rep.error = e.what();
      rep.exit_code = exit_code_for(std::current_exception());
    } catch (const std::exception& e) {
      rep.error = e.what();
      rep.exit_code = exit_code_for(std::current_exception());
    }
    rep.models_trained = oracle ? oracle->trainings() : 0;
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    log << "seed " << seed << ": ";
    if (rep.error.empty())
      log << "p=" << rep.p << " epochs/training=" << rep.epochs_used;
    else
      log << "failed (" << rep.error << ")";
    log << " models_trained=" << rep.models_trained << " time=" << std::fixed << std::setprecision(2)
        << rep.wall_seconds << "s" << std::defaultfloat << '\n';
    if (rep.exit_code != 0 && summary.exit_code == 0) summary.exit_code = rep.exit_code;
    summary.seeds.push_back(std::move(rep));
  }

  std::vector<double> ps;
  double time_total = 0.0;
  for (const auto& r : summary.seeds) {
    if (r.error.empty()) ps.push_back(r.p);
    time_total += r.wall_seconds;
  }
  if (!ps.empty()) {
    summary.p_mean = mean(ps);
    summary.p_sd = ps.size() > 1 ? stddev(ps) : 0.0;
  }

  const std::string method = cfg.baseline == Baseline::fondue ? "fondue" : "var";
  log << "dataset=" << ds.meta.name << " method=" << method << " p=";
  if (summary.p_mean)
    log << std::setprecision(3) << *summary.p_mean << " +/- " << *summary.p_sd << std::defaultfloat;
  else
    log << "n/a";
  log << " time/run=" << std::fixed << std::setprecision(2) << time_total / static_cast<double>(cfg.seeds.size())
      << "s" << std::defaultfloat << '\n';

  json seeds = json::array();
  for (const auto& r : summary.seeds)
    seeds.push_back({{"seed", r.seed},
                     {"ide_data", r.ide_data},
                     {"p", r.error.empty() ? json(r.p) : json(nullptr)},
                     {"epochs_used", r.error.empty() ? json(r.epochs_used) : json(nullptr)},
                     {"predictions", r.predictions},
                     {"models_trained", r.models_trained},
                     {"wall_seconds", r.wall_seconds},
                     {"error", r.error.empty() ? json(nullptr) : json(r.error)},
                     {"exit_code", r.exit_code},
                     {"detail", r.detail}});
  write_json(cfg.out / "fondue.json",
             {{"command", "fondue"},
              {"run_config", to_json(cfg)},
              {"provenance", provenance()},
              {"dataset", meta_summary(ds.meta)},
              {"method", method},
              {"cache", cache_path.string()},
              {"summary",
               {{"p_mean", summary.p_mean ? json(*summary.p_mean) : json(nullptr)},
                {"p_sd", summary.p_sd ? json(*summary.p_sd) : json(nullptr)},
                {"seconds_per_run", time_total / static_cast<double>(cfg.seeds.size())}}},
              {"seeds", seeds}});
  return summary;
}

// ---------------------------------------------------------------------------
// report

namespace {

std::string fnv1a64_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

}  // namespace

json build_report(const std::vector<fs::path>& inputs) {
  if (inputs.empty()) throw ConfigError("report: no inputs");
  json entries = json::array();
  json configs = json::array();
  std::set<std::uint64_t> seeds;
  auto add_config = [&](const json& c) {
    configs.push_back(c);
    if (c.contains("seeds"))
      for (const auto& s : c["seeds"]) seeds.insert(s.get<std::uint64_t>());
  };

  for (const auto& path : inputs) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("report: cannot open " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const std::string ext = path.extension().string();
    json entry{{"path", path.generic_string()}, {"bytes", bytes.size()}, {"fnv1a64", fnv1a64_hex(bytes)}};
    try {
      if (ext == ".json") {
        entry["kind"] = "json";
        entry["content"] = json::parse(bytes);
        if (entry["content"].contains("run_config")) add_config(entry["content"]["run_config"]);
      } else if (ext == ".jsonl") {
        entry["kind"] = "jsonl";
        json records = json::array();
        std::istringstream is(bytes);
        std::string line;
        while (std::getline(is, line))
          if (!line.empty()) records.push_back(json::parse(line));
        for (const auto& r : records)
          if (r.contains("seed")) seeds.insert(r["seed"].get<std::uint64_t>());
        entry["content"] = records;
      } else if (ext == ".csv") {
        entry["kind"] = "csv";
        json comments = json::array();
        json rows = json::array();
        json header = json::array();
        std::istringstream is(bytes);
        std::string line;
        while (std::getline(is, line)) {
          if (line.empty()) continue;
          if (line.front() == '#') {
            comments.push_back(line);
            const std::string tag = "# run_config ";
            if (line.rfind(tag, 0) == 0) add_config(json::parse(line.substr(tag.size())));
          } else if (header.empty()) {
            header = split_csv_line(line);
          } else {
            rows.push_back(split_csv_line(line));
          }
        }
        entry["content"] = {{"comments", comments}, {"header", header}, {"rows", rows}};
      } else {
        throw ConfigError("report: unsupported input type '" + ext + "' for " + path.string());
      }
    } catch (const json::exception& e) {
      throw ConfigError("report: " + path.string() + ": " + e.what());
    }
    entries.push_back(std::move(entry));
  }

  return {{"schema_version", 1},
          {"provenance", provenance()},
          {"inputs", entries},
          {"run_configs", configs},
          {"seeds", json(std::vector<std::uint64_t>(seeds.begin(), seeds.end()))}};
}

void write_report(const std::vector<fs::path>& inputs, const fs::path& out) { write_json(out, build_report(inputs)); }

}  // namespace fondue
