#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fondue/commands.hpp"

namespace {

using namespace fondue;

// Flags left unset fall through to the config file, then to defaults.
struct Overrides {
  std::optional<std::string> config;
  std::optional<std::string> data;
  std::optional<std::string> out;
  std::vector<std::uint64_t> seeds;

  std::vector<int> ks;
  std::optional<double> anchor;
  std::optional<int> runs;
  std::optional<std::string> averaging;
  std::optional<double> twonn_anchor;
  std::optional<double> rel_tol;

  std::optional<int> epochs;
  std::optional<int> latent_dim;
  std::optional<double> beta;
  std::optional<double> lr;
  std::optional<int> batch_size;
  std::optional<std::size_t> probe_rows;
  std::optional<std::string> checkpoint;
  std::optional<double> tau;
  std::optional<double> delta;
  std::optional<int> k;

  std::optional<double> t_percent;
  std::optional<double> ide_data;
  std::optional<int> max_dim;
  std::vector<int> schedule;
  bool plateau = false;
  std::optional<std::string> baseline;
  bool drop_mixed = false;
  std::optional<std::string> cache;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "RunConfig JSON (or an artifact embedding one)");
  cmd->add_option("--data", o.data, "FNDS dataset");
  cmd->add_option("-o,--out", o.out, "Output directory");
  cmd->add_option("--seeds", o.seeds, "Seeds, one run each");
}

void add_estimator(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--ks", o.ks, "Neighbourhood sizes for the MLE sweep");
  cmd->add_option("--anchor", o.anchor, "Subsample fraction per MLE run");
  cmd->add_option("--runs", o.runs, "MLE runs");
  cmd->add_option("--averaging", o.averaging, "levina or mackay");
  cmd->add_option("--rel-tol", o.rel_tol, "Plateau tolerance for the stable-k rule");
}

void add_vae(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--latent-dim", o.latent_dim);
  cmd->add_option("--beta", o.beta);
  cmd->add_option("--lr", o.lr);
  cmd->add_option("--batch-size", o.batch_size);
  cmd->add_option("--probe-rows", o.probe_rows);
  cmd->add_option("--k", o.k, "Neighbourhood size for representation IDE");
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config ? load_run_config(*o.config) : RunConfig{};
  if (o.data) c.data = *o.data;
  if (o.out) c.out = *o.out;
  if (!o.seeds.empty()) c.seeds = o.seeds;
  if (!o.ks.empty()) c.mle.ks = o.ks;
  if (o.anchor) c.mle.anchor = *o.anchor;
  if (o.runs) c.mle.runs = *o.runs;
  if (o.averaging) c.mle.averaging = parse_averaging(*o.averaging);
  if (o.twonn_anchor) c.twonn.anchor = *o.twonn_anchor;
  if (o.rel_tol) c.stable_rel_tol = *o.rel_tol;
  if (o.epochs) c.train_epochs = *o.epochs;
  if (o.latent_dim) c.vae.latent_dim = *o.latent_dim;
  if (o.beta) c.vae.beta = *o.beta;
  if (o.lr) c.vae.learning_rate = *o.lr;
  if (o.batch_size) c.vae.batch_size = *o.batch_size;
  if (o.probe_rows) c.probe_rows = *o.probe_rows;
  if (o.checkpoint) c.checkpoint = *o.checkpoint;
  if (o.tau) c.tau = *o.tau;
  if (o.delta) c.delta = *o.delta;
  if (o.k) c.oracle_k = *o.k;
  if (o.t_percent) c.t_percent = *o.t_percent;
  if (o.ide_data) c.ide_data = *o.ide_data;
  if (o.max_dim) c.max_dim = *o.max_dim;
  if (!o.schedule.empty()) c.epoch_schedule = o.schedule;
  if (o.plateau) c.use_plateau = true;
  if (o.baseline) {
    if (*o.baseline != "fondue" && *o.baseline != "var") throw ConfigError("--baseline must be fondue or var");
    c.baseline = *o.baseline == "var" ? Baseline::var : Baseline::fondue;
  }
  if (o.drop_mixed) c.keep_mixed = false;
  if (o.cache) c.cache = *o.cache;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Intrinsic-dimension estimation and latent-size search for VAEs"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);

  GenRequest gen;
  std::string shapes = "square,disc";
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen_cmd->add_option("kind", gen.kind, "hyperplane | manifold | gaussian | sprites")->required();
  gen_cmd->add_option("-o,--out", gen.output, "Output FNDS path")->required();
  gen_cmd->add_option("--n", gen.n, "Points");
  gen_cmd->add_option("--d", gen.d, "Intrinsic dimension");
  gen_cmd->add_option("--ambient", gen.ambient, "Ambient dimension");
  gen_cmd->add_option("--noise", gen.noise, "Gaussian noise sd (hyperplane)");
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--side", gen.sprites.side, "Sprite image side");
  gen_cmd->add_option("--shapes", shapes, "Comma-separated sprite shapes");
  gen_cmd->add_option("--n-x", gen.sprites.n_x);
  gen_cmd->add_option("--n-y", gen.sprites.n_y);
  gen_cmd->add_option("--n-scale", gen.sprites.n_scale);

  Overrides ide_o;
  auto* ide_cmd = app.add_subcommand("ide", "Estimate the intrinsic dimension of a dataset");
  add_common(ide_cmd, ide_o);
  add_estimator(ide_cmd, ide_o);
  ide_cmd->add_option("--twonn-anchor", ide_o.twonn_anchor, "Fraction of ratios kept by TwoNN");

  Overrides train_o;
  auto* train_cmd = app.add_subcommand("train", "Train a VAE and estimate per-layer IDE");
  add_common(train_cmd, train_o);
  add_vae(train_cmd, train_o);
  train_cmd->add_option("--epochs", train_o.epochs);
  train_cmd->add_option("--checkpoint", train_o.checkpoint, "Load this checkpoint instead of training");
  train_cmd->add_option("--tau", train_o.tau, "Passive KL threshold");
  train_cmd->add_option("--delta", train_o.delta, "Variable-type fraction margin");

  Overrides fondue_o;
  auto* fondue_cmd = app.add_subcommand("fondue", "Search for the number of latent dimensions");
  add_common(fondue_cmd, fondue_o);
  add_vae(fondue_cmd, fondue_o);
  fondue_cmd->add_option("--t-percent", fondue_o.t_percent, "Threshold as a percentage of the data IDE");
  fondue_cmd->add_option("--ide-data", fondue_o.ide_data, "Data IDE (estimated when omitted)");
  fondue_cmd->add_option("--max-dim", fondue_o.max_dim);
  fondue_cmd->add_option("--schedule", fondue_o.schedule, "Ascending epoch budgets");
  fondue_cmd->add_flag("--plateau", fondue_o.plateau, "Use the stable-k rule for representation IDE");
  fondue_cmd->add_option("--baseline", fondue_o.baseline, "fondue or var");
  fondue_cmd->add_flag("--drop-mixed", fondue_o.drop_mixed, "var baseline: count active variables only");
  fondue_cmd->add_flag("--keep-mixed", "var baseline: count active and mixed variables (default)");
  fondue_cmd->add_option("--cache", fondue_o.cache, "Memo cache (JSON lines)");
  fondue_cmd->add_option("--tau", fondue_o.tau);
  fondue_cmd->add_option("--delta", fondue_o.delta);

  std::vector<std::string> report_inputs;
  std::string report_out;
  auto* report_cmd = app.add_subcommand("report", "Merge artifacts into one JSON report");
  report_cmd->add_option("inputs", report_inputs, "Artifacts (.json, .jsonl, .csv)")->required();
  report_cmd->add_option("-o,--out", report_out, "Report path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen_cmd->parsed()) {
      gen.sprites.shapes.clear();
      std::size_t start = 0;
      while (start <= shapes.size()) {
        const auto end = std::min(shapes.find(',', start), shapes.size());
        const std::string s = shapes.substr(start, end - start);
        if (s == "square")
          gen.sprites.shapes.push_back(SpriteShape::square);
        else if (s == "disc")
          gen.sprites.shapes.push_back(SpriteShape::disc);
        else
          throw ConfigError("unknown sprite shape '" + s + "'");
        start = end + 1;
      }
      const Dataset ds = run_gen(gen);
      std::cout << "wrote " << gen.output.string() << " (" << ds.data.rows() << " x " << ds.data.cols() << ")\n";
    } else if (ide_cmd->parsed()) {
      const RunConfig cfg = resolve(ide_o);
      for (const auto& rep : run_ide(cfg)) {
        std::cout << "seed " << rep.seed << ":";
        for (const auto& [k, e] : rep.sweep)
          std::cout << " mle[k=" << k << "]=" << (e.result ? format_double(e.result->mean) : "nan");
        std::cout << " twonn=" << (rep.twonn ? format_double(rep.twonn->mean) : "nan")
                  << " stable=" << format_double(rep.stable.result.mean) << (rep.stable.stable ? "" : " (unstable)")
                  << '\n';
      }
    } else if (train_cmd->parsed()) {
      const RunConfig cfg = resolve(train_o);
      for (const auto& rep : run_train(cfg)) {
        std::cout << "seed " << rep.seed << ": checkpoint " << rep.checkpoint.string() << ", variables "
                  << rep.variables.active << " active / " << rep.variables.mixed << " mixed / "
                  << rep.variables.passive << " passive\n";
        for (const auto& li : rep.layers)
          std::cout << "  " << li.layer << " (" << li.width
                    << "): " << (li.result ? format_double(li.result->mean) : "error: " + li.error) << '\n';
      }
    } else if (fondue_cmd->parsed()) {
      const RunConfig cfg = resolve(fondue_o);
      return run_fondue_command(cfg, std::cout).exit_code;
    } else if (report_cmd->parsed()) {
      write_report({report_inputs.begin(), report_inputs.end()}, report_out);
      std::cout << "wrote " << report_out << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(std::current_exception());
  }
  return 0;
}
