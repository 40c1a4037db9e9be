// longtail_lab: generate synthetic long-tail data, train linear heads and
// compare them.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "longtail/error.hpp"
#include "longtail/lab.hpp"

namespace {

using namespace longtail;
namespace fs = std::filesystem;

struct Flags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;

  std::string data_dir;
  std::optional<std::string> method;
  std::optional<double> beta;
  std::optional<double> gamma;
  std::optional<double> tau;
  std::optional<int> groups;
  std::optional<std::string> sampler;
  std::optional<double> rfs_t;
  std::optional<std::string> variant;
  std::optional<std::string> init_checkpoint;

  std::string checkpoint;
  std::string predictor = "auto";
  std::string axis = "beta";
  std::vector<double> values;
  std::vector<std::string> methods;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config_path, "JSON run config")->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "Seed override");
  cmd->add_option("--out", f.out, "Output directory")->required();
  cmd->add_flag("--force", f.force, "Overwrite a non-empty output directory");
}

void add_train_flags(CLI::App* cmd, Flags& f) {
  cmd->add_option("--method", f.method, "softmax, bags, reweight, focal or tail_finetune");
  cmd->add_option("--beta", f.beta, "Others sampling ratio (bags)");
  cmd->add_option("--gamma", f.gamma, "Focal exponent");
  cmd->add_option("--tau", f.tau, "tau-normalization exponent");
  cmd->add_option("--groups", f.groups, "Number of foreground groups (decade edges)");
  cmd->add_option("--sampler", f.sampler, "uniform or rfs");
  cmd->add_option("--rfs-t", f.rfs_t, "RFS threshold t");
  cmd->add_option("--variant", f.variant,
                  "bags ablation: full, others_only, groups_only, background_only");
}

RunConfig resolve(const Flags& f, bool seed_is_data) {
  RunConfig c = f.config_path.empty() ? RunConfig{} : load_run_config(f.config_path);
  if (f.seed) (seed_is_data ? c.synth.seed : c.train.seed) = *f.seed;
  if (f.method) c.train.method = method_from_string(*f.method);
  if (f.beta) {
    if (c.train.method != Method::Bags) {
      std::cerr << "warning: --beta only applies to method bags; ignored\n";
    } else {
      c.train.beta = *f.beta;
    }
  }
  if (f.gamma) c.train.gamma = *f.gamma;
  if (f.tau) c.tau = *f.tau;
  if (f.groups) c.boundaries = decade_boundaries(*f.groups);
  if (f.sampler) c.train.sampler = sampler_from_string(*f.sampler);
  if (f.rfs_t) c.train.rfs_t = *f.rfs_t;
  if (f.variant) c.train.variant = variant_from_string(*f.variant);
  return c;
}

unsigned sweep_threads() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("LONGTAIL_LAB_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap < 1) throw ConfigError("LONGTAIL_LAB_THREADS must be a positive integer");
      n = std::min(n, static_cast<unsigned>(cap));
    } catch (const std::logic_error&) {
      throw ConfigError("LONGTAIL_LAB_THREADS must be a positive integer");
    }
  }
  return n;
}

void check_out(const Flags& f) {
  const fs::path out(f.out);
  if (fs::exists(out) && fs::is_directory(out) && !fs::is_empty(out) && !f.force) {
    throw ConfigError("output directory " + f.out + " is not empty (use --force)");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-tail classification lab: balanced group softmax and baselines"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic long-tail dataset");
  add_common(gen, f);

  auto* train = app.add_subcommand("train", "Train a classifier head");
  add_common(train, f);
  train->add_option("--data", f.data_dir, "Dataset directory")->required();
  add_train_flags(train, f);
  train->add_option("--init-checkpoint", f.init_checkpoint, "Start from this checkpoint");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval, f);
  eval->add_option("--checkpoint", f.checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", f.data_dir, "Dataset directory")->required();
  eval->add_option("--predictor", f.predictor,
                   "auto, softmax, sigmoid, bags, tau, tau_raw or ncm");
  eval->add_option("--tau", f.tau, "tau for the tau predictors");

  auto* sweep = app.add_subcommand("sweep", "Train and evaluate bags over a value grid");
  add_common(sweep, f);
  sweep->add_option("--data", f.data_dir, "Dataset directory")->required();
  add_train_flags(sweep, f);
  sweep->add_option("--axis", f.axis, "beta or groups");
  sweep->add_option("--values", f.values, "Values to sweep")->required()->delimiter(',');

  auto* compare = app.add_subcommand("compare", "Run several methods side by side");
  add_common(compare, f);
  compare->add_option("--data", f.data_dir, "Dataset directory")->required();
  add_train_flags(compare, f);
  compare->add_option("--methods", f.methods, "Comma-separated methods")
      ->required()
      ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) {
      cmd_gen(resolve(f, true), f.out, f.force, std::cout);
    } else if (train->parsed()) {
      check_out(f);
      std::optional<fs::path> init;
      if (f.init_checkpoint) init = *f.init_checkpoint;
      cmd_train(f.data_dir, resolve(f, false), f.out, init, std::cout);
    } else if (eval->parsed()) {
      check_out(f);
      EvalOptions options;
      options.predictor = f.predictor;
      options.tau = f.tau;
      const auto report = cmd_eval(f.checkpoint, f.data_dir, options, f.out);
      std::cout << metrics_csv_header("method") << "\n"
                << metrics_csv_row(report.method, report) << "\n";
    } else if (sweep->parsed()) {
      check_out(f);
      Flags bags = f;
      if (!bags.method) bags.method = "bags";
      const RunConfig c = resolve(bags, false);
      if (f.axis == "beta" && f.beta) {
        std::cerr << "warning: --beta is replaced by the sweep values\n";
      }
      cmd_sweep(f.data_dir, c, f.axis, f.values, f.out, sweep_threads());
      std::cout << std::ifstream(fs::path(f.out) / "sweep.csv").rdbuf();
    } else if (compare->parsed()) {
      check_out(f);
      std::cout << cmd_compare(f.data_dir, resolve(f, false), f.methods, f.out);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
