#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "longtail/catalog.hpp"
#include "longtail/head.hpp"
#include "longtail/inference.hpp"
#include "longtail/metrics.hpp"
#include "longtail/synthdata.hpp"
#include "longtail/train.hpp"

namespace longtail {

/// Everything that determines a run: data generation, training, grouping
/// and inference knobs.
struct RunConfig {
  SynthConfig synth;
  TrainConfig train;
  std::vector<CountRange> boundaries = default_boundaries();
  double tau = 1.0;

  bool operator==(const RunConfig&) const = default;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Accepts either "boundaries" ([[low, high-or-null], ...]) or "groups": N.
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

/// Named ablation variants: full, others_only, groups_only, background_only.
BagsVariant variant_from_string(const std::string& name);
std::string to_string(BagsVariant variant);

/// Predictor over a trained head. Plain heads use softmax, or independent
/// sigmoids when trained with the focal loss; grouped heads use bags_predict.
Predictor head_predictor(const HeadParams& params, Method method,
                         const GroupPartition* partition = nullptr, BagsVariant variant = {});

/// evaluate() plus the head's weight norms and their correlation with log counts.
MetricsReport evaluate_head(const HeadParams& params, Method method, const Dataset& dataset,
                            const GroupPartition* partition = nullptr, BagsVariant variant = {});

/// End-to-end recipes: a training method plus the predictor used at test time.
const std::vector<std::string>& recipe_names();

/// Runs recipes against one dataset, training the shared softmax baseline once.
class Lab {
 public:
  Lab(const Dataset& dataset, RunConfig config);

  const Dataset& dataset() const { return dataset_; }
  const RunConfig& config() const { return config_; }
  const GroupPartition& partition() const { return partition_; }

  /// Plain softmax head trained with uniform sampling.
  const HeadParams& baseline();

  /// Throws ConfigError listing recipe_names() for an unknown recipe.
  MetricsReport run(const std::string& recipe);

 private:
  TrainResult train_with(Method method, Sampler sampler, BagsVariant variant,
                         const HeadParams* init);

  const Dataset& dataset_;
  RunConfig config_;
  GroupPartition partition_;
  std::optional<HeadParams> baseline_;
};

// Command implementations behind the CLI. Each writes its artifacts into an
// output directory together with config.json, the resolved run config.

/// Writes the dataset. Throws ConfigError if `out` is a non-empty directory
/// and `force` is false.
Dataset cmd_gen(const RunConfig& config, const std::filesystem::path& out, bool force,
                std::ostream& log);

/// Writes checkpoint.bin, history.json and config.json.
TrainResult cmd_train(const std::filesystem::path& data_dir, const RunConfig& config,
                      const std::filesystem::path& out,
                      const std::optional<std::filesystem::path>& init_checkpoint,
                      std::ostream& log);

struct EvalOptions {
  /// auto, softmax, sigmoid, bags, tau (tau-norm-select), tau_raw, ncm.
  std::string predictor = "auto";
  std::optional<double> tau;
};

/// Writes report.json and norms.csv.
MetricsReport cmd_eval(const std::filesystem::path& checkpoint,
                       const std::filesystem::path& data_dir, const EvalOptions& options,
                       const std::filesystem::path& out);

struct SweepRow {
  double value = 0.0;
  MetricsReport report;
};

/// One bags train + eval per value of `axis` ("beta" or "groups"), written
/// to sweep.csv. Runs up to `threads` configurations at once.
std::vector<SweepRow> cmd_sweep(const std::filesystem::path& data_dir, const RunConfig& config,
                                const std::string& axis, const std::vector<double>& values,
                                const std::filesystem::path& out, unsigned threads);

/// Runs each recipe and writes compare.csv plus compare.txt; returns the text table.
std::string cmd_compare(const std::filesystem::path& data_dir, const RunConfig& config,
                        const std::vector<std::string>& recipes, const std::filesystem::path& out);

/// CSV header shared by sweep and compare outputs.
std::string metrics_csv_header(const std::string& key);
std::string metrics_csv_row(const std::string& key, const MetricsReport& report);

}  // namespace longtail
