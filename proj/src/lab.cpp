#include "longtail/lab.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "longtail/error.hpp"

namespace longtail {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const RunConfig& c) {
  json bounds = json::array();
  for (const auto& r : c.boundaries) {
    bounds.push_back({r.low, r.high == kUnbounded ? json(nullptr) : json(r.high)});
  }
  j = json{{"synth", c.synth}, {"train", c.train}, {"boundaries", bounds}, {"tau", c.tau}};
}

void from_json(const json& j, RunConfig& c) {
  RunConfig d;
  c.synth = j.value("synth", json::object()).get<SynthConfig>();
  c.train = j.value("train", json::object()).get<TrainConfig>();
  c.tau = j.value("tau", d.tau);
  if (j.contains("boundaries") && j.contains("groups")) {
    throw ConfigError("config gives both 'boundaries' and 'groups'");
  }
  if (j.contains("groups")) {
    c.boundaries = decade_boundaries(j.at("groups").get<int>());
  } else if (j.contains("boundaries")) {
    c.boundaries.clear();
    for (const auto& r : j.at("boundaries")) {
      if (!r.is_array() || r.size() != 2) throw ConfigError("each boundary must be [low, high]");
      c.boundaries.push_back(
          {r[0].get<std::int64_t>(), r[1].is_null() ? kUnbounded : r[1].get<std::int64_t>()});
    }
  } else {
    c.boundaries = d.boundaries;
  }
  validate_boundaries(c.boundaries);
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return json::parse(in).get<RunConfig>();
  } catch (const json::exception& e) {
    throw ConfigError("invalid config " + path.string() + ": " + e.what());
  }
}

BagsVariant variant_from_string(const std::string& name) {
  if (name == "full") return {true, true};
  if (name == "others_only") return {false, true};
  if (name == "groups_only") return {false, false};
  if (name == "background_only") return {true, false};
  throw ConfigError("unknown variant '" + name +
                    "' (valid: full, others_only, groups_only, background_only)");
}

std::string to_string(BagsVariant variant) {
  if (variant.background_group) return variant.others ? "full" : "background_only";
  return variant.others ? "others_only" : "groups_only";
}

Predictor head_predictor(const HeadParams& params, Method method,
                         const GroupPartition* partition, BagsVariant variant) {
  if (params.layout == HeadLayout::Grouped) {
    if (partition == nullptr) throw ConfigError("grouped head needs a partition");
    return [&params, partition, variant](std::span<const float> f) {
      return bags_predict(forward(params, f), *partition, variant);
    };
  }
  if (method == Method::Focal) {
    return [&params](std::span<const float> f) { return sigmoid_predict(forward(params, f)); };
  }
  return [&params](std::span<const float> f) { return softmax_predict(forward(params, f)); };
}

namespace {

void attach_norms(MetricsReport& report, const HeadParams& params, const Dataset& dataset,
                  const GroupPartition* partition) {
  report.weight_norms = weight_norms(params, partition).category;
  report.pearson_norm_logcount = norm_count_correlation(report.weight_norms, dataset.catalog);
}

}  // namespace

MetricsReport evaluate_head(const HeadParams& params, Method method, const Dataset& dataset,
                            const GroupPartition* partition, BagsVariant variant) {
  auto report = evaluate(head_predictor(params, method, partition, variant), dataset.eval,
                         dataset.catalog);
  report.method = to_string(method);
  attach_norms(report, params, dataset, partition);
  return report;
}

const std::vector<std::string>& recipe_names() {
  static const std::vector<std::string> names{
      "softmax",         "rfs",          "tail_finetune",    "reweight",
      "focal",           "ncm",          "tau_norm",         "tau_norm_select",
      "bags",            "bags_others_only", "bags_groups_only", "bags_background_only"};
  return names;
}

namespace {

std::string joined_recipes() {
  std::string out;
  for (const auto& n : recipe_names()) out += (out.empty() ? "" : ", ") + n;
  return out;
}

}  // namespace

Lab::Lab(const Dataset& dataset, RunConfig config)
    : dataset_(dataset),
      config_(std::move(config)),
      partition_(GroupPartition::assign(dataset.catalog, config_.boundaries)) {}

const HeadParams& Lab::baseline() {
  if (!baseline_) {
    baseline_ = train_with(Method::Softmax, Sampler::Uniform, {}, nullptr).params;
  }
  return *baseline_;
}

TrainResult Lab::train_with(Method method, Sampler sampler, BagsVariant variant,
                            const HeadParams* init) {
  TrainConfig tc = config_.train;
  tc.method = method;
  tc.sampler = sampler;
  tc.variant = variant;
  return train(dataset_, tc, method == Method::Bags ? &partition_ : nullptr, init);
}

MetricsReport Lab::run(const std::string& recipe) {
  const auto& names = recipe_names();
  if (std::find(names.begin(), names.end(), recipe) == names.end()) {
    throw ConfigError("unknown method '" + recipe + "' (valid: " + joined_recipes() + ")");
  }

  MetricsReport report;
  if (recipe == "softmax") {
    report = evaluate_head(baseline(), Method::Softmax, dataset_);
  } else if (recipe == "rfs") {
    const auto r = train_with(Method::Softmax, Sampler::Rfs, {}, nullptr);
    report = evaluate_head(r.params, Method::Softmax, dataset_);
  } else if (recipe == "tail_finetune") {
    const auto r = train_with(Method::TailFinetune, Sampler::Uniform, {}, &baseline());
    report = evaluate_head(r.params, Method::TailFinetune, dataset_);
  } else if (recipe == "reweight" || recipe == "focal") {
    const Method m = method_from_string(recipe);
    const auto r = train_with(m, Sampler::Uniform, {}, nullptr);
    report = evaluate_head(r.params, m, dataset_);
  } else if (recipe == "ncm") {
    const auto& base = baseline();
    const Matrix means = ncm_build(dataset_);
    report = evaluate(
        [&](std::span<const float> f) {
          const auto p0 = softmax_predict(forward(base, f)).scores[kBackground];
          const std::vector<double> wide(f.begin(), f.end());
          return ncm_predict(wide, means, p0);
        },
        dataset_.eval, dataset_.catalog);
  } else if (recipe == "tau_norm" || recipe == "tau_norm_select") {
    const auto& base = baseline();
    const HeadParams tau_params = tau_normalize(base, config_.tau);
    if (recipe == "tau_norm") {
      report = evaluate_head(tau_params, Method::Softmax, dataset_);
    } else {
      report = evaluate(
          [&](std::span<const float> f) { return tau_select_predict(base, tau_params, f); },
          dataset_.eval, dataset_.catalog);
      attach_norms(report, tau_params, dataset_, nullptr);
    }
  } else {
    BagsVariant v;
    if (recipe != "bags") v = variant_from_string(recipe.substr(5));
    const auto r = train_with(Method::Bags, Sampler::Uniform, v, nullptr);
    report = evaluate_head(r.params, Method::Bags, dataset_, &partition_, v);
  }
  report.method = recipe;
  report.config = config_;
  return report;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

void prepare_out(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw DataError("cannot create output directory " + out.string() + ": " + ec.message());
}

void write_config(const fs::path& out, const json& config) {
  write_text(out / "config.json", config.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
  return deserialize(dir);
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

std::string fmt_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

Dataset cmd_gen(const RunConfig& config, const fs::path& out, bool force, std::ostream& log) {
  validate(config.synth);
  if (fs::exists(out)) {
    if (!fs::is_directory(out)) throw ConfigError(out.string() + " exists and is not a directory");
    if (!fs::is_empty(out) && !force) {
      throw ConfigError("output directory " + out.string() + " is not empty (use --force)");
    }
  }
  Dataset ds = generate(config.synth);
  prepare_out(out);
  serialize(ds, out);
  write_config(out, config);

  std::array<int, kNumBins> per_bin{};
  for (auto n : ds.catalog.counts()) ++per_bin[bin_of(n) - 1];
  log << "generated " << ds.catalog.num_foreground() << " categories, " << ds.train.size()
      << " train / " << ds.eval.size() << " eval records\n";
  for (int b = 0; b < kNumBins; ++b) {
    log << "  bin " << b + 1 << ": " << per_bin[b] << " classes\n";
  }
  return ds;
}

TrainResult cmd_train(const fs::path& data_dir, const RunConfig& config, const fs::path& out,
                      const std::optional<fs::path>& init_checkpoint, std::ostream& log) {
  validate(config.train);
  const Method method = config.train.method;
  if (method == Method::TailFinetune && !init_checkpoint) {
    throw ConfigError("tail_finetune needs --init-checkpoint (a trained softmax head)");
  }
  const Dataset ds = load_dataset(data_dir);
  RunConfig resolved = config;
  resolved.synth = ds.config;

  std::optional<HeadParams> init;
  if (init_checkpoint) {
    if (!fs::exists(*init_checkpoint)) {
      throw DataError("checkpoint not found: " + init_checkpoint->string());
    }
    init = load_checkpoint(*init_checkpoint);
  }
  std::optional<GroupPartition> partition;
  if (method == Method::Bags) partition = GroupPartition::assign(ds.catalog, config.boundaries);

  TrainResult result = train(ds, config.train, partition ? &*partition : nullptr,
                             init ? &*init : nullptr);

  prepare_out(out);
  CheckpointHeader header;
  header.method = to_string(method);
  header.seed = config.train.seed;
  header.extra = {{"config", resolved}, {"variant", to_string(config.train.variant)}};
  save_checkpoint(result.params, header, out / "checkpoint.bin");
  json history = result.history;
  history["config"] = resolved;
  write_text(out / "history.json", history.dump(2) + "\n");
  write_config(out, resolved);

  log << "trained " << to_string(method) << " head ("
      << to_string(result.params.layout) << ", " << result.params.logit_dim() << " logits), "
      << result.history.steps << " steps, final loss " << result.history.epoch_loss.back()
      << "\n";
  return result;
}

MetricsReport cmd_eval(const fs::path& checkpoint, const fs::path& data_dir,
                       const EvalOptions& options, const fs::path& out) {
  static const std::vector<std::string> predictors{"auto", "softmax", "sigmoid", "bags",
                                                   "tau",  "tau_raw", "ncm"};
  if (std::find(predictors.begin(), predictors.end(), options.predictor) == predictors.end()) {
    throw ConfigError("unknown predictor '" + options.predictor +
                      "' (valid: auto, softmax, sigmoid, bags, tau, tau_raw, ncm)");
  }
  if (!fs::exists(checkpoint)) throw DataError("checkpoint not found: " + checkpoint.string());
  CheckpointHeader header;
  const HeadParams params = load_checkpoint(checkpoint, &header);
  const Dataset ds = load_dataset(data_dir);
  if (params.feature_dim() != ds.train.feature_dim) {
    throw DataError("checkpoint expects " + std::to_string(params.feature_dim()) +
                    "-dim features, dataset has " + std::to_string(ds.train.feature_dim));
  }

  RunConfig run;
  if (header.extra.contains("config")) {
    try {
      run = header.extra.at("config").get<RunConfig>();
    } catch (const json::exception& e) {
      throw DataError("corrupt checkpoint config: " + std::string(e.what()));
    }
  }
  const Method method = method_from_string(header.method.empty() ? "softmax" : header.method);
  const BagsVariant variant = variant_from_string(header.extra.value("variant", "full"));
  const double tau = options.tau.value_or(run.tau);

  std::string predictor = options.predictor;
  if (predictor == "auto") {
    predictor = params.layout == HeadLayout::Grouped ? "bags"
                : method == Method::Focal           ? "sigmoid"
                                                    : "softmax";
  }
  const bool grouped = params.layout == HeadLayout::Grouped;
  if (grouped != (predictor == "bags")) {
    throw ConfigError("predictor '" + predictor + "' does not fit a " +
                      to_string(params.layout) + " checkpoint");
  }

  MetricsReport report;
  if (predictor == "bags") {
    const auto partition = GroupPartition::assign(ds.catalog, run.boundaries);
    if (partition.logit_dim() != static_cast<int>(params.logit_dim())) {
      throw DataError("checkpoint width does not match the dataset's group layout");
    }
    report = evaluate_head(params, Method::Bags, ds, &partition, variant);
  } else if (params.logit_dim() != static_cast<std::size_t>(ds.catalog.num_foreground() + 1)) {
    throw DataError("checkpoint width does not match the dataset's category count");
  } else if (predictor == "softmax" || predictor == "sigmoid") {
    report = evaluate_head(params, predictor == "sigmoid" ? Method::Focal : Method::Softmax, ds);
  } else if (predictor == "tau_raw") {
    report = evaluate_head(tau_normalize(params, tau), Method::Softmax, ds);
  } else if (predictor == "tau") {
    const HeadParams tau_params = tau_normalize(params, tau);
    report = evaluate(
        [&](std::span<const float> f) { return tau_select_predict(params, tau_params, f); },
        ds.eval, ds.catalog);
    attach_norms(report, tau_params, ds, nullptr);
  } else {
    const Matrix means = ncm_build(ds);
    report = evaluate(
        [&](std::span<const float> f) {
          const auto p0 = softmax_predict(forward(params, f)).scores[kBackground];
          const std::vector<double> wide(f.begin(), f.end());
          return ncm_predict(wide, means, p0);
        },
        ds.eval, ds.catalog);
    attach_norms(report, params, ds, nullptr);
  }
  report.method = header.method;
  report.config = {{"run", run},
                   {"eval", {{"predictor", predictor}, {"tau", tau}}},
                   {"variant", to_string(variant)}};

  prepare_out(out);
  json j = report;
  write_text(out / "report.json", j.dump(2) + "\n");
  export_norms(report.weight_norms, ds.catalog, out / "norms.csv");
  return report;
}

std::string metrics_csv_header(const std::string& key) {
  return key + ",overall_acc,acc_bin1,acc_bin2,acc_bin3,acc_bin4,acc_bg,pearson_norm_logcount";
}

std::string metrics_csv_row(const std::string& key, const MetricsReport& r) {
  std::string row = key + "," + fmt(r.overall_acc);
  for (const auto& a : r.acc_per_bin) row += "," + fmt(a);
  row += "," + fmt(r.acc_bg) + "," + fmt(r.pearson_norm_logcount);
  return row;
}

std::vector<SweepRow> cmd_sweep(const fs::path& data_dir, const RunConfig& config,
                                const std::string& axis, const std::vector<double>& values,
                                const fs::path& out, unsigned threads) {
  if (axis != "beta" && axis != "groups") {
    throw ConfigError("unknown sweep axis '" + axis + "' (valid: beta, groups)");
  }
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<RunConfig> runs;
  for (double v : values) {
    RunConfig rc = config;
    rc.train.method = Method::Bags;
    if (axis == "beta") {
      rc.train.beta = v;
    } else {
      if (v < 1 || v != static_cast<int>(v)) throw ConfigError("group counts must be positive integers");
      rc.boundaries = decade_boundaries(static_cast<int>(v));
    }
    validate(rc.train);
    runs.push_back(std::move(rc));
  }

  const Dataset ds = load_dataset(data_dir);
  std::vector<SweepRow> rows(values.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < runs.size();) {
      try {
        RunConfig& rc = runs[i];
        rc.synth = ds.config;
        const auto partition = GroupPartition::assign(ds.catalog, rc.boundaries);
        const auto result = train(ds, rc.train, &partition);
        rows[i].value = values[i];
        rows[i].report = evaluate_head(result.params, Method::Bags, ds, &partition,
                                       rc.train.variant);
        rows[i].report.config = rc;
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned n = std::clamp<unsigned>(threads, 1, static_cast<unsigned>(runs.size()));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  prepare_out(out);
  std::string csv = metrics_csv_header(axis) + "\n";
  for (const auto& r : rows) csv += metrics_csv_row(fmt_value(r.value), r.report) + "\n";
  write_text(out / "sweep.csv", csv);
  RunConfig echoed = config;
  echoed.synth = ds.config;
  json cfg = echoed;
  cfg["sweep"] = {{"axis", axis}, {"values", values}};
  write_config(out, cfg);
  return rows;
}

std::string cmd_compare(const fs::path& data_dir, const RunConfig& config,
                        const std::vector<std::string>& recipes, const fs::path& out) {
  if (recipes.empty()) throw ConfigError("compare needs at least one method");
  const auto& names = recipe_names();
  for (const auto& r : recipes) {
    if (std::find(names.begin(), names.end(), r) == names.end()) {
      throw ConfigError("unknown method '" + r + "' (valid: " + joined_recipes() + ")");
    }
  }
  validate(config.train);
  const Dataset ds = load_dataset(data_dir);
  RunConfig resolved = config;
  resolved.synth = ds.config;
  Lab lab(ds, resolved);

  std::vector<MetricsReport> reports;
  for (const auto& r : recipes) reports.push_back(lab.run(r));

  std::string csv = metrics_csv_header("method") + "\n";
  for (const auto& r : reports) csv += metrics_csv_row(r.method, r) + "\n";

  std::size_t width = 6;
  for (const auto& r : recipes) width = std::max(width, r.size());
  std::ostringstream text;
  auto cell = [](const std::optional<double>& v) {
    char buf[16];
    if (!v) return std::string("       -");
    std::snprintf(buf, sizeof buf, "%8.4f", *v);
    return std::string(buf);
  };
  text << std::string(width, ' ').replace(0, 6, "method")
       << "   overall     bin1     bin2     bin3     bin4       bg  pearson\n";
  for (const auto& r : reports) {
    text << r.method << std::string(width - r.method.size(), ' ') << "  " << cell(r.overall_acc);
    for (const auto& a : r.acc_per_bin) text << " " << cell(a);
    text << " " << cell(r.acc_bg) << " " << cell(r.pearson_norm_logcount) << "\n";
  }

  prepare_out(out);
  write_text(out / "compare.csv", csv);
  write_text(out / "compare.txt", text.str());
  json cfg = resolved;
  cfg["methods"] = recipes;
  write_config(out, cfg);
  return text.str();
}

}  // namespace longtail
