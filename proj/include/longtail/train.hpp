#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "longtail/catalog.hpp"
#include "longtail/head.hpp"
#include "longtail/losses.hpp"
#include "longtail/synthdata.hpp"

namespace longtail {

enum class Method { Softmax, Bags, Reweight, Focal, TailFinetune };
enum class Sampler { Uniform, Rfs };

std::string to_string(Method method);
std::string to_string(Sampler sampler);
/// Throws ConfigError listing the valid names.
Method method_from_string(const std::string& name);
Sampler sampler_from_string(const std::string& name);

struct TrainConfig {
  Method method = Method::Softmax;
  int epochs = 12;
  int batch_size = 512;
  double lr = 0.01;
  std::vector<int> lr_decay_epochs{8, 11};
  double lr_decay_factor = 0.1;
  int warmup_steps = 500;
  double warmup_ratio = 1.0 / 3.0;
  double weight_decay = 1e-4;
  double beta = 8.0;
  double gamma = 2.0;
  Sampler sampler = Sampler::Uniform;
  double rfs_t = 0.001;
  BagsVariant variant;
  int tail_threshold_bin = 2;
  std::uint64_t seed = 0;

  bool operator==(const TrainConfig&) const = default;
};

void validate(const TrainConfig& config);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Step schedule without warmup: lr * factor^(number of decay epochs <= epoch).
double scheduled_lr(const TrainConfig& config, int epoch);

/// Learning rate used at a global step (0-based) inside `epoch` (1-based).
/// The first warmup_steps ramp linearly from warmup_ratio * scheduled_lr.
double step_lr(const TrainConfig& config, int epoch, std::int64_t step);

struct TrainHistory {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_lr;
  std::int64_t steps = 0;

  bool operator==(const TrainHistory&) const = default;
};

void to_json(nlohmann::json& j, const TrainHistory& h);

struct TrainResult {
  HeadParams params;
  TrainHistory history;
};

/// Mini-batch SGD on the final layer with frozen features.
///
/// Grouped heads (method bags) need `partition`. tail_finetune needs `init`,
/// a trained plain head, and trains on tail_finetune_filter() of the data.
/// Other methods start from init_head(seed) unless `init` is given.
TrainResult train(const Dataset& dataset, const TrainConfig& config,
                  const GroupPartition* partition = nullptr, const HeadParams* init = nullptr);

/// Image-level repeat factors r(I) = max over categories c in I of
/// max(1, sqrt(t / f(c))), f(c) the fraction of images containing c.
std::vector<double> rfs_repeat_factors(const Dataset& dataset, double t);

/// One epoch's image list: floor(r) copies of each image plus one more with
/// probability frac(r).
std::vector<int> rfs_expand_images(std::span<const double> factors, std::mt19937_64& rng);

/// Background records plus foreground records whose category falls in a bin
/// <= threshold_bin. Throws DataError if no foreground record survives.
Split tail_finetune_filter(const Split& train, const ClassCatalog& catalog, int threshold_bin);

}  // namespace longtail
