#include "longtail/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "longtail/error.hpp"

namespace longtail {

using nlohmann::json;

namespace {

constexpr std::pair<Method, const char*> kMethods[] = {
    {Method::Softmax, "softmax"},   {Method::Bags, "bags"},
    {Method::Reweight, "reweight"}, {Method::Focal, "focal"},
    {Method::TailFinetune, "tail_finetune"},
};

}  // namespace

std::string to_string(Method method) {
  for (auto [m, name] : kMethods) {
    if (m == method) return name;
  }
  return "unknown";
}

std::string to_string(Sampler sampler) { return sampler == Sampler::Uniform ? "uniform" : "rfs"; }

Method method_from_string(const std::string& name) {
  std::string valid;
  for (auto [m, n] : kMethods) {
    if (name == n) return m;
    valid += valid.empty() ? n : std::string(", ") + n;
  }
  throw ConfigError("unknown method '" + name + "' (valid: " + valid + ")");
}

Sampler sampler_from_string(const std::string& name) {
  if (name == "uniform") return Sampler::Uniform;
  if (name == "rfs") return Sampler::Rfs;
  throw ConfigError("unknown sampler '" + name + "' (valid: uniform, rfs)");
}

void validate(const TrainConfig& c) {
  if (!(c.lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (c.epochs < 1) throw ConfigError("epochs must be at least 1");
  if (c.batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (c.warmup_steps < 0) throw ConfigError("warmup_steps must be non-negative");
  if (c.beta < 0) throw ConfigError("beta must be non-negative");
  if (c.gamma < 0) throw ConfigError("gamma must be non-negative");
  if (!(c.rfs_t > 0)) throw ConfigError("rfs_t must be positive");
  if (c.tail_threshold_bin < 1 || c.tail_threshold_bin > 2) {
    throw ConfigError("tail_threshold_bin must be 1 or 2");
  }
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"method", to_string(c.method)},
           {"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"lr", c.lr},
           {"lr_decay_epochs", c.lr_decay_epochs},
           {"lr_decay_factor", c.lr_decay_factor},
           {"warmup_steps", c.warmup_steps},
           {"warmup_ratio", c.warmup_ratio},
           {"weight_decay", c.weight_decay},
           {"beta", c.beta},
           {"gamma", c.gamma},
           {"sampler", to_string(c.sampler)},
           {"rfs_t", c.rfs_t},
           {"background_group", c.variant.background_group},
           {"others", c.variant.others},
           {"tail_threshold_bin", c.tail_threshold_bin},
           {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  TrainConfig d;
  c.method = method_from_string(j.value("method", to_string(d.method)));
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.lr_decay_epochs = j.value("lr_decay_epochs", d.lr_decay_epochs);
  c.lr_decay_factor = j.value("lr_decay_factor", d.lr_decay_factor);
  c.warmup_steps = j.value("warmup_steps", d.warmup_steps);
  c.warmup_ratio = j.value("warmup_ratio", d.warmup_ratio);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.beta = j.value("beta", d.beta);
  c.gamma = j.value("gamma", d.gamma);
  c.sampler = sampler_from_string(j.value("sampler", to_string(d.sampler)));
  c.rfs_t = j.value("rfs_t", d.rfs_t);
  c.variant.background_group = j.value("background_group", d.variant.background_group);
  c.variant.others = j.value("others", d.variant.others);
  c.tail_threshold_bin = j.value("tail_threshold_bin", d.tail_threshold_bin);
  c.seed = j.value("seed", d.seed);
}

void to_json(json& j, const TrainHistory& h) {
  j = json{{"epoch_loss", h.epoch_loss}, {"epoch_lr", h.epoch_lr}, {"steps", h.steps}};
}

double scheduled_lr(const TrainConfig& config, int epoch) {
  double lr = config.lr;
  for (int e : config.lr_decay_epochs) {
    if (epoch >= e) lr *= config.lr_decay_factor;
  }
  return lr;
}

double step_lr(const TrainConfig& config, int epoch, std::int64_t step) {
  const double lr = scheduled_lr(config, epoch);
  if (step >= config.warmup_steps) return lr;
  const double progress = static_cast<double>(step) / config.warmup_steps;
  return lr * (config.warmup_ratio + (1.0 - config.warmup_ratio) * progress);
}

std::vector<double> rfs_repeat_factors(const Dataset& dataset, double t) {
  if (!(t > 0)) throw ConfigError("rfs threshold must be positive");
  const auto& images = dataset.images;
  if (images.empty()) throw DataError("dataset has no image structure");
  const int num_fg = dataset.catalog.num_foreground();

  std::vector<std::vector<int>> present(images.size());
  std::vector<std::int64_t> images_with(num_fg + 1, 0);
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::set<int> cats;
    for (int rec : images[i]) {
      const int y = dataset.train.labels[rec];
      if (y != kBackground) cats.insert(y);
    }
    present[i].assign(cats.begin(), cats.end());
    for (int c : cats) ++images_with[c];
  }

  const double num_images = static_cast<double>(images.size());
  std::vector<double> factors(images.size(), 1.0);
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (int c : present[i]) {
      const double freq = images_with[c] / num_images;
      factors[i] = std::max(factors[i], std::sqrt(t / freq));
    }
  }
  return factors;
}

std::vector<int> rfs_expand_images(std::span<const double> factors, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<int> out;
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const double whole = std::floor(factors[i]);
    auto copies = static_cast<std::int64_t>(whole);
    if (unit(rng) < factors[i] - whole) ++copies;
    out.insert(out.end(), copies, static_cast<int>(i));
  }
  return out;
}

Split tail_finetune_filter(const Split& train, const ClassCatalog& catalog, int threshold_bin) {
  if (threshold_bin < 1 || threshold_bin > 2) {
    throw ConfigError("tail threshold bin must be 1 or 2");
  }
  Split out;
  out.feature_dim = train.feature_dim;
  std::size_t foreground = 0;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const int y = train.labels[i];
    const bool keep = y == kBackground || bin_of(catalog.count(y)) <= threshold_bin;
    if (!keep) continue;
    out.push_back(train.feature(i), y, train.image_ids[i]);
    if (y != kBackground) ++foreground;
  }
  if (foreground == 0) throw DataError("tail filter left no foreground records");
  return out;
}

namespace {

class Objective {
 public:
  Objective(const TrainConfig& config, const Dataset& dataset, const GroupPartition* partition)
      : config_(config), partition_(partition) {
    if (config.method == Method::Reweight) alpha_ = compute_alpha(dataset.catalog);
  }

  LossResult operator()(const Matrix& logits, std::span<const int> labels,
                        std::mt19937_64& rng) const {
    switch (config_.method) {
      case Method::Bags:
        return bags_loss(logits, labels, *partition_, config_.beta, rng, config_.variant);
      case Method::Reweight:
        return reweight_softmax_ce(logits, labels, alpha_);
      case Method::Focal:
        return sigmoid_focal_ce(logits, labels, config_.gamma);
      case Method::Softmax:
      case Method::TailFinetune:
        break;
    }
    return softmax_ce(logits, labels);
  }

 private:
  const TrainConfig& config_;
  const GroupPartition* partition_;
  std::vector<double> alpha_;
};

}  // namespace

TrainResult train(const Dataset& dataset, const TrainConfig& config,
                  const GroupPartition* partition, const HeadParams* init) {
  validate(config);
  const bool grouped = config.method == Method::Bags;
  const std::size_t d = dataset.train.feature_dim;
  const int num_fg = dataset.catalog.num_foreground();
  if (grouped && partition == nullptr) throw ConfigError("method bags needs a group partition");
  if (grouped && partition->num_foreground() != num_fg) {
    throw ConfigError("group partition does not match the dataset catalog");
  }
  const std::size_t width = grouped ? partition->logit_dim() : num_fg + 1;
  const HeadLayout layout = grouped ? HeadLayout::Grouped : HeadLayout::Plain;

  if (config.method == Method::TailFinetune && init == nullptr) {
    throw ConfigError("tail_finetune needs a trained baseline checkpoint to start from");
  }
  if (config.method == Method::TailFinetune && config.sampler == Sampler::Rfs) {
    throw ConfigError("tail_finetune does not combine with the rfs sampler");
  }

  TrainResult result;
  if (init != nullptr) {
    if (init->layout != layout || init->logit_dim() != width || init->feature_dim() != d) {
      throw ConfigError("initial head does not match the method's layout");
    }
    result.params = *init;
  } else {
    result.params = init_head(layout, d, width, config.seed);
  }
  auto& params = result.params;

  Split filtered;
  const Split* split = &dataset.train;
  if (config.method == Method::TailFinetune) {
    filtered = tail_finetune_filter(dataset.train, dataset.catalog, config.tail_threshold_bin);
    split = &filtered;
  }

  std::vector<double> rfs_factors;
  if (config.sampler == Sampler::Rfs) rfs_factors = rfs_repeat_factors(dataset, config.rfs_t);

  const Objective objective(config, dataset, partition);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<int> order;
  Matrix batch_features;
  std::vector<int> batch_labels;
  Matrix grad_w(d, width);
  std::vector<double> grad_b(width);
  std::int64_t step = 0;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    order.clear();
    if (config.sampler == Sampler::Rfs) {
      for (int img : rfs_expand_images(rfs_factors, rng)) {
        const auto& recs = dataset.images[img];
        order.insert(order.end(), recs.begin(), recs.end());
      }
    } else {
      order.resize(split->size());
      std::iota(order.begin(), order.end(), 0);
    }
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min<std::size_t>(config.batch_size, order.size() - start);
      batch_features = Matrix(n, d);
      batch_labels.resize(n);
      for (std::size_t k = 0; k < n; ++k) {
        const auto f = split->feature(order[start + k]);
        std::copy(f.begin(), f.end(), batch_features.row(k).begin());
        batch_labels[k] = split->labels[order[start + k]];
      }

      const Matrix logits = forward_batch(params, batch_features);
      const LossResult res = objective(logits, batch_labels, rng);
      if (!std::isfinite(res.loss)) {
        throw NumericalError("non-finite loss at step " + std::to_string(step));
      }
      loss_sum += res.loss * static_cast<double>(n);

      std::fill(grad_w.data().begin(), grad_w.data().end(), 0.0);
      std::fill(grad_b.begin(), grad_b.end(), 0.0);
      for (std::size_t k = 0; k < n; ++k) {
        const double* __restrict g = res.dlogits.row(k).data();
        const double* __restrict h = batch_features.row(k).data();
        for (std::size_t i = 0; i < d; ++i) {
          if (h[i] == 0.0) continue;
          double* __restrict row = grad_w.row(i).data();
          const double hi = h[i];
          for (std::size_t j = 0; j < width; ++j) row[j] += hi * g[j];
        }
        for (std::size_t j = 0; j < width; ++j) grad_b[j] += g[j];
      }

      const double lr = step_lr(config, epoch, step);
      auto& w = params.weights.data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] -= lr * (grad_w.data()[i] + config.weight_decay * w[i]);
      }
      for (std::size_t j = 0; j < width; ++j) params.bias[j] -= lr * grad_b[j];
      ++step;
    }
    result.history.epoch_loss.push_back(order.empty() ? 0.0 : loss_sum / order.size());
    result.history.epoch_lr.push_back(scheduled_lr(config, epoch));
  }
  result.history.steps = step;
  return result;
}

}  // namespace longtail
