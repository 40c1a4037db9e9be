#include "longtail/losses.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <numeric>
#include <string>

#include "longtail/error.hpp"

namespace longtail {

std::vector<double> softmax_probs(std::span<const double> z) {
  if (z.empty()) throw ConfigError("softmax over an empty slice");
  const double top = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - top);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

void check_batch(const Matrix& logits, std::span<const int> labels, int max_label) {
  if (logits.rows() != labels.size()) {
    throw ConfigError("batch has " + std::to_string(logits.rows()) + " logit rows but " +
                      std::to_string(labels.size()) + " labels");
  }
  if (logits.rows() == 0) throw ConfigError("empty batch");
  for (int y : labels) {
    if (y < 0 || y > max_label) throw ConfigError("label out of range: " + std::to_string(y));
  }
}

// -log softmax(z)[target] with gradient (p - onehot) * scale added into `grad`.
double softmax_term(std::span<const double> z, std::span<const int> nodes, int target,
                    double scale, std::span<double> grad) {
  std::vector<double> slice(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) slice[i] = z[nodes[i]];
  const double top = *std::max_element(slice.begin(), slice.end());
  double total = 0.0;
  for (double v : slice) total += std::exp(v - top);
  const double log_total = top + std::log(total);

  double loss = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const double p = std::exp(slice[i] - log_total);
    const bool hit = nodes[i] == target;
    grad[nodes[i]] += scale * (p - (hit ? 1.0 : 0.0));
    if (hit) loss = log_total - slice[i];
  }
  return loss;
}

}  // namespace

LossResult softmax_ce(const Matrix& logits, std::span<const int> labels) {
  const std::vector<double> ones(logits.cols(), 1.0);
  return reweight_softmax_ce(logits, labels, ones);
}

std::vector<double> compute_alpha(const ClassCatalog& catalog) {
  const int num_fg = catalog.num_foreground();
  std::vector<double> alpha(num_fg + 1, 1.0);
  double mean = 0.0;
  for (int j = 1; j <= num_fg; ++j) {
    alpha[j] = 1.0 / static_cast<double>(std::max<std::int64_t>(catalog.count(j), 1));
    mean += alpha[j];
  }
  mean /= num_fg;
  for (int j = 1; j <= num_fg; ++j) alpha[j] = std::clamp(alpha[j] / mean, 0.01, 5.0);
  return alpha;
}

LossResult reweight_softmax_ce(const Matrix& logits, std::span<const int> labels,
                               std::span<const double> alpha) {
  check_batch(logits, labels, static_cast<int>(logits.cols()) - 1);
  if (alpha.size() != logits.cols()) throw ConfigError("alpha length does not match logits");
  const std::size_t batch = logits.rows();
  std::vector<int> all(logits.cols());
  std::iota(all.begin(), all.end(), 0);

  LossResult out{0.0, Matrix(batch, logits.cols())};
  for (std::size_t k = 0; k < batch; ++k) {
    const double w = alpha[labels[k]];
    out.loss += w * softmax_term(logits.row(k), all, labels[k], w / batch, out.dlogits.row(k));
  }
  out.loss /= static_cast<double>(batch);
  return out;
}

LossResult sigmoid_focal_ce(const Matrix& logits, std::span<const int> labels, double gamma) {
  if (gamma < 0) throw ConfigError("focal gamma must be non-negative");
  check_batch(logits, labels, static_cast<int>(logits.cols()) - 1);
  const std::size_t batch = logits.rows();
  LossResult out{0.0, Matrix(batch, logits.cols())};
  for (std::size_t k = 0; k < batch; ++k) {
    for (std::size_t i = 0; i < logits.cols(); ++i) {
      const double z = logits(k, i);
      const bool positive = static_cast<int>(i) == labels[k];
      // p_t and 1 - p_t, with log p_t taken from the logit directly.
      const double pt = positive ? sigmoid(z) : sigmoid(-z);
      const double qt = positive ? sigmoid(-z) : sigmoid(z);
      const double log_pt = positive ? -softplus(-z) : -softplus(z);
      const double focus = gamma == 0.0 ? 1.0 : std::pow(qt, gamma);
      out.loss += -focus * log_pt;
      const double dpt = gamma * focus * pt * log_pt - focus * qt;
      out.dlogits(k, i) = (positive ? dpt : -dpt) / batch;
    }
  }
  out.loss /= static_cast<double>(batch);
  return out;
}

std::vector<int> group_nodes(const GroupPartition& partition, int group, BagsVariant variant) {
  std::vector<int> nodes;
  const int first = partition.offset(group);
  const int members = partition.size(group) - 1;
  for (int i = 0; i < members; ++i) nodes.push_back(first + i);
  if (variant.others) nodes.push_back(partition.others_index(group));
  return nodes;
}

std::int64_t others_budget(double beta, std::int64_t normal) {
  if (beta < 0) throw ConfigError("beta must be non-negative");
  return static_cast<std::int64_t>(std::floor(beta * static_cast<double>(normal) + 0.5));
}

ActivationPlan plan_activations(std::span<const int> labels, const GroupPartition& partition,
                                double beta, std::mt19937_64& rng, BagsVariant variant) {
  if (beta < 0) throw ConfigError("beta must be non-negative");
  const int num_groups = partition.num_groups();
  const int num_fg = partition.num_foreground();
  ActivationPlan plan;
  plan.per_proposal.resize(labels.size());
  plan.sampled_others.resize(num_groups + 1);

  std::vector<std::int64_t> normal(num_groups + 1, 0);
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const int y = labels[k];
    if (y < 0 || y > num_fg) throw ConfigError("label out of range: " + std::to_string(y));
    auto& acts = plan.per_proposal[k];
    if (variant.background_group) {
      acts.push_back({0, y == kBackground ? partition.index_of(kBackground)
                                          : partition.others_index(0)});
    }
    if (y != kBackground) {
      const int g = partition.group_of(y);
      acts.push_back({g, partition.index_of(y)});
      ++normal[g];
    }
  }
  if (!variant.others) return plan;

  for (int g = 1; g <= num_groups; ++g) {
    if (normal[g] == 0) continue;
    std::vector<int> pool;
    for (std::size_t k = 0; k < labels.size(); ++k) {
      if (labels[k] == kBackground || partition.group_of(labels[k]) != g) {
        pool.push_back(static_cast<int>(k));
      }
    }
    const auto budget = std::min<std::int64_t>(others_budget(beta, normal[g]),
                                               static_cast<std::int64_t>(pool.size()));
    auto& chosen = plan.sampled_others[g];
    std::sample(pool.begin(), pool.end(), std::back_inserter(chosen), budget, rng);
    for (int k : chosen) plan.per_proposal[k].push_back({g, partition.others_index(g)});
  }
  return plan;
}

LossResult bags_loss(const Matrix& logits, std::span<const int> labels,
                     const GroupPartition& partition, const ActivationPlan& plan,
                     BagsVariant variant) {
  if (static_cast<int>(logits.cols()) != partition.logit_dim()) {
    throw ConfigError("logit width " + std::to_string(logits.cols()) +
                      " does not match the grouped layout (" +
                      std::to_string(partition.logit_dim()) + ")");
  }
  check_batch(logits, labels, partition.num_foreground());
  if (plan.per_proposal.size() != labels.size()) {
    throw ConfigError("activation plan does not match the batch");
  }

  const std::size_t batch = logits.rows();
  const double scale = 1.0 / static_cast<double>(batch);
  std::vector<std::vector<int>> nodes(partition.num_groups() + 1);
  for (int g = 1; g <= partition.num_groups(); ++g) nodes[g] = group_nodes(partition, g, variant);
  const int bg_node = partition.index_of(kBackground);
  const int fg_node = partition.others_index(0);

  LossResult out{0.0, Matrix(batch, logits.cols())};
  for (std::size_t k = 0; k < batch; ++k) {
    const auto z = logits.row(k);
    auto grad = out.dlogits.row(k);
    for (const auto& act : plan.per_proposal[k]) {
      if (act.group == 0) {
        const double t_bg = act.target == bg_node ? 1.0 : 0.0;
        for (auto [node, t] : {std::pair{bg_node, t_bg}, std::pair{fg_node, 1.0 - t_bg}}) {
          out.loss += softplus(z[node]) - t * z[node];
          grad[node] += scale * (sigmoid(z[node]) - t);
        }
      } else {
        out.loss += softmax_term(z, nodes[act.group], act.target, scale, grad);
      }
    }
  }
  out.loss *= scale;
  return out;
}

LossResult bags_loss(const Matrix& logits, std::span<const int> labels,
                     const GroupPartition& partition, double beta, std::mt19937_64& rng,
                     BagsVariant variant) {
  const auto plan = plan_activations(labels, partition, beta, rng, variant);
  return bags_loss(logits, labels, partition, plan, variant);
}

LossResult background_group_loss(const Matrix& logits, std::span<const int> labels,
                                 const GroupPartition& partition) {
  check_batch(logits, labels, partition.num_foreground());
  ActivationPlan plan;
  plan.per_proposal.resize(labels.size());
  plan.sampled_others.resize(partition.num_groups() + 1);
  for (std::size_t k = 0; k < labels.size(); ++k) {
    plan.per_proposal[k].push_back(
        {0, labels[k] == kBackground ? partition.index_of(kBackground)
                                     : partition.others_index(0)});
  }
  return bags_loss(logits, labels, partition, plan);
}

}  // namespace longtail
