#include "longtail/inference.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "longtail/error.hpp"

namespace longtail {

int ScoreVector::argmax() const {
  return static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

int ScoreVector::foreground_argmax() const {
  if (scores.size() < 2) throw ConfigError("score vector has no foreground entries");
  return static_cast<int>(std::max_element(scores.begin() + 1, scores.end()) - scores.begin());
}

ScoreVector bags_predict(std::span<const double> logits, const GroupPartition& partition,
                         BagsVariant variant) {
  if (static_cast<int>(logits.size()) != partition.logit_dim()) {
    throw ConfigError("logit width " + std::to_string(logits.size()) +
                      " does not match the grouped layout (" +
                      std::to_string(partition.logit_dim()) + ")");
  }
  ScoreVector out{std::vector<double>(partition.num_foreground() + 1, 0.0), false};

  for (int g = 1; g <= partition.num_groups(); ++g) {
    const auto nodes = group_nodes(partition, g, variant);
    if (nodes.empty()) continue;
    std::vector<double> slice(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) slice[i] = logits[nodes[i]];
    const auto p = softmax_probs(slice);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& node = partition.node_at(nodes[i]);
      if (node.kind != LogitNode::Kind::Others) out.scores[node.category] = p[i];
    }
  }

  if (variant.background_group) {
    const double fg = sigmoid(logits[partition.others_index(0)]);
    for (std::size_t j = 1; j < out.scores.size(); ++j) out.scores[j] *= fg;
    out.scores[kBackground] = 1.0 - fg;
  } else {
    out.scores[kBackground] = 1.0 - *std::max_element(out.scores.begin() + 1, out.scores.end());
  }
  return out;
}

ScoreVector softmax_predict(std::span<const double> logits) {
  return {softmax_probs(logits), true};
}

ScoreVector sigmoid_predict(std::span<const double> logits) {
  ScoreVector out{std::vector<double>(logits.size()), false};
  for (std::size_t i = 0; i < logits.size(); ++i) out.scores[i] = sigmoid(logits[i]);
  return out;
}

HeadParams tau_normalize(const HeadParams& params, double tau) {
  if (params.layout != HeadLayout::Plain) {
    throw ConfigError("tau normalization applies to plain heads only");
  }
  if (tau < 0.0 || tau > 1.0) throw ConfigError("tau must lie in [0, 1]");
  HeadParams out = params;
  const auto norms = weight_norms(params).category;
  for (std::size_t j = 1; j < params.logit_dim(); ++j) {
    if (norms[j] == 0.0) continue;
    const double scale = std::pow(norms[j], tau);
    for (std::size_t i = 0; i < params.feature_dim(); ++i) out.weights(i, j) /= scale;
  }
  return out;
}

ScoreVector tau_select_predict(const HeadParams& baseline, const HeadParams& tau_params,
                               std::span<const float> feature) {
  if (baseline.layout != tau_params.layout || baseline.logit_dim() != tau_params.logit_dim()) {
    throw ConfigError("baseline and tau-normalized heads differ in layout");
  }
  auto base = softmax_predict(forward(baseline, feature));
  if (base.argmax() == kBackground) return base;
  return softmax_predict(forward(tau_params, feature));
}

Matrix ncm_build(const Dataset& dataset) {
  const int num_fg = dataset.catalog.num_foreground();
  const std::size_t d = dataset.train.feature_dim;
  Matrix means(num_fg, d);
  std::vector<std::int64_t> seen(num_fg + 1, 0);
  const auto& train = dataset.train;
  for (std::size_t r = 0; r < train.size(); ++r) {
    const int y = train.labels[r];
    if (y == kBackground) continue;
    ++seen[y];
    const auto f = train.feature(r);
    auto row = means.row(y - 1);
    for (std::size_t k = 0; k < d; ++k) row[k] += f[k];
  }
  for (int j = 1; j <= num_fg; ++j) {
    if (seen[j] == 0) {
      throw DataError("class " + std::to_string(j) + " has no train records for its mean");
    }
    for (double& v : means.row(j - 1)) v /= static_cast<double>(seen[j]);
  }
  return means;
}

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

std::vector<double> ncm_similarities(std::span<const double> feature, const Matrix& means) {
  if (feature.size() != means.cols()) throw ConfigError("feature dimension mismatch for NCM");
  const double fn = norm(feature);
  if (fn == 0.0) throw ConfigError("cannot score a zero-norm feature with NCM");
  std::vector<double> sims(means.rows());
  for (std::size_t j = 0; j < means.rows(); ++j) {
    const auto m = means.row(j);
    const double mn = norm(m);
    double dot = 0.0;
    for (std::size_t k = 0; k < m.size(); ++k) dot += feature[k] * m[k];
    sims[j] = mn == 0.0 ? 0.0 : dot / (fn * mn);
  }
  return sims;
}

ScoreVector ncm_predict(std::span<const double> feature, const Matrix& means, double p0) {
  if (p0 < 0.0 || p0 > 1.0) throw ConfigError("background probability must lie in [0, 1]");
  const auto p = softmax_probs(ncm_similarities(feature, means));
  ScoreVector out{std::vector<double>(means.rows() + 1), true};
  out.scores[kBackground] = p0;
  for (std::size_t j = 0; j < p.size(); ++j) out.scores[j + 1] = p[j] * (1.0 - p0);
  return out;
}

}  // namespace longtail
