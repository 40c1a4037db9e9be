#pragma once

#include <functional>
#include <span>
#include <vector>

#include "longtail/catalog.hpp"
#include "longtail/head.hpp"
#include "longtail/losses.hpp"
#include "longtail/matrix.hpp"
#include "longtail/synthdata.hpp"

namespace longtail {

/// Scores over C + 1 categories indexed by category id (0 = background).
struct ScoreVector {
  std::vector<double> scores;
  bool normalized = true;  ///< false when entries need not sum to one

  /// Index of the largest score; ties go to the lowest id.
  int argmax() const;
  /// argmax restricted to foreground ids 1..C.
  int foreground_argmax() const;
};

/// Per-proposal scorer over a feature vector.
using Predictor = std::function<ScoreVector(std::span<const float>)>;

/// Group-wise softmax, others nodes dropped, foreground rescaled by the
/// background group's foreground probability; background scores 1 - p_fg.
///
/// Without the background group the head has no background output: the
/// within-group probabilities are used as they are and background scores
/// 1 - (largest foreground score), so it wins only when no category claims
/// the proposal with probability above one half.
ScoreVector bags_predict(std::span<const double> logits, const GroupPartition& partition,
                         BagsVariant variant = {});

/// Plain softmax over C + 1 logits.
ScoreVector softmax_predict(std::span<const double> logits);

/// Independent sigmoid per node (heads trained with the focal loss).
ScoreVector sigmoid_predict(std::span<const double> logits);

/// Foreground columns w_j replaced by w_j / ||w_j||^tau. Background column,
/// bias and zero columns are left as they are.
HeadParams tau_normalize(const HeadParams& params, double tau);

/// Baseline scores when the baseline calls the proposal background,
/// tau-normalized scores otherwise.
ScoreVector tau_select_predict(const HeadParams& baseline, const HeadParams& tau_params,
                               std::span<const float> feature);

/// Per-class mean train feature, background excluded. Row j - 1 holds class j.
Matrix ncm_build(const Dataset& dataset);

/// Cosine similarity of a feature to every class mean.
std::vector<double> ncm_similarities(std::span<const double> feature, const Matrix& means);

/// Softmax over cosine similarities scaled by (1 - p0); background gets p0.
ScoreVector ncm_predict(std::span<const double> feature, const Matrix& means, double p0);

}  // namespace longtail
