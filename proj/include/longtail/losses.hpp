#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "longtail/catalog.hpp"
#include "longtail/matrix.hpp"

namespace longtail {

/// Batch-mean loss and its gradient with respect to the logits.
struct LossResult {
  double loss = 0.0;
  Matrix dlogits;  ///< batch x logit_dim
};

/// Stabilized softmax (max subtraction).
std::vector<double> softmax_probs(std::span<const double> z);

/// Numerically stable log(1 + e^x).
double softplus(double x);
double sigmoid(double x);

/// Mean over the batch of -log p_label over the C + 1 plain logits.
LossResult softmax_ce(const Matrix& logits, std::span<const int> labels);

/// Per-class weights 1/N(j) normalized by their foreground mean and clipped
/// to [0.01, 5]; index 0 (background) is 1. Zero counts are treated as 1.
std::vector<double> compute_alpha(const ClassCatalog& catalog);

/// softmax_ce with each proposal's term scaled by alpha[label].
LossResult reweight_softmax_ce(const Matrix& logits, std::span<const int> labels,
                               std::span<const double> alpha);

/// Sigmoid focal loss over all C + 1 nodes with one-hot targets, summed over
/// nodes and averaged over the batch.
LossResult sigmoid_focal_ce(const Matrix& logits, std::span<const int> labels, double gamma);

/// Switches for the grouped-softmax ablations. The default is the full
/// method: others nodes plus the sigmoid background group.
struct BagsVariant {
  bool background_group = true;
  bool others = true;

  bool operator==(const BagsVariant&) const = default;
};

/// Flat logit indices that share one softmax for `group` (1..N): its
/// members, plus its others node when the variant uses others.
std::vector<int> group_nodes(const GroupPartition& partition, int group, BagsVariant variant);

/// Which group terms each proposal contributes to in one batch.
struct ActivationPlan {
  struct Activation {
    int group = 0;   ///< 0 is the background group
    int target = 0;  ///< flat index of the node the proposal is labelled with
  };
  std::vector<std::vector<Activation>> per_proposal;
  /// Proposals drawn as others, per group (index 0 unused).
  std::vector<std::vector<int>> sampled_others;
};

/// round-half-up(beta * normal), the others budget of a group.
std::int64_t others_budget(double beta, std::int64_t normal);

/// Every foreground proposal activates its own group, and every proposal the
/// background group when enabled. Without the background group, background
/// proposals enter the loss only as sampled others. Each group with at least one member in the batch samples
/// others_budget() proposals with labels outside the group, without
/// replacement and capped at the pool size.
ActivationPlan plan_activations(std::span<const int> labels, const GroupPartition& partition,
                                double beta, std::mt19937_64& rng, BagsVariant variant = {});

/// Grouped loss under a fixed plan.
LossResult bags_loss(const Matrix& logits, std::span<const int> labels,
                     const GroupPartition& partition, const ActivationPlan& plan,
                     BagsVariant variant = {});

/// Plans with `rng`, then evaluates.
LossResult bags_loss(const Matrix& logits, std::span<const int> labels,
                     const GroupPartition& partition, double beta, std::mt19937_64& rng,
                     BagsVariant variant = {});

/// Background-group term alone: per-node sigmoid CE on (background, others)
/// with targets (1, 0) for background proposals and (0, 1) otherwise.
LossResult background_group_loss(const Matrix& logits, std::span<const int> labels,
                                 const GroupPartition& partition);

}  // namespace longtail
