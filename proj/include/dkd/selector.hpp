#pragma once

#include <cstdint>
#include <span>

#include "dkd/model.hpp"

namespace dkd {

// Two-way base/novel selector. The head maps shared-trunk features (the
// output of the extractor's first `trunk_layers` layers) to the cluster
// space; scores are inner products with the novel and base prototypes.
// Index 0 is the novel cluster, index 1 the base cluster.
struct SelectorState {
  Mlp head;
  Vec proto_novel;
  Vec proto_base;
  bool initialized = false;
  double alpha = 0.9;   // momentum weight
  double margin = 1.0;  // triplet margin
  std::size_t trunk_layers = 1;

  void validate() const;
  bool operator==(const SelectorState&) const = default;
};

inline constexpr std::size_t kNovel = 0;
inline constexpr std::size_t kBase = 1;

Vec selector_scores(const SelectorState& state, std::span<const double> head_input);
Vec selector_logits(const SelectorState& state, std::span<const double> head_input);

Vec momentum_update(std::span<const double> prev, std::span<const double> batch_mean, double alpha);

// Sum over (positive, negative) pairs of max(0, |a-p| - |a-n| + margin).
double triplet_loss(std::span<const double> anchor, const std::vector<Vec>& positives,
                    const std::vector<Vec>& negatives, double margin);

struct TripletGrad {
  double loss = 0.0;
  Vec anchor;
  std::vector<Vec> positives;
  std::vector<Vec> negatives;
};

// triplet_loss with its gradient; terms exactly at the hinge contribute zero.
TripletGrad triplet_loss_grad(std::span<const double> anchor, const std::vector<Vec>& positives,
                              const std::vector<Vec>& negatives, double margin);

double binary_ce(std::span<const double> z_g, bool is_base);

struct SelectorBatch {
  std::vector<Vec> inputs;  // head inputs (trunk features)
  std::vector<std::uint8_t> is_base;
};

struct SelectorWeights {
  double beta1 = 0.2;  // triplet
  double beta2 = 0.8;  // binary cross-entropy
};

struct SelectorOptions {
  bool momentum = true;  // false: prototypes replaced by the batch means (alpha = 1)
  bool triplet = true;   // false: triplet term dropped
};

struct SelectorLoss {
  double triplet = 0.0;
  double bincls = 0.0;
  double total = 0.0;
  bool triplet_skipped = false;
};

struct SelectorLossAndGrad {
  SelectorLoss loss;
  Vec grad;  // over head.trainable_parameters()
};

// L_g = beta1 * L_trip + beta2 * L_bincls with prototypes held constant.
// L_trip averages each anchor's triplet sum over its pair count, then over
// anchors.
SelectorLossAndGrad selector_loss(const SelectorState& state, const SelectorBatch& batch,
                                  SelectorWeights weights, SelectorOptions options = {});

// Cluster means of the head outputs; a cluster absent from the batch is
// returned empty.
std::pair<Vec, Vec> cluster_means(const Mlp& head, const SelectorBatch& batch);

// SGD on the head, then a momentum refresh of both prototypes. Uninitialized
// prototypes are seeded from the batch (alpha = 1) before the loss.
SelectorLoss selector_train_step(SelectorState& state, const SelectorBatch& batch,
                                 SelectorWeights weights, double learning_rate,
                                 SelectorOptions options = {});

// z_g[0] * z_current + z_g[1] * z_base.
Vec fuse(std::span<const double> z_g, std::span<const double> z_current,
         std::span<const double> z_base);

}  // namespace dkd
