#pragma once

#include <cstdint>
#include <map>
#include <span>

#include "dkd/distill.hpp"
#include "dkd/featureset.hpp"
#include "dkd/rng.hpp"
#include "dkd/types.hpp"

namespace dkd {

struct Layer {
  Matrix weight;  // out x in
  Vec bias;       // out
  bool frozen = false;

  std::size_t in() const noexcept { return weight.cols(); }
  std::size_t out() const noexcept { return weight.rows(); }
  bool operator==(const Layer&) const = default;
};

// Fully connected network; rectified-linear after every layer but the last.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<Layer> layers);

  // Weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
  static Mlp random(std::span<const std::size_t> dims, Rng& rng);

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t depth() const noexcept { return layers_.size(); }

  std::vector<Layer>& layers() noexcept { return layers_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  Vec forward(std::span<const double> x) const;

  // Output of the first `count` layers, activation included. count == 0
  // returns x unchanged; count == depth() equals forward().
  Vec forward_prefix(std::span<const double> x, std::size_t count) const;

  // Values recorded during a forward pass for backpropagation.
  struct Tape {
    std::vector<Vec> inputs;  // input to each layer
    Vec output;
  };
  Tape forward_tape(std::span<const double> x) const;

  // Accumulates d loss / d params for trainable layers into `grads`, laid
  // out like trainable_parameters().
  void backward(const Tape& tape, std::span<const double> grad_out, std::span<double> grads) const;

  bool has_trainable() const noexcept;
  std::size_t trainable_count() const noexcept;
  Vec trainable_parameters() const;
  void set_trainable_parameters(std::span<const double> params);

  // Freezes every layer except the last `keep` layers.
  void freeze_all_but_last(std::size_t keep = 1);
  void set_frozen(bool frozen);

  bool operator==(const Mlp&) const = default;

 private:
  void check_input(std::span<const double> x) const;

  std::vector<Layer> layers_;
};

using Extractor = Mlp;

// Class id -> prototype vector; iteration is in ascending class id.
class PrototypeBank {
 public:
  PrototypeBank() = default;
  explicit PrototypeBank(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return protos_.size(); }
  bool empty() const noexcept { return protos_.empty(); }
  bool contains(int cls) const { return protos_.count(cls) != 0; }

  void set(int cls, Vec prototype);
  const Vec& at(int cls) const;
  std::vector<int> classes() const;

  // Position of a class in the ascending ordering; throws if absent.
  std::size_t index_of(int cls) const;

  const std::map<int, Vec>& entries() const noexcept { return protos_; }
  bool operator==(const PrototypeBank&) const = default;

 private:
  std::size_t dim_ = 0;
  std::map<int, Vec> protos_;
};

// Per-class mean of the given feature vectors.
PrototypeBank compute_prototypes(const FeatureSet& features);

// Same, but every class in `required` must have at least one sample.
PrototypeBank compute_prototypes(const FeatureSet& features, std::span<const int> required);

// Raw prototype scores <p_c, f> in ascending class order.
Vec prototype_scores(std::span<const double> feature, const PrototypeBank& bank);

// softmax(prototype_scores).
Vec logits(std::span<const double> feature, const PrototypeBank& bank);

// -log z[y]; y is a position in z.
double cross_entropy(std::span<const double> z, std::size_t y);

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr);

struct TrainConfig {
  double learning_rate = 0.1;
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  bool cosine = true;
  std::uint64_t seed = 0;

  void validate() const;
};

// Which loss distills the pre-order (session 1..t-1) members of a batch.
enum class PreorderLoss { ikd, rkd, dkd };

// One distillation target over a subset of batch members. The student side is
// the prototype classifier output softmax(scores at `columns`); `teacher`
// (members x columns) holds the teacher classifier's probabilities.
struct DistillTarget {
  std::vector<std::size_t> members;
  std::vector<std::size_t> columns;
  Matrix teacher;

  bool empty() const noexcept { return members.empty(); }
};

struct StepInput {
  std::vector<Vec> inputs;
  std::vector<std::size_t> targets;  // position in the bank's class order
  DistillTarget base;                // IKD against the session-0 branch
  DistillTarget preorder;            // against the previous-session model
  PreorderLoss preorder_loss = PreorderLoss::dkd;
  RkdVariant rkd_variant = RkdVariant::inner;
};

struct LossWeights {
  double w1 = 0.0;  // IKD on base members
  double w2 = 0.0;  // pre-order term
};

struct LossBreakdown {
  double cls = 0.0;
  double ikd = 0.0;
  double preorder = 0.0;
  double total = 0.0;
};

struct LossAndGrad {
  LossBreakdown loss;
  Vec grad;  // over extractor.trainable_parameters()
};

// L_f = L_cls + w1 * L_IKD + w2 * L_pre with prototypes held constant.
LossAndGrad feature_loss(const Extractor& extractor, const PrototypeBank& bank,
                         const StepInput& batch, LossWeights weights);

// One SGD step on trainable layers. Throws InvalidState with no trainable layer.
LossBreakdown train_step(Extractor& extractor, const PrototypeBank& bank, const StepInput& batch,
                         LossWeights weights, double learning_rate);

}  // namespace dkd
