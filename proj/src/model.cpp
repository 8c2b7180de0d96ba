#include "dkd/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "dkd/numkernel.hpp"

namespace dkd {

Mlp::Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw InvalidArgument("Mlp: no layers");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].bias.size() != layers_[l].out())
      throw InvalidArgument("Mlp: bias length mismatch in layer " + std::to_string(l));
    if (l > 0 && layers_[l].in() != layers_[l - 1].out())
      throw InvalidArgument("Mlp: layer " + std::to_string(l) + " does not chain");
  }
}

Mlp Mlp::random(std::span<const std::size_t> dims, Rng& rng) {
  if (dims.size() < 2) throw InvalidArgument("Mlp::random: need input and output dims");
  std::vector<Layer> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    if (dims[l] == 0 || dims[l + 1] == 0) throw InvalidArgument("Mlp::random: zero width");
    Layer layer{Matrix(dims[l + 1], dims[l]), Vec(dims[l + 1]), false};
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
    for (double& w : layer.weight.data()) w = rng.uniform(-bound, bound);
    for (double& b : layer.bias) b = rng.uniform(-bound, bound);
    layers.push_back(std::move(layer));
  }
  return Mlp(std::move(layers));
}

std::size_t Mlp::input_dim() const { return layers_.empty() ? 0 : layers_.front().in(); }
std::size_t Mlp::output_dim() const { return layers_.empty() ? 0 : layers_.back().out(); }

void Mlp::check_input(std::span<const double> x) const {
  if (layers_.empty()) throw InvalidState("Mlp: no layers");
  if (x.size() != input_dim())
    throw InvalidArgument("Mlp: input dimension " + std::to_string(x.size()) + " != " +
                          std::to_string(input_dim()));
}

namespace {

Vec apply_layer(const Layer& layer, std::span<const double> x, bool relu) {
  Vec y(layer.bias);
  for (std::size_t o = 0; o < layer.out(); ++o) {
    const auto w = layer.weight.row(o);
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * x[i];
    y[o] += acc;
    if (relu && y[o] < 0.0) y[o] = 0.0;
  }
  return y;
}

}  // namespace

Vec Mlp::forward(std::span<const double> x) const { return forward_prefix(x, depth()); }

Vec Mlp::forward_prefix(std::span<const double> x, std::size_t count) const {
  check_input(x);
  if (count > depth()) throw InvalidArgument("Mlp::forward_prefix: count exceeds depth");
  Vec h(x.begin(), x.end());
  for (std::size_t l = 0; l < count; ++l) h = apply_layer(layers_[l], h, l + 1 < depth());
  return h;
}

Mlp::Tape Mlp::forward_tape(std::span<const double> x) const {
  check_input(x);
  Tape tape;
  tape.inputs.reserve(depth());
  Vec h(x.begin(), x.end());
  for (std::size_t l = 0; l < depth(); ++l) {
    tape.inputs.push_back(h);
    h = apply_layer(layers_[l], h, l + 1 < depth());
  }
  tape.output = std::move(h);
  return tape;
}

void Mlp::backward(const Tape& tape, std::span<const double> grad_out,
                   std::span<double> grads) const {
  if (grad_out.size() != output_dim()) throw InvalidArgument("Mlp::backward: gradient size");
  if (grads.size() != trainable_count()) throw InvalidArgument("Mlp::backward: buffer size");

  // Offsets of each trainable layer inside the flat gradient buffer.
  std::vector<std::size_t> offset(depth(), 0);
  std::size_t total = 0;
  std::size_t first_trainable = depth();
  for (std::size_t l = 0; l < depth(); ++l) {
    offset[l] = total;
    if (!layers_[l].frozen) {
      total += layers_[l].weight.data().size() + layers_[l].bias.size();
      first_trainable = std::min(first_trainable, l);
    }
  }

  Vec delta(grad_out.begin(), grad_out.end());  // d loss / d layer output (post-activation)
  for (std::size_t l = depth(); l-- > 0;) {
    const Layer& layer = layers_[l];
    const Vec& in = tape.inputs[l];
    const Vec& out = (l + 1 < depth()) ? tape.inputs[l + 1] : tape.output;
    if (l + 1 < depth())
      for (std::size_t o = 0; o < delta.size(); ++o)
        if (out[o] <= 0.0) delta[o] = 0.0;

    if (!layer.frozen) {
      double* gw = grads.data() + offset[l];
      double* gb = gw + layer.weight.data().size();
      for (std::size_t o = 0; o < layer.out(); ++o) {
        gb[o] += delta[o];
        for (std::size_t i = 0; i < layer.in(); ++i) gw[o * layer.in() + i] += delta[o] * in[i];
      }
    }
    if (l == 0 || l <= first_trainable) break;  // nothing trainable further down
    Vec prev(layer.in(), 0.0);
    for (std::size_t o = 0; o < layer.out(); ++o) {
      const auto w = layer.weight.row(o);
      for (std::size_t i = 0; i < layer.in(); ++i) prev[i] += w[i] * delta[o];
    }
    delta = std::move(prev);
  }
}

bool Mlp::has_trainable() const noexcept {
  return std::any_of(layers_.begin(), layers_.end(), [](const Layer& l) { return !l.frozen; });
}

std::size_t Mlp::trainable_count() const noexcept {
  std::size_t n = 0;
  for (const Layer& l : layers_)
    if (!l.frozen) n += l.weight.data().size() + l.bias.size();
  return n;
}

Vec Mlp::trainable_parameters() const {
  Vec p;
  p.reserve(trainable_count());
  for (const Layer& l : layers_) {
    if (l.frozen) continue;
    p.insert(p.end(), l.weight.data().begin(), l.weight.data().end());
    p.insert(p.end(), l.bias.begin(), l.bias.end());
  }
  return p;
}

void Mlp::set_trainable_parameters(std::span<const double> params) {
  if (params.size() != trainable_count())
    throw InvalidArgument("Mlp::set_trainable_parameters: size mismatch");
  std::size_t k = 0;
  for (Layer& l : layers_) {
    if (l.frozen) continue;
    for (double& w : l.weight.data()) w = params[k++];
    for (double& b : l.bias) b = params[k++];
  }
}

void Mlp::freeze_all_but_last(std::size_t keep) {
  for (std::size_t l = 0; l < depth(); ++l) layers_[l].frozen = l + keep < depth();
}

void Mlp::set_frozen(bool frozen) {
  for (Layer& l : layers_) l.frozen = frozen;
}

void PrototypeBank::set(int cls, Vec prototype) {
  if (empty() && dim_ == 0) dim_ = prototype.size();
  if (prototype.size() != dim_) throw InvalidArgument("PrototypeBank: dimension mismatch");
  protos_[cls] = std::move(prototype);
}

const Vec& PrototypeBank::at(int cls) const {
  auto it = protos_.find(cls);
  if (it == protos_.end()) throw InvalidArgument("PrototypeBank: no class " + std::to_string(cls));
  return it->second;
}

std::vector<int> PrototypeBank::classes() const {
  std::vector<int> out;
  out.reserve(protos_.size());
  for (const auto& [c, _] : protos_) out.push_back(c);
  return out;
}

std::size_t PrototypeBank::index_of(int cls) const {
  auto it = protos_.find(cls);
  if (it == protos_.end()) throw InvalidArgument("PrototypeBank: no class " + std::to_string(cls));
  return static_cast<std::size_t>(std::distance(protos_.begin(), it));
}

PrototypeBank compute_prototypes(const FeatureSet& features) {
  if (features.empty()) throw InvalidArgument("compute_prototypes: empty feature set");
  std::map<int, std::pair<Vec, std::size_t>> acc;
  for (const Record& r : features.records) {
    if (r.feature.size() != features.dim)
      throw InvalidArgument("compute_prototypes: dimension mismatch");
    auto& [sum, count] = acc[r.label];
    if (sum.empty()) sum.assign(features.dim, 0.0);
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += r.feature[k];
    ++count;
  }
  PrototypeBank bank(features.dim);
  for (auto& [cls, entry] : acc) {
    auto& [sum, count] = entry;
    for (double& x : sum) x /= static_cast<double>(count);
    bank.set(cls, std::move(sum));
  }
  return bank;
}

PrototypeBank compute_prototypes(const FeatureSet& features, std::span<const int> required) {
  PrototypeBank bank = compute_prototypes(features);
  for (int cls : required)
    if (!bank.contains(cls))
      throw InvalidArgument("compute_prototypes: class " + std::to_string(cls) + " has no samples");
  return bank;
}

Vec prototype_scores(std::span<const double> feature, const PrototypeBank& bank) {
  if (bank.empty()) throw InvalidArgument("prototype_scores: empty bank");
  if (feature.size() != bank.dim()) throw InvalidArgument("prototype_scores: dimension mismatch");
  Vec s;
  s.reserve(bank.size());
  for (const auto& [_, p] : bank.entries()) {
    double acc = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) acc += p[k] * feature[k];
    s.push_back(acc);
  }
  return s;
}

Vec logits(std::span<const double> feature, const PrototypeBank& bank) {
  return softmax(prototype_scores(feature, bank));
}

double cross_entropy(std::span<const double> z, std::size_t y) {
  if (y >= z.size()) throw InvalidArgument("cross_entropy: class index out of range");
  return -std::log(std::max(z[y], 1e-300));
}

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
  if (total_steps == 0) throw InvalidArgument("cosine_lr: total_steps must be >= 1");
  if (step > total_steps) throw InvalidArgument("cosine_lr: step exceeds total_steps");
  if (step == total_steps) return 0.0;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidArgument("TrainConfig: learning rate must be > 0");
  if (epochs < 1) throw InvalidArgument("TrainConfig: epochs must be >= 1");
  if (batch_size < 2) throw InvalidArgument("TrainConfig: batch size must be >= 2");
}

namespace {

// Student rows: softmax of the scores restricted to the target's columns.
Matrix gather(const std::vector<Vec>& scores, const DistillTarget& target) {
  Matrix m(target.members.size(), target.columns.size());
  Vec sub(target.columns.size());
  for (std::size_t r = 0; r < target.members.size(); ++r) {
    for (std::size_t c = 0; c < target.columns.size(); ++c)
      sub[c] = scores.at(target.members[r]).at(target.columns[c]);
    const Vec z = softmax(sub);
    std::copy(z.begin(), z.end(), m.row(r).begin());
  }
  return m;
}

// Pulls a gradient w.r.t. the gathered probabilities back to the scores:
// d/ds = z * (g - <z, g>).
void scatter_add(std::vector<Vec>& grads, const DistillTarget& target, const Matrix& student,
                 const Matrix& g, double weight) {
  for (std::size_t r = 0; r < target.members.size(); ++r) {
    double zg = 0.0;
    for (std::size_t c = 0; c < target.columns.size(); ++c) zg += student(r, c) * g(r, c);
    for (std::size_t c = 0; c < target.columns.size(); ++c)
      grads[target.members[r]][target.columns[c]] += weight * student(r, c) * (g(r, c) - zg);
  }
}

void check_target(const DistillTarget& t, const char* who) {
  if (t.teacher.rows() != t.members.size() || t.teacher.cols() != t.columns.size())
    throw InvalidArgument(std::string(who) + ": teacher shape does not match members x columns");
}

}  // namespace

LossAndGrad feature_loss(const Extractor& extractor, const PrototypeBank& bank,
                         const StepInput& batch, LossWeights weights) {
  const std::size_t n = batch.inputs.size();
  if (n == 0) throw InvalidArgument("feature_loss: empty batch");
  if (batch.targets.size() != n) throw InvalidArgument("feature_loss: targets size mismatch");
  if (bank.dim() != extractor.output_dim())
    throw InvalidArgument("feature_loss: prototype dimension != extractor output");
  check_target(batch.base, "feature_loss(base)");
  check_target(batch.preorder, "feature_loss(preorder)");

  std::vector<Mlp::Tape> tapes;
  std::vector<Vec> scores;
  tapes.reserve(n);
  scores.reserve(n);
  for (const Vec& x : batch.inputs) {
    tapes.push_back(extractor.forward_tape(x));
    scores.push_back(prototype_scores(tapes.back().output, bank));
  }

  LossAndGrad out;
  std::vector<Vec> dscores(n, Vec(bank.size(), 0.0));
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec z = softmax(scores[i]);
    out.loss.cls += cross_entropy(z, batch.targets[i]) * inv_n;
    for (std::size_t c = 0; c < z.size(); ++c) dscores[i][c] = z[c] * inv_n;
    dscores[i][batch.targets[i]] -= inv_n;
  }

  if (!batch.base.empty()) {
    const Matrix student = gather(scores, batch.base);
    out.loss.ikd = ikd_loss(student, batch.base.teacher);
    if (weights.w1 != 0.0)
      scatter_add(dscores, batch.base, student, ikd_grad(student, batch.base.teacher), weights.w1);
  }

  const DistillTarget& pre = batch.preorder;
  const bool pairwise = batch.preorder_loss != PreorderLoss::ikd;
  if (pre.members.size() >= (pairwise ? 2u : 1u)) {
    const Matrix student = gather(scores, pre);
    Matrix g;
    switch (batch.preorder_loss) {
      case PreorderLoss::ikd:
        out.loss.preorder = ikd_loss(student, pre.teacher);
        if (weights.w2 != 0.0) g = ikd_grad(student, pre.teacher);
        break;
      case PreorderLoss::rkd:
        out.loss.preorder = rkd_loss(student, pre.teacher, batch.rkd_variant);
        if (weights.w2 != 0.0) g = rkd_grad(student, pre.teacher, batch.rkd_variant);
        break;
      case PreorderLoss::dkd:
        out.loss.preorder = dkd_loss(student, pre.teacher);
        if (weights.w2 != 0.0) g = dkd_grad(student, pre.teacher);
        break;
    }
    if (weights.w2 != 0.0) scatter_add(dscores, pre, student, g, weights.w2);
  }
  out.loss.total = out.loss.cls + weights.w1 * out.loss.ikd + weights.w2 * out.loss.preorder;

  // Scores are P f with P constant, so d/df = sum_c dscore_c * p_c.
  const auto classes = bank.classes();
  out.grad.assign(extractor.trainable_count(), 0.0);
  Vec dfeat(bank.dim());
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(dfeat.begin(), dfeat.end(), 0.0);
    for (std::size_t c = 0; c < classes.size(); ++c) {
      const Vec& p = bank.at(classes[c]);
      for (std::size_t k = 0; k < p.size(); ++k) dfeat[k] += dscores[i][c] * p[k];
    }
    extractor.backward(tapes[i], dfeat, out.grad);
  }
  return out;
}

LossBreakdown train_step(Extractor& extractor, const PrototypeBank& bank, const StepInput& batch,
                         LossWeights weights, double learning_rate) {
  if (!extractor.has_trainable()) throw InvalidState("train_step: no trainable layers");
  LossAndGrad lg = feature_loss(extractor, bank, batch, weights);
  if (learning_rate != 0.0) {
    Vec params = extractor.trainable_parameters();
    for (std::size_t k = 0; k < params.size(); ++k) params[k] -= learning_rate * lg.grad[k];
    extractor.set_trainable_parameters(params);
  }
  return lg.loss;
}

}  // namespace dkd
