#include "dkd/selector.hpp"

#include <algorithm>
#include <cmath>

#include "dkd/numkernel.hpp"

namespace dkd {
namespace {

double distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += (a[k] - b[k]) * (a[k] - b[k]);
  return std::sqrt(acc);
}

void check_dims(std::span<const double> a, std::span<const double> b, const char* who) {
  if (a.size() != b.size()) throw InvalidArgument(std::string(who) + ": dimension mismatch");
}

}  // namespace

void SelectorState::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("selector: alpha must be in [0,1]");
  if (!(margin > 0.0)) throw InvalidArgument("selector: margin must be > 0");
  if (initialized &&
      (proto_novel.size() != head.output_dim() || proto_base.size() != head.output_dim()))
    throw InvalidArgument("selector: prototype dimension != head output");
}

Vec selector_scores(const SelectorState& state, std::span<const double> head_input) {
  if (!state.initialized) throw InvalidState("selector: prototypes not initialized");
  const Vec w = state.head.forward(head_input);
  double novel = 0.0, base = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    novel += state.proto_novel[k] * w[k];
    base += state.proto_base[k] * w[k];
  }
  return {novel, base};
}

Vec selector_logits(const SelectorState& state, std::span<const double> head_input) {
  return softmax(selector_scores(state, head_input));
}

Vec momentum_update(std::span<const double> prev, std::span<const double> batch_mean,
                    double alpha) {
  check_dims(prev, batch_mean, "momentum_update");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("momentum_update: alpha not in [0,1]");
  Vec out(prev.size());
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = alpha * batch_mean[k] + (1.0 - alpha) * prev[k];
  return out;
}

TripletGrad triplet_loss_grad(std::span<const double> anchor, const std::vector<Vec>& positives,
                              const std::vector<Vec>& negatives, double margin) {
  if (positives.empty() || negatives.empty())
    throw InvalidArgument("triplet_loss: positive and negative sets must be nonempty");
  const std::size_t d = anchor.size();
  for (const Vec& p : positives) check_dims(anchor, p, "triplet_loss");
  for (const Vec& n : negatives) check_dims(anchor, n, "triplet_loss");

  TripletGrad g;
  g.anchor.assign(d, 0.0);
  g.positives.assign(positives.size(), Vec(d, 0.0));
  g.negatives.assign(negatives.size(), Vec(d, 0.0));

  Vec dpos(positives.size()), dneg(negatives.size());
  for (std::size_t j = 0; j < positives.size(); ++j) dpos[j] = distance(anchor, positives[j]);
  for (std::size_t k = 0; k < negatives.size(); ++k) dneg[k] = distance(anchor, negatives[k]);

  for (std::size_t j = 0; j < positives.size(); ++j)
    for (std::size_t k = 0; k < negatives.size(); ++k) {
      const double h = dpos[j] - dneg[k] + margin;
      if (h <= 0.0) continue;
      g.loss += h;
      if (dpos[j] > 0.0)
        for (std::size_t c = 0; c < d; ++c) {
          const double u = (anchor[c] - positives[j][c]) / dpos[j];
          g.anchor[c] += u;
          g.positives[j][c] -= u;
        }
      if (dneg[k] > 0.0)
        for (std::size_t c = 0; c < d; ++c) {
          const double u = (anchor[c] - negatives[k][c]) / dneg[k];
          g.anchor[c] -= u;
          g.negatives[k][c] += u;
        }
    }
  return g;
}

double triplet_loss(std::span<const double> anchor, const std::vector<Vec>& positives,
                    const std::vector<Vec>& negatives, double margin) {
  return triplet_loss_grad(anchor, positives, negatives, margin).loss;
}

double binary_ce(std::span<const double> z_g, bool is_base) {
  if (z_g.size() != 2) throw InvalidArgument("binary_ce: expected a probability pair");
  return -std::log(std::max(z_g[is_base ? kBase : kNovel], 1e-300));
}

std::pair<Vec, Vec> cluster_means(const Mlp& head, const SelectorBatch& batch) {
  Vec novel, base;
  std::size_t nn = 0, nb = 0;
  for (std::size_t i = 0; i < batch.inputs.size(); ++i) {
    const Vec w = head.forward(batch.inputs[i]);
    Vec& acc = batch.is_base[i] ? base : novel;
    if (acc.empty()) acc.assign(w.size(), 0.0);
    for (std::size_t k = 0; k < w.size(); ++k) acc[k] += w[k];
    ++(batch.is_base[i] ? nb : nn);
  }
  for (double& x : novel) x /= static_cast<double>(nn);
  for (double& x : base) x /= static_cast<double>(nb);
  return {novel, base};
}

SelectorLossAndGrad selector_loss(const SelectorState& state, const SelectorBatch& batch,
                                  SelectorWeights weights, SelectorOptions options) {
  const std::size_t n = batch.inputs.size();
  if (n == 0) throw InvalidArgument("selector_loss: empty batch");
  if (batch.is_base.size() != n) throw InvalidArgument("selector_loss: label count mismatch");
  if (!state.initialized) throw InvalidState("selector: prototypes not initialized");

  std::vector<Mlp::Tape> tapes;
  tapes.reserve(n);
  for (const Vec& x : batch.inputs) tapes.push_back(state.head.forward_tape(x));
  const std::size_t d = state.head.output_dim();
  std::vector<Vec> dw(n, Vec(d, 0.0));

  SelectorLossAndGrad out;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec& w = tapes[i].output;
    double sn = 0.0, sb = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      sn += state.proto_novel[k] * w[k];
      sb += state.proto_base[k] * w[k];
    }
    const Vec z = softmax(Vec{sn, sb});
    const bool base = batch.is_base[i] != 0;
    out.loss.bincls += binary_ce(z, base) * inv_n;
    const double gn = (z[kNovel] - (base ? 0.0 : 1.0)) * inv_n * weights.beta2;
    const double gb = (z[kBase] - (base ? 1.0 : 0.0)) * inv_n * weights.beta2;
    for (std::size_t k = 0; k < d; ++k) dw[i][k] += gn * state.proto_novel[k] + gb * state.proto_base[k];
  }

  const bool both = std::count(batch.is_base.begin(), batch.is_base.end(), 1) > 0 &&
                    std::count(batch.is_base.begin(), batch.is_base.end(), 0) > 0;
  if (options.triplet && (!both || n < 3)) {
    out.loss.triplet_skipped = true;
  } else if (options.triplet) {
    std::vector<std::vector<std::size_t>> pos_idx(n), neg_idx(n);
    std::size_t anchors = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) (batch.is_base[j] == batch.is_base[i] ? pos_idx[i] : neg_idx[i]).push_back(j);
      if (!pos_idx[i].empty()) ++anchors;  // a lone cluster member cannot anchor
    }
    const double inv_a = anchors ? 1.0 / static_cast<double>(anchors) : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (pos_idx[i].empty()) continue;
      std::vector<Vec> pos, neg;
      for (std::size_t j : pos_idx[i]) pos.push_back(tapes[j].output);
      for (std::size_t k : neg_idx[i]) neg.push_back(tapes[k].output);
      const TripletGrad tg = triplet_loss_grad(tapes[i].output, pos, neg, state.margin);
      const double scale = inv_a / static_cast<double>(pos.size() * neg.size());
      out.loss.triplet += tg.loss * scale;
      const double s = scale * weights.beta1;
      for (std::size_t k = 0; k < d; ++k) dw[i][k] += s * tg.anchor[k];
      for (std::size_t p = 0; p < pos.size(); ++p)
        for (std::size_t k = 0; k < d; ++k) dw[pos_idx[i][p]][k] += s * tg.positives[p][k];
      for (std::size_t q = 0; q < neg.size(); ++q)
        for (std::size_t k = 0; k < d; ++k) dw[neg_idx[i][q]][k] += s * tg.negatives[q][k];
    }
  }
  const double beta1 = options.triplet ? weights.beta1 : 0.0;
  out.loss.total = beta1 * out.loss.triplet + weights.beta2 * out.loss.bincls;

  out.grad.assign(state.head.trainable_count(), 0.0);
  for (std::size_t i = 0; i < n; ++i) state.head.backward(tapes[i], dw[i], out.grad);
  return out;
}

SelectorLoss selector_train_step(SelectorState& state, const SelectorBatch& batch,
                                 SelectorWeights weights, double learning_rate,
                                 SelectorOptions options) {
  state.validate();
  if (!state.initialized) {
    auto [novel, base] = cluster_means(state.head, batch);
    if (novel.empty() || base.empty())
      throw InvalidArgument("selector_train_step: first batch must contain both clusters");
    state.proto_novel = std::move(novel);
    state.proto_base = std::move(base);
    state.initialized = true;
  }
  SelectorLossAndGrad lg = selector_loss(state, batch, weights, options);
  if (learning_rate != 0.0 && state.head.has_trainable()) {
    Vec params = state.head.trainable_parameters();
    for (std::size_t k = 0; k < params.size(); ++k) params[k] -= learning_rate * lg.grad[k];
    state.head.set_trainable_parameters(params);
  }
  const double alpha = options.momentum ? state.alpha : 1.0;
  auto [novel, base] = cluster_means(state.head, batch);
  if (!novel.empty()) state.proto_novel = momentum_update(state.proto_novel, novel, alpha);
  if (!base.empty()) state.proto_base = momentum_update(state.proto_base, base, alpha);
  return lg.loss;
}

Vec fuse(std::span<const double> z_g, std::span<const double> z_current,
         std::span<const double> z_base) {
  if (z_g.size() != 2) throw InvalidArgument("fuse: selector output must have 2 entries");
  if (z_current.size() != z_base.size())
    throw InvalidArgument("fuse: branch outputs are not aligned to the same classes");
  Vec out(z_current.size());
  for (std::size_t c = 0; c < out.size(); ++c)
    out[c] = z_g[kNovel] * z_current[c] + z_g[kBase] * z_base[c];
  return out;
}

}  // namespace dkd
