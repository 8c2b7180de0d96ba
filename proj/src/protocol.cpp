#include "dkd/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <set>
#include <string>
#include <thread>

#include "dkd/datagen.hpp"
#include "dkd/numkernel.hpp"

namespace dkd {

std::size_t MemorySet::size() const noexcept {
  std::size_t n = 0;
  for (const auto& [_, v] : by_class) n += v.size();
  return n;
}

std::vector<Record> MemorySet::records() const {
  std::vector<Record> out;
  for (const auto& [_, v] : by_class) out.insert(out.end(), v.begin(), v.end());
  return out;
}

MemorySet update_memory(const MemorySet& memory, const FeatureSet& session_data, std::size_t m,
                        MemoryPolicy policy, std::uint64_t seed, const Embedding& embed) {
  MemorySet out = memory;
  std::map<int, std::vector<std::size_t>> per_class;
  for (std::size_t i = 0; i < session_data.records.size(); ++i)
    per_class[session_data.records[i].label].push_back(i);

  Rng rng(derive_seed(seed, 0x3e3));
  for (auto& [cls, idx] : per_class) {
    if (out.by_class.count(cls)) continue;  // existing entries untouched
    std::vector<std::size_t> keep;
    if (policy == MemoryPolicy::random) {
      std::vector<std::size_t> shuffled = idx;
      rng.shuffle(shuffled);
      shuffled.resize(std::min(m, shuffled.size()));
      std::sort(shuffled.begin(), shuffled.end());
      keep = std::move(shuffled);
    } else {
      std::vector<Vec> feats;
      for (std::size_t i : idx) {
        const Vec& x = session_data.records[i].feature;
        feats.push_back(embed ? embed(x) : x);
      }
      Vec mean(feats.front().size(), 0.0);
      for (const Vec& f : feats)
        for (std::size_t k = 0; k < f.size(); ++k) mean[k] += f[k];
      for (double& v : mean) v /= static_cast<double>(feats.size());
      std::vector<std::pair<double, std::size_t>> dist;
      for (std::size_t a = 0; a < feats.size(); ++a) {
        double d2 = 0.0;
        for (std::size_t k = 0; k < mean.size(); ++k) d2 += (feats[a][k] - mean[k]) * (feats[a][k] - mean[k]);
        dist.emplace_back(d2, a);
      }
      std::stable_sort(dist.begin(), dist.end(),
                       [](const auto& l, const auto& r) { return l.first < r.first; });
      for (std::size_t a = 0; a < std::min(m, dist.size()); ++a) keep.push_back(idx[dist[a].second]);
    }
    if (keep.empty()) continue;
    auto& slot = out.by_class[cls];
    for (std::size_t i : keep) slot.push_back(session_data.records[i]);
  }
  return out;
}

bool DdnetState::operator==(const DdnetState& o) const {
  return schedule == o.schedule && sessions_done == o.sessions_done && current == o.current &&
         base == o.base && protos == o.protos && base_protos == o.base_protos &&
         selector == o.selector && memory == o.memory && rng.state() == o.rng.state();
}

DdnetState init_state(const SessionSchedule& schedule, std::size_t input_dim, const RunConfig& cfg) {
  cfg.validate();
  schedule.validate();
  DdnetState s;
  s.schedule = schedule;
  s.rng = Rng(derive_seed(cfg.seed, 1));
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
  dims.push_back(cfg.feature_dim);
  Rng init(derive_seed(cfg.seed, 2));
  s.current = Mlp::random(dims, init);
  const std::size_t head_dims[] = {cfg.hidden[cfg.trunk_layers - 1], cfg.feature_dim};
  s.selector.head = Mlp::random(head_dims, init);
  s.selector.alpha = cfg.alpha;
  s.selector.margin = cfg.gamma;
  s.selector.trunk_layers = cfg.trunk_layers;
  return s;
}

namespace {

std::vector<Record> session_records(const FeatureSet& train, std::size_t tau) {
  std::vector<Record> out;
  for (const Record& r : train.records)
    if (r.split == Split::train && r.session == static_cast<int>(tau)) out.push_back(r);
  return out;
}

FeatureSet embed_records(const Extractor& f, const std::vector<Record>& records) {
  FeatureSet out;
  out.dim = f.output_dim();
  for (const Record& r : records) {
    Record e = r;
    e.feature = f.forward(r.feature);
    out.records.push_back(std::move(e));
  }
  return out;
}

// Class means of the pool under `f`; classes of `prior` missing from the pool keep their prior.
PrototypeBank pool_prototypes(const Extractor& f, const std::vector<Record>& pool,
                              const PrototypeBank& prior, std::span<const int> seen) {
  PrototypeBank bank(f.output_dim());
  const PrototypeBank fresh = compute_prototypes(embed_records(f, pool));
  for (int cls : seen) {
    if (fresh.contains(cls)) bank.set(cls, fresh.at(cls));
    else if (prior.contains(cls)) bank.set(cls, prior.at(cls));
    else throw InvalidState("no prototype source for class " + std::to_string(cls));
  }
  return bank;
}

double step_lr(const TrainConfig& tc, double base_lr, std::size_t step, std::size_t total) {
  return tc.cosine ? cosine_lr(step, total, base_lr) : base_lr;
}

std::vector<std::size_t> positions(const std::vector<int>& subset, const std::vector<int>& order) {
  std::vector<std::size_t> out;
  for (int c : subset)
    out.push_back(static_cast<std::size_t>(std::lower_bound(order.begin(), order.end(), c) - order.begin()));
  return out;
}

void train_base_session(DdnetState& s, const FeatureSet& train, const RunConfig& cfg) {
  const TrainConfig tc = cfg.base_train();
  const std::vector<Record> data = session_records(train, 0);
  if (data.empty()) throw InvalidArgument("run_session: no session-0 training records");
  const std::vector<int> seen = s.schedule.classes_up_to(0);

  const std::size_t per_epoch = (data.size() + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total = tc.epochs * per_epoch;
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const PrototypeBank bank = compute_prototypes(embed_records(s.current, data), seen);
    s.rng.shuffle(order);
    for (std::size_t at = 0; at < order.size(); at += tc.batch_size) {
      StepInput in;
      for (std::size_t b = at; b < std::min(at + tc.batch_size, order.size()); ++b) {
        in.inputs.push_back(data[order[b]].feature);
        in.targets.push_back(bank.index_of(data[order[b]].label));
      }
      train_step(s.current, bank, in, {}, step_lr(tc, tc.learning_rate, step++, total));
    }
  }
  s.protos = compute_prototypes(embed_records(s.current, data), seen);
  s.base_protos = s.protos;
  s.base = s.current;
  s.base.set_frozen(true);
  const Extractor& f = s.current;
  FeatureSet d0;
  d0.dim = train.dim;
  d0.records = data;
  s.memory = update_memory(s.memory, d0, cfg.memory, cfg.memory_policy, derive_seed(cfg.seed, 100),
                           [&f](std::span<const double> x) { return f.forward(x); });
  s.current.freeze_all_but_last(cfg.trainable_layers);
}

void train_incremental_session(DdnetState& s, const FeatureSet& train, std::size_t tau,
                               const RunConfig& cfg) {
  const TrainConfig tc = cfg.incremental_train();
  const std::vector<Record> fresh = session_records(train, tau);
  if (fresh.empty())
    throw InvalidArgument("run_session: no training records for session " + std::to_string(tau));
  std::vector<Record> pool = fresh;
  for (Record& r : s.memory.records()) pool.push_back(std::move(r));

  const std::vector<int> seen = s.schedule.classes_up_to(tau);
  const std::vector<int> prev_seen = s.schedule.classes_up_to(tau - 1);
  const std::vector<std::size_t> base_cols = positions(s.schedule.base_classes, seen);
  const std::vector<std::size_t> prev_cols = positions(prev_seen, seen);

  // Teachers are fixed for the whole session: f^0 for base members, f^(tau-1)
  // for pre-order members (sessions 1..tau-1).
  std::vector<Vec> teacher(pool.size());
  std::vector<int> role(pool.size(), 0);  // 0 none, 1 base, 2 pre-order
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const int origin = pool[i].session;
    if (origin == 0) {
      role[i] = 1;
      teacher[i] = logits(s.base.forward(pool[i].feature), s.base_protos);
    } else if (origin >= 1 && origin < static_cast<int>(tau)) {
      role[i] = 2;
      teacher[i] = logits(s.current.forward(pool[i].feature), s.protos);
    }
  }

  const PreorderLoss pre_loss = preorder_loss_for(cfg.arm);
  const SelectorOptions sel_opts{cfg.selector_momentum, cfg.selector_triplet};
  const std::size_t per_epoch = (pool.size() + tc.batch_size - 1) / tc.batch_size;
  const std::size_t total = tc.epochs * per_epoch;
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  PrototypeBank bank;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    bank = pool_prototypes(s.current, pool, s.protos, seen);
    s.rng.shuffle(order);
    for (std::size_t at = 0; at < order.size(); at += tc.batch_size) {
      const std::size_t end = std::min(at + tc.batch_size, order.size());
      StepInput in;
      in.preorder_loss = pre_loss;
      in.rkd_variant = cfg.rkd_variant;
      in.base.columns = base_cols;
      in.preorder.columns = prev_cols;
      std::vector<Vec> base_rows, pre_rows;
      for (std::size_t b = at; b < end; ++b) {
        const std::size_t i = order[b];
        const std::size_t slot = in.inputs.size();
        in.inputs.push_back(pool[i].feature);
        in.targets.push_back(bank.index_of(pool[i].label));
        if (role[i] == 1) {
          in.base.members.push_back(slot);
          base_rows.push_back(teacher[i]);
        } else if (role[i] == 2) {
          in.preorder.members.push_back(slot);
          pre_rows.push_back(teacher[i]);
        }
      }
      in.base.teacher = base_rows.empty() ? Matrix(0, base_cols.size()) : Matrix::from_rows(base_rows);
      in.preorder.teacher = pre_rows.empty() ? Matrix(0, prev_cols.size()) : Matrix::from_rows(pre_rows);

      const double lr = step_lr(tc, tc.learning_rate, step, total);
      train_step(s.current, bank, in, {cfg.w1, cfg.w2}, lr);

      SelectorBatch sb;
      for (std::size_t b = at; b < end; ++b) {
        const Record& r = pool[order[b]];
        sb.inputs.push_back(s.current.forward_prefix(r.feature, s.selector.trunk_layers));
        sb.is_base.push_back(s.schedule.is_base(r.label) ? 1 : 0);
      }
      const bool both = std::count(sb.is_base.begin(), sb.is_base.end(), 1) > 0 &&
                        std::count(sb.is_base.begin(), sb.is_base.end(), 0) > 0;
      if (s.selector.initialized || both)
        selector_train_step(s.selector, sb, {cfg.beta1, cfg.beta2},
                            step_lr(tc, cfg.selector_lr, step, total), sel_opts);
      ++step;
    }
  }
  s.protos = pool_prototypes(s.current, pool, s.protos, seen);

  FeatureSet dt;
  dt.dim = train.dim;
  dt.records = fresh;
  const Extractor& f = s.current;
  s.memory = update_memory(s.memory, dt, cfg.memory, cfg.memory_policy,
                           derive_seed(cfg.seed, 100 + tau),
                           [&f](std::span<const double> x) { return f.forward(x); });
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

void run_session(DdnetState& state, const FeatureSet& train, std::size_t tau, const RunConfig& cfg) {
  cfg.validate();
  if (state.sessions_done != tau)
    throw InvalidState("run_session: session " + std::to_string(tau) + " requested after " +
                       std::to_string(state.sessions_done) + " completed sessions");
  if (tau > state.schedule.incremental_sessions())
    throw InvalidState("run_session: schedule has no session " + std::to_string(tau));
  if (tau == 0) train_base_session(state, train, cfg);
  else train_incremental_session(state, train, tau, cfg);
  state.sessions_done = tau + 1;
}

unsigned evaluation_threads() {
  const char* env = std::getenv("DKD_LAB_THREADS");
  if (!env || !*env) return 1;
  const long v = std::strtol(env, nullptr, 10);
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (v < 1) return 1;
  return std::min<unsigned>(static_cast<unsigned>(v), hw);
}

MetricRow evaluate(const DdnetState& state, const FeatureSet& test, std::size_t tau,
                   unsigned threads) {
  if (tau >= state.sessions_done) throw InvalidState("evaluate: session not trained yet");
  const std::vector<int> seen = state.schedule.classes_up_to(tau);
  if (state.protos.classes() != seen)
    throw InvalidState("evaluate: state is not positioned at session " + std::to_string(tau));

  std::vector<const Record*> samples;
  std::set<int> covered;
  for (const Record& r : test.records) {
    if (r.split != Split::test) continue;
    if (!std::binary_search(seen.begin(), seen.end(), r.label)) continue;
    samples.push_back(&r);
    covered.insert(r.label);
  }
  for (int c : seen)
    if (!covered.count(c))
      throw InvalidArgument("evaluate: test set has no samples of class " + std::to_string(c));

  const std::vector<std::size_t> base_cols = positions(state.schedule.base_classes, seen);
  const bool use_selector = tau > 0 && state.selector.initialized;

  struct Outcome {
    std::size_t fused, current;
    bool routed_base;
  };
  std::vector<Outcome> outcome(samples.size());
  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const Vec& x = samples[i]->feature;
      const Vec zc = logits(state.current.forward(x), state.protos);
      const Vec zb_base = logits(state.base.forward(x), state.base_protos);
      Vec zb(seen.size(), 0.0);
      for (std::size_t k = 0; k < base_cols.size(); ++k) zb[base_cols[k]] = zb_base[k];
      const Vec zg = use_selector
                         ? selector_logits(state.selector,
                                           state.current.forward_prefix(x, state.selector.trunk_layers))
                         : Vec{0.0, 1.0};
      outcome[i] = {argmax(fuse(zg, zc, zb)), argmax(zc), argmax(zg) == kBase};
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(samples.size())));
  if (threads == 1) {
    work(0, samples.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (samples.size() + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t lo = t * chunk, hi = std::min(samples.size(), lo + chunk);
      if (lo < hi) pool.emplace_back(work, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  // Counting runs in sample order regardless of the worker split.
  MetricRow row;
  row.session = tau;
  row.samples = samples.size();
  std::size_t hit = 0, hit_cur = 0, route_ok = 0, nb = 0, hb = 0, nn = 0, hn = 0;
  std::vector<std::size_t> task_n(tau + 1, 0), task_hit(tau + 1, 0);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int label = samples[i]->label;
    const int task = state.schedule.session_of(label);
    const bool base = task == 0;
    const bool ok = seen[outcome[i].fused] == label;
    hit += ok;
    hit_cur += seen[outcome[i].current] == label;
    route_ok += outcome[i].routed_base == base;
    (base ? nb : nn) += 1;
    (base ? hb : hn) += ok;
    ++task_n[static_cast<std::size_t>(task)];
    task_hit[static_cast<std::size_t>(task)] += ok;
  }
  auto pct = [](std::size_t a, std::size_t b) {
    return b ? 100.0 * static_cast<double>(a) / static_cast<double>(b) : 0.0;
  };
  row.acc = pct(hit, samples.size());
  row.acc_current = pct(hit_cur, samples.size());
  row.sa = pct(route_ok, samples.size());
  row.acc_b = pct(hb, nb);
  row.acc_n = pct(hn, nn);
  for (std::size_t j = 0; j <= tau; ++j) row.task_acc.push_back(pct(task_hit[j], task_n[j]));
  return row;
}

KrAd kr_ad(double acc0, double acc_tau) {
  if (!(acc0 > 0.0)) throw InvalidArgument("kr_ad: KR is undefined for a zero base accuracy");
  return {acc_tau / acc0 * 100.0, acc0 - acc_tau};
}

AaAf aa_af(std::span<const double> overall, const std::vector<std::vector<double>>& tasks) {
  if (overall.empty() || overall.size() != tasks.size())
    throw InvalidArgument("aa_af: need one overall accuracy and one task row per session");
  for (std::size_t l = 0; l < tasks.size(); ++l)
    if (tasks[l].size() != l + 1)
      throw InvalidArgument("aa_af: row " + std::to_string(l) + " must hold " +
                            std::to_string(l + 1) + " task accuracies");
  AaAf out;
  double sum = 0.0;
  for (double a : overall) sum += a;
  out.aa = sum / static_cast<double>(overall.size());

  const std::size_t last = tasks.size() - 1;
  if (last == 0) return out;  // single session: forgetting undefined
  out.af_defined = true;
  double af = 0.0;
  for (std::size_t j = 0; j < last; ++j) {
    double best = -1e300;
    for (std::size_t l = j; l < last; ++l) best = std::max(best, tasks[l][j] - tasks[last][j]);
    af += best;
  }
  out.af = af / static_cast<double>(last);
  return out;
}

namespace {

void check_schedule_shape(const SessionSchedule& s, const RunConfig& cfg) {
  if (cfg.way && !s.incremental.empty() && s.way != cfg.way)
    throw ConfigError("data has " + std::to_string(s.way) + "-way sessions, config expects " +
                      std::to_string(cfg.way));
  if (cfg.shot && !s.incremental.empty() && s.shot != cfg.shot)
    throw ConfigError("data has " + std::to_string(s.shot) + "-shot sessions, config expects " +
                      std::to_string(cfg.shot));
}

}  // namespace

BaseRun run_base(const FeatureSet& data, const RunConfig& cfg) {
  cfg.validate();
  const SessionSchedule schedule = schedule_from_features(data);
  check_schedule_shape(schedule, cfg);
  BaseRun out{init_state(schedule, data.dim, cfg), {}};
  run_session(out.state, data, 0, cfg);
  out.row0 = evaluate(out.state, data, 0, evaluation_threads());
  const KrAd k = kr_ad(out.row0.acc, out.row0.acc);
  out.row0.kr = k.kr;
  out.row0.ad = k.ad;
  return out;
}

RunReport continue_experiment(const BaseRun& base, const FeatureSet& data, const RunConfig& cfg) {
  RunReport rep;
  rep.config = cfg;
  rep.final_state = base.state;
  rep.schedule = base.state.schedule;
  rep.rows.push_back(base.row0);
  for (std::size_t tau = 1; tau <= rep.schedule.incremental_sessions(); ++tau) {
    run_session(rep.final_state, data, tau, cfg);
    MetricRow row = evaluate(rep.final_state, data, tau, evaluation_threads());
    const KrAd k = kr_ad(rep.rows.front().acc, row.acc);
    row.kr = k.kr;
    row.ad = k.ad;
    rep.rows.push_back(std::move(row));
  }
  std::vector<double> overall;
  std::vector<std::vector<double>> tasks;
  for (const MetricRow& r : rep.rows) {
    overall.push_back(r.acc);
    tasks.push_back(r.task_acc);
  }
  rep.summary = aa_af(overall, tasks);
  return rep;
}

RunReport run_experiment(const FeatureSet& data, const RunConfig& cfg) {
  return continue_experiment(run_base(data, cfg), data, cfg);
}

std::vector<AblationRow> run_ablation(const FeatureSet& data, const RunConfig& cfg) {
  const BaseRun base = run_base(data, cfg);
  std::vector<AblationRow> rows;
  for (Arm arm : {Arm::ikd, Arm::ikd_rkd, Arm::ikd_dkd})
    for (bool momentum : {false, true})
      for (bool triplet : {false, true}) {
        RunConfig c = cfg;
        c.arm = arm;
        c.selector_momentum = momentum;
        c.selector_triplet = triplet;
        const RunReport rep = continue_experiment(base, data, c);
        const MetricRow& last = rep.rows.back();
        rows.push_back({arm, momentum, triplet, last.acc_b, last.acc_n, last.sa, last.kr});
      }
  return rows;
}

std::vector<AttackRow> inject_outlier_attack(const FeatureSet& data, const RunConfig& cfg,
                                             std::span<const double> pcts,
                                             std::span<const Arm> arms, std::uint64_t seed) {
  for (double p : pcts)
    if (!(p >= 0.0 && p <= 100.0)) throw InvalidArgument("attack: pct must be in [0,100]");
  const BaseRun base = run_base(data, cfg);
  std::vector<AttackRow> rows;
  for (Arm arm : arms) {
    RunConfig c = cfg;
    c.arm = arm;
    for (double p : pcts) {
      const FeatureSet attacked = make_outliers(data, p, seed, 1);
      const RunReport rep = continue_experiment(base, attacked, c);
      const double acc0 = rep.rows.front().acc_current;
      const double accf = rep.rows.back().acc_current;
      rows.push_back({arm, p, acc0, accf, acc0 - accf});
    }
  }
  return rows;
}

}  // namespace dkd
