#pragma once

#include <functional>
#include <map>
#include <span>

#include "dkd/config.hpp"
#include "dkd/featureset.hpp"
#include "dkd/model.hpp"
#include "dkd/schedule.hpp"
#include "dkd/selector.hpp"

namespace dkd {

// Exemplars retained per class; each keeps its session-of-origin tag.
struct MemorySet {
  std::map<int, std::vector<Record>> by_class;

  std::size_t size() const noexcept;
  std::vector<Record> records() const;  // ascending class id
  bool operator==(const MemorySet&) const = default;
};

using Embedding = std::function<Vec(std::span<const double>)>;

// Adds up to m exemplars for every class in `session_data` that is not yet
// in memory. `closest` keeps the samples nearest the class mean in the
// embedding space (identity when `embed` is empty), ties by record order;
// `random` keeps a seeded subset in record order.
MemorySet update_memory(const MemorySet& memory, const FeatureSet& session_data, std::size_t m,
                        MemoryPolicy policy, std::uint64_t seed, const Embedding& embed = {});

// Everything a run carries between sessions.
struct DdnetState {
  SessionSchedule schedule;
  std::size_t sessions_done = 0;
  Extractor current;        // f^tau
  Extractor base;           // f^0, frozen after session 0
  PrototypeBank protos;     // classes seen so far, current branch
  PrototypeBank base_protos;
  SelectorState selector;
  MemorySet memory;
  Rng rng;

  bool operator==(const DdnetState&) const;
};

DdnetState init_state(const SessionSchedule& schedule, std::size_t input_dim, const RunConfig& cfg);

// Trains session tau from the training records tagged with that session plus
// memory. Throws InvalidState unless sessions 0..tau-1 already ran.
void run_session(DdnetState& state, const FeatureSet& train, std::size_t tau, const RunConfig& cfg);

struct MetricRow {
  std::size_t session = 0;
  double acc = 0.0;    // fused prediction, all seen classes
  double acc_b = 0.0;  // base-class test samples
  double acc_n = 0.0;  // novel-class test samples; 0 when there are none
  double sa = 0.0;     // selector routing accuracy
  double kr = 0.0;
  double ad = 0.0;
  double acc_current = 0.0;  // current branch alone
  std::vector<double> task_acc;  // fused accuracy per session's classes, 0..tau
  std::size_t samples = 0;
};

// Worker count for evaluation: DKD_LAB_THREADS if set, else 1.
unsigned evaluation_threads();

// KR/AD of the returned row are left at 0; callers fill them with kr_ad.
MetricRow evaluate(const DdnetState& state, const FeatureSet& test, std::size_t tau,
                   unsigned threads = 1);

struct KrAd {
  double kr = 0.0;
  double ad = 0.0;
};
KrAd kr_ad(double acc0, double acc_tau);

struct AaAf {
  double aa = 0.0;
  double af = 0.0;
  bool af_defined = false;  // false for a single session
};

// overall[l]: overall accuracy after session l. tasks[l][j]: accuracy on
// task j after session l (j <= l).
AaAf aa_af(std::span<const double> overall, const std::vector<std::vector<double>>& tasks);

struct RunReport {
  RunConfig config;
  SessionSchedule schedule;
  std::vector<MetricRow> rows;
  AaAf summary;
  DdnetState final_state;
};

RunReport run_experiment(const FeatureSet& data, const RunConfig& cfg);

// Base session only; the returned state is the shared starting point of
// ablation and attack arms.
struct BaseRun {
  DdnetState state;
  MetricRow row0;
};
BaseRun run_base(const FeatureSet& data, const RunConfig& cfg);

// Remaining sessions from a base run.
RunReport continue_experiment(const BaseRun& base, const FeatureSet& data, const RunConfig& cfg);

struct AblationRow {
  Arm arm;
  bool momentum;
  bool triplet;
  double acc_b, acc_n, sa, kr;
};

// 3 arms x {momentum on/off} x {triplet on/off}, all from one base run.
std::vector<AblationRow> run_ablation(const FeatureSet& data, const RunConfig& cfg);

struct AttackRow {
  Arm arm;
  double pct;
  double acc0;       // current-branch accuracy after session 0
  double acc_final;  // current-branch accuracy after the last session
  double ad;
};

// Each incremental training session gets pct% of its samples replaced by
// outliers (make_outliers, seeded by `seed`); reruns the incremental phase
// per (arm, pct) from one clean base run.
std::vector<AttackRow> inject_outlier_attack(const FeatureSet& data, const RunConfig& cfg,
                                             std::span<const double> pcts,
                                             std::span<const Arm> arms, std::uint64_t seed);

}  // namespace dkd
