#include <cmath>

#include "doctest.h"
#include "dkd/datagen.hpp"
#include "dkd/protocol.hpp"
#include "oracle.hpp"

using namespace dkd;

namespace {

RunConfig quick_config(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.epochs = 30;
  c.incremental_epochs = 30;
  c.memory = 5;
  c.trainable_layers = 3;
  return c;
}

FeatureSet toy_data(std::uint64_t seed, std::size_t classes = 10) {
  GenSpec g;
  g.classes = classes;
  g.seed = seed;
  return gen_gaussian_mixture(g);
}

FeatureSet class_set(const std::vector<Vec>& xs, int label) {
  FeatureSet s;
  s.dim = xs.front().size();
  for (const Vec& x : xs) s.add({x, label, 1, Split::train});
  return s;
}

std::size_t argmax(const Vec& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

TEST_SUITE("memory") {
  TEST_CASE("M = 0 and M >= K") {
    const FeatureSet s = class_set({{0.0}, {1.0}, {2.0}}, 4);
    CHECK(update_memory({}, s, 0, MemoryPolicy::closest, 0).size() == 0);
    CHECK(update_memory({}, s, 0, MemoryPolicy::random, 0).size() == 0);
    for (MemoryPolicy p : {MemoryPolicy::closest, MemoryPolicy::random}) {
      const MemorySet m = update_memory({}, s, 5, p, 0);
      REQUIRE(m.by_class.at(4).size() == 3);
      CHECK(m.records().size() == 3);
    }
  }

  TEST_CASE("closest exemplar matches exhaustive search") {
    std::mt19937_64 g(19);
    for (int t = 0; t < 30; ++t) {
      const auto xs = oracle::random_matrix(g, 7, 3, 2.0);
      const FeatureSet s = class_set(xs, 2);
      const auto mean = oracle::class_means(xs, std::vector<int>(7, 2))[0].second;
      std::size_t best = 0;
      double bd = 1e300;
      for (std::size_t i = 0; i < xs.size(); ++i) {
        double d = 0.0;
        for (std::size_t k = 0; k < 3; ++k) d += (xs[i][k] - mean[k]) * (xs[i][k] - mean[k]);
        if (d < bd) {
          bd = d;
          best = i;
        }
      }
      const MemorySet m = update_memory({}, s, 1, MemoryPolicy::closest, 0);
      CHECK(m.by_class.at(2).front().feature == xs[best]);
    }
  }

  TEST_CASE("existing classes are kept, embedding is honoured") {
    const FeatureSet a = class_set({{0.0}, {10.0}, {4.0}}, 1);
    const MemorySet m1 = update_memory({}, a, 1, MemoryPolicy::closest, 0);
    CHECK(m1.by_class.at(1).front().feature == Vec{4.0});
    const MemorySet again = update_memory(m1, class_set({{100.0}}, 1), 1, MemoryPolicy::closest, 0);
    CHECK(again == m1);
    const Embedding sq = [](std::span<const double> x) { return Vec{x[0] * x[0]}; };
    const FeatureSet four = class_set({{0.0}, {10.0}, {4.0}, {6.0}}, 1);
    CHECK(update_memory({}, four, 1, MemoryPolicy::closest, 0).by_class.at(1).front().feature == Vec{4.0});
    CHECK(update_memory({}, four, 1, MemoryPolicy::closest, 0, sq).by_class.at(1).front().feature == Vec{6.0});
    const MemorySet r1 = update_memory({}, a, 2, MemoryPolicy::random, 3);
    CHECK(r1 == update_memory({}, a, 2, MemoryPolicy::random, 3));
  }
}

TEST_SUITE("metrics") {
  TEST_CASE("kr_ad") {
    const KrAd a = kr_ad(80.0, 60.0);
    CHECK(a.kr == doctest::Approx(75.0));
    CHECK(a.ad == doctest::Approx(20.0));
    const KrAd b = kr_ad(42.5, 42.5);
    CHECK(b.kr == 100.0);
    CHECK(b.ad == 0.0);
    CHECK(kr_ad(61.79, 47.38).kr == doctest::Approx(76.68).epsilon(1e-4));
    CHECK_THROWS_AS(kr_ad(0.0, 10.0), InvalidArgument);
  }

  TEST_CASE("aa_af") {
    const std::vector<double> overall{90.0, 80.0, 70.0};
    const std::vector<std::vector<double>> flat{{50.0}, {50.0, 50.0}, {50.0, 50.0, 50.0}};
    const AaAf c = aa_af(overall, flat);
    CHECK(c.af == 0.0);
    CHECK(c.af_defined);
    CHECK(c.aa == doctest::Approx(80.0));

    const std::vector<double> one{64.0};
    const AaAf s = aa_af(one, {{64.0}});
    CHECK_FALSE(s.af_defined);
    CHECK(s.af == 0.0);
    CHECK(s.aa == 64.0);

    // Task 0: best earlier 90, final 70 -> 20. Task 1: best earlier 60, final 45 -> 15.
    const std::vector<std::vector<double>> hand{{80.0}, {90.0, 60.0}, {70.0, 45.0, 55.0}};
    const AaAf h = aa_af(std::vector<double>{80.0, 75.0, 60.0}, hand);
    CHECK(h.af == doctest::Approx(17.5));
    CHECK(h.af == doctest::Approx(oracle::forgetting(hand)));
    CHECK(h.aa == doctest::Approx(215.0 / 3.0));
    CHECK_THROWS_AS(aa_af(std::vector<double>{1.0, 2.0}, {{1.0}, {1.0}}), InvalidArgument);
  }
}

TEST_SUITE("protocol") {
  TEST_CASE("sessions must run in order") {
    const FeatureSet d = toy_data(1);
    const RunConfig cfg = quick_config(1);
    DdnetState st = init_state(schedule_from_features(d), d.dim, cfg);
    CHECK_THROWS_AS(run_session(st, d, 1, cfg), InvalidState);
    CHECK_THROWS_AS(evaluate(st, d, 0), InvalidState);
    run_session(st, d, 0, cfg);
    CHECK_THROWS_AS(run_session(st, d, 0, cfg), InvalidState);
    for (std::size_t l = 0; l < st.base.depth(); ++l) {
      CHECK(st.base.layers()[l].weight == st.current.layers()[l].weight);
      CHECK(st.base.layers()[l].frozen);
    }
    CHECK(st.protos.size() == 6);
    CHECK(st.memory.size() == 6 * 5);
  }

  TEST_CASE("evaluation matches a counting oracle") {
    const FeatureSet d = toy_data(2);
    const RunReport rep = run_experiment(d, quick_config(2));
    REQUIRE(rep.rows.size() == 3);
    const DdnetState& st = rep.final_state;
    const std::size_t tau = 2;
    const auto seen = st.schedule.classes_up_to(tau);
    std::size_t n = 0, hit = 0, hit_cur = 0, route = 0, nb = 0, hb = 0, nn = 0, hn = 0;
    std::vector<std::size_t> tn(3, 0), th(3, 0);
    for (const Record& r : d.records) {
      if (r.split != Split::test) continue;
      const Vec zc = logits(st.current.forward(r.feature), st.protos);
      const Vec zb0 = logits(st.base.forward(r.feature), st.base_protos);
      Vec zb(seen.size(), 0.0);
      for (std::size_t k = 0; k < st.schedule.base_classes.size(); ++k)
        zb[static_cast<std::size_t>(std::find(seen.begin(), seen.end(), st.schedule.base_classes[k]) -
                                    seen.begin())] = zb0[k];
      const Vec zg = selector_logits(st.selector, st.current.forward_prefix(r.feature, st.selector.trunk_layers));
      Vec fused(seen.size());
      for (std::size_t k = 0; k < seen.size(); ++k) fused[k] = zg[0] * zc[k] + zg[1] * zb[k];
      const bool base = st.schedule.is_base(r.label);
      const bool ok = seen[argmax(fused)] == r.label;
      ++n;
      hit += ok;
      hit_cur += seen[argmax(zc)] == r.label;
      route += (zg[1] > zg[0]) == base;
      (base ? nb : nn)++;
      (base ? hb : hn) += ok;
      const auto t = static_cast<std::size_t>(st.schedule.session_of(r.label));
      ++tn[t];
      th[t] += ok;
    }
    const MetricRow& row = rep.rows.back();
    CHECK(row.samples == n);
    CHECK(row.acc == doctest::Approx(100.0 * hit / n));
    CHECK(row.acc_current == doctest::Approx(100.0 * hit_cur / n));
    CHECK(row.sa == doctest::Approx(100.0 * route / n));
    CHECK(row.acc_b == doctest::Approx(100.0 * hb / nb));
    CHECK(row.acc_n == doctest::Approx(100.0 * hn / nn));
    for (std::size_t t = 0; t < 3; ++t) CHECK(row.task_acc[t] == doctest::Approx(100.0 * th[t] / tn[t]));
    CHECK(row.kr == doctest::Approx(100.0 * row.acc / rep.rows.front().acc));
    CHECK(row.ad == doctest::Approx(rep.rows.front().acc - row.acc));
  }

  TEST_CASE("a selector routing everything to the novel branch scores the novel fraction") {
    const FeatureSet d = toy_data(3);
    RunReport rep = run_experiment(d, quick_config(3));
    DdnetState st = rep.final_state;
    Layer& head = st.selector.head.layers().back();
    std::fill(head.weight.data().begin(), head.weight.data().end(), 0.0);
    std::fill(head.bias.begin(), head.bias.end(), 1.0);
    std::fill(st.selector.proto_novel.begin(), st.selector.proto_novel.end(), 50.0);
    std::fill(st.selector.proto_base.begin(), st.selector.proto_base.end(), 0.0);
    const MetricRow row = evaluate(st, d, 2);
    std::size_t novel = 0, total = 0;
    for (const Record& r : d.records)
      if (r.split == Split::test) {
        ++total;
        novel += !st.schedule.is_base(r.label);
      }
    CHECK(row.sa == doctest::Approx(100.0 * novel / total));
    CHECK(row.acc == doctest::Approx(row.acc_current));
  }

  TEST_CASE("session 0 routes to the base branch") {
    const FeatureSet d = toy_data(4);
    const BaseRun b = run_base(d, quick_config(4));
    CHECK(b.row0.sa == 100.0);
    CHECK(b.row0.acc_n == 0.0);
    CHECK(b.row0.kr == 100.0);
    CHECK(b.row0.ad == 0.0);
    CHECK(b.row0.acc == b.row0.acc_b);
  }

  TEST_CASE("with one incremental session the pre-order term is inert") {
    GenSpec g;
    g.classes = 8;
    g.seed = 5;
    const FeatureSet d = gen_gaussian_mixture(g);
    RunConfig a = quick_config(5), b = a;
    a.arm = Arm::ikd;
    b.arm = Arm::ikd_dkd;
    const RunReport ra = run_experiment(d, a), rb = run_experiment(d, b);
    REQUIRE(ra.rows.size() == 2);
    CHECK(ra.final_state == rb.final_state);
    CHECK(ra.rows.back().acc == rb.rows.back().acc);
  }

  TEST_CASE("zero distillation weights make the arms coincide") {
    const FeatureSet d = toy_data(6);
    RunConfig c = quick_config(6);
    c.w1 = c.w2 = c.beta1 = 0.0;
    RunConfig r = c, k = c;
    r.arm = Arm::ikd_rkd;
    k.arm = Arm::ikd_dkd;
    const RunReport a = run_experiment(d, c), b = run_experiment(d, r), e = run_experiment(d, k);
    CHECK(a.final_state == b.final_state);
    CHECK(a.final_state == e.final_state);
  }

  TEST_CASE("runs are deterministic and thread count does not matter") {
    const FeatureSet d = toy_data(7);
    const RunConfig c = quick_config(7);
    const RunReport a = run_experiment(d, c), b = run_experiment(d, c);
    CHECK(a.final_state == b.final_state);
    for (std::size_t i = 0; i < a.rows.size(); ++i) CHECK(a.rows[i].acc == b.rows[i].acc);
    const MetricRow one = evaluate(a.final_state, d, 2, 1), many = evaluate(a.final_state, d, 2, 4);
    CHECK(one.acc == many.acc);
    CHECK(one.sa == many.sa);
    CHECK(one.task_acc == many.task_acc);
  }

  TEST_CASE("seed-pinned baseline: without IKD, session-0 class accuracy does not rise") {
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
      const FeatureSet d = toy_data(seed);
      RunConfig c = quick_config(seed);
      c.w1 = 0.0;
      c.epochs = c.incremental_epochs = 200;
      const RunReport rep = run_experiment(d, c);
      for (std::size_t t = 1; t < rep.rows.size(); ++t)
        CHECK(rep.rows[t].task_acc[0] <= rep.rows[t - 1].task_acc[0]);
    }
  }

  TEST_CASE("ablation grid and attack rows") {
    const FeatureSet d = toy_data(8);
    RunConfig c = quick_config(8);
    c.epochs = c.incremental_epochs = 10;
    const auto rows = run_ablation(d, c);
    CHECK(rows.size() == 12);

    const double pcts[] = {0.0, 1.0, 5.0, 20.0};
    const Arm arms[] = {Arm::ikd_rkd, Arm::ikd_dkd};
    const auto atk = inject_outlier_attack(d, c, pcts, arms, 8);
    REQUIRE(atk.size() == 8);
    RunConfig clean = c;
    clean.arm = Arm::ikd_dkd;
    const RunReport ref = run_experiment(d, clean);
    const double clean_ad = ref.rows.front().acc_current - ref.rows.back().acc_current;
    CHECK(atk[4].pct == 0.0);
    CHECK(atk[4].ad == clean_ad);
    CHECK(atk[4].acc_final == ref.rows.back().acc_current);
    CHECK_THROWS_AS(inject_outlier_attack(d, c, std::vector<double>{-1.0}, arms, 0), InvalidArgument);
  }

  TEST_CASE("schedule shape is checked against the config") {
    const FeatureSet d = toy_data(9);
    RunConfig c = quick_config(9);
    c.way = 3;
    CHECK_THROWS_AS(run_base(d, c), ConfigError);
    c.way = 2;
    c.shot = 5;
    CHECK_NOTHROW(run_base(d, c));
  }
}
