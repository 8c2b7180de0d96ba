#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "dkd/datagen.hpp"
#include "dkd/rng.hpp"
#include "dkd/schedule.hpp"
#include "oracle.hpp"

using namespace dkd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dkd_tests";
  fs::create_directories(dir);
  return dir / name;
}

FeatureSet session_set(std::size_t per_session, int sessions) {
  FeatureSet s;
  s.dim = 3;
  Rng rng(1);
  for (int t = 0; t < sessions; ++t)
    for (std::size_t i = 0; i < per_session; ++i)
      s.add({{rng.normal(), rng.normal(), rng.normal()}, t, t, Split::train});
  return s;
}

}  // namespace

TEST_SUITE("schedule") {
  TEST_CASE("session counts") {
    CHECK(build_schedule(100, 60, 5, 5, 0).incremental_sessions() == 8);
    CHECK(build_schedule(200, 100, 10, 5, 0).incremental_sessions() == 10);
    const SessionSchedule s = build_schedule(10, 6, 2, 5, 3);
    CHECK(s.incremental_sessions() == 2);
    CHECK(s.total_sessions() == 3);
    CHECK(s.base_classes.size() == 6);
    CHECK_NOTHROW(s.validate());
  }

  TEST_CASE("partition is a seeded permutation") {
    const SessionSchedule a = build_schedule(20, 8, 3, 2, 9), b = build_schedule(20, 8, 3, 2, 9);
    CHECK(a == b);
    std::set<int> all(a.base_classes.begin(), a.base_classes.end());
    for (const auto& s : a.incremental) {
      CHECK(s.size() == 3);
      CHECK(std::is_sorted(s.begin(), s.end()));
      all.insert(s.begin(), s.end());
    }
    CHECK(all.size() == 20);
    for (int c = 0; c < 20; ++c) {
      const int t = a.session_of(c);
      CHECK(t >= 0);
      CHECK(a.is_base(c) == (t == 0));
    }
    CHECK(a.session_of(99) == -1);
    const auto upto = a.classes_up_to(2);
    CHECK(upto.size() == 8 + 6);
    CHECK(std::is_sorted(upto.begin(), upto.end()));
    CHECK_THROWS_AS(build_schedule(10, 6, 3, 5, 0), InvalidArgument);
    CHECK_THROWS_AS(build_schedule(10, 0, 2, 5, 0), InvalidArgument);
  }

  TEST_CASE("schedule recovered from session tags") {
    GenSpec g;
    g.seed = 4;
    const FeatureSet d = gen_gaussian_mixture(g);
    const SessionSchedule s = schedule_from_features(d);
    CHECK(s == gen_schedule(g));
    CHECK(s.shot == 5);
    CHECK(s.way == 2);
  }
}

TEST_SUITE("datagen") {
  TEST_CASE("mixture sizes and tags") {
    GenSpec g;
    const FeatureSet d = gen_gaussian_mixture(g);
    const SessionSchedule s = gen_schedule(g);
    std::size_t train = 0, test = 0;
    for (const Record& r : d.records) {
      CHECK(r.feature.size() == 16);
      CHECK(r.session == s.session_of(r.label));
      (r.split == Split::train ? train : test) += 1;
    }
    CHECK(train == 6 * 50 + 4 * 5);
    CHECK(test == 10 * 30);
  }

  TEST_CASE("same seed, same set; different seed, different set") {
    GenSpec g;
    g.seed = 12;
    CHECK(gen_gaussian_mixture(g) == gen_gaussian_mixture(g));
    GenSpec h = g;
    h.seed = 13;
    CHECK_FALSE(gen_gaussian_mixture(g) == gen_gaussian_mixture(h));
  }

  TEST_CASE("small within-class spread collapses onto the centers") {
    GenSpec g;
    g.within_std = 1e-12;
    const FeatureSet d = gen_gaussian_mixture(g);
    std::map<int, Vec> first;
    for (const Record& r : d.records) {
      auto [it, fresh] = first.emplace(r.label, r.feature);
      if (!fresh)
        for (std::size_t k = 0; k < r.feature.size(); ++k) CHECK(std::abs(r.feature[k] - it->second[k]) < 1e-10);
    }
  }

  TEST_CASE("nearest centroid separates spread 10, std 0.1") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      GenSpec g;
      g.classes = 2;
      g.base_classes = 2;
      g.spread = 10.0;
      g.within_std = 0.1;
      g.seed = seed;
      const FeatureSet d = gen_gaussian_mixture(g);
      oracle::M xs;
      std::vector<int> ys;
      for (const Record& r : d.records)
        if (r.split == Split::train) {
          xs.push_back(r.feature);
          ys.push_back(r.label);
        }
      CHECK(oracle::nearest_centroid_accuracy(xs, ys) == 1.0);
    }
  }

  TEST_CASE("GenSpec validation") {
    GenSpec g;
    g.dim = 0;
    CHECK_THROWS_AS(gen_gaussian_mixture(g), InvalidArgument);
    g = {};
    g.within_std = 0.0;
    CHECK_THROWS_AS(gen_gaussian_mixture(g), InvalidArgument);
  }
}

TEST_SUITE("features_io") {
  TEST_CASE("round trip in both formats") {
    GenSpec g;
    g.seed = 2;
    const FeatureSet d = gen_gaussian_mixture(g);
    for (const char* name : {"rt.csv", "rt.jsonl"}) {
      const std::string path = scratch(name).string();
      save_features(d, path);
      CHECK(load_features(path) == d);
    }
  }

  TEST_CASE("header-only file is an empty set") {
    const FeatureSet e = read_features("label,split,session,f0,f1\n", FeatureFormat::csv);
    CHECK(e.empty());
    CHECK(e.dim == 2);
    CHECK(read_features("", FeatureFormat::jsonl).empty());
  }

  TEST_CASE("hand-written CSV") {
    const std::string text =
        "label,split,session,f0,f1\n"
        "3,train,0,1.5,-2\n"
        "0,test,0,0,0.25\n"
        "7,train,1,1e-3,4\n";
    const FeatureSet s = read_features(text, FeatureFormat::csv);
    REQUIRE(s.size() == 3);
    CHECK(s.records[0] == Record{{1.5, -2.0}, 3, 0, Split::train});
    CHECK(s.records[1] == Record{{0.0, 0.25}, 0, 0, Split::test});
    CHECK(s.records[2] == Record{{0.001, 4.0}, 7, 1, Split::train});
    CHECK(write_features(s, FeatureFormat::csv) ==
          "label,split,session,f0,f1\n3,train,0,1.5,-2\n0,test,0,0,0.25\n7,train,1,0.001,4\n");
  }

  TEST_CASE("malformed input reports the line") {
    try {
      read_features("label,split,session,f0\n1,train,0,0.5\n1,train,0,abc\n", FeatureFormat::csv);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
    }
    CHECK_THROWS_AS(read_features("label,split,session,f0\n1,train,0,0.5,9\n", FeatureFormat::csv),
                    SchemaError);
    CHECK_THROWS_AS(read_features("label,split,session,f0\n-1,train,0,0.5\n", FeatureFormat::csv),
                    SchemaError);
    CHECK_THROWS_AS(read_features("x,y\n", FeatureFormat::csv), ParseError);
    try {
      read_features("{\"label\":1,\"split\":\"train\",\"session\":0,\"feature\":[1]}\n{oops\n",
                    FeatureFormat::jsonl);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
    CHECK_THROWS_AS(load_features(scratch("missing.csv").string()), IoError);
    CHECK_THROWS_AS(format_for_path("data.txt"), InvalidArgument);
  }
}

TEST_SUITE("outliers") {
  TEST_CASE("counts per session") {
    const FeatureSet s = session_set(50, 2);
    std::vector<std::size_t> idx;
    make_outliers(s, 10.0, 3, 0, &idx);
    CHECK(idx.size() == 10);
    make_outliers(s, 20.0, 3, 1, &idx);
    CHECK(idx.size() == 10);
    for (std::size_t i : idx) CHECK(s.records[i].session == 1);
    make_outliers(s, 100.0, 3, 0, &idx);
    CHECK(idx.size() == 100);
  }

  TEST_CASE("pct 0 leaves the set unchanged, pct 100 replaces every train feature") {
    FeatureSet s = session_set(10, 1);
    s.add({{0.0, 0.0, 0.0}, 0, 0, Split::test});
    CHECK(make_outliers(s, 0.0, 5) == s);
    const FeatureSet all = make_outliers(s, 100.0, 5);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const bool train = s.records[i].split == Split::train;
      CHECK((all.records[i].feature != s.records[i].feature) == train);
      CHECK(all.records[i].label == s.records[i].label);
      CHECK(all.records[i].session == s.records[i].session);
    }
  }

  TEST_CASE("replaced indices are reproducible by seed") {
    const FeatureSet s = session_set(50, 1);
    std::vector<std::size_t> a, b, c;
    const FeatureSet x = make_outliers(s, 10.0, 8, 0, &a);
    const FeatureSet y = make_outliers(s, 10.0, 8, 0, &b);
    make_outliers(s, 10.0, 9, 0, &c);
    CHECK(a == b);
    CHECK(x == y);
    CHECK(a.size() == 5);
    CHECK(a != c);
    CHECK(std::is_sorted(a.begin(), a.end()));
    CHECK_THROWS_AS(make_outliers(s, 101.0, 1), InvalidArgument);
  }

  TEST_CASE("outliers sit far from the data") {
    const FeatureSet s = session_set(50, 1);
    std::vector<std::size_t> idx;
    const FeatureSet o = make_outliers(s, 10.0, 2, 0, &idx);
    for (std::size_t i : idx) {
      double n2 = 0.0;
      for (double v : o.records[i].feature) n2 += v * v;
      CHECK(std::sqrt(n2) > 5.0);
    }
  }
}

TEST_SUITE("rng") {
  TEST_CASE("reproducible and restorable") {
    Rng a(77), b(77);
    for (int i = 0; i < 10; ++i) CHECK(a.next() == b.next());
    a.normal();
    const std::string st = a.state();
    const double x = a.normal(), y = a.uniform();
    Rng c;
    c.set_state(st);
    CHECK(c.normal() == x);
    CHECK(c.uniform() == y);
    CHECK_THROWS_AS(c.set_state("garbage"), ParseError);
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    for (int i = 0; i < 1000; ++i) {
      const auto v = a.below(7);
      CHECK(v < 7);
      const double u = a.uniform();
      CHECK(u >= 0.0);
      CHECK(u < 1.0);
    }
  }
}
