#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "dkd/dkd.h"

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  dkd_string_free(s);
  return out;
}

std::string scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "dkd_capi_tests";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

constexpr const char* kQuick =
    R"({"epochs": 20, "incremental_epochs": 20, "memory": 5, "trainable_layers": 3, "seed": 4})";

}  // namespace

TEST_SUITE("capi") {
  TEST_CASE("version and kernels") {
    CHECK(std::string(dkd_version()) == "1.0.0");
    const double v[] = {0.0, std::log(3.0)}, u[] = {0.0, 0.0};
    double p[2];
    REQUIRE(dkd_softmax(v, 2, p) == DKD_OK);
    CHECK(p[1] == doctest::Approx(0.75));
    double kd = 0.0;
    REQUIRE(dkd_kd_divergence(u, v, 2, &kd) == DKD_OK);
    CHECK(kd == doctest::Approx(0.130812).epsilon(1e-6));
    double g[2];
    REQUIRE(dkd_kd_gradient(u, v, 2, g) == DKD_OK);
    CHECK(g[0] == doctest::Approx(0.25));
    CHECK(dkd_softmax(v, 0, p) == DKD_ERR_INVALID_ARGUMENT);
    CHECK(std::strlen(dkd_last_error()) > 0);
    CHECK(dkd_softmax(nullptr, 2, p) == DKD_ERR_INVALID_ARGUMENT);
    CHECK(dkd_softmax(v, 2, p) == DKD_OK);
    CHECK(std::string(dkd_last_error()).empty());
  }

  TEST_CASE("batch losses") {
    const double zs[] = {0.1, 0.5, -0.3, 1.0, 0.2, 0.0}, zt[] = {0.3, 0.1, 0.0, 0.5, -0.2, 0.4};
    for (dkd_loss_kind k : {DKD_LOSS_IKD, DKD_LOSS_RKD_INNER, DKD_LOSS_RKD_EUCLID, DKD_LOSS_RKD_COSINE,
                            DKD_LOSS_DKD}) {
      double loss = -1.0, grad[6];
      REQUIRE(dkd_batch_loss(k, zs, zt, 2, 3, &loss, grad) == DKD_OK);
      CHECK(loss >= 0.0);
      double same = -1.0;
      REQUIRE(dkd_batch_loss(k, zs, zs, 2, 3, &same, nullptr) == DKD_OK);
      CHECK(same == 0.0);
    }
    double loss;
    CHECK(dkd_batch_loss(DKD_LOSS_DKD, zs, zt, 1, 3, &loss, nullptr) == DKD_ERR_INVALID_ARGUMENT);
    CHECK(dkd_batch_loss(static_cast<dkd_loss_kind>(42), zs, zt, 2, 3, &loss, nullptr) ==
          DKD_ERR_INVALID_ARGUMENT);
    dkd_pollution pr{};
    REQUIRE(dkd_pollution_report(4, 3, 0, &pr) == DKD_OK);
    CHECK(pr.dkd_affected == 6);
    CHECK(pr.dkd_total == 12);
    CHECK(pr.rkd_affected_rows == 4);
    CHECK(pr.dkd_affected_observed == 6);
  }

  TEST_CASE("datasets") {
    dkd_dataset* ds = nullptr;
    REQUIRE(dkd_dataset_generate(R"({"seed": 3, "dim": 8})", &ds) == DKD_OK);
    CHECK(dkd_dataset_dim(ds) == 8);
    const std::size_t n = dkd_dataset_size(ds);
    CHECK(n == 6 * 50 + 4 * 5 + 10 * 30);
    const std::string train = scratch("train.csv"), test = scratch("test.jsonl");
    REQUIRE(dkd_dataset_save(ds, train.c_str(), DKD_SPLIT_TRAIN) == DKD_OK);
    REQUIRE(dkd_dataset_save(ds, test.c_str(), DKD_SPLIT_TEST) == DKD_OK);
    dkd_dataset *a = nullptr, *b = nullptr;
    REQUIRE(dkd_dataset_load(train.c_str(), &a) == DKD_OK);
    REQUIRE(dkd_dataset_load(test.c_str(), &b) == DKD_OK);
    CHECK(dkd_dataset_size(a) == 320);
    REQUIRE(dkd_dataset_append(a, b) == DKD_OK);
    CHECK(dkd_dataset_size(a) == n);
    dkd_dataset* other = nullptr;
    REQUIRE(dkd_dataset_generate(R"({"dim": 4})", &other) == DKD_OK);
    CHECK(dkd_dataset_append(a, other) == DKD_ERR_SCHEMA);
    CHECK(dkd_dataset_generate(R"({"bogus": 1})", &other) == DKD_ERR_CONFIG);
    CHECK(dkd_dataset_load(scratch("absent.csv").c_str(), &other) == DKD_ERR_IO);
    dkd_dataset_free(other);
    dkd_dataset_free(a);
    dkd_dataset_free(b);
    dkd_dataset_free(ds);
    dkd_dataset_free(nullptr);
  }

  TEST_CASE("normalization") {
    char* out = nullptr;
    REQUIRE(dkd_config_normalize(R"({"w1": 2})", &out) == DKD_OK);
    const std::string cfg = take(out);
    CHECK(cfg.find("\"w1\": 2") != std::string::npos);
    CHECK(cfg.find("\"beta2\": 0.8") != std::string::npos);
    CHECK(dkd_config_normalize(R"({"nope": 2})", &out) == DKD_ERR_CONFIG);
    CHECK(dkd_config_normalize("{", &out) == DKD_ERR_CONFIG);
    REQUIRE(dkd_genspec_normalize(nullptr, &out) == DKD_OK);
    CHECK(take(out).find("\"classes\": 10") != std::string::npos);
  }

  TEST_CASE("experiment handles") {
    dkd_dataset* ds = nullptr;
    REQUIRE(dkd_dataset_generate(R"({"seed": 4})", &ds) == DKD_OK);
    dkd_run *r1 = nullptr, *r2 = nullptr;
    REQUIRE(dkd_run_experiment(ds, kQuick, &r1) == DKD_OK);
    REQUIRE(dkd_run_experiment(ds, kQuick, &r2) == DKD_OK);
    CHECK(dkd_run_session_count(r1) == 3);
    dkd_metric_row row{};
    REQUIRE(dkd_run_metric(r1, 2, &row) == DKD_OK);
    CHECK(row.session == 2);
    CHECK(row.acc >= 0.0);
    CHECK(dkd_run_metric(r1, 3, &row) == DKD_ERR_INVALID_ARGUMENT);
    char *c1 = nullptr, *c2 = nullptr, *m1 = nullptr, *m2 = nullptr, *ck = nullptr;
    REQUIRE(dkd_run_sessions_csv(r1, &c1) == DKD_OK);
    REQUIRE(dkd_run_sessions_csv(r2, &c2) == DKD_OK);
    CHECK(take(c1) == take(c2));
    REQUIRE(dkd_run_manifest(r1, &m1) == DKD_OK);
    REQUIRE(dkd_run_manifest(r2, &m2) == DKD_OK);
    const std::string a = take(m1), b = take(m2);
    char* diff = nullptr;
    int same = 0;
    REQUIRE(dkd_compare_manifests(a.c_str(), b.c_str(), &diff, &same) == DKD_OK);
    CHECK(same == 1);
    take(diff);
    CHECK(dkd_compare_manifests(a.c_str(), "{}", &diff, &same) == DKD_ERR_SCHEMA);
    REQUIRE(dkd_run_checkpoint(r1, &ck) == DKD_OK);
    CHECK(take(ck).find("dkd-checkpoint") != std::string::npos);
    CHECK(dkd_run_experiment(ds, R"({"arm": "nope"})", &r2) == DKD_ERR_CONFIG);
    dkd_run_free(r1);
    dkd_run_free(r2);
    dkd_dataset_free(ds);
  }

  TEST_CASE("ablation, attack and losscheck") {
    dkd_dataset* ds = nullptr;
    REQUIRE(dkd_dataset_generate(R"({"seed": 5})", &ds) == DKD_OK);
    const char* cfg = R"({"epochs": 5, "incremental_epochs": 5})";
    char* csv = nullptr;
    REQUIRE(dkd_ablate(ds, cfg, &csv) == DKD_OK);
    const std::string abl = take(csv);
    CHECK(std::count(abl.begin(), abl.end(), '\n') == 13);
    const double pcts[] = {1.0, 5.0, 10.0, 20.0};
    REQUIRE(dkd_attack(ds, cfg, pcts, 4, nullptr, 0, 5, &csv) == DKD_OK);
    const std::string atk = take(csv);
    CHECK(std::count(atk.begin(), atk.end(), '\n') == 9);
    const char* arms[] = {"ikd"};
    REQUIRE(dkd_attack(ds, cfg, pcts, 1, arms, 1, 5, &csv) == DKD_OK);
    take(csv);
    const char* bad[] = {"xkd"};
    CHECK(dkd_attack(ds, cfg, pcts, 1, bad, 1, 5, &csv) == DKD_ERR_CONFIG);
    const double neg[] = {-5.0};
    CHECK(dkd_attack(ds, cfg, neg, 1, nullptr, 0, 5, &csv) == DKD_ERR_INVALID_ARGUMENT);
    dkd_dataset_free(ds);

    char* rep = nullptr;
    int ok = 0;
    REQUIRE(dkd_losscheck(4, 6, 10, 1, &rep, &ok) == DKD_OK);
    const std::string text = take(rep);
    CHECK(ok == 1);
    CHECK(text.rfind("losscheck n=4 c=6 trials=10 seed=1", 0) == 0);
    CHECK(dkd_losscheck(1, 6, 10, 1, &rep, &ok) == DKD_ERR_INVALID_ARGUMENT);
  }
}
