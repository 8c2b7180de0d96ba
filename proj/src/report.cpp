#include "dkd/report.hpp"

#include <cmath>
#include <cstdio>
#include <set>

namespace dkd {
namespace {

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v == 0.0 ? 0.0 : v);  // no "-0.000000"
  return buf;
}

std::string csv_row(std::initializer_list<std::string> cells) {
  std::string out;
  for (const std::string& c : cells) {
    if (!out.empty()) out += ',';
    out += c;
  }
  return out + '\n';
}

nlohmann::ordered_json row_json(const MetricRow& r) {
  nlohmann::ordered_json j;
  j["session"] = r.session;
  j["acc"] = r.acc;
  j["acc_b"] = r.acc_b;
  j["acc_n"] = r.acc_n;
  j["sa"] = r.sa;
  j["kr"] = r.kr;
  j["ad"] = r.ad;
  j["acc_current"] = r.acc_current;
  j["task_acc"] = r.task_acc;
  j["samples"] = r.samples;
  return j;
}

std::string render(const nlohmann::json& v) { return v.is_null() ? "(absent)" : v.dump(); }

}  // namespace

std::string sessions_csv(const std::vector<MetricRow>& rows) {
  std::string out = std::string(kSessionsHeader) + '\n';
  for (const MetricRow& r : rows)
    out += csv_row({std::to_string(r.session), fixed(r.acc), fixed(r.acc_b), fixed(r.acc_n),
                    fixed(r.sa), fixed(r.kr), fixed(r.ad)});
  return out;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = std::string(kAblationHeader) + '\n';
  for (const AblationRow& r : rows)
    out += csv_row({std::string(to_string(r.arm)), r.momentum ? "on" : "off", r.triplet ? "on" : "off",
                    fixed(r.acc_b), fixed(r.acc_n), fixed(r.sa), fixed(r.kr)});
  return out;
}

std::string attack_csv(const std::vector<AttackRow>& rows) {
  std::string out = std::string(kAttackHeader) + '\n';
  for (const AttackRow& r : rows)
    out += csv_row({std::string(to_string(r.arm)), fixed(r.pct), fixed(r.acc0), fixed(r.acc_final),
                    fixed(r.ad)});
  return out;
}

nlohmann::ordered_json manifest_json(const RunReport& report) {
  nlohmann::ordered_json j;
  j["format"] = "dkd-run-manifest";
  j["version"] = 1;
  j["seed"] = report.config.seed;
  j["config"] = report.config.to_json();
  nlohmann::ordered_json sched;
  sched["base_classes"] = report.schedule.base_classes;
  sched["incremental"] = report.schedule.incremental;
  sched["way"] = report.schedule.way;
  sched["shot"] = report.schedule.shot;
  j["schedule"] = std::move(sched);
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const MetricRow& r : report.rows) rows.push_back(row_json(r));
  j["sessions"] = std::move(rows);
  nlohmann::ordered_json summary;
  summary["aa"] = report.summary.aa;
  summary["af"] = report.summary.af;
  summary["af_defined"] = report.summary.af_defined;
  summary["kr"] = report.rows.empty() ? 0.0 : report.rows.back().kr;
  summary["ad"] = report.rows.empty() ? 0.0 : report.rows.back().ad;
  j["summary"] = std::move(summary);
  return j;
}

ManifestDiff compare_manifests(const nlohmann::json& a, const nlohmann::json& b) {
  for (const nlohmann::json* m : {&a, &b})
    if (!m->is_object() || m->value("format", "") != "dkd-run-manifest")
      throw SchemaError("not a dkd run manifest");
  ManifestDiff diff;
  auto note = [&](const std::string& what, const nlohmann::json& x, const nlohmann::json& y) {
    diff.identical = false;
    diff.text += what + ": " + render(x) + " -> " + render(y) + '\n';
  };

  const nlohmann::json ca = a.value("config", nlohmann::json::object());
  const nlohmann::json cb = b.value("config", nlohmann::json::object());
  std::set<std::string> keys;
  for (const nlohmann::json* c : {&ca, &cb})
    for (auto it = c->begin(); it != c->end(); ++it) keys.insert(it.key());
  for (const std::string& k : keys) {
    const nlohmann::json x = ca.value(k, nlohmann::json()), y = cb.value(k, nlohmann::json());
    if (x != y) note("config." + k, x, y);
  }
  if (a.value("schedule", nlohmann::json()) != b.value("schedule", nlohmann::json()))
    note("schedule", a.value("schedule", nlohmann::json()), b.value("schedule", nlohmann::json()));

  const nlohmann::json ra = a.value("sessions", nlohmann::json::array());
  const nlohmann::json rb = b.value("sessions", nlohmann::json::array());
  const std::size_t n = std::max(ra.size(), rb.size());
  for (std::size_t i = 0; i < n; ++i) {
    const nlohmann::json x = i < ra.size() ? ra[i] : nlohmann::json::object();
    const nlohmann::json y = i < rb.size() ? rb[i] : nlohmann::json::object();
    for (const char* key : {"acc", "acc_b", "acc_n", "sa", "kr", "ad", "acc_current"}) {
      const nlohmann::json u = x.value(key, nlohmann::json()), v = y.value(key, nlohmann::json());
      if (u != v) note("session " + std::to_string(i) + " " + key, u, v);
    }
  }
  const nlohmann::json sa = a.value("summary", nlohmann::json::object());
  const nlohmann::json sb = b.value("summary", nlohmann::json::object());
  for (const char* key : {"aa", "af", "kr", "ad"}) {
    const nlohmann::json u = sa.value(key, nlohmann::json()), v = sb.value(key, nlohmann::json());
    if (u != v) note(std::string("summary ") + key, u, v);
  }
  if (diff.identical) diff.text = "manifests match\n";
  return diff;
}

}  // namespace dkd
