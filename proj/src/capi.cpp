#include "dkd/dkd.h"

#include <cstring>
#include <string>

#include "json.hpp"

#include "dkd/config.hpp"
#include "dkd/datagen.hpp"
#include "dkd/distill.hpp"
#include "dkd/losscheck.hpp"
#include "dkd/numkernel.hpp"
#include "dkd/protocol.hpp"
#include "dkd/report.hpp"
#include "dkd/serialize.hpp"

struct dkd_dataset {
  dkd::FeatureSet set;
};

struct dkd_run {
  dkd::RunReport report;
};

namespace {

thread_local std::string g_last_error;

dkd_status fail(dkd_status code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

template <class F>
dkd_status guarded(F&& body) {
  try {
    body();
    g_last_error.clear();
    return DKD_OK;
  } catch (const dkd::ConfigError& e) {
    return fail(DKD_ERR_CONFIG, e.what());
  } catch (const dkd::InvalidArgument& e) {
    return fail(DKD_ERR_INVALID_ARGUMENT, e.what());
  } catch (const dkd::InvalidState& e) {
    return fail(DKD_ERR_INVALID_STATE, e.what());
  } catch (const dkd::ParseError& e) {
    return fail(DKD_ERR_PARSE, e.what());
  } catch (const dkd::SchemaError& e) {
    return fail(DKD_ERR_SCHEMA, e.what());
  } catch (const dkd::IoError& e) {
    return fail(DKD_ERR_IO, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(DKD_ERR_PARSE, e.what());
  } catch (const std::exception& e) {
    return fail(DKD_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(DKD_ERR_INTERNAL, "unknown error");
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw dkd::InvalidArgument(what);
}

char* dup(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

nlohmann::json parse_object(const char* text, bool config) {
  if (!text || !*text) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    if (config) throw dkd::ConfigError(std::string("config is not valid JSON: ") + e.what());
    throw dkd::ParseError(e.what(), 0);
  }
}

dkd::RunConfig parse_config(const char* text) {
  return dkd::RunConfig::from_json(parse_object(text, true));
}

dkd::Matrix view(const double* z, std::size_t n, std::size_t c) {
  dkd::Matrix m(n, c);
  std::copy(z, z + n * c, m.data().begin());
  return m;
}

}  // namespace

extern "C" {

const char* dkd_last_error(void) { return g_last_error.c_str(); }
const char* dkd_version(void) { return "1.0.0"; }
void dkd_string_free(char* s) { delete[] s; }

dkd_status dkd_softmax(const double* v, size_t n, double* out) {
  return guarded([&] {
    require(v && out, "dkd_softmax: null pointer");
    const dkd::Vec p = dkd::softmax({v, n});
    std::copy(p.begin(), p.end(), out);
  });
}

dkd_status dkd_kd_divergence(const double* vs, const double* vt, size_t n, double* out) {
  return guarded([&] {
    require(vs && vt && out, "dkd_kd_divergence: null pointer");
    *out = dkd::kd_divergence({vs, n}, {vt, n});
  });
}

dkd_status dkd_kd_gradient(const double* vs, const double* vt, size_t n, double* out) {
  return guarded([&] {
    require(vs && vt && out, "dkd_kd_gradient: null pointer");
    const dkd::Vec g = dkd::kd_gradient({vs, n}, {vt, n});
    std::copy(g.begin(), g.end(), out);
  });
}

dkd_status dkd_batch_loss(dkd_loss_kind kind, const double* zs, const double* zt, size_t n, size_t c,
                          double* loss, double* grad) {
  return guarded([&] {
    require(zs && zt && loss, "dkd_batch_loss: null pointer");
    require(n >= 1 && c >= 1, "dkd_batch_loss: empty batch");
    const dkd::Matrix s = view(zs, n, c), t = view(zt, n, c);
    dkd::Matrix g;
    switch (kind) {
      case DKD_LOSS_IKD:
        *loss = dkd::ikd_loss(s, t);
        if (grad) g = dkd::ikd_grad(s, t);
        break;
      case DKD_LOSS_RKD_INNER:
      case DKD_LOSS_RKD_EUCLID:
      case DKD_LOSS_RKD_COSINE: {
        const auto v = kind == DKD_LOSS_RKD_INNER    ? dkd::RkdVariant::inner
                       : kind == DKD_LOSS_RKD_EUCLID ? dkd::RkdVariant::euclid
                                                     : dkd::RkdVariant::cosine;
        *loss = dkd::rkd_loss(s, t, v);
        if (grad) g = dkd::rkd_grad(s, t, v);
        break;
      }
      case DKD_LOSS_DKD:
        *loss = dkd::dkd_loss(s, t);
        if (grad) g = dkd::dkd_grad(s, t);
        break;
      default:
        throw dkd::InvalidArgument("dkd_batch_loss: unknown loss kind");
    }
    if (grad) std::copy(g.data().begin(), g.data().end(), grad);
  });
}

dkd_status dkd_pollution_report(size_t n, size_t outlier_index, uint64_t seed, dkd_pollution* out) {
  return guarded([&] {
    require(out, "dkd_pollution_report: null pointer");
    const dkd::PollutionReport r = dkd::pollution_report(n, outlier_index, seed);
    *out = {r.dkd_affected, r.dkd_total, r.rkd_affected_rows, r.rkd_total_rows,
            r.dkd_affected_observed, r.rkd_affected_rows_observed};
  });
}

dkd_status dkd_dataset_generate(const char* spec_json, dkd_dataset** out) {
  return guarded([&] {
    require(out, "dkd_dataset_generate: null pointer");
    const dkd::GenSpec spec = dkd::genspec_from_json(parse_object(spec_json, true));
    *out = new dkd_dataset{dkd::gen_gaussian_mixture(spec)};
  });
}

dkd_status dkd_dataset_load(const char* path, dkd_dataset** out) {
  return guarded([&] {
    require(path && out, "dkd_dataset_load: null pointer");
    *out = new dkd_dataset{dkd::load_features(path)};
  });
}

dkd_status dkd_dataset_append(dkd_dataset* dst, const dkd_dataset* src) {
  return guarded([&] {
    require(dst && src, "dkd_dataset_append: null pointer");
    if (dst->set.empty() && dst->set.dim == 0) dst->set.dim = src->set.dim;
    if (!src->set.empty() && src->set.dim != dst->set.dim)
      throw dkd::SchemaError("dkd_dataset_append: dimension " + std::to_string(src->set.dim) +
                             " does not match " + std::to_string(dst->set.dim));
    for (const dkd::Record& r : src->set.records) dst->set.add(r);
  });
}

dkd_status dkd_dataset_save(const dkd_dataset* ds, const char* path, dkd_split_filter which) {
  return guarded([&] {
    require(ds && path, "dkd_dataset_save: null pointer");
    switch (which) {
      case DKD_SPLIT_ALL: dkd::save_features(ds->set, path); break;
      case DKD_SPLIT_TRAIN: dkd::save_features(ds->set.filter_split(dkd::Split::train), path); break;
      case DKD_SPLIT_TEST: dkd::save_features(ds->set.filter_split(dkd::Split::test), path); break;
      default: throw dkd::InvalidArgument("dkd_dataset_save: unknown split filter");
    }
  });
}

size_t dkd_dataset_size(const dkd_dataset* ds) { return ds ? ds->set.size() : 0; }
size_t dkd_dataset_dim(const dkd_dataset* ds) { return ds ? ds->set.dim : 0; }
void dkd_dataset_free(dkd_dataset* ds) { delete ds; }

dkd_status dkd_genspec_normalize(const char* spec_json, char** out_json) {
  return guarded([&] {
    require(out_json, "dkd_genspec_normalize: null pointer");
    *out_json = dup(dkd::genspec_to_json(dkd::genspec_from_json(parse_object(spec_json, true))).dump(2));
  });
}

dkd_status dkd_config_normalize(const char* config_json, char** out_json) {
  return guarded([&] {
    require(out_json, "dkd_config_normalize: null pointer");
    *out_json = dup(parse_config(config_json).to_json().dump(2));
  });
}

dkd_status dkd_run_experiment(const dkd_dataset* data, const char* config_json, dkd_run** out) {
  return guarded([&] {
    require(data && out, "dkd_run_experiment: null pointer");
    const dkd::RunConfig cfg = parse_config(config_json);
    *out = new dkd_run{dkd::run_experiment(data->set, cfg)};
  });
}

size_t dkd_run_session_count(const dkd_run* run) { return run ? run->report.rows.size() : 0; }

dkd_status dkd_run_metric(const dkd_run* run, size_t session, dkd_metric_row* out) {
  return guarded([&] {
    require(run && out, "dkd_run_metric: null pointer");
    require(session < run->report.rows.size(), "dkd_run_metric: session out of range");
    const dkd::MetricRow& r = run->report.rows[session];
    *out = {r.session, r.acc, r.acc_b, r.acc_n, r.sa, r.kr, r.ad, r.acc_current};
  });
}

dkd_status dkd_run_manifest(const dkd_run* run, char** out_json) {
  return guarded([&] {
    require(run && out_json, "dkd_run_manifest: null pointer");
    *out_json = dup(dkd::manifest_json(run->report).dump(2) + "\n");
  });
}

dkd_status dkd_run_sessions_csv(const dkd_run* run, char** out_csv) {
  return guarded([&] {
    require(run && out_csv, "dkd_run_sessions_csv: null pointer");
    *out_csv = dup(dkd::sessions_csv(run->report.rows));
  });
}

dkd_status dkd_run_checkpoint(const dkd_run* run, char** out_json) {
  return guarded([&] {
    require(run && out_json, "dkd_run_checkpoint: null pointer");
    *out_json = dup(dkd::state_to_json(run->report.final_state).dump(1) + "\n");
  });
}

void dkd_run_free(dkd_run* run) { delete run; }

dkd_status dkd_ablate(const dkd_dataset* data, const char* config_json, char** out_csv) {
  return guarded([&] {
    require(data && out_csv, "dkd_ablate: null pointer");
    *out_csv = dup(dkd::ablation_csv(dkd::run_ablation(data->set, parse_config(config_json))));
  });
}

dkd_status dkd_attack(const dkd_dataset* data, const char* config_json, const double* pcts,
                      size_t npcts, const char* const* arms, size_t narms, uint64_t seed,
                      char** out_csv) {
  return guarded([&] {
    require(data && out_csv && (pcts || npcts == 0) && (arms || narms == 0), "dkd_attack: null pointer");
    require(npcts > 0, "dkd_attack: empty percentage list");
    std::vector<dkd::Arm> arm_list;
    for (size_t i = 0; i < narms; ++i) arm_list.push_back(dkd::parse_arm(arms[i]));
    if (arm_list.empty()) arm_list = {dkd::Arm::ikd_rkd, dkd::Arm::ikd_dkd};
    const auto rows = dkd::inject_outlier_attack(data->set, parse_config(config_json), {pcts, npcts},
                                                 arm_list, seed);
    *out_csv = dup(dkd::attack_csv(rows));
  });
}

dkd_status dkd_losscheck(size_t n, size_t c, size_t trials, uint64_t seed, char** out_report,
                         int* all_passed) {
  return guarded([&] {
    require(out_report && all_passed, "dkd_losscheck: null pointer");
    const dkd::LossCheckReport r = dkd::run_losscheck({n, c, trials, seed});
    *out_report = dup(r.text());
    *all_passed = r.passed() ? 1 : 0;
  });
}

dkd_status dkd_compare_manifests(const char* a_json, const char* b_json, char** out_text,
                                 int* identical) {
  return guarded([&] {
    require(a_json && b_json && out_text && identical, "dkd_compare_manifests: null pointer");
    const dkd::ManifestDiff d =
        dkd::compare_manifests(parse_object(a_json, false), parse_object(b_json, false));
    *out_text = dup(d.text);
    *identical = d.identical ? 1 : 0;
  });
}

}  // extern "C"
