#ifndef DKD_DKD_H
#define DKD_DKD_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DKD_API __declspec(dllexport)
#else
#define DKD_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dkd_status {
  DKD_OK = 0,
  DKD_ERR_INVALID_ARGUMENT = 1,
  DKD_ERR_INVALID_STATE = 2,
  DKD_ERR_PARSE = 3,
  DKD_ERR_SCHEMA = 4,
  DKD_ERR_IO = 5,
  DKD_ERR_CONFIG = 6,
  DKD_ERR_INTERNAL = 7
} dkd_status;

/* Message of the last failed call on this thread; "" after a success. */
DKD_API const char* dkd_last_error(void);
DKD_API const char* dkd_version(void);
/* Releases strings returned through char** out-parameters. */
DKD_API void dkd_string_free(char* s);

/* ---- kernels ---------------------------------------------------------- */

DKD_API dkd_status dkd_softmax(const double* v, size_t n, double* out);
/* KL(softmax(vt) || softmax(vs)). */
DKD_API dkd_status dkd_kd_divergence(const double* vs, const double* vt, size_t n, double* out);
DKD_API dkd_status dkd_kd_gradient(const double* vs, const double* vt, size_t n, double* out);

typedef enum dkd_loss_kind {
  DKD_LOSS_IKD = 0,
  DKD_LOSS_RKD_INNER = 1,
  DKD_LOSS_RKD_EUCLID = 2,
  DKD_LOSS_RKD_COSINE = 3,
  DKD_LOSS_DKD = 4
} dkd_loss_kind;

/* Row-major n x c student/teacher logits. grad (n x c) may be NULL. */
DKD_API dkd_status dkd_batch_loss(dkd_loss_kind kind, const double* zs, const double* zt, size_t n,
                                  size_t c, double* loss, double* grad);

typedef struct dkd_pollution {
  size_t dkd_affected;
  size_t dkd_total;
  size_t rkd_affected_rows;
  size_t rkd_total_rows;
  size_t dkd_affected_observed;
  size_t rkd_affected_rows_observed;
} dkd_pollution;

DKD_API dkd_status dkd_pollution_report(size_t n, size_t outlier_index, uint64_t seed,
                                        dkd_pollution* out);

/* ---- datasets ---------------------------------------------------------- */

typedef struct dkd_dataset dkd_dataset;

/* spec_json: generator spec object; NULL or "{}" for defaults. */
DKD_API dkd_status dkd_dataset_generate(const char* spec_json, dkd_dataset** out);
/* Format from the extension: .jsonl for JSON lines, CSV otherwise. */
DKD_API dkd_status dkd_dataset_load(const char* path, dkd_dataset** out);
/* Appends src's records to dst; dimensions must agree unless dst is empty. */
DKD_API dkd_status dkd_dataset_append(dkd_dataset* dst, const dkd_dataset* src);

typedef enum dkd_split_filter { DKD_SPLIT_ALL = 0, DKD_SPLIT_TRAIN = 1, DKD_SPLIT_TEST = 2 } dkd_split_filter;

DKD_API dkd_status dkd_dataset_save(const dkd_dataset* ds, const char* path, dkd_split_filter which);
DKD_API size_t dkd_dataset_size(const dkd_dataset* ds);
DKD_API size_t dkd_dataset_dim(const dkd_dataset* ds);
DKD_API void dkd_dataset_free(dkd_dataset* ds);

/* Fills defaults and validates; returns the canonical JSON text. */
DKD_API dkd_status dkd_genspec_normalize(const char* spec_json, char** out_json);
DKD_API dkd_status dkd_config_normalize(const char* config_json, char** out_json);

/* ---- experiments -------------------------------------------------------- */

typedef struct dkd_run dkd_run;

typedef struct dkd_metric_row {
  size_t session;
  double acc, acc_b, acc_n, sa, kr, ad, acc_current;
} dkd_metric_row;

DKD_API dkd_status dkd_run_experiment(const dkd_dataset* data, const char* config_json, dkd_run** out);
DKD_API size_t dkd_run_session_count(const dkd_run* run);
DKD_API dkd_status dkd_run_metric(const dkd_run* run, size_t session, dkd_metric_row* out);
DKD_API dkd_status dkd_run_manifest(const dkd_run* run, char** out_json);
DKD_API dkd_status dkd_run_sessions_csv(const dkd_run* run, char** out_csv);
DKD_API dkd_status dkd_run_checkpoint(const dkd_run* run, char** out_json);
DKD_API void dkd_run_free(dkd_run* run);

DKD_API dkd_status dkd_ablate(const dkd_dataset* data, const char* config_json, char** out_csv);
/* arms: names such as "ikd+rkd"; narms == 0 selects ikd+rkd and ikd+dkd. */
DKD_API dkd_status dkd_attack(const dkd_dataset* data, const char* config_json, const double* pcts,
                              size_t npcts, const char* const* arms, size_t narms, uint64_t seed,
                              char** out_csv);

/* ---- verification ------------------------------------------------------- */

DKD_API dkd_status dkd_losscheck(size_t n, size_t c, size_t trials, uint64_t seed, char** out_report,
                                 int* all_passed);
DKD_API dkd_status dkd_compare_manifests(const char* a_json, const char* b_json, char** out_text,
                                         int* identical);

#ifdef __cplusplus
}
#endif

#endif
