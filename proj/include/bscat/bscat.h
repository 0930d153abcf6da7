#ifndef BSCAT_H
#define BSCAT_H

/*
 * C interface to the bscat library: scattering features, exact and sparse
 * GP regression, calibration metrics and pool-based Bayesian optimization.
 *
 * Conventions
 *   - Every fallible call returns a bscat_status. On failure a message is
 *     available from bscat_last_error() on the calling thread until the next
 *     failing call on that thread.
 *   - Matrices are dense, row-major, 64-bit floats.
 *   - Strings returned through char** are heap allocated; release them with
 *     bscat_free_string(). Output pointers are left untouched on failure.
 *   - Model handles are opaque and immutable after creation; a handle may be
 *     shared by threads for concurrent predict calls.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  define BSCAT_API __declspec(dllexport)
#elif defined(__GNUC__)
#  define BSCAT_API __attribute__((visibility("default")))
#else
#  define BSCAT_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum bscat_status {
    BSCAT_OK = 0,
    BSCAT_E_INVALID_ARGUMENT = 1,
    BSCAT_E_INVALID_CONFIG = 2,
    BSCAT_E_SIZE_MISMATCH = 3,
    BSCAT_E_NON_FINITE_INPUT = 4,
    BSCAT_E_CHOLESKY_FAILURE = 5,
    BSCAT_E_IO = 6,
    BSCAT_E_CHECKSUM_MISMATCH = 7,
    BSCAT_E_CONFIG_DIGEST_MISMATCH = 8,
    BSCAT_E_PARSE = 9,
    BSCAT_E_POOL_EXHAUSTED = 10,
    BSCAT_E_TOO_FEW_ROWS = 11,
    BSCAT_E_INTERNAL = 12
} bscat_status;

/* ---- Library ---------------------------------------------------------- */

BSCAT_API const char* bscat_version(void);
/* Stable kebab-case name such as "cholesky-failure". */
BSCAT_API const char* bscat_status_name(bscat_status status);
/* Nonzero for statuses that signal a numerical failure rather than bad input. */
BSCAT_API int bscat_status_is_numerical(bscat_status status);
BSCAT_API const char* bscat_last_error(void);
BSCAT_API void bscat_free_string(char* s);
/* 0 quiet, 1 warn (default), 2 info, 3 debug. */
BSCAT_API bscat_status bscat_set_log_level(int level);

/* ---- Filter bank ------------------------------------------------------ */

/* Littlewood-Paley report as JSON (as_json != 0) or text; j = 0 selects
 * log2(n) - 1. *frame_ok is 1 when the frame bounds hold. */
BSCAT_API bscat_status bscat_filterbank_check(size_t n, size_t j, size_t l, int as_json,
                                              char** report, int* frame_ok);

/* ---- Synthetic data --------------------------------------------------- */

/* task: "blob_count" or "charge_energy". Writes images and manifest.csv
 * under out_dir; *manifest_path receives the manifest location. */
BSCAT_API bscat_status bscat_synth_gen(const char* task, size_t n_train, size_t n_test,
                                       const char* shift, uint64_t seed, size_t image_size,
                                       const char* out_dir, char** manifest_path);

/* ---- Scattering features ---------------------------------------------- */

typedef struct bscat_scatter_options {
    size_t j;          /* scales J; 0 selects log2(N) - 1 */
    size_t l;          /* angles L */
    size_t order;      /* maximum order M, 0..2 */
    const char* variant; /* "windowed", "global" or "rotinv" */
    size_t threads;
} bscat_scatter_options;

BSCAT_API void bscat_scatter_options_default(bscat_scatter_options* opts);

BSCAT_API bscat_status bscat_feature_count(const bscat_scatter_options* opts, size_t image_size,
                                           size_t channels, size_t* dim);

/* images: n x channels x size x size. out: n x dim with dim from
 * bscat_feature_count; out_len is its capacity in doubles. n may be 0. */
BSCAT_API bscat_status bscat_scatter(const double* images, size_t n, size_t channels,
                                     size_t image_size, const bscat_scatter_options* opts,
                                     double* out, size_t out_len);

/* Features of every manifest record, written as a feature cache. */
BSCAT_API bscat_status bscat_features_extract(const char* manifest_path, const char* cache_path,
                                              const bscat_scatter_options* opts, size_t* rows,
                                              size_t* dim);

/* ---- Regression models ------------------------------------------------ */

typedef struct bscat_model bscat_model;

typedef enum bscat_model_kind { BSCAT_MODEL_GP = 0, BSCAT_MODEL_SVGP = 1 } bscat_model_kind;

typedef struct bscat_preprocess_options {
    int standardize;   /* z-score features on the training rows */
    double pca_retain; /* retained variance in (0, 1]; <= 0 disables PCA */
} bscat_preprocess_options;

typedef struct bscat_gp_options {
    const char* kernel; /* "rbf", "matern52", "linear", optionally ",ard" */
    size_t iters;
    double lr;
    uint64_t seed;
    bscat_preprocess_options preprocess;
} bscat_gp_options;

typedef struct bscat_svgp_options {
    const char* kernel;
    size_t inducing;
    size_t batch;
    size_t steps;
    double lr;
    uint64_t seed;
    bscat_preprocess_options preprocess;
} bscat_svgp_options;

BSCAT_API void bscat_gp_options_default(bscat_gp_options* opts);
BSCAT_API void bscat_svgp_options_default(bscat_svgp_options* opts);

/* x: n x d, y: n. */
BSCAT_API bscat_status bscat_gp_fit(const double* x, size_t n, size_t d, const double* y,
                                    const bscat_gp_options* opts, bscat_model** model);
BSCAT_API bscat_status bscat_svgp_fit(const double* x, size_t n, size_t d, const double* y,
                                      const bscat_svgp_options* opts, bscat_model** model);

/* Predictive mean and variance (observation noise included) in target units
 * for n x d inputs. Either output may be NULL. */
BSCAT_API bscat_status bscat_model_predict(const bscat_model* model, const double* x, size_t n,
                                           size_t d, double* mean, double* variance);
BSCAT_API bscat_status bscat_model_info(const bscat_model* model, bscat_model_kind* kind,
                                        size_t* input_dim);
BSCAT_API bscat_status bscat_model_save(const bscat_model* model, const char* path);
BSCAT_API bscat_status bscat_model_load(const char* path, bscat_model** model);
BSCAT_API void bscat_model_free(bscat_model* model);

/* Fits on the train split of a manifest-aligned cache and writes a model
 * file. *summary (optional) receives a JSON description. */
BSCAT_API bscat_status bscat_model_fit_files(bscat_model_kind kind, const char* cache_path,
                                             const char* manifest_path,
                                             const bscat_gp_options* gp_opts,
                                             const bscat_svgp_options* svgp_opts,
                                             const char* model_path, char** summary);

/* Evaluates on the test split. metrics_path and predictions_path may be
 * NULL; *metrics_json (optional) receives the metrics record. */
BSCAT_API bscat_status bscat_model_eval_files(const char* model_path, const char* cache_path,
                                              const char* manifest_path, const char* metrics_path,
                                              const char* predictions_path, char** metrics_json);

/* ---- Metrics ---------------------------------------------------------- */

typedef struct bscat_metrics {
    double rmse;
    double rmse_standardized;
    double nll;
    double qce;
    double pi_mu;
    double pi_sigma;
    size_t n_test;
} bscat_metrics;

/* Metrics of predictive means and variances in target units, standardized
 * with (target_mean, target_std). */
BSCAT_API bscat_status bscat_metrics_compute(const double* mean, const double* variance,
                                             const double* truth, size_t n, double target_mean,
                                             double target_std, bscat_metrics* out);

/* Trivial baseline: training mean and standard deviation for every test point. */
BSCAT_API bscat_status bscat_metrics_trivial(const double* y_train, size_t n_train,
                                             const double* y_test, size_t n_test,
                                             bscat_metrics* out);

/* Predictions file (as written by eval) against a manifest's test split or
 * a one-column CSV with header "target". Either output may be NULL. */
BSCAT_API bscat_status bscat_metrics_report_files(const char* predictions_path,
                                                  const char* truth_path, char** json,
                                                  char** table);

/* ---- Bayesian optimization -------------------------------------------- */

typedef struct bscat_bo_options {
    size_t n_init;
    size_t n_iters;
    size_t pool_size;
    const char* kernel;
    int maximize;
    size_t refit_every;
    size_t gp_iters;
    double gp_lr;
    uint64_t seed;
    int standardize_pool;
} bscat_bo_options;

BSCAT_API void bscat_bo_options_default(bscat_bo_options* opts);

/* pool: n x d, values: n oracle values. random_baseline != 0 runs random
 * search with the same initial design. *trace_csv receives the trace. */
BSCAT_API bscat_status bscat_bo_run(const double* pool, size_t n, size_t d, const double* values,
                                    const bscat_bo_options* opts, int random_baseline,
                                    char** trace_csv);

BSCAT_API bscat_status bscat_bo_run_files(const char* cache_path, const char* manifest_path,
                                          const bscat_bo_options* opts, int random_baseline,
                                          const char* trace_path, char** trace_csv);

/* ---- Pipeline --------------------------------------------------------- */

/* Loads config_path (may be NULL for defaults), applies "key=value"
 * overrides in order and returns the resolved configuration text. */
BSCAT_API bscat_status bscat_pipeline_config(const char* config_path, const char* const* overrides,
                                             size_t n_overrides, char** config_text);

/* Runs the full experiment; *table (optional) receives the aggregate table. */
BSCAT_API bscat_status bscat_pipeline_run(const char* config_path, const char* const* overrides,
                                          size_t n_overrides, char** table);

#ifdef __cplusplus
}
#endif

#endif /* BSCAT_H */
