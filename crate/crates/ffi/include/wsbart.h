#ifndef WSBART_H
#define WSBART_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Values 2-4 mirror the command-line exit codes.
 */
typedef enum WsbStatus {
  WSB_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  WSB_STATUS_NULL_ARGUMENT = 1,
  WSB_STATUS_USAGE = 2,
  WSB_STATUS_DATA = 3,
  WSB_STATUS_NUMERIC = 4,
  /**
   * An internal panic was caught at the boundary.
   */
  WSB_STATUS_INTERNAL = 5,
} WsbStatus;

/**
 * Longitudinal dataset under construction.
 */
typedef struct WsbDataset WsbDataset;

/**
 * Fitted model.
 */
typedef struct WsbModel WsbModel;

/**
 * Sampler and policy settings for [`wsb_fit`]. Zero counts keep defaults.
 */
typedef struct WsbFitOptions {
  /**
   * Absolute bandwidth; `<= 0` selects the default rule.
   */
  double bandwidth;
  /**
   * Fixed lag.
   */
  double lag;
  size_t trees;
  size_t iterations;
  size_t burn_in;
  size_t thin;
  uint64_t seed;
} WsbFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *wsb_last_error(void);

/**
 * Creates an empty dataset.
 */
struct WsbDataset *wsb_dataset_new(void);

/**
 * Loads a long-format CSV (`subject_id,kind,time,v1,...`).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum WsbStatus wsb_dataset_load_csv(const char *path, struct WsbDataset **out);

/**
 * Appends one subject. `covariate_values` is row-major `n_cov × dim`.
 *
 * # Safety
 * Pointers must reference arrays of the stated lengths; `id` must be a
 * NUL-terminated string.
 */
enum WsbStatus wsb_dataset_add_subject(struct WsbDataset *dataset,
                                       const char *id,
                                       const double *response_times,
                                       const double *response_values,
                                       size_t n_resp,
                                       const double *covariate_times,
                                       const double *covariate_values,
                                       size_t n_cov,
                                       size_t dim);

/**
 * Number of subjects added so far (0 for a null handle).
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t wsb_dataset_len(const struct WsbDataset *dataset);

/**
 * # Safety
 * `dataset` must be null or a handle not yet freed.
 */
void wsb_dataset_free(struct WsbDataset *dataset);

/**
 * Default options: default bandwidth, no lag, default sampler budget.
 */
struct WsbFitOptions wsb_fit_options_default(void);

/**
 * Fits `method` (e.g. `"wsb-st"`, `"li"`) to `dataset`.
 *
 * # Safety
 * `dataset` must be a live handle, `method` a NUL-terminated string and
 * `out` a valid pointer.
 */
enum WsbStatus wsb_fit(const struct WsbDataset *dataset,
                       const char *method,
                       struct WsbFitOptions options,
                       struct WsbModel **out);

/**
 * Posterior-mean predictions at synchronous queries: `x` is row-major
 * `n × covariate_dim`, `t` has `n` entries, `out` receives `n` values.
 *
 * # Safety
 * Pointers must reference arrays of the stated lengths.
 */
enum WsbStatus wsb_model_predict(const struct WsbModel *model,
                                 const double *x,
                                 const double *t,
                                 size_t n,
                                 double *out);

/**
 * Covariates per query row (0 for a null handle).
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t wsb_model_covariate_dim(const struct WsbModel *model);

/**
 * Bandwidth used by the fit, or NaN for alignment methods.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
double wsb_model_bandwidth(const struct WsbModel *model);

/**
 * Lag used by the fit (NaN for a null handle).
 *
 * # Safety
 * `model` must be null or a live handle.
 */
double wsb_model_lag(const struct WsbModel *model);

/**
 * Writes the model artifact to `path`.
 *
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum WsbStatus wsb_model_save(const struct WsbModel *model, const char *path);

/**
 * Reads a model artifact.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum WsbStatus wsb_model_load(const char *path, struct WsbModel **out);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void wsb_model_free(struct WsbModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WSBART_H */
