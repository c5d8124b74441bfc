#ifndef POPGRID_H
#define POPGRID_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * How covariate slopes vary across settlement types.
 */
typedef enum PgEffectMode {
  PG_EFFECT_MODE_RANDOM = 0,
  PG_EFFECT_MODE_FIXED = 1,
  /**
   * Decided per covariate from a short pilot fit.
   */
  PG_EFFECT_MODE_AUTO = 2,
} PgEffectMode;

typedef enum PgStatus {
  PG_STATUS_OK = 0,
  PG_STATUS_NULL_POINTER = 1,
  PG_STATUS_INVALID_UTF8 = 2,
  PG_STATUS_IO = 3,
  PG_STATUS_PARSE = 4,
  PG_STATUS_INVALID_INPUT = 5,
  PG_STATUS_MISMATCH = 6,
  PG_STATUS_SAMPLER = 7,
  PG_STATUS_CONFIG = 8,
  PG_STATUS_BUFFER_TOO_SMALL = 9,
  PG_STATUS_PANIC = 10,
} PgStatus;

typedef struct PgClusterSet PgClusterSet;

typedef struct PgDraws PgDraws;

typedef struct PgGrid PgGrid;

typedef struct PgPrediction PgPrediction;

typedef struct PgFitOptions {
  size_t n_chains;
  size_t n_iterations;
  size_t burn_in;
  size_t thin;
  uint64_t seed;
  /**
   * Percentile for capping sampling weights; NaN disables capping.
   */
  double truncation_percentile;
  enum PgEffectMode effect_mode;
} PgFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` as a
 * NUL-terminated string. Returns the buffer size needed, including the
 * terminator; 0 when there is no message.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t pg_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pg_version(void);

/**
 * Defaults: 3 chains, 10000 iterations, half burn-in, weights capped at
 * the 90th percentile, effect modes chosen automatically.
 */
struct PgFitOptions pg_fit_options_default(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PgStatus pg_clusters_load(const char *path, struct PgClusterSet **out);

/**
 * # Safety
 * `set` must be a live handle or null.
 */
size_t pg_clusters_len(const struct PgClusterSet *set);

/**
 * # Safety
 * `set` must be null or a handle not yet freed.
 */
void pg_clusters_free(struct PgClusterSet *set);

/**
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum PgStatus pg_grid_load(const char *dir, struct PgGrid **out);

/**
 * # Safety
 * `grid` must be a live handle or null.
 */
size_t pg_grid_n_cells(const struct PgGrid *grid);

/**
 * # Safety
 * `grid` must be null or a handle not yet freed.
 */
void pg_grid_free(struct PgGrid *grid);

/**
 * Prepares the clusters (discards, weight capping, model weights) and
 * fits the density model.
 *
 * # Safety
 * `set` must be a live handle, `options` null or readable, `out` writable.
 */
enum PgStatus pg_fit(const struct PgClusterSet *set,
                     const struct PgFitOptions *options,
                     struct PgDraws **out);

/**
 * # Safety
 * `dir` must be a NUL-terminated string; `out` must be writable.
 */
enum PgStatus pg_draws_load(const char *dir, struct PgDraws **out);

/**
 * # Safety
 * `draws` must be a live handle; `dir` a NUL-terminated string.
 */
enum PgStatus pg_draws_write(const struct PgDraws *draws, const char *dir);

/**
 * # Safety
 * `draws` must be a live handle or null.
 */
size_t pg_draws_n_params(const struct PgDraws *draws);

/**
 * Retained draws pooled over chains.
 *
 * # Safety
 * `draws` must be a live handle or null.
 */
size_t pg_draws_n_rows(const struct PgDraws *draws);

/**
 * Writes the name of parameter `index` into `buf`, NUL-terminated, and
 * its required size into `needed`.
 *
 * # Safety
 * `draws` must be a live handle, `buf` null or `len` writable bytes,
 * `needed` null or writable.
 */
enum PgStatus pg_draws_param_name(const struct PgDraws *draws,
                                  size_t index,
                                  char *buf,
                                  size_t len,
                                  size_t *needed);

/**
 * Copies the pooled draws of the named parameter into `buf`.
 *
 * # Safety
 * `draws` must be a live handle, `name` a NUL-terminated string, `buf`
 * `len` writable doubles.
 */
enum PgStatus pg_draws_pooled(const struct PgDraws *draws,
                              const char *name,
                              double *buf,
                              size_t len);

/**
 * Largest Gelman-Rubin statistic over all parameters.
 *
 * # Safety
 * `draws` must be a live handle; `out` writable.
 */
enum PgStatus pg_draws_max_rhat(const struct PgDraws *draws, double *out);

/**
 * # Safety
 * `draws` must be null or a handle not yet freed.
 */
void pg_draws_free(struct PgDraws *draws);

/**
 * # Safety
 * `draws` and `grid` must be live handles; `out` writable.
 */
enum PgStatus pg_predict_grid(const struct PgDraws *draws,
                              const struct PgGrid *grid,
                              size_t n_draws,
                              uint64_t seed,
                              struct PgPrediction **out);

/**
 * Per-cell posterior mean counts; NaN for unsettled cells.
 *
 * # Safety
 * `pred` must be a live handle; `buf` `len` writable doubles.
 */
enum PgStatus pg_prediction_mean(const struct PgPrediction *pred, double *buf, size_t len);

/**
 * Posterior mean of the grid total.
 *
 * # Safety
 * `pred` must be a live handle; `out` writable.
 */
enum PgStatus pg_prediction_total_mean(const struct PgPrediction *pred, double *out);

/**
 * Writes mean, median and 95% interval rasters into `dir`.
 *
 * # Safety
 * `pred` must be a live handle; `dir` a NUL-terminated string.
 */
enum PgStatus pg_prediction_write(const struct PgPrediction *pred, const char *dir);

/**
 * # Safety
 * `pred` must be null or a handle not yet freed.
 */
void pg_prediction_free(struct PgPrediction *pred);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POPGRID_H */
