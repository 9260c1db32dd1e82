#ifndef DRE_H
#define DRE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
enum DreStatus
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  DRE_STATUS_OK = 0,
  DRE_STATUS_NULL_POINTER = 1,
  DRE_STATUS_INVALID_ARGUMENT = 2,
  DRE_STATUS_UNKNOWN_MODEL = 3,
  DRE_STATUS_INVALID_MEASURE = 4,
  DRE_STATUS_INVALID_WINDOW = 5,
  DRE_STATUS_OUTSIDE_WINDOW = 6,
  DRE_STATUS_UNSUPPORTED_DIMENSION = 7,
  DRE_STATUS_MODEL_ASSUMPTION = 8,
  DRE_STATUS_PARSE = 9,
  DRE_STATUS_IO = 10,
  DRE_STATUS_INTERNAL = 11,
  DRE_STATUS_PANIC = 12,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum DreStatus DreStatus;
#else
typedef int32_t DreStatus;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

enum DreShape
#if defined(__cplusplus) || __STDC_VERSION__ >= 202311L
  : int32_t
#endif // defined(__cplusplus) || __STDC_VERSION__ >= 202311L
 {
  DRE_SHAPE_FINITE = 0,
  DRE_SHAPE_FULL_WINDOW = 1,
  DRE_SHAPE_BLOCKED_ABOVE = 2,
  DRE_SHAPE_BLOCKED_BELOW = 3,
  DRE_SHAPE_INDETERMINATE = 4,
};
#ifndef __cplusplus
#if __STDC_VERSION__ >= 202311L
typedef enum DreShape DreShape;
#else
typedef int32_t DreShape;
#endif // __STDC_VERSION__ >= 202311L
#endif // __cplusplus

/**
 * Opaque handle to a sampled or loaded environment.
 */
typedef struct DreEnv DreEnv;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failing call on this thread; empty if none. Valid
 * until the next failing call on the same thread.
 */
const char *dre_last_error(void);

/**
 * Library version, static NUL-terminated string.
 */
const char *dre_version(void);

/**
 * Samples catalog model `model` at weight `p` on `[-radius, radius]^d`.
 *
 * # Safety
 * `model` must be a NUL-terminated string and `out` a valid pointer.
 */
DreStatus dre_env_sample(const char *model,
                         double p,
                         uint32_t d,
                         int64_t radius,
                         uint64_t seed,
                         struct DreEnv **out);

/**
 * Loads a snapshot file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
DreStatus dre_env_load(const char *path, struct DreEnv **out);

/**
 * Writes a snapshot file.
 *
 * # Safety
 * `env` must come from this library and `path` be a NUL-terminated string.
 */
DreStatus dre_env_save(const struct DreEnv *env, const char *path);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `env` must come from this library and not be used afterwards.
 */
void dre_env_free(struct DreEnv *env);

/**
 * Number of sites in the window.
 *
 * # Safety
 * `env` must come from this library; `out` must be valid.
 */
DreStatus dre_env_len(const struct DreEnv *env, uint64_t *out);

/**
 * Arrow bitmask at a site: bit `i` is `+e_{i+1}`, bit `d+i` is `-e_{i+1}`.
 *
 * # Safety
 * `coords` must point to `d` coordinates, `out` must be valid.
 */
DreStatus dre_env_arrows(const struct DreEnv *env, const int64_t *coords, uint16_t *out);

/**
 * Size of the cluster of `kind` (a `DreClusterKind`) rooted at `coords`, and whether it
 * contains a window edge site.
 *
 * # Safety
 * `coords` must point to `d` coordinates; `size` and `touches` must be valid.
 */
DreStatus dre_cluster(const struct DreEnv *env,
                      const int64_t *coords,
                      int32_t kind,
                      uint64_t *size,
                      int32_t *touches);

/**
 * Shape of `B_x` in a 2-d environment.
 *
 * # Safety
 * `env` must come from this library; `out` must be valid.
 */
DreStatus dre_classify(const struct DreEnv *env, int64_t x, int64_t y, DreShape *out);

/**
 * Monte Carlo estimate and standard error of `statistic` (a
 * `DreStatistic`) over `trials`
 * independent environments.
 *
 * # Safety
 * `model` must be a NUL-terminated string; `estimate` and `se` must be valid.
 */
DreStatus dre_estimate(const char *model,
                       double p,
                       uint32_t d,
                       int64_t radius,
                       uint64_t trials,
                       uint64_t seed,
                       int32_t statistic,
                       double *estimate,
                       double *se);

/**
 * Root in (0,1) of `p^3 - p^2 + 2p - 1` (`fsosp != 0`) or `p^3 + 2p - 1`.
 */
double dre_cubic_root(int32_t fsosp);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRE_H */
