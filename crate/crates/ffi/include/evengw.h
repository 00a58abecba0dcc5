#ifndef EVENGW_H
#define EVENGW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Which solver produced the returned plan.
 */
typedef enum EvengwMethod {
  EVENGW_METHOD_FRANK_WOLFE = 0,
  EVENGW_METHOD_DUAL_ALTERNATING = 1,
  EVENGW_METHOD_BRUTE_FORCE = 2,
  EVENGW_METHOD_EXACT_FORCED = 3,
} EvengwMethod;

/**
 * Status codes returned by every fallible function.
 */
typedef enum EvengwStatus {
  EVENGW_STATUS_OK = 0,
  EVENGW_STATUS_NULL_POINTER = 1,
  EVENGW_STATUS_INVALID_ARGUMENT = 2,
  EVENGW_STATUS_INVALID_MEASURE = 3,
  EVENGW_STATUS_CAP_EXCEEDED = 4,
  EVENGW_STATUS_SOLVER_FAILURE = 5,
  EVENGW_STATUS_BUFFER_TOO_SMALL = 6,
  EVENGW_STATUS_PANIC = 7,
} EvengwStatus;

/**
 * Opaque finitely supported probability measure.
 */
typedef struct EvengwMeasure EvengwMeasure;

/**
 * Opaque solver result.
 */
typedef struct EvengwResult EvengwResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Creates a measure from `n` atoms of dimension `dim`, stored row-major in
 * `atoms` (length `n * dim`). `weights` may be null for uniform weights;
 * otherwise it must hold `n` nonnegative values summing to 1.
 *
 * # Safety
 * `atoms` must point to `n * dim` readable doubles, `weights` to `n` doubles
 * when non-null, and `out` to writable storage for one pointer.
 */
enum EvengwStatus evengw_measure_new(size_t dim,
                                     size_t n,
                                     const double *atoms,
                                     const double *weights,
                                     struct EvengwMeasure **out);

/**
 * Releases a measure. Null is ignored.
 *
 * # Safety
 * `m` must be null or a handle from [`evengw_measure_new`] not yet freed.
 */
void evengw_measure_free(struct EvengwMeasure *m);

/**
 * Number of atoms, or 0 for null.
 *
 * # Safety
 * `m` must be null or a live measure handle.
 */
size_t evengw_measure_len(const struct EvengwMeasure *m);

/**
 * Dimension, or 0 for null.
 *
 * # Safety
 * `m` must be null or a live measure handle.
 */
size_t evengw_measure_dim(const struct EvengwMeasure *m);

/**
 * Computes the functional of order `(r, k)` between `mu` and `nu`.
 * `restarts` of 0 selects the default.
 *
 * # Safety
 * `mu` and `nu` must be live measure handles; `out` must be writable.
 */
enum EvengwStatus evengw_compute(const struct EvengwMeasure *mu,
                                 const struct EvengwMeasure *nu,
                                 uint32_t r,
                                 uint32_t k,
                                 uint32_t restarts,
                                 uint64_t seed,
                                 struct EvengwResult **out);

/**
 * Releases a result. Null is ignored.
 *
 * # Safety
 * `res` must be null or a handle from [`evengw_compute`] not yet freed.
 */
void evengw_result_free(struct EvengwResult *res);

/**
 * Total value; NaN for null.
 *
 * # Safety
 * `res` must be null or a live result handle.
 */
double evengw_result_value(const struct EvengwResult *res);

/**
 * Marginal part; NaN for null.
 *
 * # Safety
 * `res` must be null or a live result handle.
 */
double evengw_result_marginal_part(const struct EvengwResult *res);

/**
 * Coupling part; NaN for null.
 *
 * # Safety
 * `res` must be null or a live result handle.
 */
double evengw_result_coupling_part(const struct EvengwResult *res);

/**
 * # Safety
 * `res` and `out` must be live and writable respectively.
 */
enum EvengwStatus evengw_result_method(const struct EvengwResult *res, enum EvengwMethod *out);

/**
 * Copies the coupling, row-major, into `buf`. `rows` and `cols` receive its
 * shape even when `buf` is too small; pass a null `buf` to query the shape.
 *
 * # Safety
 * `buf` must hold `len` writable doubles when non-null; `rows`, `cols`
 * must be writable.
 */
enum EvengwStatus evengw_result_plan(const struct EvengwResult *res,
                                     double *buf,
                                     size_t len,
                                     size_t *rows,
                                     size_t *cols);

/**
 * Closed-form value `2p(1-p)R^{4kr}` between the two-point law
 * `(1-p)δ_0 + pδ_{R e_1}` and a point mass.
 *
 * # Safety
 * `out` must be writable.
 */
enum EvengwStatus evengw_lower_bound(double p, double radius, uint32_t r, uint32_t k, double *out);

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call into the library on the same thread.
 */
const char *evengw_last_error(void);

/**
 * Library version as a static string.
 */
const char *evengw_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVENGW_H */
