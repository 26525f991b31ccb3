#ifndef MOMA_FFI_H
#define MOMA_FFI_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Per-objective direction for [`moma_frontier_new`].
 */
typedef enum MomaOrientation {
  /**
   * Larger values dominate.
   */
  MOMA_ORIENTATION_HIGHER_BETTER = 0,
  /**
   * Values closer to the paired target dominate.
   */
  MOMA_ORIENTATION_TARGET = 1,
} MomaOrientation;

/**
 * Result code shared by every FFI entry point.
 */
typedef enum MomaStatus {
  MOMA_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  MOMA_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  MOMA_STATUS_INVALID_UTF8 = 2,
  /**
   * An argument was outside its documented domain.
   */
  MOMA_STATUS_INVALID_ARGUMENT = 3,
  /**
   * The parser found no answer; not an error, but no index was written.
   */
  MOMA_STATUS_NO_CHOICE = 4,
} MomaStatus;

/**
 * Opaque accumulator of points in objective space.
 */
typedef struct MomaFrontier MomaFrontier;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses a free-form completion against exactly three option texts and
 * writes the 0-based index of the chosen option. Returns
 * `MOMA_STATUS_NO_CHOICE` when the reply names no option.
 *
 * # Safety
 * `raw` and each entry of `options` must be valid NUL-terminated strings;
 * `options` must point to `n_options` pointers; `out_index` must be
 * writable.
 */
enum MomaStatus moma_parse_choice(const char *raw,
                                  const char *const *options,
                                  uintptr_t n_options,
                                  uintptr_t *out_index);

/**
 * Writes `lms * min(ss, 100 - ss) / 50`. Both inputs must lie in
 * `[0, 100]`.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum MomaStatus moma_icat(double ss, double lms, double *out);

/**
 * Writes `100 * (value / reference - 1)` rounded half-away-from-zero to
 * one decimal. `reference` must be nonzero.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum MomaStatus moma_delta_percent(double value, double reference, double *out);

/**
 * Allocates a frontier builder over `n_objectives` dimensions.
 * `orientations[i]` gives the direction of dimension `i`; `targets[i]` is
 * read only where the orientation is `MOMA_ORIENTATION_TARGET` (pass any
 * value, or a null `targets` if no dimension is targeted). Free with
 * [`moma_frontier_free`]. Returns null on invalid arguments.
 *
 * # Safety
 * `orientations` must point to `n_objectives` values; `targets`, when
 * non-null, must as well.
 */
struct MomaFrontier *moma_frontier_new(uintptr_t n_objectives,
                                       const enum MomaOrientation *orientations,
                                       const double *targets);

/**
 * Appends one point. `values` must hold as many entries as the builder
 * has objectives.
 *
 * # Safety
 * `frontier` must come from [`moma_frontier_new`] and not yet be freed;
 * `values` must point to the declared number of finite doubles.
 */
enum MomaStatus moma_frontier_add(struct MomaFrontier *frontier, const double *values);

/**
 * Number of points added so far; 0 for a null handle.
 *
 * # Safety
 * `frontier`, when non-null, must come from [`moma_frontier_new`].
 */
uintptr_t moma_frontier_len(const struct MomaFrontier *frontier);

/**
 * Writes one flag per point, in insertion order: 1 if the point is on
 * the Pareto frontier, else 0. `n_flags` must equal the point count.
 *
 * # Safety
 * `frontier` must come from [`moma_frontier_new`]; `out_flags` must point
 * to `n_flags` writable bytes.
 */
enum MomaStatus moma_frontier_compute(const struct MomaFrontier *frontier,
                                      uint8_t *out_flags,
                                      uintptr_t n_flags);

/**
 * Releases a builder; a null handle is a no-op.
 *
 * # Safety
 * `frontier` must come from [`moma_frontier_new`] and not be used after
 * this call.
 */
void moma_frontier_free(struct MomaFrontier *frontier);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOMA_FFI_H */
