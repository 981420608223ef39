#ifndef LFNS_H
#define LFNS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LfnsStatus {
  LFNS_STATUS_OK = 0,
  LFNS_STATUS_NULL_POINTER = 1,
  LFNS_STATUS_INVALID_ARGUMENT = 2,
  LFNS_STATUS_INVALID_MODEL = 3,
  LFNS_STATUS_DIMENSION_MISMATCH = 4,
  LFNS_STATUS_BUFFER_TOO_SMALL = 5,
  LFNS_STATUS_DIVERGENCE = 6,
  LFNS_STATUS_NOT_CONVERGED = 7,
  LFNS_STATUS_NUMERICAL_FAILURE = 8,
  LFNS_STATUS_IO = 9,
  LFNS_STATUS_PARSE = 10,
  LFNS_STATUS_PANIC = 11,
} LfnsStatus;

typedef struct LfnsFiniteHandle LfnsFiniteHandle;

typedef struct LfnsModelHandle LfnsModelHandle;

typedef struct LfnsStationaryHandle LfnsStationaryHandle;

/**
 * Stabilizability outcome of a stationary solution.
 */
typedef struct LfnsVerdict {
  /**
   * 1 when the Riccati solution is positive definite and the discounted
   * inequality holds, else 0.
   */
  int32_t stabilizable;
  int32_t closed_loop_stable;
  double spectral_radius;
  double inequality_margin;
  double min_eigenvalue_p;
} LfnsVerdict;

typedef struct LfnsMonteCarlo {
  double mean_cost;
  double standard_error;
  uint64_t diverged_trials;
} LfnsMonteCarlo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, static storage.
 */
const char *lfns_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on the same thread.
 */
const char *lfns_last_error_message(void);

/**
 * Loads a builtin model name or a JSON spec file path.
 *
 * # Safety
 * `source` must be a nul-terminated string and `out` a valid pointer.
 */
enum LfnsStatus lfns_model_load(const char *source, struct LfnsModelHandle **out);

/**
 * Parses a JSON model spec held in memory.
 *
 * # Safety
 * `json` must be a nul-terminated string and `out` a valid pointer.
 */
enum LfnsStatus lfns_model_from_json(const char *json, struct LfnsModelHandle **out);

/**
 * # Safety
 * `model` must come from this library or be null.
 */
void lfns_model_free(struct LfnsModelHandle *model);

/**
 * Per-agent state dimension and input dimensions.
 *
 * # Safety
 * All pointers must be valid.
 */
enum LfnsStatus lfns_model_dims(const struct LfnsModelHandle *model,
                                size_t *n,
                                size_t *m1,
                                size_t *m2);

/**
 * Solves the discounted stationary Riccati equation.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum LfnsStatus lfns_stationary_solve(const struct LfnsModelHandle *model,
                                      struct LfnsStationaryHandle **out);

/**
 * # Safety
 * `solution` must come from this library or be null.
 */
void lfns_stationary_free(struct LfnsStationaryHandle *solution);

/**
 * Gain `H` (`(m1+m2) × 2n`), row-major; control is `U = −H·(x0, x̂1 or x1)`.
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum LfnsStatus lfns_stationary_gain(const struct LfnsStationaryHandle *solution,
                                     double *buf,
                                     size_t len);

/**
 * Riccati solution `P` (`2n × 2n`), row-major.
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum LfnsStatus lfns_stationary_riccati(const struct LfnsStationaryHandle *solution,
                                        double *buf,
                                        size_t len);

/**
 * `E[X(0)ᵀPX(0)] + γ/(1−γ)·Tr(Σ_W·P)`.
 *
 * # Safety
 * Handles must be live and `cost` valid.
 */
enum LfnsStatus lfns_stationary_cost(const struct LfnsStationaryHandle *solution,
                                     const struct LfnsModelHandle *model,
                                     double *cost);

/**
 * # Safety
 * Handles must be live and `verdict` valid.
 */
enum LfnsStatus lfns_stationary_verdict(const struct LfnsStationaryHandle *solution,
                                        const struct LfnsModelHandle *model,
                                        struct LfnsVerdict *verdict);

/**
 * Monte Carlo of the stationary policy over `steps` with discounted cost.
 *
 * # Safety
 * Handles must be live and `out` valid.
 */
enum LfnsStatus lfns_stationary_monte_carlo(const struct LfnsStationaryHandle *solution,
                                            const struct LfnsModelHandle *model,
                                            size_t steps,
                                            uint64_t trials,
                                            uint64_t seed,
                                            struct LfnsMonteCarlo *out);

/**
 * Backward Riccati recursion over stages `0..=horizon`. A nonzero
 * `discounted` uses the spec's discount factor and a zero terminal weight.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum LfnsStatus lfns_finite_solve(const struct LfnsModelHandle *model,
                                  size_t horizon,
                                  int32_t discounted,
                                  struct LfnsFiniteHandle **out);

/**
 * # Safety
 * `solution` must come from this library or be null.
 */
void lfns_finite_free(struct LfnsFiniteHandle *solution);

/**
 * Gain at step `k` (`(m1+m2) × 2n`), row-major.
 *
 * # Safety
 * `buf` must hold `len` doubles.
 */
enum LfnsStatus lfns_finite_gain(const struct LfnsFiniteHandle *solution,
                                 size_t k,
                                 double *buf,
                                 size_t len);

/**
 * Analytic optimal cost of the finite-horizon problem.
 *
 * # Safety
 * Handles must be live and `cost` valid.
 */
enum LfnsStatus lfns_finite_cost(const struct LfnsFiniteHandle *solution,
                                 const struct LfnsModelHandle *model,
                                 double *cost);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LFNS_H */
