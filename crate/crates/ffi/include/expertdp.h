#ifndef EXPERTDP_H
#define EXPERTDP_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum EdpStatus {
  EDP_STATUS_OK = 0,
  EDP_STATUS_INVALID_ARGUMENT = 1,
  EDP_STATUS_NULL_POINTER = 2,
  EDP_STATUS_BUDGET_VIOLATION = 3,
  EDP_STATUS_VERIFICATION_FAILED = 4,
  EDP_STATUS_IO = 5,
  EDP_STATUS_PANIC = 6,
} EdpStatus;

/**
 * A loaded expert ensemble.
 */
typedef struct EdpEnsemble EdpEnsemble;

/**
 * A seeded random stream.
 */
typedef struct EdpRng EdpRng;

/**
 * Derived per-iteration release parameters.
 */
typedef struct EdpReleaseParams {
  double eps1;
  double delta1;
  double eps_prime;
  double delta_prime;
  double c_min;
  double theta;
  uint64_t t;
  uint64_t l;
  double p_min;
} EdpReleaseParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *edp_last_error_message(void);

/**
 * Derives the release parameters for budget `(eps1, delta1)` over `t`
 * trajectories of horizon `l` with action floor `p_min`.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `EdpReleaseParams`.
 */
enum EdpStatus edp_derive_release_params(double eps1,
                                         double delta1,
                                         uint64_t t,
                                         uint64_t l,
                                         double p_min,
                                         struct EdpReleaseParams *out);

/**
 * Advanced composition of `k` `(eps, delta)` mechanisms with slack `delta_slack`.
 *
 * # Safety
 * `out_eps` and `out_delta` must be null or writable.
 */
enum EdpStatus edp_advanced_composition(uint64_t k,
                                        double eps,
                                        double delta,
                                        double delta_slack,
                                        double *out_eps,
                                        double *out_delta);

/**
 * Composes the release's per-trajectory guarantees and checks them
 * against `(eps1, delta1)`. Returns `EDP_STATUS_BUDGET_VIOLATION` if they
 * do not fit; the composed values are written either way.
 *
 * # Safety
 * `params` must point to a valid `EdpReleaseParams`; the out-pointers must
 * be null or writable.
 */
enum EdpStatus edp_check_release_budget(const struct EdpReleaseParams *params,
                                        double *out_eps,
                                        double *out_delta);

/**
 * ε spent by `steps` Poisson-subsampled Gaussian steps at noise multiplier
 * `sigma` and rate `q`, for target `delta`.
 *
 * # Safety
 * `out` must be null or writable.
 */
enum EdpStatus edp_dpsgd_epsilon(double sigma, double q, uint64_t steps, double delta, double *out);

/**
 * Smallest noise multiplier meeting `(eps, delta)` over `steps` steps at rate `q`.
 *
 * # Safety
 * `out` must be null or writable.
 */
enum EdpStatus edp_calibrate_noise(double eps, double delta, double q, uint64_t steps, double *out);

/**
 * Loads an ensemble directory written by `expertdp gen-experts`.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
 */
enum EdpStatus edp_ensemble_load(const char *path, struct EdpEnsemble **out);

/**
 * Releases an ensemble handle. Null is ignored.
 *
 * # Safety
 * `handle` must come from `edp_ensemble_load` and not be used afterwards.
 */
void edp_ensemble_free(struct EdpEnsemble *handle);

/**
 * # Safety
 * `handle` must be a live ensemble handle; `out` must be writable.
 */
enum EdpStatus edp_ensemble_len(const struct EdpEnsemble *handle, size_t *out);

/**
 * `π_expert(action | state)`. A negative `state` names the absorbing state.
 *
 * # Safety
 * `handle` must be a live ensemble handle; `out` must be writable.
 */
enum EdpStatus edp_ensemble_action_prob(const struct EdpEnsemble *handle,
                                        size_t expert,
                                        int64_t state,
                                        size_t action,
                                        double *out);

/**
 * Prefix count `Σ_i Π_j π_i(actions[j] | states[j])` over `len` steps.
 *
 * # Safety
 * `states` and `actions` must each hold `len` elements (either may be null
 * when `len` is 0); `out` must be writable.
 */
enum EdpStatus edp_ensemble_count_prefix(const struct EdpEnsemble *handle,
                                         const int64_t *states,
                                         const size_t *actions,
                                         size_t len,
                                         double *out);

/**
 * Creates a random stream from `seed`.
 *
 * # Safety
 * `out` must be writable.
 */
enum EdpStatus edp_rng_new(uint64_t seed, struct EdpRng **out);

/**
 * Releases a stream. Null is ignored.
 *
 * # Safety
 * `handle` must come from `edp_rng_new` and not be used afterwards.
 */
void edp_rng_free(struct EdpRng *handle);

/**
 * One `Laplace(0, scale)` draw.
 *
 * # Safety
 * `handle` must be a live stream; `out` must be writable.
 */
enum EdpStatus edp_rng_laplace(struct EdpRng *handle, double scale, double *out);

/**
 * One `N(0, sigma²)` draw.
 *
 * # Safety
 * `handle` must be a live stream; `out` must be writable.
 */
enum EdpStatus edp_rng_gaussian(struct EdpRng *handle, double sigma, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EXPERTDP_H */
