#ifndef ERM_ANATOMY_H
#define ERM_ANATOMY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes shared by all functions.
 */
typedef enum ErmStatus {
  ERM_STATUS_OK = 0,
  ERM_STATUS_NULL_POINTER = 1,
  ERM_STATUS_INPUT_CONTRACT = 2,
  ERM_STATUS_DOMAIN = 3,
  ERM_STATUS_CAPABILITY = 4,
  ERM_STATUS_CONFIG = 5,
  ERM_STATUS_HYPOTHESIS = 6,
  ERM_STATUS_NO_FEASIBLE_CHECKPOINT = 7,
  ERM_STATUS_REPRODUCIBILITY = 8,
  ERM_STATUS_IO = 9,
  ERM_STATUS_INVALID_UTF8 = 10,
  ERM_STATUS_PANIC = 11,
} ErmStatus;

/**
 * Opaque network handle.
 */
typedef struct ErmNet ErmNet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *erm_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call on this thread.
 */
const char *erm_last_error(void);

/**
 * Creates a clipped network with layer widths `widths[0..len]` and output range `[u, v]`.
 *
 * # Safety
 * `widths` must point to `len` values; `out` must be writable.
 */
enum ErmStatus erm_net_new(const size_t *widths,
                           size_t len,
                           double u,
                           double v,
                           struct ErmNet **out);

/**
 * Releases a handle; NULL is ignored.
 *
 * # Safety
 * `handle` must be NULL or a live handle not used afterwards.
 */
void erm_net_free(struct ErmNet *handle);

/**
 * Number of parameters, or 0 for a NULL handle.
 *
 * # Safety
 * `handle` must be NULL or live.
 */
size_t erm_net_param_count(const struct ErmNet *handle);

/**
 * Scalar output of the network at `x`.
 *
 * # Safety
 * Pointers must be valid for the given lengths; `out` writable.
 */
enum ErmStatus erm_net_forward(const struct ErmNet *handle,
                               const double *theta,
                               size_t theta_len,
                               const double *x,
                               size_t x_len,
                               double *out);

/**
 * Mean squared residual over `n` samples (`xs` row-major `n x d`, `d` the input width).
 *
 * # Safety
 * Pointers must be valid for the implied lengths; `out` writable.
 */
enum ErmStatus erm_empirical_risk(const struct ErmNet *handle,
                                  const double *theta,
                                  size_t theta_len,
                                  const double *xs,
                                  const double *ys,
                                  size_t n,
                                  double *out);

/**
 * Generalized gradient of the empirical risk, written to `grad[0..grad_len]`.
 *
 * # Safety
 * Pointers must be valid for the implied lengths; `grad` writable for `grad_len` values.
 */
enum ErmStatus erm_gradient(const struct ErmNet *handle,
                            const double *theta,
                            size_t theta_len,
                            const double *xs,
                            const double *ys,
                            size_t n,
                            double *grad,
                            size_t grad_len);

/**
 * `ln Gamma(x)` for `x > 0`.
 *
 * # Safety
 * `out` must be writable.
 */
enum ErmStatus erm_ln_gamma(double x, double *out);

/**
 * `B(x, y)` for `x, y > 0`.
 *
 * # Safety
 * `out` must be writable.
 */
enum ErmStatus erm_beta(double x, double y, double *out);

/**
 * Both displays of the main bound for bound inputs given as JSON; the result
 * is a JSON array `[fine, coarse]`.
 *
 * # Safety
 * `inputs_json` must be a NUL-terminated string; `out_json` writable.
 */
enum ErmStatus erm_bound_main(const char *inputs_json, int strict, char **out_json);

/**
 * Runs an experiment config (JSON) and returns the report JSON. `passed`
 * receives 1 when the report has no failures, else 0.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `out_json` and `passed` writable.
 */
enum ErmStatus erm_run_experiment(const char *config_json, char **out_json, int *passed);

/**
 * Releases a string returned by this library; NULL is ignored.
 *
 * # Safety
 * `s` must be NULL or a string from this library not freed before.
 */
void erm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ERM_ANATOMY_H */
