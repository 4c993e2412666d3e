#ifndef LSV_RENEWAL_H
#define LSV_RENEWAL_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum LsvStatus {
  LSV_STATUS_OK = 0,
  LSV_STATUS_NULL_POINTER = 1,
  LSV_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Orbit or frequency outside the domain of the operation.
   */
  LSV_STATUS_DOMAIN = 3,
  /**
   * Convergence failure, near-singular solve, lost eigenvalue branch.
   */
  LSV_STATUS_NUMERICAL = 4,
  /**
   * The call needs a different regime (e.g. `β > 1`).
   */
  LSV_STATUS_REGIME = 5,
  LSV_STATUS_CONFIG = 6,
  LSV_STATUS_IO = 7,
  /**
   * An experiment ran to completion but one of its checks failed.
   */
  LSV_STATUS_CHECKS_FAILED = 8,
  LSV_STATUS_PANIC = 9,
} LsvStatus;

/**
 * Opaque induced system.
 */
typedef struct LsvSystem LsvSystem;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL terminated,
 * truncated to `len`) and returns the full length including the NUL, or 0 if
 * no error has been recorded. `buf` may be null to query the length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t lsv_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lsv_version(void);

/**
 * Builds the induced system of the LSV map with parameter `alpha` and the
 * floored roof preset `roof` (0 `1+x`, 1 `2+cos`, 2 constant).
 *
 * # Safety
 * `out` must be a valid pointer; on success it receives a handle owned by the caller.
 */
enum LsvStatus lsv_system_new(double alpha,
                              int roof_code,
                              size_t n_max,
                              size_t n_y,
                              struct LsvSystem **out);

/**
 * Releases a handle from [`lsv_system_new`]; null is ignored.
 *
 * # Safety
 * `sys` must be null or a handle not yet freed.
 */
void lsv_system_free(struct LsvSystem *sys);

/**
 * `β = 1/α` and the regime (0 finite, 1 infinite, 2 boundary).
 *
 * # Safety
 * `sys` must be a live handle; `beta` and `regime` valid pointers.
 */
enum LsvStatus lsv_system_info(const struct LsvSystem *sys, double *beta, int *regime);

/**
 * Leading eigenvalue `λ(ib)` of the twisted transfer operator, continued from `s = 0`.
 *
 * # Safety
 * `sys` must be a live handle; `re` and `im` valid pointers.
 */
enum LsvStatus lsv_leading_eigenvalue(const struct LsvSystem *sys,
                                      double b,
                                      double *re,
                                      double *im);

/**
 * Laplace transform `ρ̂_{v,w}(s)` of the correlation through the renewal
 * identity, with `n_u` fiber intervals. `v` and `w` are profile codes
 * (0 one, 1 `2y`, 2 `1+cos(2πy)/2`, 3 `cos(4πy)`).
 *
 * # Safety
 * `sys` must be a live handle; `re` and `im` valid pointers.
 */
enum LsvStatus lsv_rho_hat(const struct LsvSystem *sys,
                           int v,
                           int w,
                           size_t n_u,
                           double s_re,
                           double s_im,
                           double *re,
                           double *im);

/**
 * Monte Carlo estimate of `ρ_{v,w}(t)` at `n_times` times with `samples`
 * orbits; `estimates` and `stderr` receive `n_times` values each.
 *
 * # Safety
 * `sys` must be a live handle; `times`, `estimates`, `stderr` must hold `n_times` elements.
 */
enum LsvStatus lsv_mc_correlation(const struct LsvSystem *sys,
                                  int v,
                                  int w,
                                  const double *times,
                                  size_t n_times,
                                  size_t samples,
                                  uint64_t seed,
                                  double *estimates,
                                  double *stderr);

/**
 * Runs a CLI subcommand (`"tails"`, `"mix-finite"`, ...) with a TOML config
 * (null or empty for the α = 1.5 defaults), writing artifacts under `out_dir`.
 * Returns `ChecksFailed` when the run completes with a failed check.
 *
 * # Safety
 * `subcommand` and `out_dir` must be NUL-terminated strings; `config_toml` null or one.
 */
enum LsvStatus lsv_run_experiment(const char *subcommand,
                                  const char *config_toml,
                                  const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LSV_RENEWAL_H */
