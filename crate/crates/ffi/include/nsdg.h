#ifndef NSDG_H
#define NSDG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Status codes returned by every fallible function.
 */
typedef enum {
  NSDG_STATUS_OK = 0,
  NSDG_STATUS_NULL_POINTER = 1,
  NSDG_STATUS_INVALID_UTF8 = 2,
  NSDG_STATUS_INVALID_ARGUMENT = 3,
  NSDG_STATUS_CONFIG = 4,
  NSDG_STATUS_PARSE = 5,
  NSDG_STATUS_GEOMETRY = 6,
  NSDG_STATUS_SOLVER_FAILURE = 7,
  NSDG_STATUS_NOT_CONVERGED = 8,
  NSDG_STATUS_IO = 9,
  NSDG_STATUS_PANIC = 10,
} NsdgStatus;

/*
 A validated study configuration.
 */
typedef struct NsdgConfig NsdgConfig;

/*
 A finished run: problem, trajectory and error report.
 */
typedef struct NsdgRun NsdgRun;

/*
 Error summary of a run; the norms are not squared.
 */
typedef struct {
  double err_u;
  double linf_l2;
  double a_norm;
  double gamma_jump;
  double p_final;
  double max_divergence;
  double h;
  double tau;
  size_t num_slabs;
  size_t fixed_point_iterations;
} NsdgErrors;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *nsdg_version(void);

/*
 Static description of a status code.
 */
const char *nsdg_status_message(NsdgStatus status);

/*
 Copies the last error message of this thread into `buf` (truncated and
 NUL-terminated) and returns its full length without the terminator.
 Returns 0 when no error was recorded. `buf` may be null to query the
 length.

 # Safety
 `buf` must be null or valid for `len` bytes.
 */
size_t nsdg_last_error(char *buf, size_t len);

/*
 Parses and validates a JSON study configuration.

 # Safety
 `json` must be a NUL-terminated string and `out` a valid pointer.
 */
NsdgStatus nsdg_config_from_json(const char *json, NsdgConfig **out);

/*
 Releases a configuration; null is ignored.

 # Safety
 `config` must be null or a handle from [`nsdg_config_from_json`] that was
 not freed before.
 */
void nsdg_config_free(NsdgConfig *config);

/*
 Runs the first mesh, time step and viscosity of `config`.

 # Safety
 `config` must be a live handle and `out` a valid pointer.
 */
NsdgStatus nsdg_run(const NsdgConfig *config, NsdgRun **out);

/*
 Releases a run; null is ignored.

 # Safety
 `run` must be null or a handle from [`nsdg_run`] that was not freed
 before.
 */
void nsdg_run_free(NsdgRun *run);

/*
 Fills `out` with the error summary of `run`.

 # Safety
 `run` must be a live handle and `out` a valid pointer.
 */
NsdgStatus nsdg_run_errors(const NsdgRun *run, NsdgErrors *out);

/*
 Discrete velocity at `(x, y)` and time `t` in `[0, T]`, written to
 `out[0..2]`. Evaluation at a slab break uses the left limit.

 # Safety
 `run` must be a live handle and `out` valid for two doubles.
 */
NsdgStatus nsdg_run_velocity(const NsdgRun *run, double x, double y, double t, double *out);

/*
 Maximum deviation between a case's closed-form forcing and a
 finite-difference residual of its exact solution.

 # Safety
 `case_name` must be a NUL-terminated string and `residual` a valid
 pointer.
 */
NsdgStatus nsdg_verify_forcing(const char *case_name, double nu, size_t samples, double *residual);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NSDG_H */
