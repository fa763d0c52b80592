#ifndef BANGRIDE_H
#define BANGRIDE_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BrStatus {
  BR_STATUS_OK = 0,
  BR_STATUS_NULL_POINTER = 1,
  BR_STATUS_INVALID_ARGUMENT = 2,
  BR_STATUS_NUMERICAL = 3,
  BR_STATUS_INFEASIBLE = 4,
  BR_STATUS_DOMAIN = 5,
  BR_STATUS_IO = 6,
  BR_STATUS_PARSE = 7,
  BR_STATUS_CAPABILITY = 8,
  BR_STATUS_FAILED = 9,
  BR_STATUS_PANIC = 10,
} BrStatus;

typedef enum BrVerdict {
  BR_VERDICT_SATISFIED = 0,
  BR_VERDICT_VIOLATED = 1,
  BR_VERDICT_INCONCLUSIVE = 2,
} BrVerdict;

typedef struct BrCertificate BrCertificate;

typedef struct BrProblem BrProblem;

typedef struct BrTrajectory BrTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *br_last_error(void);

/**
 * Built-in problem by name: `example1a`, `example1b` or `spm`.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum BrStatus br_problem_builtin(const char *name, struct BrProblem **out);

/**
 * Linear-diagonal problem `ẋ = diag(a) x + 1 u` with objective `wᵀx(t_f)`.
 *
 * # Safety
 * `a`, `x0` and `weights` must each point to `n` doubles.
 */
enum BrStatus br_problem_linear_diagonal(size_t n,
                                         const double *a,
                                         const double *x0,
                                         const double *weights,
                                         double u_min,
                                         double u_max,
                                         double t_f,
                                         struct BrProblem **out);

/**
 * Appends `(wᵀx) u + vᵀx + b ≤ 0`.
 *
 * # Safety
 * `problem` must be a live handle; `w` and `v` must point to `dim` doubles.
 */
enum BrStatus br_problem_add_bilinear(struct BrProblem *problem,
                                      const double *w,
                                      const double *v,
                                      double b);

/**
 * # Safety
 * `problem` must be a handle from this library or null.
 */
void br_problem_free(struct BrProblem *problem);

/**
 * State dimension, or 0 for a null handle.
 *
 * # Safety
 * `problem` must be a live handle or null.
 */
size_t br_problem_dim(const struct BrProblem *problem);

/**
 * Hybrid simulation with step `dt`; `dt ≤ 0` selects `1e-3·t_f`.
 *
 * # Safety
 * `problem` must be a live handle and `out` a valid pointer.
 */
enum BrStatus br_hybrid_simulate(const struct BrProblem *problem,
                                 double dt,
                                 struct BrTrajectory **out);

/**
 * # Safety
 * `traj` must be a handle from this library or null.
 */
void br_trajectory_free(struct BrTrajectory *traj);

/**
 * Number of samples, or 0 for a null handle.
 *
 * # Safety
 * `traj` must be a live handle or null.
 */
size_t br_trajectory_len(const struct BrTrajectory *traj);

/**
 * Copies sample times into `buf`, which must hold `len` doubles.
 *
 * # Safety
 * `traj` must be a live handle and `buf` writable for `len` doubles.
 */
enum BrStatus br_trajectory_times(const struct BrTrajectory *traj, double *buf, size_t len);

/**
 * Copies left-limit inputs into `buf`, which must hold `len` doubles.
 *
 * # Safety
 * `traj` must be a live handle and `buf` writable for `len` doubles.
 */
enum BrStatus br_trajectory_inputs(const struct BrTrajectory *traj, double *buf, size_t len);

/**
 * Copies the state at sample `k` into `buf`, which must hold `dim` doubles.
 *
 * # Safety
 * `traj` must be a live handle and `buf` writable for `dim` doubles.
 */
enum BrStatus br_trajectory_state(const struct BrTrajectory *traj,
                                  size_t k,
                                  double *buf,
                                  size_t dim);

/**
 * Objective `φ(x(t_f)) + ∫ l dt` of `traj` under `problem`.
 *
 * # Safety
 * Both handles must be live and `out` a valid pointer.
 */
enum BrStatus br_trajectory_objective(const struct BrTrajectory *traj,
                                      const struct BrProblem *problem,
                                      double *out);

/**
 * Certifies `traj` without terminal-constraint multipliers.
 *
 * # Safety
 * Both handles must be live and `out` a valid pointer.
 */
enum BrStatus br_certify(const struct BrProblem *problem,
                         const struct BrTrajectory *traj,
                         struct BrCertificate **out);

/**
 * # Safety
 * `cert` must be a live handle and `out` a valid pointer.
 */
enum BrStatus br_certificate_verdict(const struct BrCertificate *cert, enum BrVerdict *out);

/**
 * # Safety
 * `cert` must be a live handle and `out` a valid pointer.
 */
enum BrStatus br_certificate_min_sigma(const struct BrCertificate *cert, double *out);

/**
 * Certificate as a JSON string owned by the caller; release it with
 * [`br_string_free`]. Returns null for a null handle.
 *
 * # Safety
 * `cert` must be a live handle or null.
 */
char *br_certificate_json(const struct BrCertificate *cert);

/**
 * # Safety
 * `cert` must be a handle from this library or null.
 */
void br_certificate_free(struct BrCertificate *cert);

/**
 * # Safety
 * `s` must be a string returned by this library or null.
 */
void br_string_free(char *s);

/**
 * Cell voltage with the bundled open-circuit potentials.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum BrStatus br_battery_voltage(double c_ps, double c_ns, double current, double *out);

/**
 * Kalman rank of `(diag(a), b)`.
 *
 * # Safety
 * `a` and `b` must point to `n` doubles and `out` must be valid.
 */
enum BrStatus br_kalman_rank_diagonal(const double *a, const double *b, size_t n, size_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BANGRIDE_H */
