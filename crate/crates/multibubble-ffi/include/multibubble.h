/* C interface to the multibubble toolkit. */

#ifndef MULTIBUBBLE_H
#define MULTIBUBBLE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call. Zero is success; anything else means the out
 * parameters were left untouched.
 */
typedef enum MbStatus {
  /**
   * Call succeeded.
   */
  MB_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  MB_STATUS_NULL_ARGUMENT = 1,
  /**
   * Invalid input: bad dimension, point outside the domain, malformed
   * configuration.
   */
  MB_STATUS_CONFIG = 2,
  /**
   * A solver failed to converge.
   */
  MB_STATUS_NUMERICAL = 3,
  /**
   * The quantity does not exist in the requested regime (for example
   * profile constants in dimension four).
   */
  MB_STATUS_NOT_DEFINED = 4,
  /**
   * The point configuration cannot arise as a concentration limit.
   */
  MB_STATUS_INFEASIBLE = 5,
  /**
   * An index was out of range.
   */
  MB_STATUS_RANGE = 6,
  /**
   * A panic was caught at the boundary; see `mb_last_error`.
   */
  MB_STATUS_INTERNAL = 7,
} MbStatus;

/**
 * Which correction profile to solve.
 */
typedef enum MbProfileKind {
  /**
   * First-order profile; bounded, with limit `c_N / (N - 2)`.
   */
  MB_PROFILE_W = 0,
  /**
   * Second-order profile; grows linearly for `N >= 5`.
   */
  MB_PROFILE_W2 = 1,
} MbProfileKind;

/**
 * Ball domain with its Green's function. Opaque.
 */
typedef struct MbDomain MbDomain;

/**
 * Correction profile sampled on the solver grid. Opaque.
 */
typedef struct MbProfile MbProfile;

/**
 * Radial shooting solution on the unit ball. Opaque.
 */
typedef struct MbRadial MbRadial;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message from the most recent failure on the calling thread, or null if
 * no call has failed yet. The pointer stays valid until the next failing
 * call on the same thread.
 */
const char *mb_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *mb_version(void);

/**
 * Creates a ball domain. `center` must point to `dim` coordinates, or be
 * null for the origin. On success `*out` owns the new handle.
 *
 * # Safety
 * `center` is read for `dim` doubles when non-null; `out` must be valid
 * for writes.
 */
enum MbStatus mb_domain_ball_new(uintptr_t dim,
                                 const double *center,
                                 double radius,
                                 struct MbDomain **out);

/**
 * Releases a domain handle. Null is ignored.
 *
 * # Safety
 * `dom` must come from `mb_domain_ball_new` and not be freed twice.
 */
void mb_domain_free(struct MbDomain *dom);

/**
 * Green's function of the domain at interior points `x`, `y` (each `dim`
 * doubles for the domain's dimension).
 *
 * # Safety
 * `x` and `y` are read for the domain dimension; `out` must be writable.
 */
enum MbStatus mb_green(const struct MbDomain *dom, const double *x, const double *y, double *out);

/**
 * Regular part of the Green's function on the diagonal.
 *
 * # Safety
 * `y` is read for the domain dimension; `out` must be writable.
 */
enum MbStatus mb_robin(const struct MbDomain *dom, const double *y, double *out);

/**
 * Gradient of the Robin function; `out` receives `dim` doubles.
 *
 * # Safety
 * `y` is read and `out` written for the domain dimension.
 */
enum MbStatus mb_grad_robin(const struct MbDomain *dom, const double *y, double *out);

/**
 * Lowest eigenvalue data of the interaction matrix for `npts` points
 * (row-major, `npts * dim` doubles). `rho` and `gap` receive scalars;
 * `vector`, when non-null, receives the `npts` components of the
 * eigenvector scaled so its first entry is one.
 *
 * # Safety
 * `points` is read for `npts * dim` doubles; out pointers as described.
 */
enum MbStatus mb_interaction_spectrum(const struct MbDomain *dom,
                                      const double *points,
                                      uintptr_t npts,
                                      double *rho,
                                      double *gap,
                                      double *vector);

/**
 * Solves a correction profile out to radius `r_max`. On success `*out`
 * owns the new handle.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum MbStatus mb_profile_solve(uintptr_t dim,
                               enum MbProfileKind kind,
                               double r_max,
                               struct MbProfile **out);

/**
 * Number of stored grid nodes.
 *
 * # Safety
 * `profile` must be a live handle.
 */
uintptr_t mb_profile_len(const struct MbProfile *profile);

/**
 * Node `i` as radius, value, derivative.
 *
 * # Safety
 * Out pointers must be writable; `profile` must be a live handle.
 */
enum MbStatus mb_profile_node(const struct MbProfile *profile,
                              uintptr_t i,
                              double *r,
                              double *w,
                              double *dw);

/**
 * Interpolated profile value at radius `r` within the solved range.
 *
 * # Safety
 * `out` must be writable; `profile` must be a live handle.
 */
enum MbStatus mb_profile_eval(const struct MbProfile *profile, double r, double *out);

/**
 * Releases a profile handle. Null is ignored.
 *
 * # Safety
 * `profile` must come from `mb_profile_solve` and not be freed twice.
 */
void mb_profile_free(struct MbProfile *profile);

/**
 * Closed-form profile constants for `dim >= 5`: the tail coefficient,
 * the profile limit, the linear growth rate of the second-order
 * profile, and the potential-term constant of the reduced energy.
 * Dimension four has no finite limit and reports `MB_STATUS_NOT_DEFINED`.
 *
 * # Safety
 * All four out pointers must be writable.
 */
enum MbStatus mb_profile_constants(uintptr_t dim,
                                   double *c_n,
                                   double *w_limit,
                                   double *a_n,
                                   double *d_n);

/**
 * Leading-order blow-up speeds for bubbles at `points` (row-major,
 * `npts * dim`) in the unit ball with constant potential `v0 < 0`, at
 * coupling `eps`. Writes `npts` speeds to `mu`. Dimension four uses the
 * exponential law; degenerate configurations report
 * `MB_STATUS_NOT_DEFINED`.
 *
 * # Safety
 * `points` is read for `npts * dim` doubles; `mu` written for `npts`.
 */
enum MbStatus mb_predict_rate_const_v(uintptr_t dim,
                                      double v0,
                                      const double *points,
                                      uintptr_t npts,
                                      double eps,
                                      double *mu);

/**
 * Shoots the radial equation in dimension `dim` with constant potential
 * level `v0 < 0` and coupling `eps_tilde > 0`, rescaled so the first
 * zero lands on the unit sphere. On success `*out` owns the new handle.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum MbStatus mb_shoot_radial(uintptr_t dim, double v0, double eps_tilde, struct MbRadial **out);

/**
 * Scalar summary of a radial solution: height scale `mu`, the rescaled
 * coupling `eps`, the rate quantity `eps * mu^-(N-4)` (or
 * `eps * ln(1/mu)` in dimension four), and the worst normalized
 * equation defect of the stored grid. Null out pointers are skipped.
 *
 * # Safety
 * Non-null out pointers must be writable; `sol` must be a live handle.
 */
enum MbStatus mb_radial_info(const struct MbRadial *sol,
                             double *mu,
                             double *eps,
                             double *rate_qty,
                             double *residual);

/**
 * Number of stored grid nodes.
 *
 * # Safety
 * `sol` must be a live handle.
 */
uintptr_t mb_radial_len(const struct MbRadial *sol);

/**
 * Node `i` as radius, value, derivative.
 *
 * # Safety
 * Out pointers must be writable; `sol` must be a live handle.
 */
enum MbStatus mb_radial_node(const struct MbRadial *sol,
                             uintptr_t i,
                             double *rho,
                             double *u,
                             double *du);

/**
 * Interpolated solution value and derivative at radius `rho` in [0, 1].
 * Null out pointers are skipped.
 *
 * # Safety
 * Non-null out pointers must be writable; `sol` must be a live handle.
 */
enum MbStatus mb_radial_eval(const struct MbRadial *sol, double rho, double *u, double *du);

/**
 * Worst relative residual over the non-vacuous integral identities of
 * the solution, a solver-independent quality certificate.
 *
 * # Safety
 * `out` must be writable; `sol` must be a live handle.
 */
enum MbStatus mb_radial_identity_residual(const struct MbRadial *sol, double *out);

/**
 * Releases a radial solution handle. Null is ignored.
 *
 * # Safety
 * `sol` must come from `mb_shoot_radial` and not be freed twice.
 */
void mb_radial_free(struct MbRadial *sol);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MULTIBUBBLE_H */
