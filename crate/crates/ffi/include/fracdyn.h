#ifndef FRACDYN_H
#define FRACDYN_H

#include <stddef.h>
#include <stdint.h>

typedef enum FdStatus {
  FD_STATUS_OK = 0,
  FD_STATUS_NULL_POINTER = 1,
  FD_STATUS_INVALID_ARGUMENT = 2,
  FD_STATUS_PARSE = 3,
  FD_STATUS_NUMERICAL = 4,
  FD_STATUS_PANIC = 5,
} FdStatus;

typedef enum FdVerdict {
  FD_VERDICT_STABLE = 0,
  FD_VERDICT_UNSTABLE = 1,
  FD_VERDICT_MARGINAL = 2,
} FdVerdict;

/**
 * Recursive minimum-energy estimator.
 */
typedef struct FdFilter FdFilter;

/**
 * Single-term fractional-order model.
 */
typedef struct FdModel FdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *fd_last_error(void);

/**
 * Grünwald-Letnikov weight `c_j(alpha)`.
 */
double fd_gl_weight(double alpha, size_t j);

/**
 * Builds a model from orders, `A` (n x n) and `B` (n x m) with identity
 * noise gain.
 *
 * # Safety
 * `alpha` holds `n` values, `a` holds `n*n`, `b` holds `n*m`; `out` is writable.
 */
enum FdStatus fd_model_new(size_t n,
                           size_t m,
                           const double *alpha,
                           const double *a,
                           const double *b,
                           struct FdModel **out);

/**
 * Parses a model JSON document.
 *
 * # Safety
 * `json` is a NUL-terminated string; `out` is writable.
 */
enum FdStatus fd_model_from_json(const char *json, struct FdModel **out);

/**
 * # Safety
 * `model` was returned by this library and is not used afterwards.
 */
void fd_model_free(struct FdModel *model);

/**
 * State and input dimensions.
 *
 * # Safety
 * `model` is a live handle; `n` and `m` are writable.
 */
enum FdStatus fd_model_dims(const struct FdModel *model, size_t *n, size_t *m);

/**
 * Simulates `steps` steps and writes `x[0..=steps]` row by row into
 * `states` (`(steps+1)*n` values). Noise is Gaussian with the given seed
 * when `sigma > 0`, otherwise absent.
 *
 * # Safety
 * `x0` holds `n` values, `u` holds `steps*m`, `states` holds `(steps+1)*n`.
 */
enum FdStatus fd_simulate(const struct FdModel *model,
                          const double *x0,
                          const double *u,
                          size_t steps,
                          uint64_t seed,
                          double sigma,
                          double *states);

/**
 * Commensurate stability verdict and the smallest margin
 * `|arg lambda| - alpha*pi/2`.
 *
 * # Safety
 * `model` is a live handle; `verdict` and `min_margin` are writable.
 */
enum FdStatus fd_stability(const struct FdModel *model,
                           enum FdVerdict *verdict,
                           double *min_margin);

/**
 * Input sequence that steers `x0` to the origin in `horizon` steps, written
 * row by row into `u` (`horizon*m` values).
 *
 * # Safety
 * `x0` holds `n` values and `u` holds `horizon*m`.
 */
enum FdStatus fd_deadbeat_input(const struct FdModel *model,
                                const double *x0,
                                size_t horizon,
                                double *u);

/**
 * Identifies orders and the coupling matrix from an input-free state
 * record of `steps+1` rows of width `n`, fitting over the first
 * `window` transitions.
 *
 * # Safety
 * `states` holds `(steps+1)*n` values, `alpha` holds `n`, `a` holds `n*n`.
 */
enum FdStatus fd_identify(const double *states,
                          size_t n,
                          size_t steps,
                          size_t depth,
                          double epsilon,
                          size_t window,
                          double *alpha,
                          double *a);

/**
 * Estimator on the depth-`v` lift of `model` with full-state measurement
 * and isotropic weights `q`, `r`, `p0`.
 *
 * # Safety
 * `model` is a live handle; `out` is writable.
 */
enum FdStatus fd_filter_new(const struct FdModel *model,
                            size_t v,
                            double q,
                            double r,
                            double p0,
                            struct FdFilter **out);

/**
 * Consumes input `u` (m values) and measurement `y` (n values) and writes
 * the current base-state estimate (n values).
 *
 * # Safety
 * `filter` is a live handle and the buffers have the stated lengths.
 */
enum FdStatus fd_filter_step(struct FdFilter *filter,
                             const double *u,
                             const double *y,
                             double *xhat);

/**
 * # Safety
 * `filter` was returned by this library and is not used afterwards.
 */
void fd_filter_free(struct FdFilter *filter);

/**
 * Frequency response of `kp + ki s^-lambda + kd s^mu` at `len` angular
 * frequencies, written as magnitude in dB and phase in degrees.
 *
 * # Safety
 * `omegas`, `mag_db` and `phase_deg` hold `len` values each.
 */
enum FdStatus fd_fopid_response(double kp,
                                double ki,
                                double kd,
                                double lambda,
                                double mu,
                                const double *omegas,
                                size_t len,
                                double *mag_db,
                                double *phase_deg);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FRACDYN_H */
