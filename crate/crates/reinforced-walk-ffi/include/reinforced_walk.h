/* C interface for the reinforced-walk library.
 *
 * Conventions:
 *  - every function returns an RwStatus code; outputs go through pointers;
 *  - state vectors are flat double arrays, x first then y (2*d entries);
 *  - handles from rw_params_new must be released with rw_params_free;
 *  - buffers are caller-allocated at the sizes stated per function.
 *
 * Kept in sync with the Rust exports (see the symbol test in src/lib.rs);
 * regenerate with cbindgen using the crate's cbindgen.toml if preferred.
 */

#ifndef REINFORCED_WALK_H
#define REINFORCED_WALK_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes returned by every call. */
typedef enum RwStatus {
  RW_STATUS_OK = 0,
  RW_STATUS_NULL_POINTER = 1,
  RW_STATUS_INVALID_ARGUMENT = 2,
  RW_STATUS_DOMAIN_ERROR = 3,
  RW_STATUS_PANIC = 4,
} RwStatus;

/* Opaque parameter handle (vertex count d, exponent alpha, floor delta,
 * normalization offset n0). */
typedef struct RwParams RwParams;

/* Scalar results of one simulated chain. */
typedef struct RwRunSummary {
  double final_h;
  double dist_to_uniform;
  /* 1 when every recorded tail sample lies in the trapping region. */
  int trapped;
} RwRunSummary;

/* Aggregate of a Monte Carlo campaign. */
typedef struct RwMonteCarloSummary {
  double trapped_rate;
  double near_uniform_rate;
  double mean_final_h;
} RwMonteCarloSummary;

/* Library version as a NUL-terminated static string. */
const char *rw_version(void);

/* Allocates a parameter handle. Requires d >= 2, alpha > 0,
 * 0 < delta < 1/d; n0 = 0 selects the default offset d. */
RwStatus rw_params_new(size_t d, double alpha, double delta, uint64_t n0,
                       RwParams **out);

/* Releases a handle from rw_params_new. A null pointer is a no-op. */
void rw_params_free(RwParams *params);

/* The trapping-region level 2 d^(1/(alpha+1)) delta. */
RwStatus rw_s_delta_bound(const RwParams *params, double *out);

/* Jump kernel: writes pi(point) (length d) into out. */
RwStatus rw_kernel(const RwParams *params, const double *point, double *out);

/* Joint support H(x, y) = sum_i x_i y_i of a 2*d state. */
RwStatus rw_joint_support(size_t d, const double *state, double *out);

/* Closed-form derivative of the joint support along the mean-field flow. */
RwStatus rw_dh_dt(const RwParams *params, const double *state, double *out);

/* Integrates the mean-field flow in place: state (length 2*d) advances by
 * time t with RK4 steps of size step. */
RwStatus rw_flow_integrate(const RwParams *params, double *state, double t,
                           double step);

/* Runs the chain for n_steps steps from the given seed. final_state
 * (length 2*d) may be NULL; summary must not be. */
RwStatus rw_simulate(const RwParams *params, uint64_t n_steps, uint64_t seed,
                     double tail_fraction, double *final_state,
                     RwRunSummary *summary);

/* Monte Carlo campaign with seeds base_seed .. base_seed + runs - 1. */
RwStatus rw_monte_carlo(const RwParams *params, uint64_t runs,
                        uint64_t n_steps, uint64_t base_seed,
                        double tail_fraction, RwMonteCarloSummary *out);

/* Sorted eigenvalues of the flow linearization at the uniform pair
 * (out holds 2*d doubles). */
RwStatus rw_jacobian_eigenvalues(const RwParams *params, double *out);

/* Grid verification of the master inequality
 * 2 sum(u_i v_i) >= ratio(u) + ratio(v) over all ordered pairs of an
 * interior lattice. Writes the worst margin and the violation count. */
RwStatus rw_verify_master_inequality(size_t d, double alpha,
                                     uint32_t resolution,
                                     double interior_floor,
                                     double *min_margin,
                                     uint64_t *violations);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* REINFORCED_WALK_H */
