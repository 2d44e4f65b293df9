#ifndef TASKFETCH_H
#define TASKFETCH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TfAction {
  TF_ACTION_NO_FETCH = 0,
  TF_ACTION_FETCH = 1,
} TfAction;

// Result code of every fallible call.
typedef enum TfStatus {
  TF_STATUS_OK = 0,
  TF_STATUS_NULL_POINTER = 1,
  TF_STATUS_INVALID_MODEL = 2,
  TF_STATUS_INVALID_ARGUMENT = 3,
  TF_STATUS_NOT_CONVERGED = 4,
  TF_STATUS_OUT_OF_GRID = 5,
  TF_STATUS_SIMULATION = 6,
  TF_STATUS_PANIC = 7,
} TfStatus;

// Opaque tandem model.
typedef struct TfModel TfModel;

// Opaque solved value function and optimal policy.
typedef struct TfSolution TfSolution;

// Monte Carlo estimates at one cost weight. Half-widths are 95% normal
// intervals and are NaN when only one episode ran.
typedef struct TfSummary {
  double c;
  double mean_cost;
  double ci_cost;
  double b2_ave;
  double ci_b2;
  double d_ave;
  double ci_d;
  uint64_t episodes;
} TfSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next call into this library on the same thread.
const char *tf_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *tf_version(void);

// Model with constant link success probability `s` and service rate `mu`.
//
// # Safety
// `out` must be null or valid for one pointer write.
enum TfStatus tf_model_new_reduced(double s, double mu, struct TfModel **out);

// Two-state channel (`p11`, `p22`, success `s1`, `s2`) and two-state
// processor (`q11`, `q22`, rates `mu1`, `mu2`).
//
// # Safety
// `out` must be null or valid for one pointer write.
enum TfStatus tf_model_new_two_state(double p11,
                                     double p22,
                                     double s1,
                                     double s2,
                                     double q11,
                                     double q22,
                                     double mu1,
                                     double mu2,
                                     struct TfModel **out);

// # Safety
// `model` must be null or a handle from a `tf_model_new_*` call that has
// not been freed.
void tf_model_free(struct TfModel *model);

// Solves the optimal fetching problem on the grid `b1 <= b1_max`,
// `b1 + b2 <= b1_max + b2_max`. A `tol` of 0 or less and a `max_iters` of
// 0 select the defaults.
//
// # Safety
// `model` must be a live handle; `out` must be valid for one pointer write.
enum TfStatus tf_solve(const struct TfModel *model,
                       double c,
                       uint32_t b1_max,
                       uint32_t b2_max,
                       double tol,
                       uint64_t max_iters,
                       struct TfSolution **out);

// Optimal expected cost-to-go from state `(b1, b2, j, m)`.
//
// # Safety
// `sol` must be a live handle; `out` must be valid for one write.
enum TfStatus tf_solution_value(const struct TfSolution *sol,
                                uint32_t b1,
                                uint32_t b2,
                                size_t j,
                                size_t m,
                                double *out);

// Optimal action in state `(b1, b2, j, m)`.
//
// # Safety
// `sol` must be a live handle; `out` must be valid for one write.
enum TfStatus tf_solution_action(const struct TfSolution *sol,
                                 uint32_t b1,
                                 uint32_t b2,
                                 size_t j,
                                 size_t m,
                                 enum TfAction *out);

// Sweeps used by value iteration.
//
// # Safety
// `sol` must be a live handle; `out` must be valid for one write.
enum TfStatus tf_solution_iterations(const struct TfSolution *sol, uint64_t *out);

// # Safety
// `sol` must be null or a handle from `tf_solve` that has not been freed.
void tf_solution_free(struct TfSolution *sol);

// Expected cost of never fetching until the terminal queue empties.
//
// # Safety
// `out` must be valid for one write.
enum TfStatus tf_cost_never_fetch(uint32_t b1,
                                  uint32_t b2,
                                  double s,
                                  double mu,
                                  double c,
                                  double *out);

// Exact expected cost of always fetching.
//
// # Safety
// `out` must be valid for one write.
enum TfStatus tf_cost_always_fetch(uint32_t b1,
                                   uint32_t b2,
                                   double s,
                                   double mu,
                                   double c,
                                   double *out);

// Fluid approximation of the always-fetch cost.
//
// # Safety
// `out` must be valid for one write.
enum TfStatus tf_cost_always_fetch_fluid(uint32_t b1,
                                         uint32_t b2,
                                         double s,
                                         double mu,
                                         double c,
                                         double *out);

// Probability that the randomized cone rule holds in state `(b1, b2)`.
//
// # Safety
// `out` must be valid for one write.
enum TfStatus tf_rand_hold_probability(uint32_t b1,
                                       uint32_t b2,
                                       double s,
                                       double mu,
                                       double c,
                                       double *out);

// Runs `episodes` episodes of a named scenario preset under `policy`
// (`opt`, `fon`, `rfon`, `always` or `never`) at cost weight `c`.
// Episode `i` is seeded with `seed + i`.
//
// # Safety
// `preset` and `policy` must be NUL-terminated strings; `out` must be
// valid for one write.
enum TfStatus tf_simulate_preset(const char *preset,
                                 const char *policy,
                                 double c,
                                 uint64_t episodes,
                                 uint64_t seed,
                                 struct TfSummary *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* TASKFETCH_H */
