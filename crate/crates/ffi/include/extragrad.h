#ifndef EXTRAGRAD_H
#define EXTRAGRAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result code of every fallible call.
 */
typedef enum XgStatus {
  XG_STATUS_OK = 0,
  XG_STATUS_NULL_POINTER = 1,
  XG_STATUS_INVALID_ARGUMENT = 2,
  XG_STATUS_INVALID_INSTANCE = 3,
  XG_STATUS_DIVERGENCE = 4,
  XG_STATUS_INFEASIBLE = 5,
  XG_STATUS_NO_CONVERGENCE = 6,
  XG_STATUS_IO = 7,
  XG_STATUS_PANIC = 8,
} XgStatus;

/**
 * A validated problem instance.
 */
typedef struct XgProblem XgProblem;

/**
 * The output of one solver run.
 */
typedef struct XgResult XgResult;

/**
 * Solver settings. Obtain defaults from [`xg_config_default`].
 */
typedef struct XgConfig {
  uint64_t max_iters;
  /**
   * Fixed step size; zero selects the automatic step.
   */
  double step;
  uint64_t record_every;
  /**
   * Early-stop threshold on the combined residual; zero runs every iteration.
   */
  double tolerance;
  uint64_t seed;
  bool random_init;
  bool adaptive_halving;
  bool parallel;
} XgConfig;

/**
 * One recorded row of the run trace.
 */
typedef struct XgTraceRow {
  uint64_t iter;
  double objective;
  double eq_residual;
  double ineq_residual;
  double shared_eq_residual;
  double shared_ineq_residual;
  double consensus_dual;
  double consensus_primal;
  double xt_disagreement;
  double gap_surrogate;
} XgTraceRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or an empty string.
 * The pointer stays valid until the next library call on this thread.
 */
const char *xg_last_error(void);

/**
 * Releases a string returned by the library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void xg_string_free(char *s);

/**
 * Library version as a static nul-terminated string.
 */
const char *xg_version(void);

/**
 * Default solver settings.
 */
struct XgConfig xg_config_default(void);

/**
 * Parses an instance document (JSON or TOML, generic or DC-OPF).
 *
 * # Safety
 * `text` must be a nul-terminated string and `out` a writable pointer.
 */
enum XgStatus xg_problem_parse(const char *text, bool pin_slack, struct XgProblem **out);

/**
 * Loads an instance file.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a writable pointer.
 */
enum XgStatus xg_problem_load(const char *path, bool pin_slack, struct XgProblem **out);

/**
 * Generates the seeded random instance used by `random_seed<N>`.
 *
 * # Safety
 * `out` must be a writable pointer.
 */
enum XgStatus xg_problem_random(uint64_t seed, struct XgProblem **out);

/**
 * Destroys a problem. Null is ignored.
 *
 * # Safety
 * `p` must come from this library and not have been freed.
 */
void xg_problem_free(struct XgProblem *p);

/**
 * Number of agents, or 0 for a null handle.
 *
 * # Safety
 * `p` must be null or a live problem handle.
 */
size_t xg_problem_agent_count(const struct XgProblem *p);

/**
 * Length of the stacked private vector, or 0 for a null handle.
 *
 * # Safety
 * `p` must be null or a live problem handle.
 */
size_t xg_problem_private_dim(const struct XgProblem *p);

/**
 * Length of the shared vector, or 0 for a null handle.
 *
 * # Safety
 * `p` must be null or a live problem handle.
 */
size_t xg_problem_shared_dim(const struct XgProblem *p);

/**
 * Problem constants as `key=value` lines. Free with [`xg_string_free`].
 *
 * # Safety
 * `p` must be a live problem handle and `out` a writable pointer.
 */
enum XgStatus xg_problem_constants(const struct XgProblem *p, char **out);

/**
 * Solves with the centralized reference solver. Any of `objective`, `x`
 * and `xt` may be null; `x` and `xt` need capacities of at least the private
 * and shared dimensions.
 *
 * # Safety
 * `p` must be a live problem handle; non-null buffers must be writable for
 * the stated lengths.
 */
enum XgStatus xg_oracle_solve(const struct XgProblem *p,
                              double *objective,
                              double *x,
                              size_t x_len,
                              double *xt,
                              size_t xt_len);

/**
 * Runs the decentralized solver. `config` may be null for defaults.
 *
 * # Safety
 * `p` must be a live problem handle, `config` null or readable, and `out`
 * a writable pointer.
 */
enum XgStatus xg_solve(const struct XgProblem *p,
                       const struct XgConfig *config,
                       struct XgResult **out);

/**
 * Destroys a result. Null is ignored.
 *
 * # Safety
 * `r` must come from this library and not have been freed.
 */
void xg_result_free(struct XgResult *r);

/**
 * Iterations performed, or 0 for a null handle.
 *
 * # Safety
 * `r` must be null or a live result handle.
 */
uint64_t xg_result_iterations(const struct XgResult *r);

/**
 * Step size used, or NaN for a null handle.
 *
 * # Safety
 * `r` must be null or a live result handle.
 */
double xg_result_step_size(const struct XgResult *r);

/**
 * Copies the averaged private vector. `needed` (if not null) receives its
 * length even when the buffer is too small.
 *
 * # Safety
 * `r` must be a live result handle; `buf` must be writable for `len` values.
 */
enum XgStatus xg_result_x(const struct XgResult *r, double *buf, size_t len, size_t *needed);

/**
 * Copies the agents' mean of the averaged shared vector.
 *
 * # Safety
 * As for [`xg_result_x`].
 */
enum XgStatus xg_result_xt(const struct XgResult *r, double *buf, size_t len, size_t *needed);

/**
 * Number of recorded trace rows, or 0 for a null handle.
 *
 * # Safety
 * `r` must be null or a live result handle.
 */
size_t xg_result_trace_len(const struct XgResult *r);

/**
 * Copies trace row `index`.
 *
 * # Safety
 * `r` must be a live result handle and `row` writable.
 */
enum XgStatus xg_result_trace_row(const struct XgResult *r, size_t index, struct XgTraceRow *row);

/**
 * The trace as comma-separated text with a header row. Free with
 * [`xg_string_free`].
 *
 * # Safety
 * `r` must be a live result handle and `out` a writable pointer.
 */
enum XgStatus xg_result_trace_csv(const struct XgResult *r, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EXTRAGRAD_H */
