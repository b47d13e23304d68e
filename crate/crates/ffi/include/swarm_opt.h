#ifndef SWARM_OPT_H
#define SWARM_OPT_H

#include <stddef.h>
#include <stdint.h>

typedef enum SwarmOptStatus {
  SWARM_OPT_STATUS_OK = 0,
  SWARM_OPT_STATUS_NULL_POINTER = 1,
  SWARM_OPT_STATUS_INVALID_ARGUMENT = 2,
  SWARM_OPT_STATUS_PARSE = 3,
  SWARM_OPT_STATUS_VALIDATION = 4,
  // The run stopped on a violated assumption; a partial trajectory is
  // still returned.
  SWARM_OPT_STATUS_RUNTIME = 5,
  SWARM_OPT_STATUS_IO = 6,
  SWARM_OPT_STATUS_OUT_OF_RANGE = 7,
  SWARM_OPT_STATUS_PANIC = 8,
} SwarmOptStatus;

typedef struct SwarmOptScenario SwarmOptScenario;

typedef struct SwarmOptTrajectory SwarmOptTrajectory;

typedef struct SwarmOptSummary {
  double final_consensus_spread;
  double final_optimality_gap;
  double final_y_ratio_spread;
  double max_state_envelope;
  double psi_max_row_sum_err;
  // NaN for Algorithm B.
  double replay_max_residual;
  size_t steps;
} SwarmOptSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *swarm_opt_last_error_message(void);

// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum SwarmOptStatus swarm_opt_scenario_load(const char *path, struct SwarmOptScenario **out);

// Parses scenario file text.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum SwarmOptStatus swarm_opt_scenario_parse(const char *text, struct SwarmOptScenario **out);

// The bundled scenario for the unconstrained algorithm (`which` = 0) or the
// position-constrained one (`which` = 1).
//
// # Safety
// `out` must be a valid pointer.
enum SwarmOptStatus swarm_opt_scenario_paper(uint32_t which, struct SwarmOptScenario **out);

// # Safety
// `scenario` must come from this library and not be used afterwards.
void swarm_opt_scenario_free(struct SwarmOptScenario *scenario);

// Writes agent count, dimension and horizon into any non-null outputs.
//
// # Safety
// `scenario` must be a live handle; outputs must be valid or null.
enum SwarmOptStatus swarm_opt_scenario_info(const struct SwarmOptScenario *scenario,
                                            size_t *n,
                                            size_t *m,
                                            size_t *horizon);

// # Safety
// `scenario` must be a live handle.
enum SwarmOptStatus swarm_opt_scenario_set_horizon(struct SwarmOptScenario *scenario,
                                                   size_t horizon);

// Runs the scenario. On [`SwarmOptStatus::Runtime`] `*out` holds the
// trajectory up to the failing step.
//
// # Safety
// `scenario` must be a live handle and `out` a valid pointer.
enum SwarmOptStatus swarm_opt_run(const struct SwarmOptScenario *scenario,
                                  struct SwarmOptTrajectory **out);

// # Safety
// `trajectory` must come from this library and not be used afterwards.
void swarm_opt_trajectory_free(struct SwarmOptTrajectory *trajectory);

// Number of completed steps; states exist for `0..=steps`.
//
// # Safety
// `trajectory` must be a live handle and `steps` a valid pointer.
enum SwarmOptStatus swarm_opt_trajectory_steps(const struct SwarmOptTrajectory *trajectory,
                                               size_t *steps);

// Copies agent `agent`'s state at step `k`: position and velocity into
// `r` and `v` (each `len` doubles, `len` equal to the dimension), and the
// scalars into `y` and `p`. Any output may be null.
//
// # Safety
// `trajectory` must be a live handle; non-null buffers must hold `len`
// doubles; `y` and `p` must be valid or null.
enum SwarmOptStatus swarm_opt_trajectory_state(const struct SwarmOptTrajectory *trajectory,
                                               size_t k,
                                               size_t agent,
                                               double *r,
                                               double *v,
                                               size_t len,
                                               double *y,
                                               double *p);

// Convergence metrics of a trajectory produced from `scenario`.
//
// # Safety
// Both handles must be live and `out` a valid pointer.
enum SwarmOptStatus swarm_opt_trajectory_summary(const struct SwarmOptTrajectory *trajectory,
                                                 const struct SwarmOptScenario *scenario,
                                                 struct SwarmOptSummary *out);

// Writes the trajectory CSV.
//
// # Safety
// `trajectory` must be a live handle and `path` a NUL-terminated string.
enum SwarmOptStatus swarm_opt_trajectory_write_csv(const struct SwarmOptTrajectory *trajectory,
                                                   const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SWARM_OPT_H */
