#ifndef MMFL_H
#define MMFL_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum MmflStatus {
  MMFL_STATUS_OK = 0,
  MMFL_STATUS_NULL_POINTER = 1,
  MMFL_STATUS_INVALID_UTF8 = 2,
  MMFL_STATUS_INVALID_CONFIG = 3,
  MMFL_STATUS_INVALID_ARGUMENT = 4,
  MMFL_STATUS_BUFFER_TOO_SMALL = 5,
  MMFL_STATUS_EPISODE_DONE = 6,
  MMFL_STATUS_INTERNAL = 7,
} MmflStatus;

// Opaque simulator handle.
typedef struct MmflSim MmflSim;

// Summary of one environment step.
typedef struct MmflStepResult {
  // Round index the step attempted.
  uint64_t round;
  bool feasible;
  // The step was rejected and the environment reset.
  bool reset;
  bool done;
  // Round time in seconds.
  double t_k;
  // Energy spent by all vehicles in joules.
  double energy_total;
} MmflStepResult;

// Radio constants in configuration units (dBm, dB, Hz, metres).
typedef struct MmflRadio {
  double bandwidth_hz;
  uint32_t subcarriers;
  double sigma2_dbm;
  double h_ref_db;
  double p_dbm;
  double nu;
  double d_u;
  double xi;
} MmflRadio;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *mmfl_last_error(void);

// Library version as a static NUL-terminated string.
const char *mmfl_version(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must be NULL or a pointer obtained from this library that has not
// been freed yet.
void mmfl_string_free(char *s);

// The default configuration as pretty-printed JSON. Free with
// [`mmfl_string_free`].
char *mmfl_default_config_json(void);

// Creates a simulator from a JSON configuration (NULL selects the
// defaults) and a master seed.
//
// # Safety
// `config_json` must be NULL or a NUL-terminated string; `out` must be a
// valid pointer.
enum MmflStatus mmfl_sim_new(const char *config_json, uint64_t seed, struct MmflSim **out);

// # Safety
// `sim` must be NULL or a handle from [`mmfl_sim_new`] not yet freed.
void mmfl_sim_free(struct MmflSim *sim);

// Number of agents (vehicles); 0 for a NULL handle.
//
// # Safety
// `sim` must be NULL or a live handle.
size_t mmfl_sim_agents(const struct MmflSim *sim);

// Number of tasks; 0 for a NULL handle.
//
// # Safety
// `sim` must be NULL or a live handle.
size_t mmfl_sim_tasks(const struct MmflSim *sim);

// Length of one agent's observation; 0 for a NULL handle.
//
// # Safety
// `sim` must be NULL or a live handle.
size_t mmfl_sim_obs_dim(const struct MmflSim *sim);

// Number of discrete actions per agent (tasks plus idle); 0 for NULL.
//
// # Safety
// `sim` must be NULL or a live handle.
size_t mmfl_sim_action_dim(const struct MmflSim *sim);

// Resets energy, recency, models and the round counter.
//
// # Safety
// `sim` must be NULL or a live handle.
enum MmflStatus mmfl_sim_reset(struct MmflSim *sim);

// Writes all observations, agent-major, into `out` (`agents * obs_dim`
// doubles).
//
// # Safety
// `sim` must be NULL or a live handle; `out` must point to `len` writable
// doubles.
enum MmflStatus mmfl_sim_observe(const struct MmflSim *sim, double *out, size_t len);

// Advances one round with one action per agent: `0..tasks` joins that
// task, `tasks` stays idle. Per-agent rewards go to `rewards` (up to
// `rewards_len` entries) and the summary to `result`; both may be NULL.
//
// # Safety
// `sim` must be a live handle, `actions` must point to `n_actions`
// values, and non-NULL outputs must be writable.
enum MmflStatus mmfl_sim_step(struct MmflSim *sim,
                              const uint32_t *actions,
                              size_t n_actions,
                              double *rewards,
                              size_t rewards_len,
                              struct MmflStepResult *result);

// Advances one round with the equal-resource baseline schedule.
//
// # Safety
// As for [`mmfl_sim_step`].
enum MmflStatus mmfl_sim_step_era(struct MmflSim *sim,
                                  double *rewards,
                                  size_t rewards_len,
                                  struct MmflStepResult *result);

struct MmflRadio mmfl_radio_default(void);

// Uplink rate in bit/s for bandwidth share `ratio` over distance `d`.
//
// # Safety
// `radio` and `out` must be valid pointers.
enum MmflStatus mmfl_tx_rate(const struct MmflRadio *radio, double ratio, double d, double *out);

// Local computation time (s) and energy (J) for `dataset_bits` of data.
//
// # Safety
// `t_c` and `e_c` must be valid pointers.
enum MmflStatus mmfl_comp_cost(double dataset_bits,
                               double f_hz,
                               double q,
                               double lambda_cap,
                               uint32_t local_iters,
                               double *t_c,
                               double *e_c);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MMFL_H */
