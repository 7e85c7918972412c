#ifndef SWARMTRACK_H
#define SWARMTRACK_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes of every fallible call.
typedef enum StStatus {
  ST_STATUS_OK = 0,
  ST_STATUS_NULL_POINTER = 1,
  ST_STATUS_INVALID_UTF8 = 2,
  ST_STATUS_PARSE = 3,
  ST_STATUS_VALIDATION = 4,
  ST_STATUS_RUNTIME = 5,
  ST_STATUS_IO = 6,
  ST_STATUS_OUT_OF_RANGE = 7,
  ST_STATUS_BUFFER_TOO_SMALL = 8,
  ST_STATUS_PANIC = 99,
} StStatus;

// Which quantity [`st_trajectory_get`] reads.
typedef enum StQuantity {
  ST_QUANTITY_STATE = 0,
  ST_QUANTITY_ACTION = 1,
} StQuantity;

// Resolved scenario.
typedef struct StScenario StScenario;

// Completed run with its metrics.
typedef struct StTrajectory StTrajectory;

// Summary numbers of a run.
typedef struct StMetrics {
  size_t agents;
  size_t horizon;
  double total_cost;
  double final_tracking_error;
  double max_abs_action;
  // Negative when the run had no constraints.
  double max_violation;
  // Negative when no single agent was attacked.
  double attacked_distance;
} StMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *st_last_error_message(void);

void st_clear_error(void);

// Library version as a static NUL-terminated string.
const char *st_version(void);

// Parses and validates a scenario document (`is_json` selects JSON,
// otherwise TOML).
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum StStatus st_scenario_from_str(const char *text, bool is_json, struct StScenario **out);

// Loads a scenario file; the format follows the extension.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum StStatus st_scenario_from_file(const char *path, struct StScenario **out);

// # Safety
// `scenario` must come from this library (or be null) and not be used
// afterwards.
void st_scenario_free(struct StScenario *scenario);

// Writes `(agents, horizon, state_dim, action_dim)` of a scenario.
//
// # Safety
// All pointers must be valid.
enum StStatus st_scenario_dims(const struct StScenario *scenario,
                               size_t *agents,
                               size_t *horizon,
                               size_t *state_dim,
                               size_t *action_dim);

// Canonical JSON echo of a scenario; release with [`st_string_free`].
//
// # Safety
// `scenario` must be valid; `out` must be a valid pointer.
enum StStatus st_scenario_to_json(const struct StScenario *scenario, char **out);

// # Safety
// `s` must come from this library (or be null).
void st_string_free(char *s);

// Simulates a scenario.
//
// # Safety
// `scenario` must be valid; `out` must be a valid pointer.
enum StStatus st_run(const struct StScenario *scenario, struct StTrajectory **out);

// # Safety
// `trajectory` must come from this library (or be null) and not be used
// afterwards.
void st_trajectory_free(struct StTrajectory *trajectory);

// Copies `x^agent_t` or `u^agent_t` into `buf`; `agent = 0` selects the
// deep state or deep action. `quantity` takes an [`StQuantity`] value.
//
// # Safety
// `trajectory` must be valid and `buf` must hold `len` doubles.
enum StStatus st_trajectory_get(const struct StTrajectory *trajectory,
                                uint32_t quantity,
                                size_t t,
                                size_t agent,
                                double *buf,
                                size_t len);

// # Safety
// Both pointers must be valid.
enum StStatus st_trajectory_metrics(const struct StTrajectory *trajectory, struct StMetrics *out);

// Writes `trajectory.csv`, `metrics.json` and `config.resolved.json` into
// `dir`, refusing to overwrite unless `force` is set.
//
// # Safety
// `trajectory` must be valid and `dir` a NUL-terminated string.
enum StStatus st_trajectory_write(const struct StTrajectory *trajectory,
                                  const char *dir,
                                  bool force);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SWARMTRACK_H */
