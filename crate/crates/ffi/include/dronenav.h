#ifndef DRONENAV_H
#define DRONENAV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome codes written by [`dn_env_outcome`].
 */
#define DN_OUTCOME_NONE -1

#define DN_OUTCOME_SUCCESS 0

#define DN_OUTCOME_ALL_DEAD 1

#define DN_OUTCOME_ESCAPED 2

#define DN_OUTCOME_CYCLE_CAP 3

typedef enum DnStatus {
  DN_STATUS_OK = 0,
  DN_STATUS_NULL_POINTER = 1,
  DN_STATUS_INVALID_UTF8 = 2,
  DN_STATUS_INVALID_JSON = 3,
  DN_STATUS_INVALID_SCENARIO = 4,
  DN_STATUS_INVALID_ARGUMENT = 5,
  DN_STATUS_UNKNOWN_AGENT = 6,
  DN_STATUS_DEAD_AGENT = 7,
  DN_STATUS_TERMINAL = 8,
  DN_STATUS_BUFFER_TOO_SMALL = 9,
  DN_STATUS_REJECTED = 10,
  DN_STATUS_INTERNAL = 11,
} DnStatus;

/**
 * Simulation state of one scenario.
 */
typedef struct DnEnv DnEnv;

/**
 * Operator session with the controller attached.
 */
typedef struct DnSession DnSession;

/**
 * Result of one agent move.
 */
typedef struct DnStep {
  double reward;
  double distance_delta;
  uint32_t targets_reached;
  bool died;
} DnStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dn_version(void);

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on this thread.
 */
const char *dn_last_error(void);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void dn_string_free(char *s);

/**
 * Creates an environment from a JSON scenario.
 *
 * # Safety
 * `spec_json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DnStatus dn_env_create(const char *spec_json, uint64_t seed, struct DnEnv **out);

/**
 * # Safety
 * `env` must be null or a handle from [`dn_env_create`] not yet freed.
 */
void dn_env_free(struct DnEnv *env);

/**
 * Number of agents and the length of one observation.
 *
 * # Safety
 * `env` must be a live handle; the out pointers must be valid.
 */
enum DnStatus dn_env_shape(struct DnEnv *env,
                           uint32_t *n_agents,
                           size_t *obs_len,
                           uint32_t *n_actions);

/**
 * Moves one agent. `action` is 0..6 in the order forward, backward, left, right, up, down.
 *
 * # Safety
 * `env` must be a live handle; `out` may be null.
 */
enum DnStatus dn_env_step(struct DnEnv *env, uint32_t agent, uint32_t action, struct DnStep *out);

/**
 * Closes the current cycle (target motion, detections, cycle counter).
 *
 * # Safety
 * `env` must be a live handle.
 */
enum DnStatus dn_env_end_cycle(struct DnEnv *env);

/**
 * Writes the observation of `agent` into `buf`. `len` must be at least the length
 * reported by [`dn_env_shape`].
 *
 * # Safety
 * `env` must be a live handle and `buf` valid for `len` floats.
 */
enum DnStatus dn_env_observation(struct DnEnv *env, uint32_t agent, float *buf, size_t len);

/**
 * Writes one of the `DN_OUTCOME_*` codes, applying the scenario's cycle cap.
 *
 * # Safety
 * `env` must be a live handle and `out` valid.
 */
enum DnStatus dn_env_outcome(struct DnEnv *env, int32_t *out);

/**
 * Full state as JSON.
 *
 * # Safety
 * `env` must be a live handle and `out` valid.
 */
enum DnStatus dn_env_state_json(struct DnEnv *env, char **out);

/**
 * Digest of the full state.
 *
 * # Safety
 * `env` must be a live handle and `out` valid.
 */
enum DnStatus dn_env_state_hash(struct DnEnv *env, char **out);

/**
 * Runs one controller episode with the scenario's policy and returns its metrics as JSON.
 *
 * # Safety
 * `spec_json` must be a NUL-terminated string, `base_dir` null or a NUL-terminated
 * path used to resolve relative parameter files, and `out` valid.
 */
enum DnStatus dn_run_episode(const char *spec_json,
                             uint64_t seed,
                             const char *base_dir,
                             char **out);

/**
 * Runs `n` episodes from `base_seed` and returns the aggregate report as JSON.
 *
 * # Safety
 * `spec_json` must be a NUL-terminated string and `out` valid.
 */
enum DnStatus dn_run_experiment(const char *spec_json, uint32_t n, uint64_t base_seed, char **out);

/**
 * Creates a paused operator session.
 *
 * # Safety
 * `spec_json` must be a NUL-terminated string, `base_dir` null or a NUL-terminated
 * path, and `out` valid.
 */
enum DnStatus dn_session_create(const char *spec_json,
                                uint64_t seed,
                                const char *base_dir,
                                struct DnSession **out);

/**
 * # Safety
 * `s` must be null or a handle from [`dn_session_create`] not yet freed.
 */
void dn_session_free(struct DnSession *s);

/**
 * Applies a JSON command such as `{"type":"step","n":5}`.
 *
 * On acceptance `out` receives `{"accepted":…,"events":[…]}` and the call returns `Ok`.
 * On rejection it receives `{"rejection":{"code":…,"message":…}}` and the call returns
 * `Rejected`.
 *
 * # Safety
 * `s` must be a live handle, `cmd_json` a NUL-terminated string and `out` valid.
 */
enum DnStatus dn_session_command(struct DnSession *s, const char *cmd_json, char **out);

/**
 * Advances a running session by one tick and returns the events as a JSON array.
 *
 * # Safety
 * `s` must be a live handle and `out` valid.
 */
enum DnStatus dn_session_tick(struct DnSession *s, char **out);

/**
 * Current scene with obstacles, as JSON.
 *
 * # Safety
 * `s` must be a live handle and `out` valid.
 */
enum DnStatus dn_session_scene(struct DnSession *s, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRONENAV_H */
