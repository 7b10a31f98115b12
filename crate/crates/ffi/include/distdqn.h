#ifndef DISTDQN_H
#define DISTDQN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum DqnStatus {
  DQN_STATUS_OK = 0,
  DQN_STATUS_NULL_POINTER = 1,
  DQN_STATUS_INVALID_ARGUMENT = 2,
  DQN_STATUS_BUFFER_TOO_SMALL = 3,
  DQN_STATUS_IO = 4,
  DQN_STATUS_INTERNAL = 5,
} DqnStatus;

/**
 * Opaque environment handle.
 */
typedef struct DqnEnv DqnEnv;

/**
 * Opaque Q-network handle.
 */
typedef struct DqnNetwork DqnNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message for the calling thread into `buf` as a
 * NUL-terminated string; returns the full message length in bytes.
 *
 * # Safety
 * `buf` must point to `len` writable bytes (or be null to query the length).
 */
uintptr_t dqn_last_error_message(char *buf, uintptr_t len);

/**
 * Load a checkpoint file into a network handle; null on failure.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string.
 */
struct DqnNetwork *dqn_network_load(const char *path);

/**
 * # Safety
 * The handle must come from the matching constructor (or be null, which
 * reports an error or acts as a no-op).
 */
enum DqnStatus dqn_network_save(const struct DqnNetwork *net, const char *path);

/**
 * # Safety
 * The handle must come from the matching constructor (or be null, which
 * reports an error or acts as a no-op).
 */
void dqn_network_free(struct DqnNetwork *net);

/**
 * # Safety
 * The handle must come from the matching constructor (or be null, which
 * reports an error or acts as a no-op).
 */
uint32_t dqn_network_input_dim(const struct DqnNetwork *net);

/**
 * # Safety
 * The handle must come from the matching constructor (or be null, which
 * reports an error or acts as a no-op).
 */
uint32_t dqn_network_action_count(const struct DqnNetwork *net);

/**
 * Q-values for an observation; `q_out` must hold `action_count` doubles.
 *
 * # Safety
 * `net` must come from `dqn_network_load`; `obs` must point to `obs_len`
 * doubles and `q_out` to `q_len` writable doubles.
 */
enum DqnStatus dqn_network_forward(const struct DqnNetwork *net,
                                   const double *obs,
                                   uintptr_t obs_len,
                                   double *q_out,
                                   uintptr_t q_len);

/**
 * Greedy action for an observation (lowest index wins ties).
 *
 * # Safety
 * `net` must come from `dqn_network_load`; `obs` must point to `obs_len`
 * doubles; `action_out` must be writable.
 */
enum DqnStatus dqn_network_greedy_action(const struct DqnNetwork *net,
                                         const double *obs,
                                         uintptr_t obs_len,
                                         uint32_t *action_out);

/**
 * Create a named environment ("chain" or "gridworld"); null if unknown.
 *
 * # Safety
 * `name` must be a valid NUL-terminated string.
 */
struct DqnEnv *dqn_env_create(const char *name);

/**
 * # Safety
 * The handle must come from the matching constructor (or be null, which
 * reports an error or acts as a no-op).
 */
void dqn_env_free(struct DqnEnv *env);

/**
 * # Safety
 * The handle must come from the matching constructor (or be null, which
 * reports an error or acts as a no-op).
 */
uint32_t dqn_env_observation_dim(const struct DqnEnv *env);

/**
 * # Safety
 * The handle must come from the matching constructor (or be null, which
 * reports an error or acts as a no-op).
 */
uint32_t dqn_env_action_count(const struct DqnEnv *env);

/**
 * # Safety
 * The handle must come from the matching constructor (or be null, which
 * reports an error or acts as a no-op).
 */
uint32_t dqn_env_null_action(const struct DqnEnv *env);

/**
 * Reset with a seed; writes the initial observation.
 *
 * # Safety
 * `env` must come from `dqn_env_create`; `obs_out` must point to
 * `obs_len` writable doubles.
 */
enum DqnStatus dqn_env_reset(struct DqnEnv *env, uint64_t seed, double *obs_out, uintptr_t obs_len);

/**
 * Step the environment; writes the next observation, reward and terminal
 * flag. Stepping a finished episode is an InvalidArgument error.
 *
 * # Safety
 * `env` must come from `dqn_env_create`; `obs_out` must point to
 * `obs_len` writable doubles; `reward_out` and `terminal_out` must be
 * writable.
 */
enum DqnStatus dqn_env_step(struct DqnEnv *env,
                            uint32_t action,
                            double *obs_out,
                            uintptr_t obs_len,
                            double *reward_out,
                            uint8_t *terminal_out);

/**
 * Expert-anchored normalization: 100*(agent-random)/(human-random).
 * Fails with InvalidArgument when human == random.
 *
 * # Safety
 * `out` must be a writable double pointer.
 */
enum DqnStatus dqn_normalize_score(double agent, double random, double human, double *out);

/**
 * Reference-agent normalization. `defined_out` is 0 when the value has no
 * meaning (undefined baseline even after the optional fallback).
 *
 * # Safety
 * `out` and `defined_out` must be writable pointers.
 */
enum DqnStatus dqn_reference_normalize_score(double gorila,
                                             double random,
                                             double dqn,
                                             uint8_t use_fallback,
                                             double *out,
                                             uint8_t *defined_out);

/**
 * Exact optimal Q by value iteration on a named environment; `q_out` is
 * filled row-major over states. The required length is always reported
 * through `len_out`, even when the buffer is too small.
 *
 * # Safety
 * `env_name` must be a valid NUL-terminated string; `q_out` must point to
 * `q_cap` writable doubles (or be null to query); `len_out` must be
 * writable.
 */
enum DqnStatus dqn_value_iteration(const char *env_name,
                                   double gamma,
                                   double tol,
                                   double *q_out,
                                   uintptr_t q_cap,
                                   uintptr_t *len_out);

/**
 * Run a full experiment from config text; writes the run directory and
 * reports the final greedy evaluation score.
 *
 * # Safety
 * `config_text` and `out_dir` must be valid NUL-terminated strings;
 * `final_score_out` may be null or must be writable.
 */
enum DqnStatus dqn_run_experiment(const char *config_text,
                                  const char *out_dir,
                                  double *final_score_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DISTDQN_H */
