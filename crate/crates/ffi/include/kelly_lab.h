#ifndef KELLY_LAB_H
#define KELLY_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result of every fallible call.
 */
typedef enum KlStatus {
  KL_STATUS_OK = 0,
  KL_STATUS_NULL_POINTER = 1,
  KL_STATUS_INVALID_ARGUMENT = 2,
  KL_STATUS_CONFIG = 3,
  KL_STATUS_PARSE = 4,
  KL_STATUS_IO = 5,
  KL_STATUS_DIMENSION = 6,
  KL_STATUS_NUMERICAL = 7,
  KL_STATUS_LIFECYCLE = 8,
  KL_STATUS_LINALG = 9,
  KL_STATUS_HMM = 10,
  KL_STATUS_PANIC = 99,
} KlStatus;

/**
 * Parsed experiment configuration.
 */
typedef struct KlConfig KlConfig;

/**
 * One portfolio environment.
 */
typedef struct KlEnv KlEnv;

/**
 * Trained policy loaded from a checkpoint.
 */
typedef struct KlPolicy KlPolicy;

/**
 * Summary of an evaluation run. Growth fields are NaN when every episode
 * went bankrupt.
 */
typedef struct KlEvalStats {
  uint64_t episodes;
  uint64_t bankruptcies;
  double mean_growth;
  double mad;
} KlEvalStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *kl_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *kl_last_error(void);

/**
 * Loads an experiment file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum KlStatus kl_config_load(const char *path, struct KlConfig **out);

/**
 * Parses an experiment from TOML text.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a writable pointer.
 */
enum KlStatus kl_config_parse(const char *toml, struct KlConfig **out);

/**
 * Writes the 64-character SHA-256 of the configuration plus a NUL into
 * `buf`, which must hold at least 65 bytes.
 *
 * # Safety
 * `config` must come from this library; `buf` must be writable for `len` bytes.
 */
enum KlStatus kl_config_hash(const struct KlConfig *config, char *buf, size_t len);

/**
 * # Safety
 * `config` must be NULL or a handle from this library not yet freed.
 */
void kl_config_free(struct KlConfig *config);

/**
 * Number of assets in the configured market.
 *
 * # Safety
 * `config` must come from this library; `out` must be writable.
 */
enum KlStatus kl_config_n_assets(const struct KlConfig *config, size_t *out);

/**
 * Kelly-optimal weights of one regime, cash first (`len` = assets + 1), and
 * their expected growth rate per annum.
 *
 * # Safety
 * `config` must come from this library; `weights` must hold `len` doubles
 * and `growth` must be writable.
 */
enum KlStatus kl_solve(const struct KlConfig *config,
                       size_t regime,
                       double *weights,
                       size_t len,
                       double *growth);

/**
 * Execution cost of trading `shares` over one period of length `dt` while
 * the price moves linearly from `s_start` to `s_end`.
 *
 * # Safety
 * `out` must be writable.
 */
enum KlStatus kl_trade_cost(double s_start,
                            double s_end,
                            double shares,
                            double dt,
                            double eta,
                            double gamma,
                            double *out);

/**
 * Creates an environment from the configuration.
 *
 * # Safety
 * `config` must come from this library; `out` must be writable.
 */
enum KlStatus kl_env_new(const struct KlConfig *config, struct KlEnv **out);

/**
 * # Safety
 * `env` must be NULL or a handle from this library not yet freed.
 */
void kl_env_free(struct KlEnv *env);

/**
 * Observation length; 0 for a NULL handle.
 *
 * # Safety
 * `env` must be NULL or a live handle.
 */
size_t kl_env_obs_dim(const struct KlEnv *env);

/**
 * Action length (number of assets); 0 for a NULL handle.
 *
 * # Safety
 * `env` must be NULL or a live handle.
 */
size_t kl_env_n_assets(const struct KlEnv *env);

/**
 * Current wealth; NaN for a NULL handle.
 *
 * # Safety
 * `env` must be NULL or a live handle.
 */
double kl_env_wealth(const struct KlEnv *env);

/**
 * Starts an episode on the price path drawn from `seed` and writes the
 * first observation.
 *
 * # Safety
 * `env` must be live; `obs` must hold `obs_len` doubles.
 */
enum KlStatus kl_env_reset(struct KlEnv *env, uint64_t seed, double *obs, size_t obs_len);

/**
 * Rebalances to the stock weights in `action` and advances one period.
 * `bankrupt` may be NULL.
 *
 * # Safety
 * `env` must be live; `action` must hold `action_len` doubles, `obs` must
 * hold `obs_len` doubles, and `reward`, `done` must be writable.
 */
enum KlStatus kl_env_step(struct KlEnv *env,
                          const double *action,
                          size_t action_len,
                          double *obs,
                          size_t obs_len,
                          double *reward,
                          bool *done,
                          bool *bankrupt);

/**
 * Loads a trained policy checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum KlStatus kl_policy_load(const char *path, struct KlPolicy **out);

/**
 * # Safety
 * `policy` must be NULL or a handle from this library not yet freed.
 */
void kl_policy_free(struct KlPolicy *policy);

/**
 * Deterministic action of the policy for the environment's current state.
 *
 * # Safety
 * Both handles must be live; `obs` must hold `obs_len` doubles and `action`
 * `action_len` doubles.
 */
enum KlStatus kl_policy_act(const struct KlPolicy *policy,
                            const struct KlEnv *env,
                            const double *obs,
                            size_t obs_len,
                            double *action,
                            size_t action_len);

/**
 * Evaluates the policy on `episodes` evaluation paths of `seed` in the
 * configured environment.
 *
 * # Safety
 * Both handles must be live and `out` writable.
 */
enum KlStatus kl_policy_evaluate(const struct KlPolicy *policy,
                                 const struct KlConfig *config,
                                 size_t episodes,
                                 uint64_t seed,
                                 struct KlEvalStats *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KELLY_LAB_H */
