#ifndef SOCATTACK_H
#define SOCATTACK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Metric selector for [`sa_result_metric`].
 */
typedef enum SaMetric {
  SA_METRIC_NDCG = 0,
  SA_METRIC_RECALL = 1,
  SA_METRIC_PRECISION = 2,
} SaMetric;

/**
 * Result codes. Zero is success.
 */
typedef enum SaStatus {
  SA_STATUS_OK = 0,
  SA_STATUS_NULL_ARGUMENT = 1,
  SA_STATUS_INVALID_UTF8 = 2,
  SA_STATUS_INVALID_INPUT = 3,
  SA_STATUS_INVALID_CONFIG = 4,
  SA_STATUS_INVALID_STATE = 5,
  SA_STATUS_UNSUPPORTED = 6,
  SA_STATUS_BUDGET_VIOLATION = 7,
  SA_STATUS_CONSTRAINT_INFEASIBLE = 8,
  SA_STATUS_UNDEFINED_METRIC = 9,
  SA_STATUS_TRAINING_DIVERGENCE = 10,
  SA_STATUS_IO = 11,
  SA_STATUS_PANIC = 12,
} SaStatus;

/**
 * Opaque attack outcome handle.
 */
typedef struct SaAttackResult SaAttackResult;

/**
 * Opaque session handle.
 */
typedef struct SaSession SaSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *sa_last_error(void);

/**
 * Library version as a static string.
 */
const char *sa_version(void);

/**
 * Creates a session from a JSON run configuration (NULL for defaults) and
 * builds its dataset and split.
 *
 * # Safety
 * `config_json` is NULL or a NUL-terminated string; `out` is writable.
 */
enum SaStatus sa_session_new(const char *config_json, struct SaSession **out);

/**
 * Releases a session. NULL is ignored.
 *
 * # Safety
 * `s` is NULL or a handle from [`sa_session_new`] not yet freed.
 */
void sa_session_free(struct SaSession *s);

/**
 * Number of real users and items in the session's dataset.
 *
 * # Safety
 * `s` is a live session; `users` and `items` are writable.
 */
enum SaStatus sa_session_sizes(struct SaSession *s, uintptr_t *users, uintptr_t *items);

/**
 * Trains the target (or loads `target_archive` from the config) and
 * partitions the social graph. Required before attacks.
 *
 * # Safety
 * `s` is a live session.
 */
enum SaStatus sa_session_prepare(struct SaSession *s);

/**
 * Loads a target archive written by `socattack train-target` in place of
 * training.
 *
 * # Safety
 * `s` is a live session; `path` is a NUL-terminated string.
 */
enum SaStatus sa_session_load_target(struct SaSession *s, const char *path);

/**
 * Runs one strategy (`multi`, `random`, `cold`, ...) against the prepared
 * target with the session's attack settings.
 *
 * # Safety
 * `s` is a live session, `strategy` a NUL-terminated string and `out`
 * writable.
 */
enum SaStatus sa_session_attack(struct SaSession *s,
                                const char *strategy,
                                struct SaAttackResult **out);

/**
 * Metric@k of the clean (`attacked = false`) or attacked evaluation.
 *
 * # Safety
 * `r` is a live result; `value` is writable.
 */
enum SaStatus sa_result_metric(const struct SaAttackResult *r,
                               enum SaMetric metric,
                               uintptr_t k,
                               bool attacked,
                               double *value);

/**
 * Number of injected fake users.
 *
 * # Safety
 * `r` is NULL or a live result.
 */
uintptr_t sa_result_fake_count(const struct SaAttackResult *r);

/**
 * Whether every fake respected the budget and community constraints.
 *
 * # Safety
 * `r` is NULL or a live result.
 */
bool sa_result_constraints_ok(const struct SaAttackResult *r);

/**
 * The whole result as JSON. Free with [`sa_string_free`]; NULL on failure.
 *
 * # Safety
 * `r` is NULL or a live result.
 */
char *sa_result_json(const struct SaAttackResult *r);

/**
 * Releases an attack result. NULL is ignored.
 *
 * # Safety
 * `r` is NULL or a handle from [`sa_session_attack`] not yet freed.
 */
void sa_result_free(struct SaAttackResult *r);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `p` is NULL or a string from [`sa_result_json`] not yet freed.
 */
void sa_string_free(char *p);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOCATTACK_H */
