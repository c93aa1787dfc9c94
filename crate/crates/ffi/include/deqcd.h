#ifndef DEQCD_H
#define DEQCD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum DeqcdStatus {
  DEQCD_STATUS_OK = 0,
  DEQCD_STATUS_NULL_POINTER = 1,
  DEQCD_STATUS_CONFIG = 2,
  DEQCD_STATUS_DOMAIN = 3,
  DEQCD_STATUS_CONTRACT = 4,
  DEQCD_STATUS_INFINITE_DIVERGENCE = 5,
  DEQCD_STATUS_INCOMMENSURABLE = 6,
  DEQCD_STATUS_MODEL = 7,
  DEQCD_STATUS_CALIBRATION = 8,
  DEQCD_STATUS_ESTIMATION = 9,
  DEQCD_STATUS_IO = 10,
  DEQCD_STATUS_PANIC = 11,
} DeqcdStatus;

// Fusion rule selector. `Fractional` reads the sampling probability argument.
typedef enum DeqcdRule {
  DEQCD_RULE_MAX = 0,
  DEQCD_RULE_SUM = 1,
  DEQCD_RULE_ALL = 2,
  DEQCD_RULE_ORACLE_CUSUM = 3,
  DEQCD_RULE_FRACTIONAL = 4,
} DeqcdRule;

// One sensor's local procedure.
typedef struct DeqcdModel DeqcdModel;

// A sensor network with its affected set and change point.
typedef struct DeqcdScenario DeqcdScenario;

// The traces of a batch of runs.
typedef struct DeqcdTraces DeqcdTraces;

// Outcome of one run. `change_point` is 0 when the change never happens.
typedef struct DeqcdRunSummary {
  uint64_t stop_slot;
  bool censored;
  uint64_t change_point;
  uint64_t seed;
  size_t sensors;
} DeqcdRunSummary;

// Per-sensor counters of one run.
typedef struct DeqcdSensorCounters {
  uint64_t samples_pre;
  uint64_t samples_post;
  uint64_t transmissions_pre;
  uint64_t transmissions_post;
  uint64_t max_skip_run;
  double final_w;
} DeqcdSensorCounters;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *deqcd_version(void);

// Message of the last failed call on this thread, or NULL. Valid until the next call.
const char *deqcd_last_error_message(void);

// Gaussian sensor: N(`pre_mean`, `variance`) before the change, N(`post_mean`, `variance`) after.
//
// # Safety
// `out_model` must be writable.
enum DeqcdStatus deqcd_model_gaussian(double pre_mean,
                                      double post_mean,
                                      double variance,
                                      double mu,
                                      double h,
                                      double d,
                                      struct DeqcdModel **out_model);

// Discrete sensor on `support` with pre- and post-change probabilities, all of length `len`.
//
// # Safety
// The three arrays must hold `len` readable values; `out_model` must be writable.
enum DeqcdStatus deqcd_model_discrete(const double *support,
                                      const double *pre_probs,
                                      const double *post_probs,
                                      size_t len,
                                      double mu,
                                      double h,
                                      double d,
                                      struct DeqcdModel **out_model);

// # Safety
// `model` must come from a `deqcd_model_*` constructor and not be freed twice. NULL is ignored.
void deqcd_model_free(struct DeqcdModel *model);

// Duty-cycle bound `mu / (mu + D(f0 || f1))` for an unbounded `h`.
//
// # Safety
// `model` must be a live handle and `out_bound` writable.
enum DeqcdStatus deqcd_model_pdc_bound_hinf(const struct DeqcdModel *model, double *out_bound);

// `count` copies of `model`; `affected` lists sensor indices, `change_point` 0 means never.
//
// # Safety
// `model` must be live, `affected` must hold `n_affected` values, `out_scenario` writable.
enum DeqcdStatus deqcd_scenario_identical(const struct DeqcdModel *model,
                                          size_t count,
                                          const size_t *affected,
                                          size_t n_affected,
                                          uint64_t change_point,
                                          struct DeqcdScenario **out_scenario);

// # Safety
// `scenario` must come from a scenario constructor and not be freed twice. NULL is ignored.
void deqcd_scenario_free(struct DeqcdScenario *scenario);

// First-order threshold meeting false alarm rate `alpha` with `sensors` sensors.
//
// # Safety
// `out_threshold` must be writable.
enum DeqcdStatus deqcd_threshold_for_far(enum DeqcdRule rule,
                                         double alpha,
                                         size_t sensors,
                                         double *out_threshold);

// One run with the given seed. `sampling_prob` is read only by `Fractional`.
//
// # Safety
// `scenario` must be live and `out_summary` writable.
enum DeqcdStatus deqcd_run_once(const struct DeqcdScenario *scenario,
                                enum DeqcdRule rule,
                                double sampling_prob,
                                double threshold,
                                uint64_t cap,
                                uint64_t seed,
                                struct DeqcdRunSummary *out_summary);

// `runs` independent runs; run `i` is seeded from `seed` and `i`.
//
// # Safety
// `scenario` must be live and `out_traces` writable.
enum DeqcdStatus deqcd_run_batch(const struct DeqcdScenario *scenario,
                                 enum DeqcdRule rule,
                                 double sampling_prob,
                                 double threshold,
                                 uint64_t cap,
                                 uint64_t seed,
                                 size_t runs,
                                 struct DeqcdTraces **out_traces);

// # Safety
// `traces` must be live; `out_len` writable.
enum DeqcdStatus deqcd_traces_len(const struct DeqcdTraces *traces, size_t *out_len);

// # Safety
// `traces` must be live; `out_summary` writable.
enum DeqcdStatus deqcd_traces_summary(const struct DeqcdTraces *traces,
                                      size_t run,
                                      struct DeqcdRunSummary *out_summary);

// # Safety
// `traces` must be live; `out_counters` writable.
enum DeqcdStatus deqcd_traces_sensor(const struct DeqcdTraces *traces,
                                     size_t run,
                                     size_t sensor,
                                     struct DeqcdSensorCounters *out_counters);

// False alarm rate of a pre-change batch with its standard error.
//
// # Safety
// `traces` must be live; both outputs writable.
enum DeqcdStatus deqcd_traces_estimate_far(const struct DeqcdTraces *traces,
                                           double *out_far,
                                           double *out_std_err);

// # Safety
// `traces` must come from [`deqcd_run_batch`] and not be freed twice. NULL is ignored.
void deqcd_traces_free(struct DeqcdTraces *traces);

// Copies the last error message into `buf` (NUL-terminated, truncated to `len`).
// Returns the full message length, or 0 when there is none.
//
// # Safety
// `buf` must hold `len` writable bytes, or be NULL with `len` 0.
size_t deqcd_copy_last_error(char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEQCD_H */
