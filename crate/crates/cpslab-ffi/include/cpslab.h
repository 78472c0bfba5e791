#ifndef CPSLAB_H
#define CPSLAB_H

/* Generated by cbindgen from crates/cpslab-ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every call.
 */
typedef enum CpslabStatus {
  CPSLAB_STATUS_OK = 0,
  /**
   * Null pointer, bad UTF-8 or an index out of range.
   */
  CPSLAB_STATUS_INVALID_ARGUMENT = 1,
  CPSLAB_STATUS_VALIDATION = 2,
  CPSLAB_STATUS_NUMERICAL = 3,
  CPSLAB_STATUS_PARSE = 4,
  CPSLAB_STATUS_IO = 5,
  CPSLAB_STATUS_DIMENSION = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  CPSLAB_STATUS_INTERNAL = 7,
} CpslabStatus;

/**
 * Per-step signal selector for [`cpslab_run_signal`].
 */
typedef enum CpslabSignal {
  CPSLAB_SIGNAL_U = 0,
  CPSLAB_SIGNAL_Y = 1,
  CPSLAB_SIGNAL_RY = 2,
  CPSLAB_SIGNAL_RU = 3,
  CPSLAB_SIGNAL_RYU = 4,
  CPSLAB_SIGNAL_Y_TRUE = 5,
} CpslabSignal;

/**
 * Completed run handle.
 */
typedef struct CpslabRun CpslabRun;

/**
 * Scenario configuration handle.
 */
typedef struct CpslabScenario CpslabScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next failing call.
 */
const char *cpslab_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cpslab_version(void);

/**
 * Parse a scenario from JSON text. The config is validated before it is returned.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out_handle` a valid pointer.
 */
enum CpslabStatus cpslab_scenario_from_json(const char *json, struct CpslabScenario **out_handle);

/**
 * Load a built-in preset by name, or a JSON file by path.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out_handle` a valid pointer.
 */
enum CpslabStatus cpslab_scenario_load(const char *name, struct CpslabScenario **out_handle);

/**
 * Override the seed.
 *
 * # Safety
 * `scenario` must come from this library and not be freed.
 */
enum CpslabStatus cpslab_scenario_set_seed(struct CpslabScenario *scenario, uint64_t seed);

/**
 * Override the run length in steps.
 *
 * # Safety
 * `scenario` must come from this library and not be freed.
 */
enum CpslabStatus cpslab_scenario_set_steps(struct CpslabScenario *scenario, size_t steps);

/**
 * Release a scenario. Null is ignored.
 *
 * # Safety
 * `scenario` must come from this library and not be freed twice.
 */
void cpslab_scenario_free(struct CpslabScenario *scenario);

/**
 * Simulate a scenario.
 *
 * # Safety
 * `scenario` must come from this library; `out_handle` must be a valid pointer.
 */
enum CpslabStatus cpslab_run(const struct CpslabScenario *scenario, struct CpslabRun **out_handle);

/**
 * Number of simulated steps and the input and output dimensions.
 *
 * # Safety
 * `run` must come from this library; the output pointers must be valid.
 */
enum CpslabStatus cpslab_run_dims(const struct CpslabRun *run, size_t *steps, size_t *m, size_t *p);

/**
 * Copy one signal at step `k` into `buf`, which holds `len` doubles and must fit the signal.
 *
 * # Safety
 * `run` must come from this library; `buf` must point to `len` writable doubles.
 */
enum CpslabStatus cpslab_run_signal(const struct CpslabRun *run,
                                    enum CpslabSignal signal,
                                    size_t k,
                                    double *buf,
                                    size_t len);

/**
 * Evaluations and alarms of one named detector over the whole run.
 *
 * # Safety
 * `run` must come from this library; `detector` must be NUL-terminated; the
 * output pointers must be valid.
 */
enum CpslabStatus cpslab_run_alarms(const struct CpslabRun *run,
                                    const char *detector,
                                    size_t *evaluations,
                                    size_t *alarms);

/**
 * Write the trajectory, verdict, report and config-echo files into `dir`.
 *
 * # Safety
 * `run` must come from this library; `dir` must be NUL-terminated.
 */
enum CpslabStatus cpslab_run_write(const struct CpslabRun *run, const char *dir);

/**
 * Release a run. Null is ignored.
 *
 * # Safety
 * `run` must come from this library and not be freed twice.
 */
void cpslab_run_free(struct CpslabRun *run);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CPSLAB_H */
