#ifndef DIFFFLOW_H
#define DIFFFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DfStatus {
  DF_STATUS_OK = 0,
  DF_STATUS_NULL_POINTER = 1,
  DF_STATUS_INVALID_ARGUMENT = 2,
  DF_STATUS_CONFIG_ERROR = 3,
  DF_STATUS_RUNTIME_ERROR = 4,
  DF_STATUS_PANIC = 5,
} DfStatus;

typedef enum DfScheme {
  DF_SCHEME_ECMP = 0,
  DF_SCHEME_RPS = 1,
  DF_SCHEME_DIFF_FLOW = 2,
} DfScheme;

typedef enum DfClass {
  DF_CLASS_ALL = 0,
  DF_CLASS_SHORT = 1,
  DF_CLASS_LONG = 2,
} DfClass;

/**
 * Scenario configuration handle.
 */
typedef struct DfConfig DfConfig;

/**
 * Outcome of one simulation run.
 */
typedef struct DfRunResult DfRunResult;

/**
 * Per-flow outcome. Times are in seconds; `fct` is negative for flows that
 * did not complete.
 */
typedef struct DfFlowRecord {
  uint32_t flow_id;
  bool is_long;
  uint32_t size_packets;
  uint16_t src;
  uint16_t dst;
  double arrival;
  double fct;
  double ideal_fct;
  uint32_t attempts;
  uint32_t dropped;
  uint32_t retransmissions;
  uint32_t max_reorder;
  bool aborted;
} DfFlowRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *df_version(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on this thread.
 */
const char *df_last_error_message(void);

/**
 * Creates the reference configuration.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage.
 */
enum DfStatus df_config_default(struct DfConfig **out);

/**
 * Parses a TOML scenario.
 *
 * # Safety
 * `text` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DfStatus df_config_from_toml(const char *text, struct DfConfig **out);

/**
 * Overrides the number of flows generated per run.
 *
 * # Safety
 * `config` must be a handle from this library.
 */
enum DfStatus df_config_set_flow_count(struct DfConfig *config, uint32_t flows);

/**
 * # Safety
 * `config` must be null or a handle from this library not yet freed.
 */
void df_config_free(struct DfConfig *config);

/**
 * Generates the workload for (`load`, `seed`) and runs `scheme` over it.
 *
 * # Safety
 * `config` must be a handle from this library and `out` a valid pointer.
 */
enum DfStatus df_run(const struct DfConfig *config,
                     enum DfScheme scheme,
                     double load,
                     uint64_t seed,
                     struct DfRunResult **out);

/**
 * # Safety
 * `result` must be null or a handle from this library not yet freed.
 */
void df_run_result_free(struct DfRunResult *result);

/**
 * Number of flows in the run, or 0 for a null handle.
 *
 * # Safety
 * `result` must be null or a handle from this library.
 */
size_t df_run_result_flow_count(const struct DfRunResult *result);

/**
 * Whether the run stopped on its time or event budget.
 *
 * # Safety
 * `result` must be null or a handle from this library.
 */
bool df_run_result_truncated(const struct DfRunResult *result);

/**
 * Copies flow `index` into `out`.
 *
 * # Safety
 * `result` must be a handle from this library and `out` a valid pointer.
 */
enum DfStatus df_run_result_flow(const struct DfRunResult *result,
                                 size_t index,
                                 struct DfFlowRecord *out);

/**
 * Mean normalized FCT over completed flows of `class`.
 *
 * # Safety
 * `result` must be a handle from this library and `out` a valid pointer.
 */
enum DfStatus df_run_result_mean_normalized_fct(const struct DfRunResult *result,
                                                enum DfClass class_,
                                                double *out);

/**
 * Delivered fraction of packet attempts for flows of `class`.
 *
 * # Safety
 * `result` must be a handle from this library and `out` a valid pointer.
 */
enum DfStatus df_run_result_normalized_throughput(const struct DfRunResult *result,
                                                  enum DfClass class_,
                                                  double *out);

/**
 * Writes the per-flow CSV of the run to `path`.
 *
 * # Safety
 * `result` must be a handle from this library and `path` a NUL-terminated string.
 */
enum DfStatus df_run_result_write_flows_csv(const struct DfRunResult *result, const char *path);

/**
 * Blocking probability of a node whose `len` traversing paths carry packets
 * with the given probabilities, for the stated port degrees.
 *
 * # Safety
 * `probabilities` must point to `len` doubles and `out` must be valid.
 */
enum DfStatus df_blocking_probability(const double *probabilities,
                                      size_t len,
                                      size_t in_degree,
                                      size_t out_degree,
                                      double *out);

/**
 * Probability that at least one of `packets` packets is lost.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum DfStatus df_retransmission_probability(double p_loss, uint32_t packets, double *out);

/**
 * Loss probability of an M/D/1/K queue holding at most `system_capacity`
 * packets.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum DfStatus df_md1k_loss(double rho, size_t system_capacity, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DIFFFLOW_H */
