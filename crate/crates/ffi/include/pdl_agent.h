#ifndef PDL_AGENT_H
#define PDL_AGENT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PdlStatus {
  PDL_STATUS_OK = 0,
  PDL_STATUS_NULL_ARGUMENT = 1,
  PDL_STATUS_INVALID_UTF8 = 2,
  // The document has syntax or validation errors.
  PDL_STATUS_INVALID_WORKFLOW = 3,
  PDL_STATUS_INVALID_JSON = 4,
  PDL_STATUS_UNKNOWN_NODE = 5,
  PDL_STATUS_INTERNAL = 6,
} PdlStatus;

// A parsed, validated and compiled workflow.
typedef struct PdlWorkflow PdlWorkflow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null after a
// success. Valid until the next call on the same thread; do not free.
const char *pdl_last_error(void);

// Parses, validates and compiles `source`. On success `*out` receives a
// handle to release with [`pdl_workflow_free`].
//
// # Safety
// `source` must be a nul-terminated string and `out` a valid pointer.
enum PdlStatus pdl_workflow_load(const char *source, struct PdlWorkflow **out);

// # Safety
// `wf` must come from [`pdl_workflow_load`] and not be freed twice. Null
// is ignored.
void pdl_workflow_free(struct PdlWorkflow *wf);

// All diagnostics for `source` as `{"valid", "errors", "warnings"}`.
// Returns `PDL_STATUS_OK` even when the document is invalid.
//
// # Safety
// `source` must be a nul-terminated string and `out` a valid pointer.
enum PdlStatus pdl_check_json(const char *source, char **out);

// The workflow as it appears in agent prompts.
//
// # Safety
// `wf` must be a live handle and `out` a valid pointer.
enum PdlStatus pdl_workflow_render(const struct PdlWorkflow *wf, char **out);

// `executed_json` is a JSON array of node names. The result is
// `{"accessible": [...], "blocked": {node: [unmet, ...]}}`.
//
// # Safety
// `wf` must be a live handle, `executed_json` a nul-terminated string and
// `out` a valid pointer.
enum PdlStatus pdl_workflow_accessible_json(const struct PdlWorkflow *wf,
                                            const char *executed_json,
                                            char **out);

// Node names in dependency order, as a JSON array.
//
// # Safety
// `wf` must be a live handle and `out` a valid pointer.
enum PdlStatus pdl_workflow_topological_order_json(const struct PdlWorkflow *wf, char **out);

// Aggregates turn and session records (JSON arrays in the evaluator's
// record format; either may be null for none) into the metrics summary.
//
// # Safety
// Non-null string arguments must be nul-terminated; `out` a valid pointer.
enum PdlStatus pdl_compute_metrics_json(const char *turns_json,
                                        const char *sessions_json,
                                        char **out);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void pdl_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PDL_AGENT_H */
