#ifndef TABTEXT_H
#define TABTEXT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum TabtextStatus {
  TABTEXT_STATUS_OK = 0,
  TABTEXT_STATUS_NULL_ARGUMENT = 1,
  TABTEXT_STATUS_INVALID_UTF8 = 2,
  TABTEXT_STATUS_IO = 3,
  // Malformed table, or tables whose schemas disagree.
  TABTEXT_STATUS_SCHEMA = 4,
  // Invalid options or an unusable request.
  TABTEXT_STATUS_CONFIG = 5,
  // Training stopped on a non-finite loss.
  TABTEXT_STATUS_TRAINING_ABORTED = 6,
  // Sampling gave up before producing enough valid rows.
  TABTEXT_STATUS_BUDGET_EXHAUSTED = 7,
  TABTEXT_STATUS_EVALUATION = 8,
  TABTEXT_STATUS_OUT_OF_RANGE = 9,
  // A bug inside the library; the handle arguments are left untouched.
  TABTEXT_STATUS_PANIC = 10,
} TabtextStatus;

// Opaque trained-model handle.
typedef struct TabtextCheckpoint TabtextCheckpoint;

// Opaque table handle.
typedef struct TabtextTable TabtextTable;

// Distance-to-closest-record statistics.
typedef struct TabtextDcrSummary {
  double min;
  double median;
  double mean;
  double zero_fraction;
} TabtextDcrSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null. The pointer
// stays valid until the next failing call on the same thread.
const char *tabtext_last_error(void);

// Library version as a static string.
const char *tabtext_version(void);

// Frees a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be freed twice.
void tabtext_string_free(char *s);

// Loads a CSV file with a header row and infers its schema.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum TabtextStatus tabtext_table_load_csv(const char *path, struct TabtextTable **out);

// Writes the table as CSV with a header row.
//
// # Safety
// `table` must be a live handle and `path` a nul-terminated string.
enum TabtextStatus tabtext_table_save_csv(const struct TabtextTable *table, const char *path);

// Row count; 0 for a null handle.
//
// # Safety
// `table` must be null or a live handle.
size_t tabtext_table_rows(const struct TabtextTable *table);

// Feature count; 0 for a null handle.
//
// # Safety
// `table` must be null or a live handle.
size_t tabtext_table_cols(const struct TabtextTable *table);

// Copies one cell (empty when missing) into a new string.
//
// # Safety
// `table` must be a live handle and `out` a valid pointer.
enum TabtextStatus tabtext_table_cell(const struct TabtextTable *table,
                                      size_t row,
                                      size_t col,
                                      char **out);

// Copies a feature name into a new string.
//
// # Safety
// `table` must be a live handle and `out` a valid pointer.
enum TabtextStatus tabtext_table_feature_name(const struct TabtextTable *table,
                                              size_t col,
                                              char **out);

// Releases a table. Null is ignored.
//
// # Safety
// `table` must be null or a live handle, and is dangling afterwards.
void tabtext_table_free(struct TabtextTable *table);

// Trains a model. `config_json` may be null or hold `"model"` and `"train"`
// objects with the CLI config keys.
//
// # Safety
// `table` must be a live handle, `config_json` null or nul-terminated, and
// `out` a valid pointer.
enum TabtextStatus tabtext_train(const struct TabtextTable *table,
                                 const char *config_json,
                                 struct TabtextCheckpoint **out);

// # Safety
// `path` must be nul-terminated and `out` a valid pointer.
enum TabtextStatus tabtext_checkpoint_load(const char *path, struct TabtextCheckpoint **out);

// # Safety
// `ckpt` must be a live handle and `path` nul-terminated.
enum TabtextStatus tabtext_checkpoint_save(const struct TabtextCheckpoint *ckpt, const char *path);

// Loads a CSV whose header must match the checkpoint's features, typically
// the input to [`tabtext_impute`].
//
// # Safety
// `ckpt` must be a live handle, `path` nul-terminated and `out` valid.
enum TabtextStatus tabtext_checkpoint_load_table(const struct TabtextCheckpoint *ckpt,
                                                 const char *path,
                                                 struct TabtextTable **out);

// Releases a checkpoint. Null is ignored.
//
// # Safety
// `ckpt` must be null or a live handle, and is dangling afterwards.
void tabtext_checkpoint_free(struct TabtextCheckpoint *ckpt);

// Draws rows. `spec_json` uses the keys of the config file's `"sample"`
// section. When `report_json` is non-null it receives a string with the
// attempt counts and rejection reasons.
//
// # Safety
// `ckpt` must be a live handle, `spec_json` null or nul-terminated, `out`
// valid and `report_json` null or valid.
enum TabtextStatus tabtext_sample(const struct TabtextCheckpoint *ckpt,
                                  const char *spec_json,
                                  struct TabtextTable **out,
                                  char **report_json);

// Fills the missing cells of `partial`; observed cells are kept verbatim.
//
// # Safety
// `ckpt` and `partial` must be live handles, `spec_json` null or
// nul-terminated, and `out` valid.
enum TabtextStatus tabtext_impute(const struct TabtextCheckpoint *ckpt,
                                  const struct TabtextTable *partial,
                                  const char *spec_json,
                                  struct TabtextTable **out);

// Distance from each synthetic row to its closest training row. When
// `distances` is non-null it must hold one slot per synthetic row.
//
// # Safety
// Both tables must be live handles, `distances` null or large enough, and
// `summary` valid.
enum TabtextStatus tabtext_dcr(const struct TabtextTable *synthetic,
                               const struct TabtextTable *train,
                               bool normalized,
                               double *distances,
                               struct TabtextDcrSummary *summary);

// Generates a benchmark table from a generator spec in JSON.
//
// # Safety
// `spec_json` must be nul-terminated and `out` valid.
enum TabtextStatus tabtext_bench_generate(const char *spec_json, struct TabtextTable **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TABTEXT_H */
