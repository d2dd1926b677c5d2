#ifndef TGASR_H
#define TGASR_H

/* Generated by cbindgen from the tgasr-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum TgStatus {
  TgStatus_Ok = 0,
  TgStatus_NullArgument = 1,
  TgStatus_InvalidArgument = 2,
  TgStatus_BadUtf8 = 3,
  TgStatus_ConfigError = 4,
  TgStatus_FormatError = 5,
  TgStatus_ChecksumError = 6,
  TgStatus_NumericError = 7,
  TgStatus_IoError = 8,
  TgStatus_Diverged = 9,
  TgStatus_Panic = 10,
} TgStatus;

/**
 * Opaque checkpoint handle.
 */
typedef struct TgCheckpoint TgCheckpoint;

/**
 * Opaque dataset handle.
 */
typedef struct TgDataset TgDataset;

/**
 * Edit-operation counts for one reference/hypothesis pair.
 */
typedef struct TgCerCounts {
  double cer;
  uint64_t substitutions;
  uint64_t deletions;
  uint64_t insertions;
  uint64_t ref_chars;
} TgCerCounts;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tg_version(void);

/**
 * Message describing the most recent error on this thread. Valid until the
 * next failing call on the same thread; do not free.
 */
const char *tg_last_error_message(void);

/**
 * Free a string returned by this library.
 *
 * # Safety
 * `s` must be a pointer previously returned by a `tg_*` function that
 * documents `tg_string_free`, and must not be used afterwards.
 */
void tg_string_free(char *s);

/**
 * Load a dataset container. On success writes a handle that must be
 * released with `tg_dataset_free`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum TgStatus tg_dataset_load(const char *path, struct TgDataset **out);

/**
 * Release a dataset handle.
 *
 * # Safety
 * `ds` must come from `tg_dataset_load` and not be used afterwards.
 */
void tg_dataset_free(struct TgDataset *ds);

/**
 * Utterance counts of the two splits.
 *
 * # Safety
 * All pointers must be valid; `ds` must come from `tg_dataset_load`.
 */
enum TgStatus tg_dataset_counts(const struct TgDataset *ds, uint64_t *train, uint64_t *test);

/**
 * Load a checkpoint. On success writes a handle that must be released with
 * `tg_checkpoint_free`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum TgStatus tg_checkpoint_load(const char *path, struct TgCheckpoint **out);

/**
 * Release a checkpoint handle.
 *
 * # Safety
 * `ckpt` must come from `tg_checkpoint_load` and not be used afterwards.
 */
void tg_checkpoint_free(struct TgCheckpoint *ckpt);

/**
 * Training stage of a checkpoint (1 or 2).
 *
 * # Safety
 * Pointers must be valid; `ckpt` must come from `tg_checkpoint_load`.
 */
enum TgStatus tg_checkpoint_stage(const struct TgCheckpoint *ckpt, uint8_t *stage);

/**
 * Token error rate with edit-operation decomposition.
 *
 * # Safety
 * `reference` and `hypothesis` must point to `ref_len` / `hyp_len` valid
 * u32 tokens; `out` must be a valid pointer.
 */
enum TgStatus tg_cer(const uint32_t *reference,
                     size_t ref_len,
                     const uint32_t *hypothesis,
                     size_t hyp_len,
                     struct TgCerCounts *out);

/**
 * Teacher-forcing corpus CER of a checkpoint over a dataset split
 * ("train" or "test").
 *
 * # Safety
 * Handles must come from the corresponding load functions; `split` must be
 * NUL-terminated; `out_cer` must be valid.
 */
enum TgStatus tg_evaluate(const struct TgCheckpoint *ckpt,
                          const struct TgDataset *ds,
                          const char *split,
                          double *out_cer);

/**
 * Gate report of a gated stage-2 checkpoint as a CSV string
 * (layer,gate,value). Free with `tg_string_free`.
 *
 * # Safety
 * `ckpt` must come from `tg_checkpoint_load`; `out` must be valid.
 */
enum TgStatus tg_gate_report_csv(const struct TgCheckpoint *ckpt, char **out);

/**
 * Run a full experiment from a config file into an output directory.
 * `preset` is one of baseline/ablation/sweep/selection; `seed_override < 0`
 * keeps the config's seed.
 *
 * # Safety
 * Strings must be NUL-terminated.
 */
enum TgStatus tg_run_experiment(const char *config_path,
                                const char *preset,
                                const char *out_dir,
                                int64_t seed_override);

/**
 * Re-check every artifact checksum in a run directory against its manifest.
 *
 * # Safety
 * `run_dir` must be NUL-terminated.
 */
enum TgStatus tg_verify_run(const char *run_dir);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* TGASR_H */
