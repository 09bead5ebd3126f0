#ifndef PACESORT_H
#define PACESORT_H

/* Generated by cbindgen from the pacesort-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code returned by fallible calls.
typedef enum PsStatus {
  // Success.
  PS_STATUS_OK = 0,
  // A required pointer argument was null.
  PS_STATUS_NULL_ARG = 1,
  // A string argument was not valid UTF-8.
  PS_STATUS_UTF8 = 2,
  // Invalid or inconsistent configuration value.
  PS_STATUS_CONFIG = 3,
  // Dataset problem: undecodable video, empty split, empty gallery,
  // zero-norm feature.
  PS_STATUS_DATA = 4,
  // Tensor or buffer shape disagreement (includes undersized output
  // buffers).
  PS_STATUS_SHAPE = 5,
  // Checkpoint does not match the model being restored.
  PS_STATUS_CHECKPOINT = 6,
  // Corrupt or foreign binary file.
  PS_STATUS_BAD_FORMAT = 7,
  // Filesystem or serialization failure.
  PS_STATUS_IO = 8,
  // Internal panic; a bug in this library, not the caller's fault.
  PS_STATUS_INTERNAL = 9,
} PsStatus;

// Opaque configuration handle.
typedef struct PsConfig PsConfig;

// Opaque handle to a retrieval gallery.
typedef struct PsIndex PsIndex;

// Opaque handle to a restored checkpoint: model weights plus the config
// it was trained with.
typedef struct PsModel PsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Version of the underlying crate; static string, never freed.
const char *ps_version(void);

// Message describing the calling thread's most recent failure. Empty
// string when the last call succeeded. Valid until this thread's next
// call into the library.
const char *ps_last_error(void);

// Free a string returned by this library (`ps_config_to_toml`,
// `ps_index_source_id`). Null is a no-op.
//
// # Safety
// `s` must have been returned by this library and not freed before.
void ps_string_free(char *s);

// The built-in default configuration. Never fails.
struct PsConfig *ps_config_default(void);

// Parse and validate a TOML config. Null on failure (see `ps_last_error`).
//
// # Safety
// `text` must be a NUL-terminated UTF-8 string.
struct PsConfig *ps_config_from_toml(const char *text);

// Apply one `key=value` override (same grammar as the CLI `--override`).
//
// The key and value type are checked immediately; cross-field consistency
// is not, so coupled keys can be changed one call at a time. Call
// `ps_config_validate` when done, or rely on the workflow entry points,
// which validate before running.
//
// # Safety
// `cfg` must be a live handle; `key_value` a NUL-terminated UTF-8 string.
enum PsStatus ps_config_set(struct PsConfig *cfg, const char *key_value);

// Check the whole config for range and cross-field consistency.
//
// # Safety
// `cfg` must be a live handle.
enum PsStatus ps_config_validate(const struct PsConfig *cfg);

// Render the config as TOML. Free the result with `ps_string_free`.
//
// # Safety
// `cfg` must be a live handle.
char *ps_config_to_toml(const struct PsConfig *cfg);

// # Safety
// `cfg` must come from this library and not be freed twice. Null is a
// no-op.
void ps_config_free(struct PsConfig *cfg);

// Generate the synthetic dataset under the config's `dataset.root`.
//
// # Safety
// `cfg` must be a live handle.
enum PsStatus ps_synth(const struct PsConfig *cfg);

// Run self-supervised pretraining, writing checkpoint and metrics under
// `out_dir`.
//
// # Safety
// `cfg` must be a live handle; `out_dir` a NUL-terminated UTF-8 path.
enum PsStatus ps_pretrain(const struct PsConfig *cfg, const char *out_dir);

// Run supervised fine-tuning. `init_checkpoint` may be null to train from
// scratch.
//
// # Safety
// `cfg` must be a live handle; `out_dir` (and `init_checkpoint` when
// non-null) NUL-terminated UTF-8 paths.
enum PsStatus ps_finetune(const struct PsConfig *cfg,
                          const char *out_dir,
                          const char *init_checkpoint);

// Restore a checkpoint. Null on failure.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 path.
struct PsModel *ps_model_open(const char *path);

// Number of training epochs the checkpoint had completed.
//
// # Safety
// `model` must be a live handle.
uint64_t ps_model_epoch(const struct PsModel *model);

// Frames per clip the model expects (`m`).
//
// # Safety
// `model` must be a live handle.
size_t ps_model_frames_per_clip(const struct PsModel *model);

// Length of the retrieval feature vector this model produces, or 0 on
// failure.
//
// # Safety
// `model` must be a live handle.
size_t ps_model_retrieval_dim(struct PsModel *model);

// Embed one clip for retrieval.
//
// `frames` is `m` RGB frames in row-major `(m, height, width, 3)` u8
// layout, chronological order, already at the playback speed of interest.
// They are resized, center-cropped, and normalized exactly as during
// evaluation. The feature vector (length `ps_model_retrieval_dim`) is
// written to `out`; `*out_len` receives its length. Fails with `Shape` if
// `out_cap` is too small or `m` disagrees with the model.
//
// # Safety
// `model` must be a live handle; `frames` must hold `m*height*width*3`
// bytes; `out` must have room for `out_cap` floats; `out_len` must be
// writable.
enum PsStatus ps_model_retrieval_features(struct PsModel *model,
                                          const uint8_t *frames,
                                          size_t m,
                                          size_t height,
                                          size_t width,
                                          float *out,
                                          size_t out_cap,
                                          size_t *out_len);

// # Safety
// `model` must come from this library and not be freed twice. Null is a
// no-op.
void ps_model_free(struct PsModel *model);

// Load a gallery directory written by the `retrieve` subcommand (or
// `FeatureIndex::save`). Null on failure.
//
// # Safety
// `dir` must be a NUL-terminated UTF-8 path.
struct PsIndex *ps_index_open(const char *dir);

// Number of gallery rows.
//
// # Safety
// `index` must be a live handle.
size_t ps_index_len(const struct PsIndex *index);

// Feature dimensionality of the gallery.
//
// # Safety
// `index` must be a live handle.
size_t ps_index_dim(const struct PsIndex *index);

// Class label of one gallery row, or -1 when `row` is out of range.
//
// # Safety
// `index` must be a live handle.
int64_t ps_index_label(const struct PsIndex *index, size_t row);

// Source id of one gallery row (free with `ps_string_free`), or null when
// `row` is out of range.
//
// # Safety
// `index` must be a live handle.
char *ps_index_source_id(const struct PsIndex *index, size_t row);

// Rank the gallery against a query vector (any scale; normalized
// internally) and keep the `k` nearest rows.
//
// Row indices go to `out_rows` and cosine distances to `out_distances`;
// `*out_len` receives the count actually written, which is
// `min(k, gallery size)`. Both buffers need room for `k` entries.
//
// # Safety
// `index` must be a live handle; `query` must hold `dim` floats;
// `out_rows`/`out_distances` must have room for `k` entries; `out_len`
// must be writable.
enum PsStatus ps_index_query(const struct PsIndex *index,
                             const float *query,
                             size_t dim,
                             size_t k,
                             uint64_t *out_rows,
                             float *out_distances,
                             size_t *out_len);

// # Safety
// `index` must come from this library and not be freed twice. Null is a
// no-op.
void ps_index_free(struct PsIndex *index);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PACESORT_H */
