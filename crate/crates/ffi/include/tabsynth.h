#ifndef TABSYNTH_H
#define TABSYNTH_H

#include <stdint.h>
#include <stddef.h>

/**
 * Result codes shared by every function.
 */
typedef enum TabsynthStatus {
  TABSYNTH_STATUS_OK = 0,
  TABSYNTH_STATUS_NULL_POINTER = 1,
  TABSYNTH_STATUS_INVALID_ARGUMENT = 2,
  TABSYNTH_STATUS_IO = 3,
  TABSYNTH_STATUS_CORRUPT_CHECKPOINT = 4,
  TABSYNTH_STATUS_INCOMPATIBLE_VERSION = 5,
  TABSYNTH_STATUS_FAILED = 6,
  TABSYNTH_STATUS_PANIC = 7,
} TabsynthStatus;

/**
 * Opaque trained model plus its registry, schema and codec settings.
 */
typedef struct TabsynthCheckpoint TabsynthCheckpoint;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *tabsynth_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tabsynth_version(void);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library and not yet freed.
 */
void tabsynth_string_free(char *s);

/**
 * Loads a checkpoint file into a new handle written to `out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum TabsynthStatus tabsynth_checkpoint_load(const char *path, struct TabsynthCheckpoint **out);

/**
 * Parses a checkpoint from memory.
 *
 * # Safety
 * `data` must point to `len` readable bytes; `out` must be writable.
 */
enum TabsynthStatus tabsynth_checkpoint_from_bytes(const uint8_t *data,
                                                   size_t len,
                                                   struct TabsynthCheckpoint **out);

/**
 * # Safety
 * `handle` must be a live handle; `path` a NUL-terminated string.
 */
enum TabsynthStatus tabsynth_checkpoint_save(const struct TabsynthCheckpoint *handle,
                                             const char *path);

/**
 * # Safety
 * `handle` must be NULL or a handle from this library not yet freed.
 */
void tabsynth_checkpoint_free(struct TabsynthCheckpoint *handle);

/**
 * Vocabulary size of the checkpoint's registry, or 0 for NULL.
 *
 * # Safety
 * `handle` must be NULL or a live handle.
 */
size_t tabsynth_checkpoint_vocab_size(const struct TabsynthCheckpoint *handle);

/**
 * Column names of the training schema joined by commas.
 *
 * # Safety
 * `handle` must be a live handle; `out` must be writable.
 */
enum TabsynthStatus tabsynth_checkpoint_columns(const struct TabsynthCheckpoint *handle,
                                                char **out);

/**
 * Samples `n_rows` rows and writes them as CSV with a header to `out`.
 * `condition` is NULL or `"Col=value; Col2=value"`. A non-positive
 * temperature selects greedy decoding. Fewer rows than requested are
 * returned when the attempt cap is reached.
 *
 * # Safety
 * `handle` must be a live handle; `condition` NULL or NUL-terminated;
 * `out` must be writable.
 */
enum TabsynthStatus tabsynth_sample_csv(const struct TabsynthCheckpoint *handle,
                                        size_t n_rows,
                                        uint64_t seed,
                                        double temperature,
                                        const char *condition,
                                        char **out);

/**
 * Trains a new model from INI configuration text and writes the handle to
 * `out`. Relative data paths resolve against `base_dir` when it is given.
 *
 * # Safety
 * `config` must be NUL-terminated; `base_dir` NULL or NUL-terminated; `out`
 * must be writable.
 */
enum TabsynthStatus tabsynth_train(const char *config,
                                   const char *base_dir,
                                   struct TabsynthCheckpoint **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TABSYNTH_H */
