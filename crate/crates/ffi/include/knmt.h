#ifndef KNMT_H
#define KNMT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KnmtStatus {
  KNMT_STATUS_OK = 0,
  KNMT_STATUS_NULL_POINTER = 1,
  KNMT_STATUS_INVALID_UTF8 = 2,
  KNMT_STATUS_IO = 3,
  KNMT_STATUS_PARSE = 4,
  KNMT_STATUS_CONFIG = 5,
  KNMT_STATUS_CHECKPOINT = 6,
  KNMT_STATUS_VOCAB = 7,
  KNMT_STATUS_CONTRACT = 8,
  KNMT_STATUS_SHAPE = 9,
  KNMT_STATUS_NON_FINITE = 10,
  KNMT_STATUS_PANIC = 11,
} KnmtStatus;

/**
 * A loaded BPE merge table.
 */
typedef struct KnmtBpe KnmtBpe;

/**
 * A loaded recurrent language model.
 */
typedef struct KnmtLm KnmtLm;

/**
 * A loaded translation model.
 */
typedef struct KnmtModel KnmtModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *knmt_last_error(void);

/**
 * Library version as a static string.
 */
const char *knmt_version(void);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void knmt_string_free(char *s);

/**
 * Load a translation checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum KnmtStatus knmt_model_load(const char *path, struct KnmtModel **out);

/**
 * # Safety
 * `model` must come from [`knmt_model_load`] or be null.
 */
void knmt_model_free(struct KnmtModel *model);

/**
 * Number of distinct scalar parameters.
 *
 * # Safety
 * `model` must be a live handle and `out` writable.
 */
enum KnmtStatus knmt_model_param_count(const struct KnmtModel *model, uint64_t *out);

/**
 * Translate one tokenized, segmented sentence. `beam` 0 selects greedy
 * search. The result is written to `*out` and must be freed with
 * [`knmt_string_free`].
 *
 * # Safety
 * `model` must be a live handle, `source` a NUL-terminated string and
 * `out` writable.
 */
enum KnmtStatus knmt_translate(const struct KnmtModel *model,
                               const char *source,
                               size_t beam,
                               size_t max_len,
                               char **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum KnmtStatus knmt_bpe_load(const char *path, struct KnmtBpe **out);

/**
 * # Safety
 * `bpe` must come from [`knmt_bpe_load`] or be null.
 */
void knmt_bpe_free(struct KnmtBpe *bpe);

/**
 * Segment a tokenized sentence.
 *
 * # Safety
 * `bpe` must be a live handle, `text` a NUL-terminated string and `out`
 * writable.
 */
enum KnmtStatus knmt_bpe_apply(const struct KnmtBpe *bpe, const char *text, char **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum KnmtStatus knmt_lm_load(const char *path, struct KnmtLm **out);

/**
 * # Safety
 * `lm` must come from [`knmt_lm_load`] or be null.
 */
void knmt_lm_free(struct KnmtLm *lm);

/**
 * Natural-log probability of a tokenized sentence, end of sentence included.
 *
 * # Safety
 * `lm` must be a live handle, `text` a NUL-terminated string and `out`
 * writable.
 */
enum KnmtStatus knmt_lm_score(const struct KnmtLm *lm, const char *text, double *out);

/**
 * Corpus BLEU (0 to 100) of two files with one tokenized sentence per line.
 *
 * # Safety
 * Both paths must be NUL-terminated strings and `out` writable.
 */
enum KnmtStatus knmt_bleu_files(const char *hyp_path, const char *ref_path, double *out);

/**
 * Corpus BLEU of newline-separated hypothesis and reference text.
 *
 * # Safety
 * Both texts must be NUL-terminated strings and `out` writable.
 */
enum KnmtStatus knmt_bleu(const char *hyps, const char *refs, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KNMT_H */
