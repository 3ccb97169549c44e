#ifndef RADSTRUCT_H
#define RADSTRUCT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RsStatus {
  RS_STATUS_OK = 0,
  RS_STATUS_NULL_POINTER = 1,
  RS_STATUS_INVALID_UTF8 = 2,
  RS_STATUS_INVALID_INPUT = 3,
  RS_STATUS_IO = 4,
  RS_STATUS_CHECKPOINT = 5,
  RS_STATUS_BUFFER_TOO_SMALL = 6,
  RS_STATUS_PANIC = 7,
} RsStatus;

/**
 * A fine-tuned classifier: the section segmenter or a field model.
 */
typedef struct RsModel RsModel;

/**
 * A trained WordPiece vocabulary.
 */
typedef struct RsVocab RsVocab;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *rs_last_error_message(void);

/**
 * Loads a vocabulary file written by `radstruct train-tokenizer`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum RsStatus rs_vocab_load(const char *path, struct RsVocab **out);

/**
 * # Safety
 * `vocab` must come from `rs_vocab_load` and not be used afterwards. Null is ignored.
 */
void rs_vocab_free(struct RsVocab *vocab);

/**
 * # Safety
 * `vocab` must be a live handle; `out_len` must be writable.
 */
enum RsStatus rs_vocab_len(const struct RsVocab *vocab, size_t *out_len);

/**
 * WordPiece ids of `text`, without CLS/SEP. `*out_len` receives the full
 * count; when it exceeds `capacity` nothing is written and
 * `RS_STATUS_BUFFER_TOO_SMALL` is returned.
 *
 * # Safety
 * `out_ids` must hold `capacity` elements (may be null when `capacity` is 0).
 */
enum RsStatus rs_tokenize(const struct RsVocab *vocab,
                          const char *text,
                          uint32_t *out_ids,
                          size_t capacity,
                          size_t *out_len);

/**
 * Loads a fine-tuned checkpoint; fails if it was trained with another vocabulary.
 *
 * # Safety
 * `path` must be NUL-terminated, `vocab` live, `out` writable.
 */
enum RsStatus rs_model_load(const char *path, const struct RsVocab *vocab, struct RsModel **out);

/**
 * # Safety
 * `model` must come from `rs_model_load` and not be used afterwards. Null is ignored.
 */
void rs_model_free(struct RsModel *model);

/**
 * # Safety
 * `model` must be live; `out_n` writable.
 */
enum RsStatus rs_model_num_classes(const struct RsModel *model, size_t *out_n);

/**
 * Writes the NUL-terminated name of class `index` into `buf`.
 *
 * # Safety
 * `buf` must hold `capacity` bytes.
 */
enum RsStatus rs_model_class_name(const struct RsModel *model,
                                  size_t index,
                                  char *buf,
                                  size_t capacity);

/**
 * Classifies `text` with a field model.
 *
 * # Safety
 * Handles must be live, `text` NUL-terminated, outputs writable.
 */
enum RsStatus rs_model_predict(const struct RsModel *model,
                               const struct RsVocab *vocab,
                               const char *text,
                               size_t *out_class,
                               double *out_prob);

/**
 * Labels each of `n` sentences of one report with a section index
 * (0 Title .. 6 AssessmentCategory), decoding left to right.
 *
 * # Safety
 * `sentences` must hold `n` NUL-terminated strings; `out_labels` and
 * `out_probs` (optional) must hold `n` elements.
 */
enum RsStatus rs_segment(const struct RsModel *model,
                         const struct RsVocab *vocab,
                         const char *const *sentences,
                         size_t n,
                         uint32_t *out_labels,
                         double *out_probs);

/**
 * Generalized F1 over `n` predictions with classes `0..n_classes`.
 *
 * # Safety
 * `preds` and `golds` must hold `n` elements.
 */
enum RsStatus rs_generalized_f1(const uint32_t *preds,
                                const uint32_t *golds,
                                size_t n,
                                size_t n_classes,
                                double *out);

/**
 * McNemar's test on paired predictions of two systems against shared golds.
 *
 * # Safety
 * The three arrays must hold `n` elements.
 */
enum RsStatus rs_mcnemar(const uint32_t *preds_a,
                         const uint32_t *preds_b,
                         const uint32_t *golds,
                         size_t n,
                         double *out_stat,
                         double *out_p);

/**
 * Two-sided Mann-Whitney U test.
 *
 * # Safety
 * `x` and `y` must hold `nx` and `ny` elements.
 */
enum RsStatus rs_mann_whitney_u(const double *x,
                                size_t nx,
                                const double *y,
                                size_t ny,
                                double *out_u,
                                double *out_p);

/**
 * Bonferroni correction of `n` p-values; `out_reject[i]` is 1 when rejected.
 *
 * # Safety
 * `pvals`, `out_corrected` and `out_reject` must hold `n` elements.
 */
enum RsStatus rs_bonferroni(const double *pvals,
                            size_t n,
                            double alpha,
                            double *out_corrected,
                            uint8_t *out_reject);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RADSTRUCT_H */
