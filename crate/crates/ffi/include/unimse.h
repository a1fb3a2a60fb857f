#ifndef UNIMSE_H
#define UNIMSE_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Task selector: 0 = MSA, 1 = ERC.
 */
#define UNIMSE_TASK_MSA 0

#define UNIMSE_TASK_ERC 1

/**
 * Number of tokens in a serialized label, EOS included.
 */
#define UNIMSE_LABEL_TOKENS 4

typedef enum UnimseStatus {
  UNIMSE_STATUS_OK = 0,
  UNIMSE_STATUS_NULL_POINTER = 1,
  UNIMSE_STATUS_INVALID_UTF8 = 2,
  UNIMSE_STATUS_INVALID_ARGUMENT = 3,
  UNIMSE_STATUS_IO = 4,
  UNIMSE_STATUS_CHECKPOINT = 5,
  UNIMSE_STATUS_LABEL = 6,
  UNIMSE_STATUS_METRICS = 7,
  UNIMSE_STATUS_BUFFER_TOO_SMALL = 8,
  UNIMSE_STATUS_INTERNAL = 9,
} UnimseStatus;

/**
 * A trained model together with its vocabulary.
 */
typedef struct UnimseModel UnimseModel;

/**
 * A token vocabulary.
 */
typedef struct UnimseVocab UnimseVocab;

typedef struct UnimseMsaMetrics {
  double mae;
  /**
   * NaN when either side has zero variance.
   */
  double corr;
  double acc7;
  /**
   * Binary scores are NaN when no sample qualifies.
   */
  double acc2_nonneg;
  double acc2_posneg;
  double f1_nonneg;
  double f1_posneg;
} UnimseMsaMetrics;

typedef struct UnimseErcMetrics {
  double acc;
  double wf1;
} UnimseErcMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread. The pointer stays valid
 * until the next failing call on the same thread.
 */
const char *unimse_last_error(void);

/**
 * Number of emotion categories; indices follow `unimse_emotion_name`.
 */
size_t unimse_emotion_count(void);

/**
 * Static name of emotion `index`, or null when out of range.
 */
const char *unimse_emotion_name(int32_t index);

/**
 * Serializes a complete label into `out[0..4]`.
 *
 * `polarity`: 0 positive, 1 negative, 2 neutral. `intensity_tenths` lies in
 * [-30, 30]. `emotion` is an emotion index.
 *
 * # Safety
 * `out` must point to at least four writable `uint32_t`.
 */
enum UnimseStatus unimse_serialize_label(int32_t polarity,
                                         int32_t intensity_tenths,
                                         int32_t emotion,
                                         uint32_t *out);

/**
 * Loads a vocabulary text file (one token per line).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum UnimseStatus unimse_vocab_load(const char *path, struct UnimseVocab **out);

/**
 * # Safety
 * `vocab` must come from `unimse_vocab_load` and not be used afterwards.
 */
void unimse_vocab_free(struct UnimseVocab *vocab);

/**
 * # Safety
 * `vocab` must be a live handle or null (which gives 0).
 */
size_t unimse_vocab_len(const struct UnimseVocab *vocab);

/**
 * Reads the task value from a generated token sequence. For MSA the
 * intensity goes to `out_intensity`; for ERC the emotion index goes to
 * `out_emotion`. Malformed sequences decode to 0.0 / neutral with
 * `out_well_formed` set to 0.
 *
 * # Safety
 * `tokens` must hold `n` values; the out pointers must be writable.
 */
enum UnimseStatus unimse_decode_prediction(const struct UnimseVocab *vocab,
                                           const uint32_t *tokens,
                                           size_t n,
                                           int32_t task,
                                           double *out_intensity,
                                           int32_t *out_emotion,
                                           int32_t *out_well_formed);

/**
 * MSA metrics of `n` predicted and gold intensities.
 *
 * # Safety
 * `pred` and `gold` must hold `n` values; `out` must be writable.
 */
enum UnimseStatus unimse_msa_metrics(const double *pred,
                                     const double *gold,
                                     size_t n,
                                     struct UnimseMsaMetrics *out);

/**
 * Accuracy and weighted F1 of `n` emotion indices over the label set
 * `labels[0..n_labels]`.
 *
 * # Safety
 * Arrays must hold the stated number of values; `out` must be writable.
 */
enum UnimseStatus unimse_erc_metrics(const int32_t *pred,
                                     const int32_t *gold,
                                     size_t n,
                                     const int32_t *labels,
                                     size_t n_labels,
                                     struct UnimseErcMetrics *out);

/**
 * Loads a checkpoint written by `unimse train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum UnimseStatus unimse_model_load(const char *path, struct UnimseModel **out);

/**
 * # Safety
 * `model` must come from `unimse_model_load` and not be used afterwards.
 */
void unimse_model_free(struct UnimseModel *model);

/**
 * Vocabulary of a loaded model, owned by the model handle.
 *
 * # Safety
 * `model` must be a live handle; the result must not be freed.
 */
const struct UnimseVocab *unimse_model_vocab(const struct UnimseModel *model);

/**
 * Generates a label sequence for one utterance without dialogue context.
 * Features are row-major `frames x dim` matrices. Up to `cap` tokens are
 * written to `out_tokens` and the full length to `out_len`; a short buffer
 * gives `BufferTooSmall` with `out_len` still set.
 *
 * # Safety
 * All arrays must hold the stated number of values and the out pointers
 * must be writable.
 */
enum UnimseStatus unimse_model_generate(const struct UnimseModel *model,
                                        const char *text,
                                        int32_t task,
                                        const double *acoustic,
                                        size_t acoustic_frames,
                                        size_t acoustic_dim,
                                        const double *visual,
                                        size_t visual_frames,
                                        size_t visual_dim,
                                        uint32_t *out_tokens,
                                        size_t cap,
                                        size_t *out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UNIMSE_H */
