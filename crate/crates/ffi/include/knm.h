#ifndef KNM_H
#define KNM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KnmStatus {
  KNM_STATUS_OK = 0,
  KNM_STATUS_NULL_POINTER = 1,
  KNM_STATUS_INVALID_ARGUMENT = 2,
  KNM_STATUS_CONFIG = 3,
  KNM_STATUS_BACKEND = 4,
  KNM_STATUS_DATA = 5,
  KNM_STATUS_IO = 6,
  KNM_STATUS_BUFFER_TOO_SMALL = 7,
  KNM_STATUS_PANIC = 8,
} KnmStatus;

typedef enum KnmMode {
  KNM_MODE_KNM_BAYESIAN = 0,
  KNM_MODE_KNM_FIXED_LAMBDA = 1,
  KNM_MODE_KNM_PRIOR_ONLY = 2,
  KNM_MODE_KNN_LM_BASELINE = 3,
  KNM_MODE_LM_ONLY = 4,
} KnmMode;

typedef enum KnmExcludedPolicy {
  KNM_EXCLUDED_POLICY_SKIP = 0,
  KNM_EXCLUDED_POLICY_COUNT_AS_CORRECT = 1,
} KnmExcludedPolicy;

typedef enum KnmObservation {
  KNM_OBSERVATION_LM_CORRECT = 0,
  KNM_OBSERVATION_LM_MISTAKE = 1,
  KNM_OBSERVATION_EXCLUDED = 2,
} KnmObservation;

/**
 * Datastore plus its search index.
 */
typedef struct KnmIndex KnmIndex;

/**
 * Language model handle.
 */
typedef struct KnmModel KnmModel;

/**
 * Vocabulary handle.
 */
typedef struct KnmVocab KnmVocab;

typedef struct KnmCombinerConfig {
  enum KnmMode mode;
  size_t k;
  size_t window;
  double fixed_lambda;
  enum KnmExcludedPolicy excluded;
} KnmCombinerConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. Valid until the next
 * failing call on the same thread.
 */
const char *knm_last_error(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum KnmStatus knm_vocab_load(const char *path, struct KnmVocab **out);

/**
 * # Safety
 * `vocab` must come from [`knm_vocab_load`] and not be used afterwards.
 */
void knm_vocab_free(struct KnmVocab *vocab);

/**
 * # Safety
 * `vocab` must be a live handle or NULL.
 */
size_t knm_vocab_len(const struct KnmVocab *vocab);

/**
 * Lexes `text` and writes its token ids to `out_ids`.
 *
 * # Safety
 * `text` must be NUL-terminated; `out_ids` must hold `capacity` elements.
 */
enum KnmStatus knm_tokenize(const struct KnmVocab *vocab,
                            const char *text,
                            uint32_t *out_ids,
                            size_t capacity,
                            size_t *out_len);

/**
 * Writes the detokenized text of `ids`, NUL-terminated, to `out`. The length
 * reported excludes the terminator, so `capacity` must be at least one more.
 *
 * # Safety
 * `ids` must hold `len` elements; `out` must hold `capacity` bytes.
 */
enum KnmStatus knm_detokenize(const struct KnmVocab *vocab,
                              const uint32_t *ids,
                              size_t len,
                              char *out,
                              size_t capacity,
                              size_t *out_len);

/**
 * Loads a saved reference n-gram model.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` valid.
 */
enum KnmStatus knm_model_load(const char *path, struct KnmModel **out);

/**
 * Connects to a remote model. No request is made until first use.
 *
 * # Safety
 * `base_url` must be NUL-terminated and `out` valid.
 */
enum KnmStatus knm_model_connect(const char *base_url,
                                 size_t vocab_size,
                                 size_t dim,
                                 struct KnmModel **out);

/**
 * # Safety
 * `model` must come from a `knm_model_*` constructor and not be used afterwards.
 */
void knm_model_free(struct KnmModel *model);

/**
 * # Safety
 * `model` must be a live handle or NULL.
 */
size_t knm_model_vocab_size(const struct KnmModel *model);

/**
 * # Safety
 * `model` must be a live handle or NULL.
 */
size_t knm_model_dim(const struct KnmModel *model);

/**
 * Next-token probabilities after `context`, one per vocabulary id.
 *
 * # Safety
 * `context` must hold `len` ids; `out_probs` must hold `capacity` doubles.
 */
enum KnmStatus knm_predict(const struct KnmModel *model,
                           const uint32_t *context,
                           size_t len,
                           double *out_probs,
                           size_t capacity,
                           size_t *out_len);

/**
 * Context embedding of `context`.
 *
 * # Safety
 * `context` must hold `len` ids; `out_vec` must hold `capacity` floats.
 */
enum KnmStatus knm_embed(const struct KnmModel *model,
                         const uint32_t *context,
                         size_t len,
                         float *out_vec,
                         size_t capacity,
                         size_t *out_len);

/**
 * Loads a datastore file and indexes it for search.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` valid.
 */
enum KnmStatus knm_index_load(const char *path, struct KnmIndex **out);

/**
 * # Safety
 * `index` must come from [`knm_index_load`] and not be used afterwards.
 */
void knm_index_free(struct KnmIndex *index);

/**
 * # Safety
 * `index` must be a live handle or NULL.
 */
size_t knm_index_len(const struct KnmIndex *index);

/**
 * Model error rate recorded when the datastore was built.
 *
 * # Safety
 * `index` must be a live handle or NULL.
 */
double knm_index_error_rate(const struct KnmIndex *index);

struct KnmCombinerConfig knm_combiner_config_default(void);

/**
 * Predicts the token after `context`. `index` may be NULL for `LM_ONLY`.
 *
 * # Safety
 * Handles must be live (or NULL where allowed); `context` must hold `len`
 * ids; `config`, `out_token` and `out_lambda` must be valid pointers
 * (`out_lambda` may be NULL).
 */
enum KnmStatus knm_complete_token(const struct KnmModel *model,
                                  const struct KnmIndex *index,
                                  const struct KnmCombinerConfig *config,
                                  const uint32_t *context,
                                  size_t len,
                                  uint32_t *out_token,
                                  double *out_lambda);

/**
 * Interpolation weight for an observation history (oldest first) under a
 * window of `window` slots and the given model error rate.
 *
 * # Safety
 * `history` must hold `len` elements and `out_lambda` must be valid.
 */
enum KnmStatus knm_compute_lambda(const enum KnmObservation *history,
                                  size_t len,
                                  size_t window,
                                  enum KnmExcludedPolicy excluded,
                                  double error_rate,
                                  double *out_lambda);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KNM_H */
