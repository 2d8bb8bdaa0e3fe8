#ifndef ARHATE_H
#define ARHATE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum ArhateStatus {
  ARHATE_STATUS_OK = 0,
  ARHATE_STATUS_NULL_ARGUMENT = 1,
  ARHATE_STATUS_INVALID_ARGUMENT = 2,
  ARHATE_STATUS_IO = 3,
  ARHATE_STATUS_PARSE = 4,
  ARHATE_STATUS_CONFIG = 5,
  ARHATE_STATUS_TRAINING = 6,
  ARHATE_STATUS_BACKEND_UNAVAILABLE = 7,
  ARHATE_STATUS_PANIC = 8,
} ArhateStatus;

typedef enum ArhateVoteMode {
  ARHATE_VOTE_MODE_MAJORITY = 0,
  ARHATE_VOTE_MODE_AVERAGE = 1,
} ArhateVoteMode;

// Opaque trained model.
typedef struct ArhateModel ArhateModel;

// Opaque text normalizer.
typedef struct ArhateNormalizer ArhateNormalizer;

// Precision, recall and F1 of one class, as fractions.
typedef struct ArhateClassScores {
  double precision;
  double recall;
  double f1;
} ArhateClassScores;

typedef struct ArhateAggregates {
  double macro_f1;
  double micro_f1;
  double weighted_f1;
} ArhateAggregates;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *arhate_version(void);

// Message of the last failed call on this thread, or NULL. Valid until the
// next call into the library from the same thread.
const char *arhate_last_error(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void arhate_string_free(char *s);

// Creates a normalizer. `stopword_path` may be NULL for no stopwords.
//
// # Safety
// `stopword_path` is NULL or a valid C string; `out` is writable.
enum ArhateStatus arhate_normalizer_new(const char *stopword_path,
                                        bool strip_non_arabic,
                                        struct ArhateNormalizer **out);

// Normalizes `text` into a new string owned by the caller.
//
// # Safety
// `normalizer` is a live handle, `text` a valid C string, `out` writable.
enum ArhateStatus arhate_normalize(const struct ArhateNormalizer *normalizer,
                                   const char *text,
                                   char **out);

// # Safety
// `normalizer` is NULL or a handle from [`arhate_normalizer_new`].
void arhate_normalizer_free(struct ArhateNormalizer *normalizer);

// Per-class scores and aggregates from a 5x5 row-major confusion matrix
// (rows gold, columns predicted, label order NH GH Re Ra Se).
//
// # Safety
// `counts` holds 25 values, `per_class` has room for 5 entries and
// `aggregates` is writable. Either output may be NULL to skip it.
enum ArhateStatus arhate_metrics(const uint64_t *counts,
                                 struct ArhateClassScores *per_class,
                                 struct ArhateAggregates *aggregates);

// Combines `models` probability matrices of `rows` x 5, laid out model
// after model, row-major. `weights` (length `models`) applies to average
// voting and may be NULL for uniform. Writes one label index per row.
//
// # Safety
// `probs` holds `models * rows * 5` values and `labels_out` has room for
// `rows` entries.
enum ArhateStatus arhate_vote(enum ArhateVoteMode mode,
                              const double *probs,
                              size_t models,
                              size_t rows,
                              const double *weights,
                              uint32_t *labels_out);

// Loads a model directory written by the CLI or [`arhate_model_save`].
//
// # Safety
// `dir` is a valid C string and `out` writable.
enum ArhateStatus arhate_model_load(const char *dir, struct ArhateModel **out);

// Trains `backend` on a JSONL file of `id`, `text`, `label` rows. Texts
// go through `normalizer` (NULL means the default rules without
// stopwords).
//
// # Safety
// Pointers are valid C strings or handles as documented; `out` writable.
enum ArhateStatus arhate_model_fit(const char *backend,
                                   const char *corpus_path,
                                   const struct ArhateNormalizer *normalizer,
                                   size_t epochs,
                                   size_t batch_size,
                                   double learning_rate,
                                   uint64_t seed,
                                   struct ArhateModel **out);

// # Safety
// `model` is a live handle and `dir` a valid C string.
enum ArhateStatus arhate_model_save(const struct ArhateModel *model, const char *dir);

// Class probabilities for `count` already normalized texts; writes
// `count * 5` values, row-major in label order.
//
// # Safety
// `texts` holds `count` valid C strings and `probs_out` has room for
// `count * 5` values.
enum ArhateStatus arhate_model_predict_proba(const struct ArhateModel *model,
                                             const char *const *texts,
                                             size_t count,
                                             double *probs_out);

// # Safety
// `model` is NULL or a handle from this library.
void arhate_model_free(struct ArhateModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ARHATE_H */
