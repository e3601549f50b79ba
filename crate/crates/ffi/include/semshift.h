#ifndef SEMSHIFT_H
#define SEMSHIFT_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result codes shared by every function.
 */
typedef enum SsStatus {
  SS_STATUS_OK = 0,
  SS_STATUS_NULL_POINTER = 1,
  SS_STATUS_INVALID_UTF8 = 2,
  SS_STATUS_IO = 3,
  SS_STATUS_FORMAT = 4,
  SS_STATUS_INVALID_ARGUMENT = 5,
  SS_STATUS_UNKNOWN_TERM = 6,
  SS_STATUS_BELOW_FLOOR = 7,
  SS_STATUS_INSUFFICIENT = 8,
  SS_STATUS_PANIC = 9,
} SsStatus;

/**
 * A trained embedding space.
 */
typedef struct SsEmbedding SsEmbedding;

/**
 * A trained classifier with its vocabulary and TF-IDF weights.
 */
typedef struct SsModel SsModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *ss_last_error(void);

/**
 * Library version as a static string.
 */
const char *ss_version(void);

/**
 * Loads an embedding written by the `embed` stage.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum SsStatus ss_embedding_load(const char *path, struct SsEmbedding **out);

/**
 * # Safety
 * `e` must come from [`ss_embedding_load`] and not be freed twice.
 */
void ss_embedding_free(struct SsEmbedding *e);

/**
 * Number of terms; zero for a null handle.
 *
 * # Safety
 * `e` must be null or a live handle.
 */
size_t ss_embedding_len(const struct SsEmbedding *e);

/**
 * Vector dimension; zero for a null handle.
 *
 * # Safety
 * `e` must be null or a live handle.
 */
size_t ss_embedding_dim(const struct SsEmbedding *e);

/**
 * Neighbourhood overlap `S` of one term between two spaces, cosine metric.
 *
 * # Safety
 * Handles must be live, `term` nul-terminated and `out_s` valid.
 */
enum SsStatus ss_stability(const struct SsEmbedding *p,
                           const struct SsEmbedding *q,
                           const char *term,
                           size_t k,
                           uint64_t cf_nb,
                           uint64_t cf_shift,
                           double *out_s);

/**
 * Full stability table as CSV (`term,S,freq_P,freq_Q`, S ascending).
 *
 * # Safety
 * Handles must be live and `out_csv` valid; release the result with
 * [`ss_string_free`].
 */
enum SsStatus ss_stability_table_csv(const struct SsEmbedding *p,
                                     const struct SsEmbedding *q,
                                     size_t k,
                                     uint64_t cf_nb,
                                     uint64_t cf_shift,
                                     char **out_csv);

/**
 * Loads a classifier written by the `train` stage.
 *
 * # Safety
 * `path` must be nul-terminated and `out` valid.
 */
enum SsStatus ss_model_load(const char *path, struct SsModel **out);

/**
 * # Safety
 * `m` must come from [`ss_model_load`] and not be freed twice.
 */
void ss_model_free(struct SsModel *m);

/**
 * Positive-class probability for one document of raw text.
 *
 * # Safety
 * `m` must be live, `text` nul-terminated and `out_p` valid.
 */
enum SsStatus ss_model_predict_text(const struct SsModel *m, const char *text, double *out_p);

/**
 * Tokens of `text` as a JSON array of strings.
 *
 * # Safety
 * `text` must be nul-terminated and `out_json` valid; release the result
 * with [`ss_string_free`].
 */
enum SsStatus ss_tokenize(const char *text, char **out_json);

/**
 * # Safety
 * `s` must be null or a string returned by this library.
 */
void ss_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMSHIFT_H */
