#ifndef DCA_H
#define DCA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum DcaStatus {
  DCA_STATUS_OK = 0,
  DCA_STATUS_NULL_ARGUMENT = 1,
  DCA_STATUS_INVALID_UTF8 = 2,
  DCA_STATUS_IO = 3,
  DCA_STATUS_CONFIG = 4,
  DCA_STATUS_CHECKPOINT = 5,
  DCA_STATUS_RUNTIME = 6,
  DCA_STATUS_PANIC = 7,
} DcaStatus;

/**
 * Opaque loaded model.
 */
typedef struct DcaModel DcaModel;

/**
 * Precision, recall and F1 of one ROUGE variant.
 */
typedef struct DcaRougeScore {
  double precision;
  double recall;
  double f1;
} DcaRougeScore;

typedef struct DcaRouge {
  struct DcaRougeScore rouge_1;
  struct DcaRougeScore rouge_2;
  struct DcaRougeScore rouge_l;
} DcaRouge;

/**
 * Loads a checkpoint file into `*out`. Release it with [`dca_model_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DcaStatus dca_model_load(const char *path, struct DcaModel **out);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must come from [`dca_model_load`] and not be used afterwards.
 */
void dca_model_free(struct DcaModel *model);

/**
 * Number of agents the model splits a document across.
 *
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum DcaStatus dca_model_agents(const struct DcaModel *model, size_t *out);

/**
 * Summarizes a document given as paragraphs separated by newlines, each a
 * whitespace-tokenized sequence of sentences ending in ".". A zero `beam`
 * or `max_len` takes the model's configured value. The summary is written
 * to `*out` as a space-separated string; free it with [`dca_string_free`].
 *
 * # Safety
 * `model` must be a live handle, `document` a NUL-terminated string and
 * `out` a valid pointer.
 */
enum DcaStatus dca_summarize(const struct DcaModel *model,
                             const char *document,
                             uint32_t beam,
                             uint32_t max_len,
                             bool block_trigrams,
                             char **out);

/**
 * ROUGE-1, ROUGE-2 and ROUGE-L of whitespace-tokenized texts.
 *
 * # Safety
 * `hypothesis` and `reference` must be NUL-terminated strings and `out` a
 * valid pointer.
 */
enum DcaStatus dca_rouge(const char *hypothesis, const char *reference, struct DcaRouge *out);

/**
 * Releases a string returned by this library; null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void dca_string_free(char *s);

/**
 * Message of the last failed call on this thread, or an empty string.
 * Valid until the next failing call on the same thread.
 */
const char *dca_last_error(void);

/**
 * Library version as a static string.
 */
const char *dca_version(void);

#endif  /* DCA_H */
