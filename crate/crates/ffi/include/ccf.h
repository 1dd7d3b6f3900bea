#ifndef CCF_H
#define CCF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum CcfStatus {
  CCF_STATUS_OK = 0,
  CCF_STATUS_NULL_ARGUMENT = 1,
  CCF_STATUS_INVALID_UTF8 = 2,
  CCF_STATUS_IO = 3,
  CCF_STATUS_PARSE = 4,
  CCF_STATUS_MISSING_ENTITY = 5,
  CCF_STATUS_INVALID_CONFIG = 6,
  CCF_STATUS_INVALID_DATA = 7,
  CCF_STATUS_CHECKPOINT = 8,
  CCF_STATUS_INTERNAL = 9,
} CcfStatus;

typedef enum CcfLoss {
  CCF_LOSS_SOFTMAX = 0,
  CCF_LOSS_HINGE = 1,
  CCF_LOSS_SOFTMAX_EXT = 2,
  CCF_LOSS_HINGE_EXT = 3,
} CcfLoss;

/**
 * A trained or loaded model.
 */
typedef struct CcfModel CcfModel;

/**
 * Training hyperparameters. Start from `ccf_train_options_default`.
 */
typedef struct CcfTrainOptions {
  enum CcfLoss loss;
  size_t dim;
  size_t epochs;
  size_t shards;
  double lr;
  double anneal;
  double reg_user;
  double reg_item;
  /**
   * Weight of no-response slack for `CCF_LOSS_HINGE_EXT`.
   */
  double tradeoff_c;
  uint64_t seed;
  /**
   * Hash table size exponent; 0 keeps a dense store.
   */
  uint32_t hash_bits;
} CcfTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ccf_last_error_message(void);

/**
 * Loads a checkpoint file into a new model written to `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CcfStatus ccf_model_load(const char *path, struct CcfModel **out);

/**
 * Writes the model as a checkpoint file.
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum CcfStatus ccf_model_save(const struct CcfModel *model, const char *path);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void ccf_model_free(struct CcfModel *model);

/**
 * Latent dimensionality, or 0 for a null model.
 *
 * # Safety
 * `model` must be null or come from this library.
 */
size_t ccf_model_dim(const struct CcfModel *model);

/**
 * Utility of `item` for `user`.
 *
 * # Safety
 * Pointers must be valid; strings NUL-terminated.
 */
enum CcfStatus ccf_model_utility(const struct CcfModel *model,
                                 const char *user,
                                 const char *item,
                                 double *out);

/**
 * Ranks `candidates` for `user` and writes the best `n` (fewer if there
 * are fewer candidates) as indices into `candidates` with their scores.
 * `out_indices` and `out_scores` must hold at least `n` values.
 *
 * # Safety
 * `candidates` must point to `n_candidates` NUL-terminated strings; output
 * buffers must hold `n` elements.
 */
enum CcfStatus ccf_model_rank(const struct CcfModel *model,
                              const char *user,
                              const char *const *candidates,
                              size_t n_candidates,
                              size_t n,
                              size_t *out_indices,
                              double *out_scores,
                              size_t *out_len);

/**
 * Default hyperparameters.
 */
struct CcfTrainOptions ccf_train_options_default(void);

/**
 * Trains on a session file and writes the new model to `*out`.
 *
 * # Safety
 * `path` must be NUL-terminated; `options` and `out` must be valid.
 */
enum CcfStatus ccf_train_sessions(const char *path,
                                  const struct CcfTrainOptions *options,
                                  struct CcfModel **out);

/**
 * Logit probability that the offer at `chosen` is picked given the
 * utilities of all `len` offers.
 *
 * # Safety
 * `utilities` must point to `len` values and `out` must be valid.
 */
enum CcfStatus ccf_softmax_prob(const double *utilities, size_t len, size_t chosen, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CCF_H */
