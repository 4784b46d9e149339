#ifndef STOPS_H
#define STOPS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StopsStatus {
  STOPS_STATUS_OK = 0,
  STOPS_STATUS_NULL_POINTER = 1,
  STOPS_STATUS_INVALID_ARGUMENT = 2,
  STOPS_STATUS_INVALID_DISTRIBUTION = 3,
  STOPS_STATUS_NOT_RENORMALIZED = 4,
  STOPS_STATUS_NO_SCORE_MASS = 5,
  STOPS_STATUS_CUTOFF_OUT_OF_RANGE = 6,
  STOPS_STATUS_UNDEFINED_METRIC = 7,
  STOPS_STATUS_PANIC = 99,
} StopsStatus;

typedef enum StopsLabel {
  STOPS_LABEL_NORMAL = 0,
  STOPS_LABEL_DEPRESSION = 1,
} StopsLabel;

typedef enum StopsEstimator {
  STOPS_ESTIMATOR_STOPS = 0,
  STOPS_ESTIMATOR_ENTROPY = 1,
  STOPS_ESTIMATOR_MAX_PROB = 2,
  STOPS_ESTIMATOR_MARGIN = 3,
} StopsEstimator;

/**
 * Opaque score distribution.
 */
typedef struct StopsDistribution StopsDistribution;

/**
 * Outcome of the summation rule.
 */
typedef struct StopsScreening {
  double p_depression;
  double confidence;
  enum StopsLabel label;
  uint32_t point_score;
  uint32_t cutoff;
} StopsScreening;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into this library on the same thread.
 */
const char *stops_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *stops_version(void);

/**
 * Builds a distribution over `0..len-1` from explicit masses.
 *
 * # Safety
 * `mass` must point to `len` readable doubles; `out` must be writable.
 */
enum StopsStatus stops_distribution_new(const double *mass,
                                        size_t len,
                                        double coverage,
                                        bool renormalized,
                                        struct StopsDistribution **out);

/**
 * Builds an unrenormalized distribution from the candidate tokens at the
 * score position, one vocabulary token per score.
 *
 * # Safety
 * `tokens` must point to `n` NUL-terminated strings and `logprobs` to `n`
 * doubles; `out` must be writable.
 */
enum StopsStatus stops_distribution_from_candidates(const char *const *tokens,
                                                    const double *logprobs,
                                                    size_t n,
                                                    uint32_t max_score,
                                                    struct StopsDistribution **out);

/**
 * Releases a distribution. NULL is ignored.
 *
 * # Safety
 * `dist` must come from this library and not have been freed.
 */
void stops_distribution_free(struct StopsDistribution *dist);

/**
 * # Safety
 * `dist` must be a live handle or NULL (returns 0).
 */
uint32_t stops_distribution_max_score(const struct StopsDistribution *dist);

/**
 * # Safety
 * `dist` must be a live handle or NULL (returns NaN).
 */
double stops_distribution_coverage(const struct StopsDistribution *dist);

/**
 * # Safety
 * `dist` must be a live handle or NULL (returns false).
 */
bool stops_distribution_is_renormalized(const struct StopsDistribution *dist);

/**
 * Copies the masses into `out`, which must hold `max_score + 1` values.
 *
 * # Safety
 * `dist` must be a live handle; `out` must point to `len` writable doubles.
 */
enum StopsStatus stops_distribution_mass(const struct StopsDistribution *dist,
                                         double *out,
                                         size_t len);

/**
 * Writes a renormalized copy of `dist` to `out`.
 *
 * # Safety
 * `dist` must be a live handle; `out` must be writable.
 */
enum StopsStatus stops_renormalize(const struct StopsDistribution *dist,
                                   struct StopsDistribution **out);

/**
 * Applies the summation rule at `cutoff`. `dist` must be renormalized.
 *
 * # Safety
 * `dist` must be a live handle; `out` must be writable.
 */
enum StopsStatus stops_classify(const struct StopsDistribution *dist,
                                uint32_t cutoff,
                                struct StopsScreening *out);

/**
 * Distribution-based confidence. `Stops` needs `cutoff`; the others
 * ignore it.
 *
 * # Safety
 * `dist` must be a live handle; `out` must be writable.
 */
enum StopsStatus stops_confidence_estimate(const struct StopsDistribution *dist,
                                           enum StopsEstimator estimator,
                                           uint32_t cutoff,
                                           double *out);

/**
 * Two-way softmax over the "0" and "1" answer logits.
 *
 * # Safety
 * `p_depression` and `confidence` must be writable.
 */
enum StopsStatus stops_binary_logit(double logit_zero,
                                    double logit_one,
                                    double *p_depression,
                                    double *confidence);

/**
 * ROC AUC with ties counted one half. `labels[i]` is non-zero for the
 * positive class.
 *
 * # Safety
 * `scores` and `labels` must point to `n` readable values; `out` must be
 * writable.
 */
enum StopsStatus stops_roc_auc(const double *scores, const uint8_t *labels, size_t n, double *out);

/**
 * Matthews correlation coefficient; 0 whenever a marginal is empty.
 */
double stops_mcc(uint64_t tp, uint64_t fp, uint64_t tn, uint64_t fn_);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STOPS_H */
