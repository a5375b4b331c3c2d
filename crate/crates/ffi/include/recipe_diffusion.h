#ifndef RECIPE_DIFFUSION_H
#define RECIPE_DIFFUSION_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. `RD_STATUS_OK` is zero; everything else is an error.
typedef enum RdStatus {
  RD_STATUS_OK = 0,
  RD_STATUS_NULL_POINTER = 1,
  RD_STATUS_INVALID_ARGUMENT = 2,
  RD_STATUS_LENGTH_MISMATCH = 3,
  RD_STATUS_IO = 4,
  RD_STATUS_CHECKPOINT = 5,
  RD_STATUS_NUMERICAL = 6,
  RD_STATUS_PANIC = 7,
} RdStatus;

// Set of training points in normalized weight space.
typedef struct RdCloud RdCloud;

// Mask model loaded from a checkpoint, with its schedule and vocabulary.
typedef struct RdMaskModel RdMaskModel;

// Value model loaded from a checkpoint, with its schedule and normalization.
typedef struct RdValueModel RdValueModel;

// Discovery probabilities of one target state under the forward chain.
typedef struct RdDiscovery {
  double p_path;
  double p_end;
  uint64_t hits_path;
  uint64_t hits_end;
  // Samples for a 95% chance of discovery; 0 when the target was never reached.
  uint64_t n95_path;
  uint64_t n95_end;
} RdDiscovery;

// Variance-preserving schedule with linear β(t) on [0, total_time].
typedef struct RdNoiseSchedule {
  double beta_min;
  double beta_max;
  double total_time;
  size_t steps;
} RdNoiseSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL if the last call succeeded.
// The pointer stays valid until the next call into the library on the same thread.
const char *rd_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *rd_version(void);

// q_t = ½(1 − (1 − 2β)^t), the probability that a bit differs from its start after t steps.
enum RdStatus rd_cumulative_flip(double beta, size_t t, double *out_q);

// Probability that one step of independent flips changes exactly `d` of `n` bits.
enum RdStatus rd_distance_class_prob(size_t n, size_t d, double beta, double *out_p);

// Distribution over all 2^n states after `t` steps from `x0`. State index k has bit i
// equal to ingredient i. `out_probs` must hold 2^n values.
enum RdStatus rd_closed_form_marginal(const uint8_t *x0,
                                      size_t n,
                                      size_t t,
                                      double beta,
                                      double *out_probs,
                                      size_t out_len);

// Terminal states of `count` exact reverse trajectories started uniformly at random,
// written as `count` × n bits. `p0` holds the 2^n data probabilities.
enum RdStatus rd_exact_reverse_sample(const double *p0,
                                      size_t n,
                                      double beta,
                                      size_t steps,
                                      size_t count,
                                      uint64_t seed,
                                      uint8_t *out_bits,
                                      size_t out_len);

enum RdStatus rd_discrete_discovery(const double *p0,
                                    size_t n,
                                    const uint8_t *target,
                                    double beta,
                                    size_t steps,
                                    uint64_t trials,
                                    uint64_t seed,
                                    struct RdDiscovery *out_result);

// Copies `count` × `dim` row-major points into a new cloud.
enum RdStatus rd_cloud_new(const double *points,
                           size_t count,
                           size_t dim,
                           struct RdCloud **out_cloud);

void rd_cloud_free(struct RdCloud *cloud);

// Exact score ∇ log p_t(w) of the noised cloud. `w` and `out_score` hold `dim` values.
enum RdStatus rd_mixture_score(const struct RdCloud *cloud,
                               struct RdNoiseSchedule schedule,
                               const double *w,
                               size_t dim,
                               double t,
                               double *out_score);

enum RdStatus rd_mask_model_load(const char *path, struct RdMaskModel **out_model);

void rd_mask_model_free(struct RdMaskModel *model);

// Number of ingredients, or 0 for a null handle.
size_t rd_mask_model_ingredients(const struct RdMaskModel *model);

// Draws `count` masks into `out_bits` (`count` × n bytes).
enum RdStatus rd_mask_model_sample(const struct RdMaskModel *model,
                                   size_t count,
                                   uint64_t seed,
                                   uint8_t *out_bits,
                                   size_t out_len);

enum RdStatus rd_value_model_load(const char *path, struct RdValueModel **out_model);

void rd_value_model_free(struct RdValueModel *model);

size_t rd_value_model_ingredients(const struct RdValueModel *model);

// Generates weights in grams for `count` masks given as `count` × n bytes. Absent
// ingredients get 0; `out_clamped` (optional) receives the number of negative weights
// clamped to zero.
enum RdStatus rd_value_model_generate(const struct RdValueModel *model,
                                      const uint8_t *masks,
                                      size_t count,
                                      uint64_t seed,
                                      double *out_grams,
                                      size_t out_len,
                                      size_t *out_clamped);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RECIPE_DIFFUSION_H */
