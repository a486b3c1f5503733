#ifndef MOE_GATING_H
#define MOE_GATING_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MoeStatus {
  MOE_STATUS_OK = 0,
  MOE_STATUS_NULL_POINTER = 1,
  MOE_STATUS_INVALID_ARGUMENT = 2,
  MOE_STATUS_SHAPE = 3,
  MOE_STATUS_IO = 4,
  MOE_STATUS_FORMAT = 5,
  MOE_STATUS_NON_FINITE = 6,
  /**
   * The statistic has no answer for this input (e.g. all logits zero).
   */
  MOE_STATUS_UNDEFINED = 7,
  MOE_STATUS_INCOMPATIBLE_FEATURES = 8,
  MOE_STATUS_CONFIG = 9,
  MOE_STATUS_PANIC = 10,
} MoeStatus;

typedef enum MoeStatistic {
  MOE_STATISTIC_ARGMAX = 0,
  MOE_STATISTIC_RATIO = 1,
  MOE_STATISTIC_OVERALL_RATIO = 2,
  MOE_STATISTIC_Q3_DIFF = 3,
  MOE_STATISTIC_STD = 4,
} MoeStatistic;

typedef enum MoeDecisionPath {
  MOE_DECISION_PATH_STATISTIC = 0,
  MOE_DECISION_PATH_EXCLUSIVE_PAN = 1,
  MOE_DECISION_PATH_FALLBACK = 2,
} MoeDecisionPath;

/**
 * Opaque trained LeNet5 expert.
 */
typedef struct MoeExpert MoeExpert;

/**
 * Opaque ordered set of experts with contiguous global labels.
 */
typedef struct MoeMixture MoeMixture;

/**
 * Opaque pattern attribution network (per-expert or universal).
 */
typedef struct MoePan MoePan;

typedef struct MoeDecision {
  size_t expert_id;
  size_t local_class;
  size_t global_class;
  enum MoeDecisionPath path;
} MoeDecision;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *moe_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the buffer size needed
 * for the full message including the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t moe_last_error(char *buf, size_t len);

/**
 * Naive gating over already concatenated logits. `logits` holds
 * `sum(class_counts)` values, expert by expert.
 *
 * # Safety
 * Pointers must be valid for the lengths implied by `n_experts` and
 * `class_counts`; `out` must be writable.
 */
enum MoeStatus moe_decide(enum MoeStatistic stat,
                          const float *logits,
                          const size_t *class_counts,
                          size_t n_experts,
                          struct MoeDecision *out);

/**
 * Coordinator rule over concatenated logits and one attribution flag per
 * expert (non-zero means the expert claims the input).
 *
 * # Safety
 * As for [`moe_decide`]; `belongs` must hold `n_experts` bytes.
 */
enum MoeStatus moe_coordinate(const float *logits,
                              const size_t *class_counts,
                              size_t n_experts,
                              const uint8_t *belongs,
                              struct MoeDecision *out);

/**
 * Loads an expert checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MoeStatus moe_expert_load(const char *path, struct MoeExpert **out);

/**
 * # Safety
 * `expert` must come from [`moe_expert_load`] and not be freed twice.
 */
void moe_expert_free(struct MoeExpert *expert);

/**
 * Number of output classes; 0 for a null handle.
 *
 * # Safety
 * `expert` must be null or a live handle.
 */
size_t moe_expert_class_count(const struct MoeExpert *expert);

/**
 * Channels the expert was trained on (1 or 3); 0 for a null handle.
 *
 * # Safety
 * `expert` must be null or a live handle.
 */
size_t moe_expert_input_channels(const struct MoeExpert *expert);

/**
 * Width of the final fully connected activation.
 */
size_t moe_final_fc_width(void);

/**
 * Runs one 8-bit image (planar, any of 1/3 channels, at most 32x32)
 * through the expert. `logits_out` receives `class_count` values;
 * `final_fc_out` may be null, otherwise it receives the final FC
 * activation.
 *
 * # Safety
 * `pixels` must hold `channels * height * width` bytes; output buffers
 * must hold at least the stated lengths.
 */
enum MoeStatus moe_expert_infer(const struct MoeExpert *expert,
                                const uint8_t *pixels,
                                size_t channels,
                                size_t height,
                                size_t width,
                                float *logits_out,
                                size_t logits_len,
                                float *final_fc_out,
                                size_t final_fc_len);

/**
 * Builds a mixture from copies of the given experts, in order. The expert
 * handles stay owned by the caller.
 *
 * # Safety
 * `experts` must hold `n` live expert handles; `out` must be writable.
 */
enum MoeStatus moe_mixture_new(const struct MoeExpert *const *experts,
                               size_t n,
                               struct MoeMixture **out);

/**
 * # Safety
 * `mixture` must come from [`moe_mixture_new`] and not be freed twice.
 */
void moe_mixture_free(struct MoeMixture *mixture);

/**
 * # Safety
 * `mixture` must be null or a live handle.
 */
size_t moe_mixture_len(const struct MoeMixture *mixture);

/**
 * # Safety
 * `mixture` must be null or a live handle.
 */
size_t moe_mixture_total_classes(const struct MoeMixture *mixture);

/**
 * Runs every expert on the image and gates with `stat`.
 *
 * # Safety
 * As for [`moe_expert_infer`]; `out` must be writable.
 */
enum MoeStatus moe_mixture_gate(const struct MoeMixture *mixture,
                                enum MoeStatistic stat,
                                const uint8_t *pixels,
                                size_t channels,
                                size_t height,
                                size_t width,
                                struct MoeDecision *out);

/**
 * Loads a PAN or UPAN checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum MoeStatus moe_pan_load(const char *path, struct MoePan **out);

/**
 * # Safety
 * `pan` must come from [`moe_pan_load`] and not be freed twice.
 */
void moe_pan_free(struct MoePan *pan);

/**
 * Feature width the PAN consumes; 0 for a null handle.
 *
 * # Safety
 * `pan` must be null or a live handle.
 */
size_t moe_pan_feature_width(const struct MoePan *pan);

/**
 * Attributes one raw (unscaled) feature row.
 *
 * # Safety
 * `features` must hold `width` floats; `belongs` and `confidence` must be
 * writable (`confidence` may be null).
 */
enum MoeStatus moe_pan_attribute(const struct MoePan *pan,
                                 const float *features,
                                 size_t width,
                                 uint8_t *belongs,
                                 float *confidence);

/**
 * SC1: one PAN per expert, in mixture order.
 *
 * # Safety
 * `pans` must hold `n_pans` live handles; image arguments as for
 * [`moe_expert_infer`].
 */
enum MoeStatus moe_mixture_gate_sc1(const struct MoeMixture *mixture,
                                    const struct MoePan *const *pans,
                                    size_t n_pans,
                                    const uint8_t *pixels,
                                    size_t channels,
                                    size_t height,
                                    size_t width,
                                    struct MoeDecision *out);

/**
 * SC2: one universal PAN shared by every expert.
 *
 * # Safety
 * Image arguments as for [`moe_expert_infer`].
 */
enum MoeStatus moe_mixture_gate_sc2(const struct MoeMixture *mixture,
                                    const struct MoePan *upan,
                                    const uint8_t *pixels,
                                    size_t channels,
                                    size_t height,
                                    size_t width,
                                    struct MoeDecision *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MOE_GATING_H */
