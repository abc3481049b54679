#ifndef LIPCERT_H
#define LIPCERT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum LipcertStatus {
  LIPCERT_STATUS_OK = 0,
  LIPCERT_STATUS_INVALID_INPUT = 1,
  LIPCERT_STATUS_CAPACITY = 2,
  LIPCERT_STATUS_LOAD = 3,
  LIPCERT_STATUS_IO = 4,
  LIPCERT_STATUS_NULL_POINTER = 5,
  LIPCERT_STATUS_PANIC = 6,
} LipcertStatus;

typedef enum LipcertMethod {
  LIPCERT_METHOD_NAIVE = 0,
  LIPCERT_METHOD_RBAR = 1,
  LIPCERT_METHOD_NESTED = 2,
} LipcertMethod;

typedef enum LipcertNorm {
  LIPCERT_NORM_L1 = 0,
  LIPCERT_NORM_L2 = 1,
  LIPCERT_NORM_LINF = 2,
} LipcertNorm;

/**
 * Opaque handle to an affine-ReLU layer `relu(A x + b)` about its nominal
 * point.
 */
typedef struct LipcertLayer LipcertLayer;

/**
 * Opaque model handle.
 */
typedef struct LipcertModel LipcertModel;

/**
 * Tuning knobs shared by the bound functions.
 */
typedef struct LipcertOptions {
  /**
   * Relative margin added to every power-iteration estimate.
   */
  double spectral_slack;
  size_t power_iterations;
  uint64_t power_seed;
  /**
   * Draws for the sampled lower bound; 0 skips it.
   */
  size_t lower_samples;
  uint64_t lower_seed;
} LipcertOptions;

/**
 * Single-layer bounds at one radius.
 */
typedef struct LipcertBoundReport {
  double epsilon;
  double naive;
  double rbar;
  double nested;
  double lower;
  size_t segments;
  double spectral_slack;
} LipcertBoundReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a NUL-terminated string.
 */
const char *lipcert_version(void);

/**
 * Message of the last failed call on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *lipcert_last_error_message(void);

/**
 * Fills `out` with the default options.
 *
 * # Safety
 * `out` must be NULL or point to writable memory for one `LipcertOptions`.
 */
enum LipcertStatus lipcert_options_default(struct LipcertOptions *out);

/**
 * Loads a model manifest.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum LipcertStatus lipcert_model_load(const char *path, struct LipcertModel **out);

/**
 * Releases a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from `lipcert_model_load` and not be used afterwards.
 */
void lipcert_model_free(struct LipcertModel *model);

/**
 * Number of layers, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t lipcert_model_num_layers(const struct LipcertModel *model);

/**
 * Flattened input length, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t lipcert_model_input_len(const struct LipcertModel *model);

/**
 * Flattened output length, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t lipcert_model_output_len(const struct LipcertModel *model);

/**
 * Evaluates the model at `x`.
 *
 * # Safety
 * `x` must hold `x_len` values and `out` room for `out_len` values.
 */
enum LipcertStatus lipcert_model_forward(const struct LipcertModel *model,
                                         const double *x,
                                         size_t x_len,
                                         double *out,
                                         size_t out_len);

/**
 * Propagates radius `epsilon` through the model about `x0` (NULL means the
 * zero input) and writes the product bound to `product`. When `layer_bounds`
 * is non-NULL it receives one bound per layer and must hold
 * `layer_bounds_len == lipcert_model_num_layers(model)` values.
 *
 * # Safety
 * Pointers must be valid for the stated lengths; `options` may be NULL.
 */
enum LipcertStatus lipcert_model_propagate(const struct LipcertModel *model,
                                           const double *x0,
                                           size_t x0_len,
                                           double epsilon,
                                           enum LipcertMethod method,
                                           const struct LipcertOptions *options,
                                           double *product,
                                           double *layer_bounds,
                                           size_t layer_bounds_len);

/**
 * Creates a dense layer from a row-major `rows × cols` weight matrix and a
 * bias of length `rows`, already re-centred at the nominal input.
 *
 * # Safety
 * `weights` must hold `rows * cols` values and `bias` `rows` values.
 */
enum LipcertStatus lipcert_layer_dense_new(size_t rows,
                                           size_t cols,
                                           const double *weights,
                                           const double *bias,
                                           struct LipcertLayer **out);

/**
 * Creates a convolution layer over `[in_c, in_h, in_w]` inputs with a
 * `[out_c, in_c, kernel_h, kernel_w]` kernel. `bias` holds one value per
 * output coordinate (`out_c · out_h · out_w`), already re-centred.
 *
 * # Safety
 * `kernel` and `bias` must hold the stated number of values.
 */
enum LipcertStatus lipcert_layer_conv_new(size_t in_c,
                                          size_t in_h,
                                          size_t in_w,
                                          size_t out_c,
                                          size_t kernel_h,
                                          size_t kernel_w,
                                          size_t stride_h,
                                          size_t stride_w,
                                          size_t pad_h,
                                          size_t pad_w,
                                          const double *kernel,
                                          const double *bias,
                                          size_t bias_len,
                                          struct LipcertLayer **out);

/**
 * Extracts affine layer `index` of `model`, re-centred at that layer's
 * nominal input when the model is evaluated at `x0` (NULL means zeros).
 *
 * # Safety
 * `model` must be live and `x0` NULL or hold `x0_len` values.
 */
enum LipcertStatus lipcert_layer_from_model(const struct LipcertModel *model,
                                            size_t index,
                                            const double *x0,
                                            size_t x0_len,
                                            struct LipcertLayer **out);

/**
 * Releases a layer. NULL is ignored.
 *
 * # Safety
 * `layer` must come from a `lipcert_layer_*` constructor and not be used
 * afterwards.
 */
void lipcert_layer_free(struct LipcertLayer *layer);

/**
 * Output dimension `m`, or 0 for NULL.
 *
 * # Safety
 * `layer` must be NULL or live.
 */
size_t lipcert_layer_rows(const struct LipcertLayer *layer);

/**
 * Input dimension `n`, or 0 for NULL.
 *
 * # Safety
 * `layer` must be NULL or live.
 */
size_t lipcert_layer_cols(const struct LipcertLayer *layer);

/**
 * Computes naive, bounding-region and nested bounds and a sampled lower
 * bound over `{x : ‖x‖ ≤ epsilon}` (intersected with `x ≥ 0` when `nonneg`).
 *
 * # Safety
 * `layer` must be live, `options` NULL or valid, `out` writable.
 */
enum LipcertStatus lipcert_layer_bounds(const struct LipcertLayer *layer,
                                        enum LipcertNorm norm,
                                        double epsilon,
                                        bool nonneg,
                                        const struct LipcertOptions *options,
                                        struct LipcertBoundReport *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LIPCERT_H */
