#ifndef EAGRS_H
#define EAGRS_H

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum EagrsStatus {
  EAGRS_STATUS_OK = 0,
  EAGRS_STATUS_NULL_POINTER = 1,
  EAGRS_STATUS_INVALID_ARGUMENT = 2,
  EAGRS_STATUS_BUFFER_TOO_SMALL = 3,
  EAGRS_STATUS_IO = 4,
  EAGRS_STATUS_FORMAT = 5,
  EAGRS_STATUS_UNTRAINED = 6,
  EAGRS_STATUS_NUMERIC = 7,
  EAGRS_STATUS_STATISTICS = 8,
  EAGRS_STATUS_PANIC = 9,
} EagrsStatus;

// A loaded autoencoder checkpoint.
typedef struct EagrsSae EagrsSae;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *eagrs_version(void);

// Copies the calling thread's last error message into `buf` (truncated,
// always NUL-terminated when `len > 0`) and returns its full length in bytes.
//
// # Safety
// `buf` must be null or valid for `len` writes.
size_t eagrs_last_error_message(char *buf, size_t len);

// Number of upper-triangle connections for `rois` regions.
size_t eagrs_connection_count(size_t rois);

// Strict upper triangle of a symmetric `rois × rois` matrix, row by row.
//
// # Safety
// `matrix` must hold `rois * rois` values and `out` `out_len` slots.
enum EagrsStatus eagrs_flatten_upper(const double *matrix,
                                     size_t rois,
                                     double *out,
                                     size_t out_len);

// Pearson FC of `rois` series with `timepoints` samples each (row per ROI).
//
// # Safety
// `series` must hold `rois * timepoints` values and `out` `out_len` slots.
enum EagrsStatus eagrs_pearson_fc(const double *series,
                                  size_t rois,
                                  size_t timepoints,
                                  double *out,
                                  size_t out_len);

// ROC AUC of `scores` against 0/1 `labels`, ties counted as half.
//
// # Safety
// `scores` and `labels` must hold `n` values; `auc` must be writable.
enum EagrsStatus eagrs_roc_auc(const double *scores, const uint8_t *labels, size_t n, double *auc);

// McNemar's χ² (1 dof, no continuity correction) and p-value for two
// classifiers' 0/1 predictions on the same subjects.
//
// # Safety
// The three arrays must hold `n` values; `chi2` and `p` must be writable.
enum EagrsStatus eagrs_mcnemar(const uint8_t *pred_a,
                               const uint8_t *pred_b,
                               const uint8_t *labels,
                               size_t n,
                               double *chi2,
                               double *p);

// Loads an autoencoder checkpoint. Release it with [`eagrs_sae_free`].
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
enum EagrsStatus eagrs_sae_load(const char *path, struct EagrsSae **out);

// Releases a handle from [`eagrs_sae_load`]; null is a no-op.
//
// # Safety
// `sae` must come from [`eagrs_sae_load`] and not be used afterwards.
void eagrs_sae_free(struct EagrsSae *sae);

// ROI count the checkpoint was trained for.
//
// # Safety
// `sae` must be a live handle and `rois` writable.
enum EagrsStatus eagrs_sae_rois(const struct EagrsSae *sae, size_t *rois);

// Reconstruction of one flattened connection vector.
//
// # Safety
// `sae` must be a live handle, `x` must hold `len` values, `out` `out_len` slots.
enum EagrsStatus eagrs_sae_reconstruct(const struct EagrsSae *sae,
                                       const double *x,
                                       size_t len,
                                       double *out,
                                       size_t out_len);

// Relevance tensor `S[r][a][b]` (`rois³` values) of one FC matrix.
// `epsilon == 0` selects the plain rule, otherwise the ε-rule.
//
// # Safety
// `sae` must be a live handle, `fc` must hold `rois * rois` values, `out` `out_len` slots.
enum EagrsStatus eagrs_sae_relevance(const struct EagrsSae *sae,
                                     const double *fc,
                                     size_t rois,
                                     double epsilon,
                                     double *out,
                                     size_t out_len);

// Representative vectors of a relevance tensor. `axis` is the averaged
// axis of `S`: 0, 1 or 2 (the default in the pipeline).
//
// # Safety
// `tensor` must hold `rois³` values; `f_v` and `f_c` `rois` slots each.
enum EagrsStatus eagrs_rep_vectors(const double *tensor,
                                   size_t rois,
                                   uint32_t axis,
                                   double *f_v,
                                   double *f_c);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EAGRS_H */
