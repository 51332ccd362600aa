#ifndef AI4AR_H
#define AI4AR_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum Ai4arStatus {
  AI4AR_STATUS_OK = 0,
  AI4AR_STATUS_NULL_POINTER = 1,
  AI4AR_STATUS_INVALID_ARGUMENT = 2,
  AI4AR_STATUS_DECODE_FAILED = 3,
  AI4AR_STATUS_ENCODE_FAILED = 4,
  AI4AR_STATUS_NOT_FOUND = 5,
  AI4AR_STATUS_SOLVER_FAILED = 6,
  AI4AR_STATUS_IO = 7,
  AI4AR_STATUS_PANIC = 8,
} Ai4arStatus;

/**
 * Owned byte buffer returned by the library.
 */
typedef struct Ai4arBytes Ai4arBytes;

/**
 * Decoded protocol message.
 */
typedef struct Ai4arMessage Ai4arMessage;

/**
 * 3D object model with its diameter and symmetry flag.
 */
typedef struct Ai4arModel Ai4arModel;

/**
 * Axis-aligned box in pixels, top-left origin.
 */
typedef struct Ai4arBBox {
  double x;
  double y;
  double w;
  double h;
} Ai4arBBox;

/**
 * Rigid pose: unit quaternion `(w, x, y, z)` and translation in millimeters.
 */
typedef struct Ai4arPose {
  double rotation[4];
  double translation[3];
  uint32_t object_id;
} Ai4arPose;

/**
 * Pinhole camera intrinsics.
 */
typedef struct Ai4arIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
} Ai4arIntrinsics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` as a
 * NUL-terminated string, truncating to `cap` bytes. Returns the full
 * message length excluding the terminator.
 *
 * # Safety
 * `buf` must be null or valid for `cap` bytes.
 */
size_t ai4ar_last_error(char *buf, size_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ai4ar_version(void);

/**
 * Decodes exactly one envelope.
 *
 * # Safety
 * `data` must be valid for `len` bytes; `out` must be valid for writes.
 */
enum Ai4arStatus ai4ar_message_decode(const uint8_t *data, size_t len, struct Ai4arMessage **out);

/**
 * Builds a message from its type code, header JSON and blob. Only frames
 * carry a blob.
 *
 * # Safety
 * `header` must be valid for `header_len` bytes, `blob` for `blob_len`
 * bytes; `out` must be valid for writes.
 */
enum Ai4arStatus ai4ar_message_from_parts(uint8_t msg_type,
                                          const uint8_t *header,
                                          size_t header_len,
                                          const uint8_t *blob,
                                          size_t blob_len,
                                          struct Ai4arMessage **out);

/**
 * Type code of the message, 0 for a null handle.
 *
 * # Safety
 * `msg` must be null or a live handle.
 */
uint8_t ai4ar_message_type(const struct Ai4arMessage *msg);

/**
 * Borrows the canonical header JSON; valid while the handle lives.
 *
 * # Safety
 * `msg` must be a live handle; `data` and `len` valid for writes.
 */
enum Ai4arStatus ai4ar_message_header(const struct Ai4arMessage *msg,
                                      const uint8_t **data,
                                      size_t *len);

/**
 * Borrows the blob (frame pixels; empty for other types).
 *
 * # Safety
 * `msg` must be a live handle; `data` and `len` valid for writes.
 */
enum Ai4arStatus ai4ar_message_blob(const struct Ai4arMessage *msg,
                                    const uint8_t **data,
                                    size_t *len);

/**
 * Encodes the message into a new byte buffer.
 *
 * # Safety
 * `msg` must be a live handle; `out` valid for writes.
 */
enum Ai4arStatus ai4ar_message_encode(const struct Ai4arMessage *msg, struct Ai4arBytes **out);

/**
 * # Safety
 * `msg` must be null or a handle not yet freed.
 */
void ai4ar_message_free(struct Ai4arMessage *msg);

/**
 * # Safety
 * `bytes` must be null or a live handle.
 */
const uint8_t *ai4ar_bytes_data(const struct Ai4arBytes *bytes);

/**
 * # Safety
 * `bytes` must be null or a live handle.
 */
size_t ai4ar_bytes_len(const struct Ai4arBytes *bytes);

/**
 * # Safety
 * `bytes` must be null or a handle not yet freed.
 */
void ai4ar_bytes_free(struct Ai4arBytes *bytes);

/**
 * Intersection over union; 0 for disjoint or degenerate boxes.
 */
double ai4ar_iou(struct Ai4arBBox a, struct Ai4arBBox b);

/**
 * Builds a model from `n` points given as consecutive `x, y, z` triples.
 *
 * # Safety
 * `xyz` must be valid for `3 * n` doubles; `out` valid for writes.
 */
enum Ai4arStatus ai4ar_model_from_points(const double *xyz,
                                         size_t n,
                                         uint32_t object_id,
                                         bool symmetric,
                                         struct Ai4arModel **out);

/**
 * Loads a `.ply` or `.json` model file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` valid for writes.
 */
enum Ai4arStatus ai4ar_model_load(const char *path,
                                  uint32_t object_id,
                                  bool symmetric,
                                  struct Ai4arModel **out);

/**
 * Model diameter in millimeters; NaN for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
double ai4ar_model_diameter(const struct Ai4arModel *model);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void ai4ar_model_free(struct Ai4arModel *model);

/**
 * Mean distance between corresponding transformed model points.
 *
 * # Safety
 * All pointers must be valid; `model` a live handle.
 */
enum Ai4arStatus ai4ar_add(const struct Ai4arModel *model,
                           const struct Ai4arPose *gt,
                           const struct Ai4arPose *est,
                           double *out);

/**
 * Mean closest-point distance, for symmetric objects.
 *
 * # Safety
 * All pointers must be valid; `model` a live handle.
 */
enum Ai4arStatus ai4ar_adds(const struct Ai4arModel *model,
                            const struct Ai4arPose *gt,
                            const struct Ai4arPose *est,
                            double *out);

/**
 * ADD-S when the model is symmetric, ADD otherwise.
 *
 * # Safety
 * All pointers must be valid; `model` a live handle.
 */
enum Ai4arStatus ai4ar_pose_error(const struct Ai4arModel *model,
                                  const struct Ai4arPose *gt,
                                  const struct Ai4arPose *est,
                                  double *out);

/**
 * Solves the object pose from `n` correspondences: `points_3d` holds
 * `x, y, z` triples in model millimeters, `points_2d` holds `u, v` pixel
 * pairs. Writes the pose and the reprojection RMS in pixels.
 *
 * # Safety
 * `points_3d` must be valid for `3 * n` doubles, `points_2d` for `2 * n`;
 * the remaining pointers valid.
 */
enum Ai4arStatus ai4ar_pnp_solve(const double *points_3d,
                                 const double *points_2d,
                                 size_t n,
                                 const struct Ai4arIntrinsics *intrinsics,
                                 struct Ai4arPose *pose,
                                 double *rms);

/**
 * Tight box around the nonzero pixels of a row-major `width`×`height`
 * mask. An empty mask yields [`Ai4arStatus::NotFound`].
 *
 * # Safety
 * `data` must be valid for `width * height` bytes; `out` valid for writes.
 */
enum Ai4arStatus ai4ar_mask_to_bbox(const uint8_t *data,
                                    uint32_t width,
                                    uint32_t height,
                                    struct Ai4arBBox *out);

/**
 * Formats one YOLO label line (`class cx cy w h`, normalized, six
 * decimals, no newline) for a pixel box in a `width`×`height` image.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum Ai4arStatus ai4ar_yolo_line(uint32_t class_id,
                                 struct Ai4arBBox bbox,
                                 uint32_t width,
                                 uint32_t height,
                                 struct Ai4arBytes **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AI4AR_H */
