#ifndef CORTEXFLOW_H
#define CORTEXFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum CfStatus {
  CF_STATUS_OK = 0,
  CF_STATUS_NULL_POINTER = 1,
  CF_STATUS_INVALID_ARGUMENT = 2,
  CF_STATUS_IO = 3,
  CF_STATUS_UNSUPPORTED_FORMAT = 4,
  CF_STATUS_MALFORMED = 5,
  CF_STATUS_SHAPE_MISMATCH = 6,
  CF_STATUS_INVALID_MESH = 7,
  CF_STATUS_NON_FINITE = 8,
  CF_STATUS_BUFFER_TOO_SMALL = 9,
  CF_STATUS_PANIC = 10,
} CfStatus;

/**
 * Triangle mesh handle.
 */
typedef struct CfMesh CfMesh;

/**
 * Trained network handle; safe to share between threads for inference.
 */
typedef struct CfModel CfModel;

/**
 * Scan handle (values as read, any spacing).
 */
typedef struct CfVolume CfVolume;

/**
 * Surface metrics of a predicted pair against ground truth.
 */
typedef struct CfMetrics {
  double ssd_wm;
  double ssd_gm;
  double hd90_wm;
  double hd90_gm;
  double thickness_error;
  double mean_thickness;
  double sif_wm;
  double sif_gm;
} CfMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer
 * stays valid until the next cortexflow call on the same thread.
 */
const char *cf_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *cf_version(void);

/**
 * Reads a PLY or OFF mesh.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CfStatus cf_mesh_read(const char *path, struct CfMesh **out);

/**
 * Writes a mesh; the format follows the extension (`.ply` or `.off`).
 *
 * # Safety
 * `mesh` must be a live handle and `path` a NUL-terminated string.
 */
enum CfStatus cf_mesh_write(const struct CfMesh *mesh, const char *path);

/**
 * Builds a mesh from `n_vertices` xyz triples and `n_faces` index triples.
 *
 * # Safety
 * `vertices` must hold `3 * n_vertices` doubles and `faces`
 * `3 * n_faces` indices.
 */
enum CfStatus cf_mesh_new(const double *vertices,
                          size_t n_vertices,
                          const uint32_t *faces,
                          size_t n_faces,
                          struct CfMesh **out);

/**
 * The genus-0 template with `n_vertices` points, subdivided `levels` times.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum CfStatus cf_template(size_t n_vertices, uint32_t levels, struct CfMesh **out);

/**
 * One step of midpoint subdivision into a new handle.
 *
 * # Safety
 * `mesh` must be a live handle and `out` a valid pointer.
 */
enum CfStatus cf_mesh_subdivide(const struct CfMesh *mesh, struct CfMesh **out);

/**
 * Vertex count, or 0 for a null handle.
 *
 * # Safety
 * `mesh` must be null or a live handle.
 */
size_t cf_mesh_vertex_count(const struct CfMesh *mesh);

/**
 * Face count, or 0 for a null handle.
 *
 * # Safety
 * `mesh` must be null or a live handle.
 */
size_t cf_mesh_face_count(const struct CfMesh *mesh);

/**
 * Copies the vertices as xyz triples into `buf` of `len` doubles.
 *
 * # Safety
 * `mesh` must be a live handle and `buf` writable for `len` doubles.
 */
enum CfStatus cf_mesh_vertices(const struct CfMesh *mesh, double *buf, size_t len);

/**
 * Copies the faces as index triples into `buf` of `len` entries.
 *
 * # Safety
 * `mesh` must be a live handle and `buf` writable for `len` entries.
 */
enum CfStatus cf_mesh_faces(const struct CfMesh *mesh, uint32_t *buf, size_t len);

/**
 * Euler characteristic V - E + F.
 *
 * # Safety
 * `mesh` must be a live handle and `out` a valid pointer.
 */
enum CfStatus cf_mesh_euler_characteristic(const struct CfMesh *mesh, int64_t *out);

/**
 * Fraction of faces intersecting a non-adjacent face.
 *
 * # Safety
 * `mesh` must be a live handle and `out` a valid pointer.
 */
enum CfStatus cf_mesh_sif_fraction(const struct CfMesh *mesh, double *out);

/**
 * Releases a mesh; null is ignored.
 *
 * # Safety
 * `mesh` must be null or a handle not yet freed.
 */
void cf_mesh_free(struct CfMesh *mesh);

/**
 * Reads a NIfTI-1 scan (`.nii` or `.nii.gz`).
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CfStatus cf_volume_read(const char *path, struct CfVolume **out);

/**
 * Grid size `(nx, ny, nz)` into `dims[3]`.
 *
 * # Safety
 * `volume` must be a live handle and `dims` writable for three entries.
 */
enum CfStatus cf_volume_dims(const struct CfVolume *volume, size_t *dims);

/**
 * Releases a volume; null is ignored.
 *
 * # Safety
 * `volume` must be null or a handle not yet freed.
 */
void cf_volume_free(struct CfVolume *volume);

/**
 * Loads a trained network from a checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CfStatus cf_model_load(const char *path, struct CfModel **out);

/**
 * Reconstructs WM and GM surfaces. The scan is resampled to 1 mm and
 * min-max normalized first. `affine` is a row-major 4x4 template-to-scanner
 * transform, or null for identity.
 *
 * # Safety
 * Handles must be live, `affine` null or readable for 16 doubles, and
 * `out_wm`/`out_gm` valid pointers.
 */
enum CfStatus cf_model_reconstruct(const struct CfModel *model,
                                   const struct CfVolume *volume,
                                   const double *affine,
                                   struct CfMesh **out_wm,
                                   struct CfMesh **out_gm);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void cf_model_free(struct CfModel *model);

/**
 * Scores a predicted WM/GM pair against ground truth with `n_samples`
 * points per surface.
 *
 * # Safety
 * All handles must be live and `out` a valid pointer.
 */
enum CfStatus cf_evaluate_pair(const struct CfMesh *pred_wm,
                               const struct CfMesh *pred_gm,
                               const struct CfMesh *gt_wm,
                               const struct CfMesh *gt_gm,
                               size_t n_samples,
                               struct CfMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CORTEXFLOW_H */
