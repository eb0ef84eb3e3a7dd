/* C interface of the lapmesh deformable-surface reconstruction library. */

#ifndef LAPMESH_H
#define LAPMESH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of a call. Anything but `OK` leaves a message for
// [`lap_last_error_message`].
typedef enum LapStatus {
  LAP_STATUS_OK = 0,
  // A required pointer argument was null.
  LAP_STATUS_NULL_POINTER = 1,
  // Invalid input: bad file contents, out-of-range parameter,
  // inconsistent sizes.
  LAP_STATUS_INVALID_ARGUMENT = 2,
  // The file system refused.
  LAP_STATUS_IO = 3,
  // The solve failed numerically (degenerate geometry, eigen failure,
  // every correspondence rejected).
  LAP_STATUS_NUMERICAL_FAILURE = 4,
  // Refinement ran out of iterations; the result handle is still
  // produced, best-effort.
  LAP_STATUS_NO_CONVERGENCE = 5,
  // A panic was caught at the boundary; state is unspecified but memory
  // is safe.
  LAP_STATUS_INTERNAL = 6,
} LapStatus;

// Regularizer selection.
typedef enum LapSurface {
  // Planar when the template is flat within tolerance, curved otherwise.
  LAP_SURFACE_AUTO = 0,
  LAP_SURFACE_PLANAR = 1,
  LAP_SURFACE_NON_PLANAR = 2,
} LapSurface;

// Control-vertex selection.
typedef enum LapStrategy {
  // Deterministic farthest-point spread.
  LAP_STRATEGY_REGULAR = 0,
  // Seeded uniform sample.
  LAP_STRATEGY_RANDOM = 1,
  // Every vertex (`control_count` is ignored).
  LAP_STRATEGY_ALL = 2,
} LapStrategy;

// Pinhole camera (opaque).
typedef struct LapCamera LapCamera;

// A batch of template-to-image point correspondences (opaque).
typedef struct LapCorrespondences LapCorrespondences;

// Reference template mesh (opaque).
typedef struct LapMesh LapMesh;

// Reconstruction output (opaque). Produced even on
// `LAP_STATUS_NO_CONVERGENCE`, best-effort.
typedef struct LapResult LapResult;

// Pipeline settings, passed by value. Obtain defaults from
// [`lap_options_default`] and override fields as needed.
typedef struct LapOptions {
  enum LapSurface surface;
  // Virtual-vertex offset scale of the curved regularizer.
  double sigma;
  enum LapStrategy strategy;
  uint32_t control_count;
  // Seed of the stochastic stages.
  uint64_t seed;
  // Regularization weight.
  double w_r;
  // Run iterative outlier rejection before the final solve.
  bool robust;
  // Run constrained refinement after the linear solve.
  bool refine;
} LapOptions;

// Cylindrical obstacle plus trajectory prior for the collision-aware
// refinement, passed by value.
typedef struct LapBallOptions {
  // A point on the cylinder axis.
  double cylinder_point[3];
  // Axis direction (any nonzero length).
  double cylinder_axis[3];
  double cylinder_radius;
  // A point on the flight path of the surface centroid.
  double trajectory_point[3];
  // Flight direction (any nonzero length).
  double trajectory_direction[3];
  // Edge-length preservation weight.
  double w_l;
  // Trajectory attachment weight.
  double w_t;
} LapBallOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Version of the library as a static NUL-terminated string.
const char *lap_version(void);

// Description of the most recent failure on this thread, or null if none
// occurred yet. Valid until the next failing call on the same thread.
const char *lap_last_error_message(void);

// Loads a triangulated template from an OBJ file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be a valid location.
enum LapStatus lap_mesh_load_obj(const char *path, struct LapMesh **out);

// Builds a template from raw arrays: `vertices` holds `3 * n_vertices`
// coordinates (x, y, z per vertex), `facets` holds `3 * n_facets`
// zero-based vertex indices.
//
// # Safety
// The arrays must be readable at those lengths; `out` must be valid.
enum LapStatus lap_mesh_from_arrays(const double *vertices,
                                    uint32_t n_vertices,
                                    const uint32_t *facets,
                                    uint32_t n_facets,
                                    struct LapMesh **out);

// Number of vertices, or 0 for a null handle.
uint32_t lap_mesh_num_vertices(const struct LapMesh *mesh);

// Number of facets, or 0 for a null handle.
uint32_t lap_mesh_num_facets(const struct LapMesh *mesh);

// Releases a mesh handle. Null is a no-op.
//
// # Safety
// `mesh` must come from a `lap_mesh_*` constructor and not be freed twice.
void lap_mesh_free(struct LapMesh *mesh);

// Creates a pinhole camera from intrinsics (focal lengths and principal
// point in pixels) and the image size.
//
// # Safety
// `out` must be a valid location.
enum LapStatus lap_camera_new(double fx,
                              double fy,
                              double cx,
                              double cy,
                              uint32_t width,
                              uint32_t height,
                              struct LapCamera **out);

// Loads a camera from a JSON file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be a valid location.
enum LapStatus lap_camera_load_json(const char *path, struct LapCamera **out);

// Releases a camera handle. Null is a no-op.
//
// # Safety
// `camera` must come from a `lap_camera_*` constructor, freed once.
void lap_camera_free(struct LapCamera *camera);

// Loads correspondences from a CSV file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be a valid location.
enum LapStatus lap_corr_load_csv(const char *path, struct LapCorrespondences **out);

// Builds correspondences from raw arrays of length `n`: `facets[i]` is the
// template facet, `barycentric` holds 3 coordinates per entry summing to
// one, `pixels` holds the matched (u, v) per entry.
//
// # Safety
// The arrays must be readable at those lengths; `out` must be valid.
enum LapStatus lap_corr_from_arrays(const uint32_t *facets,
                                    const double *barycentric,
                                    const double *pixels,
                                    uint32_t n,
                                    struct LapCorrespondences **out);

// Number of correspondences, or 0 for a null handle.
uint32_t lap_corr_len(const struct LapCorrespondences *corr);

// Releases a correspondence handle. Null is a no-op.
//
// # Safety
// `corr` must come from a `lap_corr_*` constructor, freed once.
void lap_corr_free(struct LapCorrespondences *corr);

// The documented defaults: auto surface, sigma 1, 25 regular controls,
// w_r 1, rejection and refinement on.
struct LapOptions lap_options_default(void);

// Full reconstruction: outlier rejection, linear solve, refinement, per
// `options` (null for defaults). On success `*out` owns the result; on
// `LAP_STATUS_NO_CONVERGENCE` the best-effort result is returned too.
//
// # Safety
// All handles must be live; `options` may be null; `out` must be valid.
enum LapStatus lap_reconstruct(const struct LapMesh *mesh,
                               const struct LapCamera *camera,
                               const struct LapCorrespondences *corr,
                               const struct LapOptions *options,
                               struct LapResult **out);

// Like [`lap_reconstruct`] but refines with the collision-aware variant:
// the surface stays outside the cylinder and its centroid near the
// trajectory line.
//
// # Safety
// As [`lap_reconstruct`]; `ball` must point to a valid struct.
enum LapStatus lap_reconstruct_with_obstacle(const struct LapMesh *mesh,
                                             const struct LapCamera *camera,
                                             const struct LapCorrespondences *corr,
                                             const struct LapOptions *options,
                                             const struct LapBallOptions *ball,
                                             struct LapResult **out);

// Number of vertices of the reconstructed mesh, or 0 for a null handle.
uint32_t lap_result_num_vertices(const struct LapResult *result);

// Copies the reconstructed coordinates (x, y, z per vertex) into `out`,
// which must hold exactly `3 * lap_result_num_vertices` doubles.
//
// # Safety
// `out` must be writable at that length.
enum LapStatus lap_result_coords(const struct LapResult *result, double *out, uint32_t len);

// Copies the per-correspondence inlier flags into `out`, which must hold
// exactly as many entries as the correspondence set that produced the
// result.
//
// # Safety
// `out` must be writable at that length.
enum LapStatus lap_result_inlier_flags(const struct LapResult *result, bool *out, uint32_t len);

// Whether refinement ran and converged (true for linear-only runs).
bool lap_result_converged(const struct LapResult *result);

// Whether constrained refinement ran at all.
bool lap_result_refined(const struct LapResult *result);

// Refinement iterations (0 for linear-only runs).
uint32_t lap_result_iterations(const struct LapResult *result);

// Largest relative constraint violation of the refined shape.
double lap_result_max_violation(const struct LapResult *result);

// Reprojection RMS over the kept inliers, true pixels.
double lap_result_reproj_rms_px(const struct LapResult *result);

// Writes the reconstructed shape as an OBJ file.
//
// # Safety
// `path` must be a NUL-terminated string.
enum LapStatus lap_result_write_obj(const struct LapResult *result, const char *path);

// Mean 3D vertex error of the result against ground-truth coordinates
// (x, y, z per vertex, `3 * lap_result_num_vertices` doubles).
//
// # Safety
// `gt` must be readable at that length; `out_mean` must be writable.
enum LapStatus lap_result_mean_3d_error(const struct LapResult *result,
                                        const double *gt,
                                        uint32_t len,
                                        double *out_mean);

// Releases a result handle. Null is a no-op.
//
// # Safety
// `result` must come from a reconstruction call, freed once.
void lap_result_free(struct LapResult *result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LAPMESH_H */
