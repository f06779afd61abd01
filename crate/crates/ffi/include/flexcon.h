#ifndef FLEXCON_H
#define FLEXCON_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FcStatus {
  FC_STATUS_OK = 0,
  FC_STATUS_NULL_POINTER = 1,
  FC_STATUS_INVALID_INPUT = 2,
  FC_STATUS_SINGULAR_GEOMETRY = 3,
  FC_STATUS_LOW_SIGNAL = 4,
  FC_STATUS_DECOMPOSITION = 5,
  FC_STATUS_DIVERGED = 6,
  FC_STATUS_UNKNOWN_SCENARIO = 7,
  FC_STATUS_IO = 8,
  FC_STATUS_JSON = 9,
  FC_STATUS_CSV = 10,
  FC_STATUS_PANIC = 11,
} FcStatus;

/**
 * Decomposition route for [`fc_decompose`].
 */
typedef enum FcDecomposition {
  FC_DECOMPOSITION_PENCIL = 0,
  FC_DECOMPOSITION_SYMMETRIC = 1,
} FcDecomposition;

/**
 * Opaque atlas handle.
 */
typedef struct FcAtlas FcAtlas;

/**
 * Opaque scene handle.
 */
typedef struct FcScene FcScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next `fc_` call on the same thread.
 */
const char *fc_last_error(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void fc_string_free(char *s);

/**
 * Builds a default scenario by name (`planar_triangle`, `line_spring`,
 * `flexible_hinge`, `membrane`).
 */
enum FcStatus fc_scene_new(const char *name, struct FcScene **out);

/**
 * Builds a scene from scene JSON or scenario-parameter JSON.
 */
enum FcStatus fc_scene_from_json(const char *json, struct FcScene **out);

/**
 * # Safety
 * `scene` must come from `fc_scene_new`/`fc_scene_from_json` and not be freed twice.
 */
void fc_scene_free(struct FcScene *scene);

/**
 * Noise-free reaction wrench at `pose`, written to `out_wrench[6]`.
 */
enum FcStatus fc_scene_reaction_wrench(const struct FcScene *scene,
                                       const double *pose,
                                       double *out_wrench);

/**
 * Elastic energy stored at `pose`.
 */
enum FcStatus fc_scene_energy(const struct FcScene *scene, const double *pose, double *out_energy);

/**
 * Stiffness at `pose` from noise-free ± probes with the default probe settings.
 */
enum FcStatus fc_scene_probe_stiffness(const struct FcScene *scene,
                                       const double *pose,
                                       double *out_k);

/**
 * Eigenscrews of `k[36]`. Writes up to six `λ` to `out_lambda[6]` and the
 * matching unit screws as rows of `out_axes[36]`; `out_count` receives how many.
 */
enum FcStatus fc_decompose(const double *k,
                           enum FcDecomposition mode,
                           double *out_lambda,
                           double *out_axes,
                           size_t *out_count);

/**
 * Labels eigendata or stiffness JSON; `thresholds_json` may be null for the defaults.
 * The report JSON is returned through `out_json`.
 */
enum FcStatus fc_identify(const char *input_json, const char *thresholds_json, char **out_json);

/**
 * Runs the planner for a run config (same schema as the `plan` command) and
 * returns the full result, step logs included, as JSON. Scenario files resolve
 * against the working directory; nothing is written to disk.
 */
enum FcStatus fc_plan(const char *config_json, char **out_json);

struct FcAtlas *fc_atlas_new(void);

/**
 * # Safety
 * `atlas` must come from `fc_atlas_new` and not be freed twice.
 */
void fc_atlas_free(struct FcAtlas *atlas);

/**
 * Feeds one pose and its stiffness to the atlas. `explorer_json` and
 * `thresholds_json` may be null for the defaults. `out_region` receives the
 * assigned region id, or 0 while the pose is pending.
 */
enum FcStatus fc_atlas_explore_step(struct FcAtlas *atlas,
                                    const double *pose,
                                    const double *k,
                                    const char *explorer_json,
                                    const char *thresholds_json,
                                    uint32_t *out_region);

/**
 * Number of regions, or 0 for a null handle.
 */
size_t fc_atlas_region_count(const struct FcAtlas *atlas);

enum FcStatus fc_atlas_to_json(const struct FcAtlas *atlas, char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLEXCON_H */
