#ifndef SDFEDIT_H
#define SDFEDIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SdfeditStatus {
  SDFEDIT_STATUS_OK = 0,
  SDFEDIT_STATUS_NULL_POINTER = 1,
  SDFEDIT_STATUS_INVALID_ARGUMENT = 2,
  SDFEDIT_STATUS_OUT_OF_RANGE = 3,
  SDFEDIT_STATUS_DEGENERATE_DIRECTION = 4,
  SDFEDIT_STATUS_NOT_FOUND = 5,
  SDFEDIT_STATUS_IO = 6,
  SDFEDIT_STATUS_BAD_CHECKPOINT = 7,
  SDFEDIT_STATUS_BUFFER_TOO_SMALL = 8,
  SDFEDIT_STATUS_INTERNAL = 9,
} SdfeditStatus;

/**
 * Triangle mesh produced by [`sdfedit_session_extract_mesh`].
 */
typedef struct SdfeditMesh SdfeditMesh;

/**
 * Loaded decoder, latent table, regressor and editor.
 */
typedef struct SdfeditSession SdfeditSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty after a
 * success. Valid until the next call into this library on the same thread.
 */
const char *sdfedit_last_error_message(void);

/**
 * Load checkpoints from their stems (paths without extension).
 *
 * # Safety
 * The path arguments must be NUL-terminated strings and `out` a valid
 * pointer. On success `*out` owns a session to pass to
 * [`sdfedit_session_free`].
 */
enum SdfeditStatus sdfedit_session_open(const char *sdf_stem,
                                        const char *regressor_stem,
                                        const char *editor_stem,
                                        struct SdfeditSession **out);

/**
 * # Safety
 * `s` must come from [`sdfedit_session_open`] and not be used afterwards.
 * Null is ignored.
 */
void sdfedit_session_free(struct SdfeditSession *s);

/**
 * Latent size, or 0 for a null session.
 *
 * # Safety
 * `s` must be null or a live session.
 */
size_t sdfedit_session_latent_dim(const struct SdfeditSession *s);

/**
 * # Safety
 * `s` must be null or a live session.
 */
size_t sdfedit_session_attribute_count(const struct SdfeditSession *s);

/**
 * # Safety
 * `s` must be null or a live session.
 */
size_t sdfedit_session_shape_count(const struct SdfeditSession *s);

/**
 * Copy attribute `index`'s name, NUL-terminated, into `buf`. `needed`
 * (optional) receives the required capacity including the terminator.
 *
 * # Safety
 * `s` must be a live session; `buf` must hold `cap` bytes.
 */
enum SdfeditStatus sdfedit_session_attribute_name(const struct SdfeditSession *s,
                                                  size_t index,
                                                  char *buf,
                                                  size_t cap,
                                                  size_t *needed);

/**
 * Copy shape `index`'s id, NUL-terminated, into `buf`.
 *
 * # Safety
 * As for [`sdfedit_session_attribute_name`].
 */
enum SdfeditStatus sdfedit_session_shape_id(const struct SdfeditSession *s,
                                            size_t index,
                                            char *buf,
                                            size_t cap,
                                            size_t *needed);

/**
 * Copy shape `index`'s trained latent into `out` (`latent_dim` values).
 *
 * # Safety
 * `s` must be a live session; `out` must hold `len` doubles.
 */
enum SdfeditStatus sdfedit_session_shape_latent(const struct SdfeditSession *s,
                                                size_t index,
                                                double *out,
                                                size_t len);

/**
 * Predicted attributes of latent `z` into `out` (`attribute_count` values).
 *
 * # Safety
 * `z` must hold `z_len` doubles and `out` `out_len` doubles.
 */
enum SdfeditStatus sdfedit_session_predict(const struct SdfeditSession *s,
                                           const double *z,
                                           size_t z_len,
                                           double *out,
                                           size_t out_len);

/**
 * Edited latent for per-attribute offsets `eps` (each in [-1, 1]) into
 * `out`. All-zero `eps` returns `z` unchanged.
 *
 * # Safety
 * `z`, `eps` and `out` must hold `z_len`, `eps_len` and `out_len` doubles.
 */
enum SdfeditStatus sdfedit_session_edit(const struct SdfeditSession *s,
                                        const double *z,
                                        size_t z_len,
                                        const double *eps,
                                        size_t eps_len,
                                        double *out,
                                        size_t out_len);

/**
 * Marching-cubes mesh of the decoder's zero level set for `z`.
 *
 * # Safety
 * `z` must hold `z_len` doubles; on success `*out` owns a mesh to pass to
 * [`sdfedit_mesh_free`].
 */
enum SdfeditStatus sdfedit_session_extract_mesh(const struct SdfeditSession *s,
                                                const double *z,
                                                size_t z_len,
                                                size_t resolution,
                                                struct SdfeditMesh **out);

/**
 * # Safety
 * `m` must be null or a live mesh.
 */
size_t sdfedit_mesh_vertex_count(const struct SdfeditMesh *m);

/**
 * # Safety
 * `m` must be null or a live mesh.
 */
size_t sdfedit_mesh_triangle_count(const struct SdfeditMesh *m);

/**
 * Copy vertex positions as `x, y, z` triples (`3 * vertex_count` doubles).
 *
 * # Safety
 * `m` must be a live mesh; `out` must hold `len` doubles.
 */
enum SdfeditStatus sdfedit_mesh_copy_vertices(const struct SdfeditMesh *m, double *out, size_t len);

/**
 * Copy triangle vertex indices (`3 * triangle_count` values).
 *
 * # Safety
 * `m` must be a live mesh; `out` must hold `len` values.
 */
enum SdfeditStatus sdfedit_mesh_copy_triangles(const struct SdfeditMesh *m,
                                               uint32_t *out,
                                               size_t len);

/**
 * # Safety
 * `m` must come from [`sdfedit_session_extract_mesh`] and not be used
 * afterwards. Null is ignored.
 */
void sdfedit_mesh_free(struct SdfeditMesh *m);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SDFEDIT_H */
