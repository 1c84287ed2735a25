/* geoloc - desk-scale hybrid geolocalization engine.
 *
 * C API over the core library: opaque handles, status codes, thread-local
 * error messages. All functions return GL_OK (0) on success; on failure the
 * message is available via gl_last_error() on the same thread.
 */
#ifndef GEOLOC_GEOLOC_H_
#define GEOLOC_GEOLOC_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define GEOLOC_API __declspec(dllexport)
#else
#define GEOLOC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum gl_status {
  GL_OK = 0,
  GL_INVALID_ARGUMENT = 1,
  GL_CONFIG_ERROR = 2,
  GL_MISSING_ARTIFACT = 3,
  GL_NUMERIC_ERROR = 4,
  GL_FORMAT_ERROR = 5,
  GL_COVERAGE_ERROR = 6,
  GL_CAPACITY_ERROR = 7,
  GL_CALIBRATION_ERROR = 8,
  GL_INTERNAL_ERROR = 9
} gl_status;

/* Message for the most recent failure on this thread; never NULL. */
GEOLOC_API const char* gl_last_error(void);

/* ---- configuration ----------------------------------------------------- */

typedef struct gl_config gl_config;

GEOLOC_API gl_status gl_config_create(gl_config** out);
GEOLOC_API gl_status gl_config_load(const char* path, gl_config** out);
GEOLOC_API gl_status gl_config_set(gl_config* cfg, const char* key,
                                   const char* value);
/* Copies the value into buf (NUL-terminated); fails when buf is too small. */
GEOLOC_API gl_status gl_config_get(const gl_config* cfg, const char* key,
                                   char* buf, size_t buf_len);
GEOLOC_API gl_status gl_config_write_resolved(const gl_config* cfg,
                                              const char* path);
GEOLOC_API void gl_config_free(gl_config* cfg);

/* ---- pipeline commands -------------------------------------------------- */

/* Writes the GWDS dataset for the configured world. */
GEOLOC_API gl_status gl_gen_world(const gl_config* cfg,
                                  const char* out_dataset_path);

/* Trains encoders + prototypes; writes ground.genc, aerial.genc,
 * prototypes.gprt, report.csv and resolved.cfg into out_dir. */
GEOLOC_API gl_status gl_train(const gl_config* cfg, const char* dataset_path,
                              const char* out_dir);

/* Calibrates the fusion factor on the training queries; writes
 * model_dir/kappa.txt and returns the value. */
GEOLOC_API gl_status gl_calibrate(const gl_config* cfg,
                                  const char* dataset_path,
                                  const char* model_dir, double* kappa_out);

/* mode: ground | aerial | prototype | hybrid. */
GEOLOC_API gl_status gl_build_db(const gl_config* cfg, const char* mode,
                                 const char* dataset_path,
                                 const char* model_dir, const char* out_path);

/* db_paths: colon-separated list of GCDB files. Writes the recall grid CSV
 * (header: mode,K,distance_m,slice,recall,count). */
GEOLOC_API gl_status gl_eval(const gl_config* cfg, const char* dataset_path,
                             const char* model_dir, const char* db_paths,
                             const char* out_csv);

/* axis: loss-edges | interp | kappa | density | granularity. model_dir may
 * be NULL for axes that train their own arms. */
GEOLOC_API gl_status gl_ablate(const gl_config* cfg, const char* axis,
                               const char* dataset_path, const char* model_dir,
                               const char* out_dir);

/* Per-prototype top-3 principal components (CSV: lat,lon,pc1,pc2,pc3). */
GEOLOC_API gl_status gl_export_pca(const char* prototypes_path,
                                   const char* out_csv);

/* ---- query ------------------------------------------------------------- */

typedef struct gl_db gl_db;

GEOLOC_API gl_status gl_db_open(const char* path, gl_db** out);
GEOLOC_API void gl_db_free(gl_db* db);
GEOLOC_API gl_status gl_db_info(const gl_db* db, char* mode_buf,
                                size_t mode_buf_len, int* level_out,
                                uint32_t* dim_out, uint64_t* count_out,
                                double* kappa_out);

/* Exact top-k by dot product. Arrays must hold k elements; *n_out receives
 * the number written (k, or the database size when smaller). */
GEOLOC_API gl_status gl_db_search(const gl_db* db, const double* query,
                                  uint32_t dim, int k, uint64_t* ids,
                                  double* scores, double* anchor_lats,
                                  double* anchor_lons, size_t* n_out);

/* Query by pose: samples a ground view from the configured world, encodes it
 * with <db dir>/ground.genc and searches. Angles in radians. */
GEOLOC_API gl_status gl_query_pose(const gl_config* cfg, const char* db_path,
                                   double lat_rad, double lon_rad,
                                   double heading_rad, double fov_rad, int k,
                                   uint64_t* ids, double* scores,
                                   double* anchor_lats, double* anchor_lons,
                                   size_t* n_out);

/* ---- cell utilities ----------------------------------------------------- */

GEOLOC_API gl_status gl_cell_from_point(double lat_rad, double lon_rad,
                                        int level, uint64_t* cell_out);
GEOLOC_API gl_status gl_cell_center(uint64_t cell, double* lat_out,
                                    double* lon_out);
GEOLOC_API gl_status gl_cell_parent(uint64_t cell, int level,
                                    uint64_t* parent_out);
GEOLOC_API gl_status gl_avg_edge_length(int level, double* meters_out);
GEOLOC_API gl_status gl_haversine(double lat1, double lon1, double lat2,
                                  double lon2, double* meters_out);

#ifdef __cplusplus
}
#endif

#endif /* GEOLOC_GEOLOC_H_ */
