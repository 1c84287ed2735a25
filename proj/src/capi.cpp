#include "geoloc/geoloc.h"

#include <cstring>
#include <optional>
#include <sstream>
#include <string>

#include "codedb.hpp"
#include "config.hpp"
#include "errors.hpp"
#include "pipeline.hpp"

namespace {

thread_local std::string g_last_error = "ok";

gl_status classify(const std::exception& e) {
  using namespace geoloc;
  if (dynamic_cast<const ConfigError*>(&e)) return GL_CONFIG_ERROR;
  if (dynamic_cast<const MissingArtifactError*>(&e)) return GL_MISSING_ARTIFACT;
  if (dynamic_cast<const FormatError*>(&e)) return GL_FORMAT_ERROR;
  if (dynamic_cast<const NumericError*>(&e)) return GL_NUMERIC_ERROR;
  if (dynamic_cast<const CoverageError*>(&e)) return GL_COVERAGE_ERROR;
  if (dynamic_cast<const CapacityError*>(&e)) return GL_CAPACITY_ERROR;
  if (dynamic_cast<const CalibrationError*>(&e)) return GL_CALIBRATION_ERROR;
  if (dynamic_cast<const InvalidArgumentError*>(&e)) return GL_INVALID_ARGUMENT;
  return GL_INTERNAL_ERROR;
}

template <typename Fn>
gl_status guarded(Fn&& fn) {
  try {
    fn();
    return GL_OK;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return classify(e);
  } catch (...) {
    g_last_error = "unknown error";
    return GL_INTERNAL_ERROR;
  }
}

gl_status require(bool ok, const char* message) {
  if (ok) return GL_OK;
  g_last_error = message;
  return GL_INVALID_ARGUMENT;
}

}  // namespace

struct gl_config {
  geoloc::RunConfig cfg;
};

struct gl_db {
  geoloc::CellCodeDB db;
};

extern "C" {

const char* gl_last_error(void) { return g_last_error.c_str(); }

gl_status gl_config_create(gl_config** out) {
  if (auto rc = require(out != nullptr, "null output pointer")) return rc;
  return guarded([&] { *out = new gl_config{geoloc::RunConfig::defaults()}; });
}

gl_status gl_config_load(const char* path, gl_config** out) {
  if (auto rc = require(out && path, "null argument")) return rc;
  return guarded(
      [&] { *out = new gl_config{geoloc::RunConfig::from_file(path)}; });
}

gl_status gl_config_set(gl_config* cfg, const char* key, const char* value) {
  if (auto rc = require(cfg && key && value, "null argument")) return rc;
  return guarded([&] { cfg->cfg.set(key, value); });
}

gl_status gl_config_get(const gl_config* cfg, const char* key, char* buf,
                        size_t buf_len) {
  if (auto rc = require(cfg && key && buf, "null argument")) return rc;
  return guarded([&] {
    const std::string v = cfg->cfg.get_string(key);
    if (v.size() + 1 > buf_len)
      throw geoloc::InvalidArgumentError("buffer too small for config value");
    std::memcpy(buf, v.c_str(), v.size() + 1);
  });
}

gl_status gl_config_write_resolved(const gl_config* cfg, const char* path) {
  if (auto rc = require(cfg && path, "null argument")) return rc;
  return guarded([&] { cfg->cfg.write_resolved(path); });
}

void gl_config_free(gl_config* cfg) { delete cfg; }

gl_status gl_gen_world(const gl_config* cfg, const char* out_dataset_path) {
  if (auto rc = require(cfg && out_dataset_path, "null argument")) return rc;
  return guarded([&] { geoloc::cmd_gen_world(cfg->cfg, out_dataset_path); });
}

gl_status gl_train(const gl_config* cfg, const char* dataset_path,
                   const char* out_dir) {
  if (auto rc = require(cfg && dataset_path && out_dir, "null argument"))
    return rc;
  return guarded([&] { geoloc::cmd_train(cfg->cfg, dataset_path, out_dir); });
}

gl_status gl_calibrate(const gl_config* cfg, const char* dataset_path,
                       const char* model_dir, double* kappa_out) {
  if (auto rc = require(cfg && dataset_path && model_dir, "null argument"))
    return rc;
  return guarded([&] {
    const double kappa =
        geoloc::cmd_calibrate(cfg->cfg, dataset_path, model_dir);
    if (kappa_out) *kappa_out = kappa;
  });
}

gl_status gl_build_db(const gl_config* cfg, const char* mode,
                      const char* dataset_path, const char* model_dir,
                      const char* out_path) {
  if (auto rc = require(cfg && mode && model_dir && out_path, "null argument"))
    return rc;
  return guarded([&] {
    geoloc::cmd_build_db(cfg->cfg, mode, dataset_path ? dataset_path : "",
                         model_dir, out_path);
  });
}

gl_status gl_eval(const gl_config* cfg, const char* dataset_path,
                  const char* model_dir, const char* db_paths,
                  const char* out_csv) {
  if (auto rc = require(cfg && dataset_path && model_dir && db_paths && out_csv,
                        "null argument"))
    return rc;
  return guarded([&] {
    std::vector<std::string> paths;
    std::stringstream ss(db_paths);
    std::string item;
    while (std::getline(ss, item, ':'))
      if (!item.empty()) paths.push_back(item);
    geoloc::cmd_eval(cfg->cfg, dataset_path, model_dir, paths, out_csv);
  });
}

gl_status gl_ablate(const gl_config* cfg, const char* axis,
                    const char* dataset_path, const char* model_dir,
                    const char* out_dir) {
  if (auto rc = require(cfg && axis && out_dir, "null argument")) return rc;
  return guarded([&] {
    geoloc::cmd_ablate(cfg->cfg, axis, dataset_path ? dataset_path : "",
                       model_dir ? model_dir : "", out_dir);
  });
}

gl_status gl_export_pca(const char* prototypes_path, const char* out_csv) {
  if (auto rc = require(prototypes_path && out_csv, "null argument")) return rc;
  return guarded([&] { geoloc::cmd_export_pca(prototypes_path, out_csv); });
}

gl_status gl_db_open(const char* path, gl_db** out) {
  if (auto rc = require(path && out, "null argument")) return rc;
  return guarded([&] { *out = new gl_db{geoloc::load_db(path)}; });
}

void gl_db_free(gl_db* db) { delete db; }

gl_status gl_db_info(const gl_db* db, char* mode_buf, size_t mode_buf_len,
                     int* level_out, uint32_t* dim_out, uint64_t* count_out,
                     double* kappa_out) {
  if (auto rc = require(db != nullptr, "null database")) return rc;
  return guarded([&] {
    if (mode_buf) {
      const std::string name = geoloc::db_mode_name(db->db.mode);
      if (name.size() + 1 > mode_buf_len)
        throw geoloc::InvalidArgumentError("mode buffer too small");
      std::memcpy(mode_buf, name.c_str(), name.size() + 1);
    }
    if (level_out) *level_out = db->db.level;
    if (dim_out) *dim_out = db->db.dim;
    if (count_out) *count_out = db->db.count();
    if (kappa_out) *kappa_out = db->db.kappa;
  });
}

namespace {

void copy_hits(const std::vector<geoloc::SearchHit>& hits, uint64_t* ids,
               double* scores, double* lats, double* lons, size_t* n_out) {
  for (size_t r = 0; r < hits.size(); ++r) {
    if (ids) ids[r] = hits[r].id;
    if (scores) scores[r] = hits[r].score;
    if (lats) lats[r] = hits[r].anchor.lat;
    if (lons) lons[r] = hits[r].anchor.lon;
  }
  if (n_out) *n_out = hits.size();
}

}  // namespace

gl_status gl_db_search(const gl_db* db, const double* query, uint32_t dim,
                       int k, uint64_t* ids, double* scores,
                       double* anchor_lats, double* anchor_lons,
                       size_t* n_out) {
  if (auto rc = require(db && query, "null argument")) return rc;
  return guarded([&] {
    const auto hits = geoloc::search_topk(
        db->db, std::span<const double>(query, dim), k);
    copy_hits(hits, ids, scores, anchor_lats, anchor_lons, n_out);
  });
}

gl_status gl_query_pose(const gl_config* cfg, const char* db_path,
                        double lat_rad, double lon_rad, double heading_rad,
                        double fov_rad, int k, uint64_t* ids, double* scores,
                        double* anchor_lats, double* anchor_lons,
                        size_t* n_out) {
  if (auto rc = require(cfg && db_path, "null argument")) return rc;
  return guarded([&] {
    const auto result = geoloc::cmd_query(
        cfg->cfg, db_path, geoloc::make_geopoint(lat_rad, lon_rad),
        heading_rad, fov_rad, "", k);
    copy_hits(result.hits, ids, scores, anchor_lats, anchor_lons, n_out);
  });
}

gl_status gl_cell_from_point(double lat_rad, double lon_rad, int level,
                             uint64_t* cell_out) {
  if (auto rc = require(cell_out != nullptr, "null output pointer")) return rc;
  return guarded([&] {
    *cell_out =
        geoloc::cell_from_point(geoloc::make_geopoint(lat_rad, lon_rad), level)
            .packed();
  });
}

gl_status gl_cell_center(uint64_t cell, double* lat_out, double* lon_out) {
  if (auto rc = require(lat_out && lon_out, "null output pointer")) return rc;
  return guarded([&] {
    const geoloc::GeoPoint c =
        geoloc::cell_center(geoloc::CellId::unpack(cell));
    *lat_out = c.lat;
    *lon_out = c.lon;
  });
}

gl_status gl_cell_parent(uint64_t cell, int level, uint64_t* parent_out) {
  if (auto rc = require(parent_out != nullptr, "null output pointer")) return rc;
  return guarded([&] {
    *parent_out = geoloc::parent(geoloc::CellId::unpack(cell), level).packed();
  });
}

gl_status gl_avg_edge_length(int level, double* meters_out) {
  if (auto rc = require(meters_out != nullptr, "null output pointer")) return rc;
  return guarded([&] { *meters_out = geoloc::avg_edge_length_m(level); });
}

gl_status gl_haversine(double lat1, double lon1, double lat2, double lon2,
                       double* meters_out) {
  if (auto rc = require(meters_out != nullptr, "null output pointer")) return rc;
  return guarded([&] {
    *meters_out = geoloc::haversine_m(geoloc::make_geopoint(lat1, lon1),
                                      geoloc::make_geopoint(lat2, lon2));
  });
}

}  // extern "C"
