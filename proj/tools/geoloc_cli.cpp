// Command-line front end; everything goes through the C API in
// include/geoloc/geoloc.h.

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "geoloc/geoloc.h"

namespace {

constexpr double kDegToRad = M_PI / 180.0;

// Exit codes: 0 success, 2 config error, 3 missing artifact, 4 numeric
// failure, 1 anything else.
int exit_code_for(gl_status status) {
  switch (status) {
    case GL_OK: return 0;
    case GL_CONFIG_ERROR: return 2;
    case GL_MISSING_ARTIFACT: return 3;
    case GL_NUMERIC_ERROR: return 4;
    default: return 1;
  }
}

int fail(gl_status status) {
  std::fprintf(stderr, "error: %s\n", gl_last_error());
  return exit_code_for(status);
}

struct ConfigHandle {
  gl_config* cfg = nullptr;
  ~ConfigHandle() { gl_config_free(cfg); }
};

gl_status load_config(const std::string& path, bool seed_set,
                      std::uint64_t seed, ConfigHandle& out) {
  const gl_status rc = path.empty() ? gl_config_create(&out.cfg)
                                    : gl_config_load(path.c_str(), &out.cfg);
  if (rc != GL_OK) return rc;
  if (seed_set)
    return gl_config_set(out.cfg, "seed", std::to_string(seed).c_str());
  return GL_OK;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geoloc: hybrid prototype + aerial cell-code geolocalization"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  app.add_option("--config", config_path, "key=value configuration file")
      ->expected(1);
  app.add_flag_callback("--version", [] {
    std::printf("geoloc 1.0\n");
    std::exit(0);
  });
  auto add_seed = [&](CLI::App* cmd) {
    cmd->add_option_function<std::uint64_t>(
        "--seed",
        [&](const std::uint64_t& v) {
          seed = v;
          seed_set = true;
        },
        "seed override");
  };

  // gen-world
  auto* gen = app.add_subcommand("gen-world", "generate the synthetic dataset");
  std::string gen_out;
  gen->add_option("--out", gen_out, "output dataset path (.gwds)")->required();
  add_seed(gen);

  // train
  auto* tr = app.add_subcommand("train", "train encoders and prototypes");
  std::string tr_dataset, tr_out;
  tr->add_option("--dataset", tr_dataset, "GWDS dataset")->required();
  tr->add_option("--out", tr_out, "model output directory")->required();
  add_seed(tr);

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "estimate the fusion factor");
  std::string cal_dataset, cal_model;
  cal->add_option("--dataset", cal_dataset, "GWDS dataset")->required();
  cal->add_option("--model", cal_model, "trained model directory")->required();
  add_seed(cal);

  // build-db
  auto* bdb = app.add_subcommand("build-db", "build a retrieval database");
  std::string bdb_mode, bdb_dataset, bdb_model, bdb_out;
  bdb->add_option("--mode", bdb_mode, "ground|aerial|prototype|hybrid")
      ->required();
  bdb->add_option("--dataset", bdb_dataset, "GWDS dataset (ground mode)");
  bdb->add_option("--model", bdb_model, "trained model directory")->required();
  bdb->add_option("--out", bdb_out, "output database path (.gcdb)")->required();
  add_seed(bdb);

  // query
  auto* qry = app.add_subcommand("query", "rank database entries for a query");
  std::string qry_db, qry_embedding;
  double qry_lat = 0, qry_lon = 0, qry_heading = 0, qry_fov = 60.0;
  int qry_k = 5;
  bool qry_pose = false;
  qry->add_option("--db", qry_db, "GCDB database")->required();
  auto* lat_opt = qry->add_option("--lat", qry_lat, "query latitude (deg)");
  qry->add_option("--lon", qry_lon, "query longitude (deg)")->needs(lat_opt);
  qry->add_option("--heading", qry_heading, "heading (deg, clockwise from N)");
  qry->add_option("--fov", qry_fov, "field of view (deg)");
  qry->add_option("--embedding", qry_embedding,
                  "text file of embedding values (alternative to a pose)");
  qry->add_option("-k,--topk", qry_k, "number of results");
  add_seed(qry);

  // eval
  auto* ev = app.add_subcommand("eval", "recall grid over databases");
  std::string ev_dataset, ev_model, ev_dbs, ev_out;
  ev->add_option("--dataset", ev_dataset, "GWDS dataset")->required();
  ev->add_option("--model", ev_model, "trained model directory")->required();
  ev->add_option("--db", ev_dbs, "colon-separated GCDB paths")->required();
  ev->add_option("--out", ev_out, "output CSV")->required();
  add_seed(ev);

  // ablate
  auto* ab = app.add_subcommand("ablate", "run an ablation axis");
  std::string ab_axis, ab_dataset, ab_model, ab_out;
  ab->add_option("--axis", ab_axis,
                 "loss-edges|interp|kappa|density|granularity")
      ->required();
  ab->add_option("--dataset", ab_dataset, "GWDS dataset");
  ab->add_option("--model", ab_model, "trained model directory (kappa/density)");
  ab->add_option("--out", ab_out, "output directory")->required();
  add_seed(ab);

  // export-pca
  auto* pca = app.add_subcommand("export-pca", "prototype PCA projection");
  std::string pca_protos, pca_out;
  pca->add_option("--prototypes", pca_protos, "GPRT prototype table")
      ->required();
  pca->add_option("--out", pca_out, "output CSV")->required();

  CLI11_PARSE(app, argc, argv);

  ConfigHandle cfg;
  if (gl_status rc = load_config(config_path, seed_set, seed, cfg); rc != GL_OK)
    return fail(rc);

  if (gen->parsed()) {
    if (gl_status rc = gl_gen_world(cfg.cfg, gen_out.c_str()); rc != GL_OK)
      return fail(rc);
    std::printf("dataset written to %s\n", gen_out.c_str());
    return 0;
  }
  if (tr->parsed()) {
    if (gl_status rc = gl_train(cfg.cfg, tr_dataset.c_str(), tr_out.c_str());
        rc != GL_OK)
      return fail(rc);
    std::printf("model written to %s\n", tr_out.c_str());
    return 0;
  }
  if (cal->parsed()) {
    double kappa = 0.0;
    if (gl_status rc = gl_calibrate(cfg.cfg, cal_dataset.c_str(),
                                    cal_model.c_str(), &kappa);
        rc != GL_OK)
      return fail(rc);
    std::printf("kappa = %.9f\n", kappa);
    return 0;
  }
  if (bdb->parsed()) {
    if (gl_status rc =
            gl_build_db(cfg.cfg, bdb_mode.c_str(),
                        bdb_dataset.empty() ? nullptr : bdb_dataset.c_str(),
                        bdb_model.c_str(), bdb_out.c_str());
        rc != GL_OK)
      return fail(rc);
    std::printf("database written to %s\n", bdb_out.c_str());
    return 0;
  }
  if (qry->parsed()) {
    qry_pose = lat_opt->count() > 0;
    if (!qry_pose && qry_embedding.empty()) {
      std::fprintf(stderr, "error: query needs --lat/--lon or --embedding\n");
      return 2;
    }
    std::vector<uint64_t> ids(qry_k);
    std::vector<double> scores(qry_k), lats(qry_k), lons(qry_k);
    size_t n = 0;
    gl_status rc;
    if (qry_pose) {
      rc = gl_query_pose(cfg.cfg, qry_db.c_str(), qry_lat * kDegToRad,
                         qry_lon * kDegToRad, qry_heading * kDegToRad,
                         qry_fov * kDegToRad, qry_k, ids.data(), scores.data(),
                         lats.data(), lons.data(), &n);
    } else {
      gl_db* db = nullptr;
      rc = gl_db_open(qry_db.c_str(), &db);
      if (rc == GL_OK) {
        std::vector<double> embedding;
        if (FILE* f = std::fopen(qry_embedding.c_str(), "r")) {
          double v;
          while (std::fscanf(f, "%lf", &v) == 1) embedding.push_back(v);
          std::fclose(f);
        } else {
          std::fprintf(stderr, "error: cannot open %s\n", qry_embedding.c_str());
          gl_db_free(db);
          return 3;
        }
        rc = gl_db_search(db, embedding.data(),
                          static_cast<uint32_t>(embedding.size()), qry_k,
                          ids.data(), scores.data(), lats.data(), lons.data(),
                          &n);
        gl_db_free(db);
      }
    }
    if (rc != GL_OK) return fail(rc);
    std::printf("rank,id,score,anchor_lat_deg,anchor_lon_deg\n");
    for (size_t r = 0; r < n; ++r)
      std::printf("%zu,%" PRIu64 ",%.9f,%.7f,%.7f\n", r + 1, ids[r], scores[r],
                  lats[r] / kDegToRad, lons[r] / kDegToRad);
    return 0;
  }
  if (ev->parsed()) {
    if (gl_status rc = gl_eval(cfg.cfg, ev_dataset.c_str(), ev_model.c_str(),
                               ev_dbs.c_str(), ev_out.c_str());
        rc != GL_OK)
      return fail(rc);
    std::printf("eval written to %s\n", ev_out.c_str());
    return 0;
  }
  if (ab->parsed()) {
    if (gl_status rc =
            gl_ablate(cfg.cfg, ab_axis.c_str(),
                      ab_dataset.empty() ? nullptr : ab_dataset.c_str(),
                      ab_model.empty() ? nullptr : ab_model.c_str(),
                      ab_out.c_str());
        rc != GL_OK)
      return fail(rc);
    std::printf("ablation written to %s\n", ab_out.c_str());
    return 0;
  }
  if (pca->parsed()) {
    if (gl_status rc = gl_export_pca(pca_protos.c_str(), pca_out.c_str());
        rc != GL_OK)
      return fail(rc);
    std::printf("pca written to %s\n", pca_out.c_str());
    return 0;
  }
  return 1;
}
