#include "pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "errors.hpp"
#include "parallel.hpp"
#include "pca.hpp"
#include "rng.hpp"

namespace fs = std::filesystem;

namespace geoloc {
namespace {

void apply_threads(const RunConfig& cfg) {
  set_parallel_threads(cfg.get_int("threads"));
}

GroundInterpMode ground_interp_from(const std::string& name) {
  if (name == "nearest") return GroundInterpMode::kNearest;
  if (name == "frustum") return GroundInterpMode::kFrustumWeights;
  if (name == "frustum_all") return GroundInterpMode::kFrustumAllCells;
  throw ConfigError("loss.ground_interp must be nearest|frustum|frustum_all, got " +
                    name);
}

AerialInterpMode aerial_interp_from(const std::string& name) {
  if (name == "nearest") return AerialInterpMode::kNearest;
  if (name == "bilinear") return AerialInterpMode::kBilinear;
  throw ConfigError("loss.aerial_interp must be nearest|bilinear, got " + name);
}

std::string resolved_path_for(const std::string& artifact) {
  return artifact + ".resolved.cfg";
}

void write_resolved_next_to(const RunConfig& cfg, const std::string& artifact) {
  cfg.write_resolved(resolved_path_for(artifact));
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path))
    throw MissingArtifactError("missing " + what + ": " + path);
}

}  // namespace

WorldConfig world_config_from(const RunConfig& cfg) {
  WorldConfig wc;
  wc.region_center =
      make_geopoint(cfg.get_double("world.center_lat_deg") * M_PI / 180.0,
                    cfg.get_double("world.center_lon_deg") * M_PI / 180.0);
  wc.region_radius_m = cfg.get_double("world.radius_m");
  wc.latent_dim = cfg.get_int("world.latent_dim");
  wc.n_low_freq = cfg.get_int("world.n_low_freq");
  wc.n_high_freq = cfg.get_int("world.n_high_freq");
  wc.ground_feature_dim = cfg.get_int("world.ground_dim");
  wc.aerial_feature_dim = cfg.get_int("world.aerial_dim");
  wc.noise_sigma = cfg.get_double("world.noise_sigma");
  wc.seed = cfg.get_u64("seed");
  wc.scale = cfg.get_double("world.scale");
  return wc;
}

LevelConfig level_config_from(const RunConfig& cfg) {
  return make_level_config(cfg.get_int("levels.prototype"),
                           cfg.get_int("levels.aerial"));
}

LossConfig loss_config_from(const RunConfig& cfg) {
  LossConfig lc;
  lc.alpha = cfg.get_double("loss.alpha");
  lc.beta = cfg.get_double("loss.beta");
  lc.lambda = cfg.get_double("loss.lambda");
  if (!(lc.alpha > 0) || !(lc.beta > 0))
    throw ConfigError("loss.alpha and loss.beta must be > 0");
  lc.neg_exclusion_radius_m = cfg.get_double("loss.neg_exclusion_radius_m");
  if (lc.neg_exclusion_radius_m <= 0)
    lc.neg_exclusion_radius_m =
        2.0 * avg_edge_length_m(cfg.get_int("levels.prototype"));
  lc.detach_ap_edge = cfg.get_bool("loss.detach_ap");
  lc.ground_interp = ground_interp_from(cfg.get_string("loss.ground_interp"));
  lc.aerial_interp = aerial_interp_from(cfg.get_string("loss.aerial_interp"));
  lc.renormalize_interp = cfg.get_bool("loss.renormalize_interp");
  lc.edge_ga = cfg.get_bool("loss.edge_ga");
  lc.edge_gp = cfg.get_bool("loss.edge_gp");
  lc.edge_ap = cfg.get_bool("loss.edge_ap");
  lc.frustum_depth_m = cfg.get_double("loss.frustum_depth_m");
  if (lc.frustum_depth_m <= 0)
    lc.frustum_depth_m = kFrustumDepthM * cfg.get_double("world.scale");
  return lc;
}

TrainConfig train_config_from(const RunConfig& cfg) {
  TrainConfig tc;
  tc.steps = static_cast<std::uint32_t>(cfg.get_u64("train.steps"));
  tc.batch_size = static_cast<std::uint32_t>(cfg.get_u64("train.batch_size"));
  tc.lr_encoders = cfg.get_double("train.lr_encoders");
  tc.lr_prototypes = cfg.get_double("train.lr_prototypes");
  tc.lr_floor = cfg.get_double("train.lr_floor");
  tc.seed = cfg.get_u64("seed");
  tc.shard_count = static_cast<std::uint32_t>(cfg.get_u64("train.shard_count"));
  if (tc.shard_count < 1) throw ConfigError("train.shard_count must be >= 1");
  tc.embedding_dim = cfg.get_int("encoder.dim");
  tc.encoder_hidden = cfg.get_int("encoder.hidden");
  tc.loss = loss_config_from(cfg);
  tc.loss_kind = cfg.get_string("train.loss_kind");
  tc.checkpoint_every =
      static_cast<std::uint32_t>(cfg.get_u64("train.checkpoint_every"));
  tc.infonce_tau = cfg.get_double("infonce.tau");
  tc.infonce_label_smoothing = cfg.get_double("infonce.label_smoothing");
  tc.haversine_tau_m = cfg.get_double("haversine.tau_m") *
                       cfg.get_double("world.scale");
  tc.baseline_init_temperature = cfg.get_double("baseline.init_temperature");
  tc.hier_num_levels = cfg.get_int("hier.num_levels");
  tc.cosface_margin = cfg.get_double("cosface.margin");
  tc.cosface_scale = cfg.get_double("cosface.scale");
  return tc;
}

DensitySpec density_spec_from(const RunConfig& cfg) {
  DensitySpec ds;
  ds.n_bumps = cfg.get_int("data.bumps");
  ds.bump_sigma_m = cfg.get_double("data.bump_sigma_m");
  ds.bump_weight = cfg.get_double("data.bump_weight");
  return ds;
}

ModelArtifacts load_model(const std::string& model_dir) {
  const std::string g = (fs::path(model_dir) / "ground.genc").string();
  const std::string a = (fs::path(model_dir) / "aerial.genc").string();
  const std::string p = (fs::path(model_dir) / "prototypes.gprt").string();
  require_file(g, "ground encoder checkpoint");
  require_file(a, "aerial encoder checkpoint");
  require_file(p, "prototype table");
  return {load_encoder(g), load_encoder(a), load_prototypes(p)};
}

std::vector<CellId> aerial_db_cells(const PrototypeTable& table,
                                    int aerial_level,
                                    std::span<const CellId> extra_parents) {
  if (aerial_level < table.level)
    throw InvalidArgumentError("aerial level must be >= prototype level");
  std::set<std::uint64_t> parents;
  for (std::uint64_t id : table.cell_ids) parents.insert(id);
  for (const CellId& c : extra_parents) parents.insert(c.packed());

  std::vector<CellId> out;
  const int gap = aerial_level - table.level;
  for (std::uint64_t id : parents) {
    std::vector<CellId> frontier{CellId::unpack(id)};
    for (int g = 0; g < gap; ++g) {
      std::vector<CellId> next;
      next.reserve(frontier.size() * 4);
      for (const CellId& c : frontier)
        for (const CellId& child : children(c)) next.push_back(child);
      frontier = std::move(next);
    }
    out.insert(out.end(), frontier.begin(), frontier.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

CellCodeDB build_aerial_db_from_world(const WorldModel& world,
                                      const EncoderParams& aerial_encoder,
                                      std::span<const CellId> cells,
                                      int aerial_level) {
  std::vector<std::vector<double>> embeddings(cells.size());
  parallel_for_chunks(cells.size(), 32, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t k = lo; k < hi; ++k) {
      Rng rng(derive_seed(world.config.seed, "aerial-db", cells[k].packed()));
      const AerialObservation tile =
          sample_aerial_tile(world, cell_center(cells[k]), 0.0, rng);
      embeddings[k] = encode(aerial_encoder, tile.features);
    }
  });
  return build_aerial_db(cells, embeddings, aerial_level);
}

std::vector<EvalQuery> test_queries(const Dataset& dataset,
                                    const EncoderParams& ground_encoder) {
  std::vector<EvalQuery> queries(dataset.test_indices.size());
  parallel_for_chunks(
      dataset.test_indices.size(), 64, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t k = lo; k < hi; ++k) {
          const DatasetRecord& rec =
              dataset.records[dataset.test_indices[k]];
          queries[k].embedding = encode(ground_encoder, rec.ground.features);
          queries[k].gt_location = rec.ground.location;
          queries[k].prototype_cell = rec.cell.packed();
        }
      });
  return queries;
}

void cmd_gen_world(const RunConfig& cfg, const std::string& out_dataset_path) {
  apply_threads(cfg);
  const WorldModel world = generate_world(world_config_from(cfg));
  const LevelConfig levels = level_config_from(cfg);
  DatasetCounts counts{cfg.get_int("data.train_places"),
                       cfg.get_int("data.test_places")};
  const Dataset dataset =
      generate_dataset(world, density_spec_from(cfg), counts,
                       levels.prototype_level, cfg.get_u64("seed"));
  if (!out_dataset_path.empty()) {
    const fs::path parent = fs::path(out_dataset_path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
  }
  save_dataset(dataset, out_dataset_path);
  write_resolved_next_to(cfg, out_dataset_path);
}

void cmd_train(const RunConfig& cfg, const std::string& dataset_path,
               const std::string& out_dir) {
  apply_threads(cfg);
  require_file(dataset_path, "dataset");
  const Dataset dataset = load_dataset(dataset_path);
  const WorldModel world = generate_world(world_config_from(cfg));
  TrainConfig tc = train_config_from(cfg);
  if (tc.checkpoint_every > 0)
    tc.checkpoint_dir = (fs::path(out_dir) / "checkpoints").string();

  const TrainOutput out = train(dataset, world, tc);

  fs::create_directories(out_dir);
  save_encoder(out.state.ground_encoder,
               (fs::path(out_dir) / "ground.genc").string());
  save_encoder(out.state.aerial_encoder,
               (fs::path(out_dir) / "aerial.genc").string());
  save_prototypes(out.state.prototypes,
                  (fs::path(out_dir) / "prototypes.gprt").string());
  write_training_report(out.history, (fs::path(out_dir) / "report.csv").string());
  std::ofstream val((fs::path(out_dir) / "validation.txt").string());
  val.precision(12);
  val << out.final_validation_loss << "\n";
  cfg.write_resolved((fs::path(out_dir) / "resolved.cfg").string());
}

double cmd_calibrate(const RunConfig& cfg, const std::string& dataset_path,
                     const std::string& model_dir) {
  apply_threads(cfg);
  require_file(dataset_path, "dataset");
  const Dataset dataset = load_dataset(dataset_path);
  const ModelArtifacts model = load_model(model_dir);
  const WorldModel world = generate_world(world_config_from(cfg));
  const LevelConfig levels = level_config_from(cfg);

  const CellCodeDB proto_db = build_prototype_db(model.prototypes);
  const CellCodeDB aerial_db = build_aerial_db_from_world(
      world, model.aerial_encoder,
      aerial_db_cells(model.prototypes, levels.aerial_level),
      levels.aerial_level);

  // Calibration queries are the training-set ground views.
  std::vector<std::vector<double>> queries(dataset.train_indices.size());
  parallel_for_chunks(
      dataset.train_indices.size(), 64, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t k = lo; k < hi; ++k)
          queries[k] = encode(
              model.ground_encoder,
              dataset.records[dataset.train_indices[k]].ground.features);
      });
  const double kappa = calibrate_kappa(queries, proto_db, aerial_db);

  std::ofstream out((fs::path(model_dir) / "kappa.txt").string());
  if (!out) throw MissingArtifactError("cannot write kappa.txt in " + model_dir);
  out.precision(12);
  out << kappa << "\n";
  write_resolved_next_to(cfg, (fs::path(model_dir) / "kappa.txt").string());
  return kappa;
}

namespace {

double resolve_kappa(const RunConfig& cfg, const std::string& model_dir) {
  const double from_cfg = cfg.get_double("db.kappa");
  if (from_cfg > 0) return from_cfg;
  const std::string path = (fs::path(model_dir) / "kappa.txt").string();
  if (!fs::exists(path))
    throw MissingArtifactError(
        "hybrid database needs db.kappa or a calibrated " + path);
  std::ifstream in(path);
  double kappa = 0.0;
  in >> kappa;
  if (!in || !(kappa > 0))
    throw FormatError("invalid kappa in " + path, 0);
  return kappa;
}

}  // namespace

void cmd_build_db(const RunConfig& cfg, const std::string& mode,
                  const std::string& dataset_path,
                  const std::string& model_dir, const std::string& out_path) {
  apply_threads(cfg);
  const DbMode db_mode = db_mode_from_name(mode);
  const ModelArtifacts model = load_model(model_dir);
  const LevelConfig levels = level_config_from(cfg);

  CellCodeDB db;
  if (db_mode == DbMode::kGround) {
    require_file(dataset_path, "dataset");
    const Dataset dataset = load_dataset(dataset_path);
    std::vector<std::vector<double>> embeddings(dataset.train_indices.size());
    std::vector<GeoPoint> locations(dataset.train_indices.size());
    parallel_for_chunks(
        dataset.train_indices.size(), 64, [&](std::size_t lo, std::size_t hi) {
          for (std::size_t k = lo; k < hi; ++k) {
            const DatasetRecord& rec =
                dataset.records[dataset.train_indices[k]];
            embeddings[k] = encode(model.ground_encoder, rec.ground.features);
            locations[k] = rec.ground.location;
          }
        });
    db = build_ground_db(embeddings, locations, levels.aerial_level);
  } else if (db_mode == DbMode::kPrototype) {
    db = build_prototype_db(model.prototypes);
  } else {
    const WorldModel world = generate_world(world_config_from(cfg));
    const CellCodeDB aerial_db = build_aerial_db_from_world(
        world, model.aerial_encoder,
        aerial_db_cells(model.prototypes, levels.aerial_level),
        levels.aerial_level);
    if (db_mode == DbMode::kAerial) {
      db = aerial_db;
    } else {
      db = build_hybrid_db(model.prototypes, aerial_db,
                           resolve_kappa(cfg, model_dir),
                           cfg.get_bool("db.fallback_aerial_only"));
    }
  }
  const fs::path parent = fs::path(out_path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  save_db(db, out_path);
  write_resolved_next_to(cfg, out_path);
}

void cmd_eval(const RunConfig& cfg, const std::string& dataset_path,
              const std::string& model_dir,
              const std::vector<std::string>& db_paths,
              const std::string& out_csv) {
  apply_threads(cfg);
  require_file(dataset_path, "dataset");
  if (db_paths.empty()) throw InvalidArgumentError("no databases to evaluate");
  const Dataset dataset = load_dataset(dataset_path);
  const ModelArtifacts model = load_model(model_dir);

  std::vector<CellCodeDB> dbs;
  dbs.reserve(db_paths.size());
  for (const std::string& p : db_paths) {
    require_file(p, "database");
    dbs.push_back(load_db(p));
  }
  std::vector<const CellCodeDB*> db_ptrs;
  for (const CellCodeDB& db : dbs) db_ptrs.push_back(&db);

  const std::vector<EvalQuery> queries =
      test_queries(dataset, model.ground_encoder);
  const std::vector<int> ks = cfg.get_int_list("eval.ks");
  const std::vector<double> distances = cfg.get_double_list("eval.distances_m");
  const EvalReport report = eval_suite(db_ptrs, queries, ks, distances, dataset);

  const fs::path parent = fs::path(out_csv).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  write_eval_csv(report, out_csv);
  write_resolved_next_to(cfg, out_csv);
}

QueryCommandResult cmd_query(const RunConfig& cfg, const std::string& db_path,
                             std::optional<GeoPoint> pose_location,
                             double heading, double fov,
                             const std::string& embedding_file, int k) {
  apply_threads(cfg);
  require_file(db_path, "database");
  const CellCodeDB db = load_db(db_path);

  std::vector<double> embedding;
  if (pose_location.has_value()) {
    // Model directory is implied by the sibling of the database; queries by
    // pose need the ground encoder, so the caller passes it via config-free
    // convention: <db dir>/ground.genc.
    const fs::path dir = fs::path(db_path).parent_path();
    const std::string genc = (dir / "ground.genc").string();
    require_file(genc, "ground encoder next to the database");
    const EncoderParams ground_encoder = load_encoder(genc);
    const WorldModel world = generate_world(world_config_from(cfg));
    Rng rng(derive_seed(cfg.get_u64("seed"), "query"));
    const GroundObservation obs =
        sample_ground_view(world, *pose_location, heading, fov, rng);
    embedding = encode(ground_encoder, obs.features);
  } else {
    require_file(embedding_file, "embedding file");
    std::ifstream in(embedding_file);
    double v;
    while (in >> v) embedding.push_back(v);
    if (embedding.size() != db.dim)
      throw InvalidArgumentError("embedding file has " +
                                 std::to_string(embedding.size()) +
                                 " values, database dimension is " +
                                 std::to_string(db.dim));
  }
  return {search_topk(db, embedding, k)};
}

void cmd_export_pca(const std::string& prototypes_path,
                    const std::string& out_csv) {
  require_file(prototypes_path, "prototype table");
  const PrototypeTable table = load_prototypes(prototypes_path);
  const PrototypePca pca = prototype_pca(table);
  const fs::path parent = fs::path(out_csv).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  write_pca_csv(pca, out_csv);
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

namespace {

struct TrainedModel {
  TrainState state;
  WorldModel world;
  LevelConfig levels;
};

TrainedModel train_with(const RunConfig& cfg, const Dataset& dataset) {
  TrainedModel tm{TrainState{}, generate_world(world_config_from(cfg)),
                  level_config_from(cfg)};
  TrainOutput out = train(dataset, tm.world, train_config_from(cfg));
  tm.state = std::move(out.state);
  return tm;
}

struct EvaluatedArm {
  double kappa = 0.0;
  EvalReport report;
};

// Builds the three cell-code databases for a trained model, calibrates kappa
// on the training queries, and runs the eval grid.
EvaluatedArm evaluate_model(const RunConfig& cfg, const Dataset& dataset,
                            const TrainedModel& tm,
                            bool include_ground_mode = false) {
  EvaluatedArm arm;
  const CellCodeDB proto_db = build_prototype_db(tm.state.prototypes);
  const CellCodeDB aerial_db = build_aerial_db_from_world(
      tm.world, tm.state.aerial_encoder,
      aerial_db_cells(tm.state.prototypes, tm.levels.aerial_level),
      tm.levels.aerial_level);

  std::vector<std::vector<double>> cal_queries(dataset.train_indices.size());
  parallel_for_chunks(
      dataset.train_indices.size(), 64, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t k = lo; k < hi; ++k)
          cal_queries[k] = encode(
              tm.state.ground_encoder,
              dataset.records[dataset.train_indices[k]].ground.features);
      });
  arm.kappa = calibrate_kappa(cal_queries, proto_db, aerial_db);
  const CellCodeDB hybrid_db =
      build_hybrid_db(tm.state.prototypes, aerial_db, arm.kappa);

  std::vector<const CellCodeDB*> dbs{&aerial_db, &proto_db, &hybrid_db};
  CellCodeDB ground_db;
  if (include_ground_mode) {
    std::vector<std::vector<double>> emb(dataset.train_indices.size());
    std::vector<GeoPoint> locs(dataset.train_indices.size());
    for (std::size_t k = 0; k < dataset.train_indices.size(); ++k) {
      emb[k] = cal_queries[k];
      locs[k] = dataset.records[dataset.train_indices[k]].ground.location;
    }
    ground_db = build_ground_db(emb, locs, tm.levels.aerial_level);
    dbs.push_back(&ground_db);
  }

  const std::vector<EvalQuery> queries =
      test_queries(dataset, tm.state.ground_encoder);
  arm.report = eval_suite(dbs, queries, cfg.get_int_list("eval.ks"),
                          cfg.get_double_list("eval.distances_m"), dataset);
  return arm;
}

std::ofstream open_csv(const std::string& out_dir, const std::string& name) {
  fs::create_directories(out_dir);
  const std::string path = (fs::path(out_dir) / name).string();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw MissingArtifactError("cannot open for writing: " + path);
  out.precision(10);
  return out;
}

void ablate_loss_edges(const RunConfig& base, const Dataset& dataset,
                       const std::string& out_dir) {
  // The runnable rows of the loss-term ablation grid.
  const std::array<std::array<bool, 3>, 6> rows = {{
      {true, false, false},
      {false, true, false},
      {true, true, false},
      {true, false, true},
      {false, true, true},
      {true, true, true},
  }};
  auto csv = open_csv(out_dir, "losses.csv");
  csv << "edge_ga,edge_gp,edge_ap,mode,K,distance_m,slice,recall,count\n";
  for (const auto& [ga, gp, ap] : rows) {
    RunConfig cfg = base;
    cfg.set("loss.edge_ga", ga ? "true" : "false");
    cfg.set("loss.edge_gp", gp ? "true" : "false");
    cfg.set("loss.edge_ap", ap ? "true" : "false");
    const TrainedModel tm = train_with(cfg, dataset);
    const EvaluatedArm arm = evaluate_model(cfg, dataset, tm);
    for (const EvalRow& r : arm.report.rows)
      csv << ga << ',' << gp << ',' << ap << ',' << r.mode << ',' << r.k << ','
          << r.distance_m << ',' << r.slice << ',' << r.recall << ','
          << r.count << '\n';
  }
}

void ablate_interp(const RunConfig& base, const Dataset& dataset,
                   const std::string& out_dir) {
  const char* ground_modes[3] = {"nearest", "frustum", "frustum_all"};
  const char* aerial_modes[2] = {"nearest", "bilinear"};
  auto csv = open_csv(out_dir, "interp.csv");
  csv << "ground_interp,aerial_interp,mode,K,distance_m,slice,recall,count\n";
  for (const char* g : ground_modes) {
    for (const char* a : aerial_modes) {
      RunConfig cfg = base;
      cfg.set("loss.ground_interp", g);
      cfg.set("loss.aerial_interp", a);
      const TrainedModel tm = train_with(cfg, dataset);
      const EvaluatedArm arm = evaluate_model(cfg, dataset, tm);
      for (const EvalRow& r : arm.report.rows)
        csv << g << ',' << a << ',' << r.mode << ',' << r.k << ','
            << r.distance_m << ',' << r.slice << ',' << r.recall << ','
            << r.count << '\n';
    }
  }
}

void ablate_kappa(const RunConfig& cfg, const Dataset& dataset,
                  const std::string& model_dir, const std::string& out_dir) {
  const ModelArtifacts model = load_model(model_dir);
  const WorldModel world = generate_world(world_config_from(cfg));
  const LevelConfig levels = level_config_from(cfg);
  const CellCodeDB proto_db = build_prototype_db(model.prototypes);
  const CellCodeDB aerial_db = build_aerial_db_from_world(
      world, model.aerial_encoder,
      aerial_db_cells(model.prototypes, levels.aerial_level),
      levels.aerial_level);

  std::vector<std::vector<double>> cal_queries(dataset.train_indices.size());
  parallel_for_chunks(
      dataset.train_indices.size(), 64, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t k = lo; k < hi; ++k)
          cal_queries[k] = encode(
              model.ground_encoder,
              dataset.records[dataset.train_indices[k]].ground.features);
      });
  const double kappa_hat = calibrate_kappa(cal_queries, proto_db, aerial_db);

  const double factors[9] = {0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 3.0, 4.0};
  const std::vector<EvalQuery> queries =
      test_queries(dataset, model.ground_encoder);
  const std::vector<int> ks = cfg.get_int_list("eval.ks");
  const std::vector<double> distances = cfg.get_double_list("eval.distances_m");

  auto csv = open_csv(out_dir, "kappa.csv");
  csv << "kappa,kappa_hat,K,distance_m,recall\n";
  for (double f : factors) {
    const double kappa = f * kappa_hat;
    const CellCodeDB hybrid = build_hybrid_db(model.prototypes, aerial_db, kappa);
    const CellCodeDB* dbp = &hybrid;
    const EvalReport report =
        eval_suite({&dbp, 1}, queries, ks, distances, dataset);
    for (const EvalRow& r : report.rows)
      if (r.slice == "all")
        csv << kappa << ',' << kappa_hat << ',' << r.k << ',' << r.distance_m
            << ',' << r.recall << '\n';
  }
}

void ablate_density(const RunConfig& cfg, const Dataset& dataset,
                    const std::string& model_dir, const std::string& out_dir) {
  const ModelArtifacts model = load_model(model_dir);
  const WorldModel world = generate_world(world_config_from(cfg));
  const LevelConfig levels = level_config_from(cfg);
  TrainedModel tm{TrainState{}, world, levels};
  tm.state.ground_encoder = model.ground_encoder;
  tm.state.aerial_encoder = model.aerial_encoder;
  tm.state.prototypes = model.prototypes;
  const EvaluatedArm arm = evaluate_model(cfg, dataset, tm);
  auto csv = open_csv(out_dir, "density.csv");
  csv << "mode,slice,K,distance_m,recall,count\n";
  for (const EvalRow& r : arm.report.rows)
    if (r.slice != "all")
      csv << r.mode << ',' << r.slice << ',' << r.k << ',' << r.distance_m
          << ',' << r.recall << ',' << r.count << '\n';
}

void ablate_granularity(const RunConfig& base, const std::string& out_dir) {
  // (L_P, D) arms at matched database byte budget: one level coarser with
  // 4x the dimension, one level finer with a quarter of it.
  const int base_lp = base.get_int("levels.prototype");
  const int base_dim = base.get_int("encoder.dim");
  struct Arm {
    int lp, dim;
  };
  std::vector<Arm> arms;
  if (base_lp >= 1 && base_dim * 4 <= 1024)
    arms.push_back({base_lp - 1, base_dim * 4});
  arms.push_back({base_lp, base_dim});
  if (base_lp + 2 <= kMaxCellLevel && base_dim / 4 >= 4)
    arms.push_back({base_lp + 1, base_dim / 4});

  auto csv = open_csv(out_dir, "granularity.csv");
  csv << "level_p,level_a,dim,n_prototypes,db_bytes,mode,K,distance_m,recall\n";
  for (const Arm& arm : arms) {
    RunConfig cfg = base;
    cfg.set("levels.prototype", std::to_string(arm.lp));
    cfg.set("levels.aerial", std::to_string(arm.lp + 1));
    cfg.set("encoder.dim", std::to_string(arm.dim));
    // The dataset depends on the prototype level, so each arm regenerates it.
    const WorldModel world = generate_world(world_config_from(cfg));
    DatasetCounts counts{cfg.get_int("data.train_places"),
                         cfg.get_int("data.test_places")};
    const Dataset dataset =
        generate_dataset(world, density_spec_from(cfg), counts, arm.lp,
                         cfg.get_u64("seed"));
    const TrainedModel tm = train_with(cfg, dataset);
    const EvaluatedArm ev = evaluate_model(cfg, dataset, tm);
    const std::uint64_t n_protos = tm.state.prototypes.count();
    const std::uint64_t db_bytes =
        4ull * n_protos * static_cast<std::uint64_t>(arm.dim) * 4ull;
    for (const EvalRow& r : ev.report.rows)
      if (r.slice == "all" && r.mode == "hybrid")
        csv << arm.lp << ',' << arm.lp + 1 << ',' << arm.dim << ',' << n_protos
            << ',' << db_bytes << ',' << r.mode << ',' << r.k << ','
            << r.distance_m << ',' << r.recall << '\n';
  }
}

}  // namespace

void cmd_ablate(const RunConfig& cfg, const std::string& axis,
                const std::string& dataset_path, const std::string& model_dir,
                const std::string& out_dir) {
  apply_threads(cfg);
  if (axis == "granularity") {
    ablate_granularity(cfg, out_dir);
  } else {
    require_file(dataset_path, "dataset");
    const Dataset dataset = load_dataset(dataset_path);
    if (axis == "loss-edges") {
      ablate_loss_edges(cfg, dataset, out_dir);
    } else if (axis == "interp") {
      ablate_interp(cfg, dataset, out_dir);
    } else if (axis == "kappa") {
      ablate_kappa(cfg, dataset, model_dir, out_dir);
    } else if (axis == "density") {
      ablate_density(cfg, dataset, model_dir, out_dir);
    } else {
      throw InvalidArgumentError(
          "unknown ablation axis (expected loss-edges|interp|kappa|density|"
          "granularity): " + axis);
    }
  }
  cfg.write_resolved((fs::path(out_dir) / "resolved.cfg").string());
}

}  // namespace geoloc
