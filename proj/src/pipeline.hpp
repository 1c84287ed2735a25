#pragma once

#include <optional>
#include <string>
#include <vector>

#include "codedb.hpp"
#include "config.hpp"
#include "loss.hpp"
#include "train.hpp"
#include "world.hpp"

namespace geoloc {

// Config -> typed module configs (derived defaults resolved here).
WorldConfig world_config_from(const RunConfig& cfg);
LevelConfig level_config_from(const RunConfig& cfg);
LossConfig loss_config_from(const RunConfig& cfg);
TrainConfig train_config_from(const RunConfig& cfg);
DensitySpec density_spec_from(const RunConfig& cfg);

struct ModelArtifacts {
  EncoderParams ground_encoder;
  EncoderParams aerial_encoder;
  PrototypeTable prototypes;
};
ModelArtifacts load_model(const std::string& model_dir);

// Aerial-level cells backing the retrieval databases: descendants of the
// prototype cells, optionally extended to descendants of `extra_parents`.
std::vector<CellId> aerial_db_cells(const PrototypeTable& table,
                                    int aerial_level,
                                    std::span<const CellId> extra_parents = {});

// One north-aligned tile per cell, encoded; sampling noise is keyed off the
// world seed so rebuilds are byte-identical.
CellCodeDB build_aerial_db_from_world(const WorldModel& world,
                                      const EncoderParams& aerial_encoder,
                                      std::span<const CellId> cells,
                                      int aerial_level);

std::vector<EvalQuery> test_queries(const Dataset& dataset,
                                    const EncoderParams& ground_encoder);

// Commands. Every command writes "<output>.resolved.cfg" (or
// out_dir/resolved.cfg) capturing the full configuration it ran with.
void cmd_gen_world(const RunConfig& cfg, const std::string& out_dataset_path);
void cmd_train(const RunConfig& cfg, const std::string& dataset_path,
               const std::string& out_dir);
double cmd_calibrate(const RunConfig& cfg, const std::string& dataset_path,
                     const std::string& model_dir);
void cmd_build_db(const RunConfig& cfg, const std::string& mode,
                  const std::string& dataset_path,
                  const std::string& model_dir, const std::string& out_path);
void cmd_eval(const RunConfig& cfg, const std::string& dataset_path,
              const std::string& model_dir,
              const std::vector<std::string>& db_paths,
              const std::string& out_csv);

struct QueryCommandResult {
  std::vector<SearchHit> hits;
};
// Query either by pose (a ground view is sampled from the world and encoded)
// or by an embedding read from a whitespace-separated text file.
QueryCommandResult cmd_query(const RunConfig& cfg, const std::string& db_path,
                             std::optional<GeoPoint> pose_location,
                             double heading, double fov,
                             const std::string& embedding_file, int k);

// axis: loss-edges | interp | kappa | density | granularity
void cmd_ablate(const RunConfig& cfg, const std::string& axis,
                const std::string& dataset_path, const std::string& model_dir,
                const std::string& out_dir);

void cmd_export_pca(const std::string& prototypes_path,
                    const std::string& out_csv);

}  // namespace geoloc
