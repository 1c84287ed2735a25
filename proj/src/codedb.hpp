#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cellgrid.hpp"
#include "train.hpp"

namespace geoloc {

enum class DbMode : std::uint8_t {
  kGround = 0,
  kAerial = 1,
  kPrototype = 2,
  kHybrid = 3,
};
const char* db_mode_name(DbMode mode);
DbMode db_mode_from_name(const std::string& name);

// Persisted retrieval database. Entries are id-sorted; vectors are f32.
// Anchor points: cell centers for aerial/prototype/hybrid entries, image
// locations for ground entries.
struct CellCodeDB {
  DbMode mode = DbMode::kGround;
  int level = 0;
  double kappa = 0.0;  // hybrid only, else 0
  std::uint32_t dim = 0;
  std::vector<std::uint64_t> ids;
  std::vector<GeoPoint> anchors;
  std::vector<float> vectors;  // count x dim

  std::uint64_t count() const { return ids.size(); }
  std::span<const float> vec(std::uint64_t k) const {
    return {vectors.data() + k * dim, dim};
  }
};

// Per-image VPR database; ids are record indices.
CellCodeDB build_ground_db(std::span<const std::vector<double>> embeddings,
                           std::span<const GeoPoint> locations, int level);

// One embedding per aerial-level cell; `cells` must be sorted by packed id.
CellCodeDB build_aerial_db(std::span<const CellId> cells,
                           std::span<const std::vector<double>> embeddings,
                           int level);

CellCodeDB build_prototype_db(const PrototypeTable& table);

// Cell codes kappa * prototype(parent) + aerial, at the aerial level. Cells
// whose parent prototype is missing raise CoverageError, or become
// aerial-only entries when `aerial_only_fallback` is set.
CellCodeDB build_hybrid_db(const PrototypeTable& table,
                           const CellCodeDB& aerial_db, double kappa,
                           bool aerial_only_fallback = false);

// kappa = mean top-1 aerial similarity / mean top-1 prototype similarity
// over the calibration queries (at least 100).
double calibrate_kappa(std::span<const std::vector<double>> queries,
                       const CellCodeDB& prototype_db,
                       const CellCodeDB& aerial_db);

struct SearchHit {
  std::uint64_t id = 0;
  double score = 0.0;
  GeoPoint anchor{};
};

// Exact brute-force top-K by dot product; descending score, ties broken by
// ascending id.
std::vector<SearchHit> search_topk(const CellCodeDB& db,
                                   std::span<const double> query, int k);

// Fraction of queries with any of the first K hits within distance_m of the
// ground truth.
double recall_at(std::span<const std::vector<SearchHit>> results,
                 std::span<const GeoPoint> gt_locations, int k,
                 double distance_m);

struct EvalQuery {
  std::vector<double> embedding;
  GeoPoint gt_location{};
  std::uint64_t prototype_cell = 0;  // packed, for density slicing
};

struct EvalRow {
  std::string mode;
  int k = 0;
  double distance_m = 0.0;
  std::string slice;  // all | low | mid | high
  double recall = 0.0;
  std::uint64_t count = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
};

// Full recall grid over (K, distance) plus train-density tercile slices per
// database. `train_count_of` maps a packed prototype cell to its train-view
// count (the Dataset provides this).
EvalReport eval_suite(std::span<const CellCodeDB* const> dbs,
                      std::span<const EvalQuery> queries,
                      std::span<const int> ks,
                      std::span<const double> distances,
                      const Dataset& dataset);

void save_db(const CellCodeDB& db, const std::string& path);
CellCodeDB load_db(const std::string& path);

void write_eval_csv(const EvalReport& report, const std::string& path);

}  // namespace geoloc
