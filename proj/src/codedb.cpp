#include "codedb.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "bytesio.hpp"
#include "errors.hpp"
#include "parallel.hpp"

namespace geoloc {
namespace {

double score_of(std::span<const float> entry, std::span<const double> query) {
  double acc = 0.0;
  for (std::size_t k = 0; k < entry.size(); ++k) acc += entry[k] * query[k];
  return acc;
}

void check_dim(const CellCodeDB& db, std::span<const double> query) {
  if (query.size() != db.dim)
    throw InvalidArgumentError("query dimension does not match database");
}

}  // namespace

const char* db_mode_name(DbMode mode) {
  switch (mode) {
    case DbMode::kGround: return "ground";
    case DbMode::kAerial: return "aerial";
    case DbMode::kPrototype: return "prototype";
    case DbMode::kHybrid: return "hybrid";
  }
  return "unknown";
}

DbMode db_mode_from_name(const std::string& name) {
  if (name == "ground") return DbMode::kGround;
  if (name == "aerial") return DbMode::kAerial;
  if (name == "prototype") return DbMode::kPrototype;
  if (name == "hybrid") return DbMode::kHybrid;
  throw InvalidArgumentError("unknown database mode: " + name);
}

CellCodeDB build_ground_db(std::span<const std::vector<double>> embeddings,
                           std::span<const GeoPoint> locations, int level) {
  if (embeddings.empty()) throw InvalidArgumentError("no ground embeddings");
  if (embeddings.size() != locations.size())
    throw InvalidArgumentError("embeddings/locations size mismatch");
  CellCodeDB db;
  db.mode = DbMode::kGround;
  db.level = level;
  db.dim = static_cast<std::uint32_t>(embeddings[0].size());
  db.ids.resize(embeddings.size());
  std::iota(db.ids.begin(), db.ids.end(), 0);
  db.anchors.assign(locations.begin(), locations.end());
  db.vectors.reserve(embeddings.size() * db.dim);
  for (const auto& e : embeddings)
    for (double v : e) db.vectors.push_back(static_cast<float>(v));
  return db;
}

CellCodeDB build_aerial_db(std::span<const CellId> cells,
                           std::span<const std::vector<double>> embeddings,
                           int level) {
  if (cells.empty()) throw InvalidArgumentError("no aerial cells");
  if (cells.size() != embeddings.size())
    throw InvalidArgumentError("cells/embeddings size mismatch");
  CellCodeDB db;
  db.mode = DbMode::kAerial;
  db.level = level;
  db.dim = static_cast<std::uint32_t>(embeddings[0].size());
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const std::uint64_t id = cells[k].packed();
    if (k > 0 && id <= db.ids.back())
      throw InvalidArgumentError("aerial cells must be id-sorted and unique");
    db.ids.push_back(id);
    db.anchors.push_back(cell_center(cells[k]));
    for (double v : embeddings[k]) db.vectors.push_back(static_cast<float>(v));
  }
  return db;
}

CellCodeDB build_prototype_db(const PrototypeTable& table) {
  if (table.count() == 0) throw InvalidArgumentError("empty prototype table");
  CellCodeDB db;
  db.mode = DbMode::kPrototype;
  db.level = table.level;
  db.dim = static_cast<std::uint32_t>(table.dim);
  db.ids = table.cell_ids;
  db.anchors = table.centers;
  db.vectors.reserve(table.values.size());
  for (double v : table.values) db.vectors.push_back(static_cast<float>(v));
  return db;
}

CellCodeDB build_hybrid_db(const PrototypeTable& table,
                           const CellCodeDB& aerial_db, double kappa,
                           bool aerial_only_fallback) {
  if (aerial_db.mode != DbMode::kAerial)
    throw InvalidArgumentError("hybrid fusion needs an aerial database");
  if (static_cast<int>(aerial_db.dim) != table.dim)
    throw InvalidArgumentError("prototype/aerial dimension mismatch");
  if (aerial_db.level < table.level)
    throw InvalidArgumentError("aerial level must be >= prototype level");
  CellCodeDB db;
  db.mode = DbMode::kHybrid;
  db.level = aerial_db.level;
  db.kappa = kappa;
  db.dim = aerial_db.dim;
  db.ids = aerial_db.ids;
  db.anchors = aerial_db.anchors;
  db.vectors.resize(aerial_db.vectors.size());
  for (std::uint64_t k = 0; k < aerial_db.count(); ++k) {
    const CellId cell = CellId::unpack(aerial_db.ids[k]);
    const auto pos = table.find(parent(cell, table.level).packed());
    const float* a = aerial_db.vectors.data() + k * db.dim;
    float* out = db.vectors.data() + k * db.dim;
    if (!pos) {
      if (!aerial_only_fallback)
        throw CoverageError("no prototype for parent of aerial cell " +
                            std::to_string(aerial_db.ids[k]));
      std::copy(a, a + db.dim, out);  // aerial-only entry in the gap
      continue;
    }
    const double* p = table.values.data() + static_cast<std::size_t>(*pos) * table.dim;
    for (std::uint32_t c = 0; c < db.dim; ++c)
      out[c] = static_cast<float>(kappa * p[c] + static_cast<double>(a[c]));
  }
  return db;
}

double calibrate_kappa(std::span<const std::vector<double>> queries,
                       const CellCodeDB& prototype_db,
                       const CellCodeDB& aerial_db) {
  if (queries.size() < 100)
    throw InvalidArgumentError("calibration needs at least 100 queries");
  std::vector<double> top_aerial(queries.size()), top_proto(queries.size());
  parallel_for_chunks(queries.size(), 64, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t q = lo; q < hi; ++q) {
      top_aerial[q] = search_topk(aerial_db, queries[q], 1)[0].score;
      top_proto[q] = search_topk(prototype_db, queries[q], 1)[0].score;
    }
  });
  double mean_aerial = 0.0, mean_proto = 0.0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    mean_aerial += top_aerial[q];
    mean_proto += top_proto[q];
  }
  mean_aerial /= static_cast<double>(queries.size());
  mean_proto /= static_cast<double>(queries.size());
  if (!(mean_aerial > 0.0) || !(mean_proto > 0.0))
    throw CalibrationError("non-positive mean top-1 similarity");
  return mean_aerial / mean_proto;
}

std::vector<SearchHit> search_topk(const CellCodeDB& db,
                                   std::span<const double> query, int k) {
  if (db.count() == 0) throw InvalidArgumentError("search on an empty database");
  if (k < 1) throw InvalidArgumentError("k must be >= 1");
  check_dim(db, query);

  const std::uint64_t n = db.count();
  std::vector<std::pair<double, std::uint64_t>> scored(n);
  for (std::uint64_t e = 0; e < n; ++e)
    scored[e] = {score_of(db.vec(e), query), db.ids[e]};

  const auto better = [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  };
  const std::uint64_t keep = std::min<std::uint64_t>(k, n);
  std::partial_sort(scored.begin(), scored.begin() + keep, scored.end(), better);

  std::vector<SearchHit> out;
  out.reserve(keep);
  for (std::uint64_t r = 0; r < keep; ++r) {
    const auto it = std::lower_bound(db.ids.begin(), db.ids.end(),
                                     scored[r].second);
    const std::uint64_t e = static_cast<std::uint64_t>(it - db.ids.begin());
    out.push_back({scored[r].second, scored[r].first, db.anchors[e]});
  }
  return out;
}

double recall_at(std::span<const std::vector<SearchHit>> results,
                 std::span<const GeoPoint> gt_locations, int k,
                 double distance_m) {
  if (results.size() != gt_locations.size())
    throw InvalidArgumentError("results/gt size mismatch");
  if (results.empty()) return 0.0;
  std::uint64_t hit = 0;
  for (std::size_t q = 0; q < results.size(); ++q) {
    const auto& hits = results[q];
    const std::size_t kk = std::min<std::size_t>(k, hits.size());
    for (std::size_t r = 0; r < kk; ++r) {
      if (haversine_m(hits[r].anchor, gt_locations[q]) <= distance_m) {
        ++hit;
        break;
      }
    }
  }
  return static_cast<double>(hit) / static_cast<double>(results.size());
}

EvalReport eval_suite(std::span<const CellCodeDB* const> dbs,
                      std::span<const EvalQuery> queries,
                      std::span<const int> ks,
                      std::span<const double> distances,
                      const Dataset& dataset) {
  if (queries.empty()) throw InvalidArgumentError("no evaluation queries");
  if (ks.empty() || distances.empty())
    throw InvalidArgumentError("empty evaluation grid");
  const int max_k = *std::max_element(ks.begin(), ks.end());

  // Density terciles over the queries' prototype-cell train counts; ties are
  // broken by query index so the split is deterministic.
  const std::size_t nq = queries.size();
  std::vector<std::size_t> by_density(nq);
  std::iota(by_density.begin(), by_density.end(), 0);
  std::stable_sort(by_density.begin(), by_density.end(),
                   [&](std::size_t a, std::size_t b) {
                     return dataset.train_count_for_cell(queries[a].prototype_cell) <
                            dataset.train_count_for_cell(queries[b].prototype_cell);
                   });
  // slice id per query: 0 low, 1 mid, 2 high
  std::vector<int> slice_of(nq);
  const std::size_t t1 = nq / 3, t2 = 2 * nq / 3;
  for (std::size_t r = 0; r < nq; ++r)
    slice_of[by_density[r]] = r < t1 ? 0 : (r < t2 ? 1 : 2);
  static const char* kSliceNames[3] = {"low", "mid", "high"};

  EvalReport report;
  std::vector<std::vector<SearchHit>> hits(nq);
  std::vector<GeoPoint> gts(nq);
  for (std::size_t q = 0; q < nq; ++q) gts[q] = queries[q].gt_location;

  for (const CellCodeDB* db : dbs) {
    parallel_for_chunks(nq, 16, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t q = lo; q < hi; ++q)
        hits[q] = search_topk(*db, queries[q].embedding, max_k);
    });
    for (int k : ks) {
      for (double dist : distances) {
        report.rows.push_back({db_mode_name(db->mode), k, dist, "all",
                               recall_at(hits, gts, k, dist), nq});
        for (int s = 0; s < 3; ++s) {
          std::vector<std::vector<SearchHit>> sub_hits;
          std::vector<GeoPoint> sub_gts;
          for (std::size_t q = 0; q < nq; ++q) {
            if (slice_of[q] != s) continue;
            sub_hits.push_back(hits[q]);
            sub_gts.push_back(gts[q]);
          }
          const double rec =
              sub_hits.empty() ? 0.0 : recall_at(sub_hits, sub_gts, k, dist);
          report.rows.push_back({db_mode_name(db->mode), k, dist,
                                 kSliceNames[s], rec, sub_hits.size()});
        }
      }
    }
  }
  return report;
}

void save_db(const CellCodeDB& db, const std::string& path) {
  ByteWriter w;
  w.magic("GCDB");
  w.u16(1);
  w.u8(static_cast<std::uint8_t>(db.mode));
  w.u8(static_cast<std::uint8_t>(db.level));
  w.u32(db.dim);
  w.u64(db.count());
  w.f64(db.kappa);
  for (std::uint64_t e = 0; e < db.count(); ++e) {
    w.u64(db.ids[e]);
    w.f64(db.anchors[e].lat);
    w.f64(db.anchors[e].lon);
    const float* v = db.vectors.data() + e * db.dim;
    for (std::uint32_t c = 0; c < db.dim; ++c) w.f32(v[c]);
  }
  w.write_file(path);
}

CellCodeDB load_db(const std::string& path) {
  ByteReader rd = ByteReader::from_file(path);
  rd.expect_magic("GCDB", "cell-code database");
  const std::uint16_t version = rd.u16();
  if (version != 1)
    throw FormatError("unsupported GCDB version " + std::to_string(version),
                      rd.offset() - 2);
  CellCodeDB db;
  const std::uint8_t mode = rd.u8();
  if (mode > 3) throw FormatError("invalid database mode", rd.offset() - 1);
  db.mode = static_cast<DbMode>(mode);
  db.level = rd.u8();
  if (db.level > kMaxCellLevel)
    throw FormatError("invalid database level", rd.offset() - 1);
  db.dim = rd.u32();
  if (db.dim == 0) throw FormatError("zero dimension", rd.offset() - 4);
  const std::uint64_t count = rd.u64();
  db.kappa = rd.f64();
  db.ids.reserve(count);
  db.anchors.reserve(count);
  db.vectors.resize(count * db.dim);
  for (std::uint64_t e = 0; e < count; ++e) {
    db.ids.push_back(rd.u64());
    if (e > 0 && db.ids[e] <= db.ids[e - 1])
      throw FormatError("database ids out of order", rd.offset() - 8);
    GeoPoint anchor;
    anchor.lat = rd.f64();
    anchor.lon = rd.f64();
    db.anchors.push_back(anchor);
    for (std::uint32_t c = 0; c < db.dim; ++c) db.vectors[e * db.dim + c] = rd.f32();
  }
  rd.expect_end("cell-code database");
  return db;
}

void write_eval_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw MissingArtifactError("cannot open for writing: " + path);
  out << "mode,K,distance_m,slice,recall,count\n";
  out.precision(10);
  for (const EvalRow& r : report.rows)
    out << r.mode << ',' << r.k << ',' << r.distance_m << ',' << r.slice << ','
        << r.recall << ',' << r.count << '\n';
}

}  // namespace geoloc
