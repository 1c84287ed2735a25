#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "errors.hpp"
#include "world.hpp"

using namespace geoloc;

namespace {

WorldConfig small_config(std::uint64_t seed = 0) {
  WorldConfig cfg;
  cfg.region_center = make_geopoint(47.0 * M_PI / 180, 8.0 * M_PI / 180);
  cfg.region_radius_m = 60000;
  cfg.latent_dim = 16;
  cfg.n_low_freq = 16;
  cfg.n_high_freq = 16;
  cfg.ground_feature_dim = 24;
  cfg.aerial_feature_dim = 20;
  cfg.noise_sigma = 0.1;
  cfg.seed = seed;
  cfg.scale = 1.0;
  return cfg;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const std::size_t n = a.size();
  double ma = 0, mb = 0;
  for (std::size_t k = 0; k < n; ++k) {
    ma += a[k];
    mb += b[k];
  }
  ma /= n;
  mb /= n;
  double num = 0, da = 0, db = 0;
  for (std::size_t k = 0; k < n; ++k) {
    num += (a[k] - ma) * (b[k] - mb);
    da += (a[k] - ma) * (a[k] - ma);
    db += (b[k] - mb) * (b[k] - mb);
  }
  return num / std::sqrt(da * db + 1e-30);
}

double cosine(std::span<const float> a, std::span<const float> b) {
  double num = 0, da = 0, db = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    num += a[k] * b[k];
    da += a[k] * a[k];
    db += b[k] * b[k];
  }
  return num / std::sqrt(da * db + 1e-30);
}

}  // namespace

TEST_CASE("world generation is deterministic in the seed") {
  const WorldModel w1 = generate_world(small_config(42));
  const WorldModel w2 = generate_world(small_config(42));
  const WorldModel w3 = generate_world(small_config(43));
  Rng rng(5);
  int differs = 0;
  for (int k = 0; k < 100; ++k) {
    const GeoPoint p = make_geopoint(rng.uniform(-1.0, 1.0), rng.uniform(-3, 3));
    const auto a = latent_field(w1, p);
    const auto b = latent_field(w2, p);
    const auto c = latent_field(w3, p);
    for (int d = 0; d < 16; ++d) CHECK(a[d] == b[d]);
    bool any = false;
    for (int d = 0; d < 16; ++d) any |= a[d] != c[d];
    differs += any;
  }
  CHECK(differs >= 99);
}

TEST_CASE("latent field is smooth at small separations") {
  const WorldModel world = generate_world(small_config(1));
  const GeoPoint p = world.config.region_center;
  const auto at = [&](double east) {
    return latent_field(world, offset_point(p, east, 0.0));
  };
  const auto base = at(0.0);
  const auto near = at(1.0);      // 1 m
  const auto far = at(10000.0);   // 10 km
  double dn = 0, df = 0;
  for (int d = 0; d < 16; ++d) {
    dn += (near[d] - base[d]) * (near[d] - base[d]);
    df += (far[d] - base[d]) * (far[d] - base[d]);
  }
  CHECK(std::sqrt(dn) < 0.05);
  CHECK(std::sqrt(dn) < std::sqrt(df) * 0.05);
}

TEST_CASE("regional half decorrelates with distance") {
  const WorldModel world = generate_world(small_config(2));
  Rng rng(7);
  const int m_reg = 8;
  double corr_near = 0, corr_far = 0;
  const int pairs = 1000;
  for (int k = 0; k < pairs; ++k) {
    const double bearing = rng.uniform(0, 2 * M_PI);
    const GeoPoint a = offset_point(world.config.region_center,
                                    rng.uniform(-20000, 20000),
                                    rng.uniform(-20000, 20000));
    const auto move = [&](double d) {
      return offset_point(a, d * std::sin(bearing), d * std::cos(bearing));
    };
    const auto la = latent_field(world, a);
    const auto lnear = latent_field(world, move(100.0));
    const auto lfar = latent_field(world, move(50000.0));
    corr_near += pearson({la.data(), static_cast<std::size_t>(m_reg)},
                         {lnear.data(), static_cast<std::size_t>(m_reg)});
    corr_far += pearson({la.data(), static_cast<std::size_t>(m_reg)},
                        {lfar.data(), static_cast<std::size_t>(m_reg)});
  }
  CHECK(corr_near / pairs > corr_far / pairs);
  CHECK(corr_near / pairs > 0.9);
}

TEST_CASE("latent coordinates respect the cosine bound") {
  const WorldModel world = generate_world(small_config(3));
  Rng rng(9);
  for (int k = 0; k < 200; ++k) {
    const GeoPoint p = make_geopoint(rng.uniform(-1.2, 1.2), rng.uniform(-3, 3));
    for (double v : latent_field(world, p))
      CHECK(std::fabs(v) <= 16.0);  // n_terms * amplitude < n_terms
  }
}

TEST_CASE("ground views: determinism, heading sensitivity, shape") {
  WorldConfig cfg = small_config(4);
  cfg.noise_sigma = 0.0;
  const WorldModel world = generate_world(cfg);
  const GeoPoint loc = world.config.region_center;
  const double fov = 60 * M_PI / 180;
  Rng r1(1), r2(2), r3(3);
  const auto a = sample_ground_view(world, loc, 0.3, fov, r1);
  const auto b = sample_ground_view(world, loc, 0.3, fov, r2);
  const auto c = sample_ground_view(world, loc, 0.3 + M_PI, fov, r3);
  CHECK(a.features.size() == 24);
  for (std::size_t k = 0; k < a.features.size(); ++k)
    CHECK(a.features[k] == b.features[k]);
  bool differs = false;
  for (std::size_t k = 0; k < a.features.size(); ++k)
    differs |= a.features[k] != c.features[k];
  CHECK(differs);
  CHECK_THROWS_AS(sample_ground_view(world, loc, 0.0, 0.1, r1),
                  InvalidArgumentError);
}

TEST_CASE("aerial tiles: rotation sensitivity and locality") {
  WorldConfig cfg = small_config(5);
  cfg.region_radius_m = 150000;
  cfg.noise_sigma = 0.0;
  const WorldModel world = generate_world(cfg);
  Rng rng(11);
  const GeoPoint c0 = world.config.region_center;
  const auto t0 = sample_aerial_tile(world, c0, 0.0, rng);
  const auto t90 = sample_aerial_tile(world, c0, M_PI / 2, rng);
  CHECK(t0.features.size() == 20);
  bool differs = false;
  for (std::size_t k = 0; k < t0.features.size(); ++k)
    differs |= t0.features[k] != t90.features[k];
  CHECK(differs);

  double sim_near = 0, sim_far = 0;
  const int pairs = 500;
  for (int k = 0; k < pairs; ++k) {
    const GeoPoint a = offset_point(c0, rng.uniform(-30000, 30000),
                                    rng.uniform(-30000, 30000));
    const auto ta = sample_aerial_tile(world, a, 0.0, rng);
    const auto tn = sample_aerial_tile(world, offset_point(a, 50, 0), 0.0, rng);
    const auto tf =
        sample_aerial_tile(world, offset_point(a, 100000, 0), 0.0, rng);
    sim_near += cosine(ta.features, tn.features);
    sim_far += cosine(ta.features, tf.features);
  }
  CHECK(sim_near / pairs > sim_far / pairs);
}

TEST_CASE("dataset generation honors spacing, views and epochs") {
  WorldConfig wc = small_config(6);
  wc.region_radius_m = 6000;
  const WorldModel world = generate_world(wc);
  DensitySpec density;
  density.n_bumps = 4;
  density.bump_sigma_m = 800;
  density.bump_weight = 12;
  const int prototype_level = 15;
  const Dataset ds =
      generate_dataset(world, density, {300, 60}, prototype_level, 99);

  CHECK(ds.records.size() == 360 * 4);
  CHECK(ds.train_indices.size() == 300 * 4);
  CHECK(ds.test_indices.size() == 60 * 4);

  // 4 views per place, same location
  std::map<std::uint32_t, std::vector<const DatasetRecord*>> by_place;
  for (const auto& r : ds.records) by_place[r.place].push_back(&r);
  CHECK(by_place.size() == 360);
  for (const auto& [place, recs] : by_place) {
    CHECK(recs.size() == 4);
    for (const auto* r : recs) {
      CHECK(r->ground.location.lat == recs[0]->ground.location.lat);
      CHECK(r->ground.epoch == recs[0]->ground.epoch);
    }
  }

  // pairwise spacing >= 40 m (scale 1)
  std::vector<GeoPoint> places;
  for (const auto& [place, recs] : by_place)
    places.push_back(recs[0]->ground.location);
  double min_d = 1e18;
  for (std::size_t a = 0; a < places.size(); ++a)
    for (std::size_t b = a + 1; b < places.size(); ++b)
      min_d = std::min(min_d, haversine_m(places[a], places[b]));
  CHECK(min_d >= 40.0);

  // every record's location is inside its prototype cell; aerial offset <= 80
  for (const auto& r : ds.records) {
    CHECK(cell_from_point(r.ground.location, prototype_level) == r.cell);
    CHECK(r.aerial.offset_m <= 80.0);
    CHECK(haversine_m(r.ground.location, r.aerial.tile_center) <= 80.0 + 1.0);
    CHECK(r.ground.fov >= 45 * M_PI / 180 - 1e-9);
    CHECK(r.ground.fov <= 75 * M_PI / 180 + 1e-9);
  }

  // test-era places only in covered cells
  for (std::uint32_t idx : ds.test_indices)
    CHECK(ds.train_count_for_cell(ds.records[idx].cell.packed()) > 0);

  // place counts per density tercile ascend: thresholds from a uniform
  // spatial sample, places bucketed by the field value at their location
  const auto bumps = density_bump_centers(wc, density, 99);
  Rng rng(1234);
  std::vector<double> field;
  for (int k = 0; k < 4000; ++k) {
    const GeoPoint q = offset_point(wc.region_center, rng.uniform(-4200, 4200),
                                    rng.uniform(-4200, 4200));
    field.push_back(density_value(q, bumps, density));
  }
  std::sort(field.begin(), field.end());
  const double t1 = field[field.size() / 3];
  const double t2 = field[2 * field.size() / 3];
  int counts[3] = {0, 0, 0};
  for (const auto& [place, recs] : by_place) {
    const double d = density_value(recs[0]->ground.location, bumps, density);
    counts[d < t1 ? 0 : (d < t2 ? 1 : 2)]++;
  }
  CHECK(counts[0] < counts[1]);
  CHECK(counts[1] < counts[2]);
}

TEST_CASE("denser areas receive more places") {
  WorldConfig wc = small_config(7);
  wc.region_radius_m = 6000;
  const WorldModel world = generate_world(wc);
  DensitySpec density;
  density.n_bumps = 3;
  density.bump_sigma_m = 700;
  density.bump_weight = 15;
  const Dataset ds = generate_dataset(world, density, {400, 0}, 15, 7);

  // Places per prototype cell: cells in the top density tercile (measured by
  // place count) must hold more places than the bottom tercile. Without the
  // bumps the counts would be near-uniform, so use nearest-bump distance as
  // the density proxy: places within one sigma of some bump vs farther than
  // three sigmas.
  std::vector<GeoPoint> places;
  for (std::uint32_t idx : ds.train_indices)
    if (idx % 4 == 0) places.push_back(ds.records[idx].ground.location);

  // bump centers are not exposed; approximate them by the densest places.
  // Count pairwise neighbors within 500 m as a local-density score.
  std::vector<int> related(places.size(), 0);
  for (std::size_t a = 0; a < places.size(); ++a)
    for (std::size_t b = 0; b < places.size(); ++b)
      if (a != b && haversine_m(places[a], places[b]) < 500.0) related[a]++;
  std::vector<int> sorted = related;
  std::sort(sorted.begin(), sorted.end());
  const int lo_med = sorted[sorted.size() / 6];
  const int hi_med = sorted[5 * sorted.size() / 6];
  CHECK(hi_med > lo_med);  // strongly non-uniform density
}

TEST_CASE("capacity errors are explicit") {
  WorldConfig wc = small_config(8);
  wc.region_radius_m = 200;
  const WorldModel world = generate_world(wc);
  CHECK_THROWS_AS(generate_dataset(world, DensitySpec{}, {5000, 0}, 15, 1),
                  CapacityError);
}

TEST_CASE("dataset regeneration is bitwise identical") {
  WorldConfig wc = small_config(9);
  wc.region_radius_m = 4000;
  const WorldModel world = generate_world(wc);
  DensitySpec density;
  const Dataset a = generate_dataset(world, density, {120, 30}, 15, 5);
  const Dataset b = generate_dataset(world, density, {120, 30}, 15, 5);
  REQUIRE(a.records.size() == b.records.size());
  for (std::size_t k = 0; k < a.records.size(); ++k) {
    CHECK(a.records[k].cell == b.records[k].cell);
    CHECK(a.records[k].ground.location.lat == b.records[k].ground.location.lat);
    CHECK(a.records[k].ground.heading == b.records[k].ground.heading);
    for (std::size_t c = 0; c < a.records[k].ground.features.size(); ++c)
      CHECK(a.records[k].ground.features[c] == b.records[k].ground.features[c]);
    for (std::size_t c = 0; c < a.records[k].aerial.features.size(); ++c)
      CHECK(a.records[k].aerial.features[c] == b.records[k].aerial.features[c]);
  }
}

TEST_CASE("GWDS round trip is bitwise") {
  namespace fs = std::filesystem;
  WorldConfig wc = small_config(10);
  wc.region_radius_m = 4000;
  const WorldModel world = generate_world(wc);
  const Dataset ds = generate_dataset(world, DensitySpec{}, {80, 20}, 15, 3);

  const std::string p1 = (fs::temp_directory_path() / "ds1.gwds").string();
  const std::string p2 = (fs::temp_directory_path() / "ds2.gwds").string();
  save_dataset(ds, p1);
  const Dataset loaded = load_dataset(p1);
  save_dataset(loaded, p2);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)),
                       std::istreambuf_iterator<char>());
  const std::string b2((std::istreambuf_iterator<char>(f2)),
                       std::istreambuf_iterator<char>());
  CHECK(b1 == b2);
  CHECK(!b1.empty());

  CHECK(loaded.prototype_level == ds.prototype_level);
  CHECK(loaded.records.size() == ds.records.size());
  CHECK(loaded.train_indices == ds.train_indices);
  CHECK(loaded.cell_train_counts == ds.cell_train_counts);

  // corrupting the magic is a format error
  std::string corrupt = b1;
  corrupt[0] = 'X';
  const std::string p3 = (fs::temp_directory_path() / "ds3.gwds").string();
  std::ofstream(p3, std::ios::binary) << corrupt;
  CHECK_THROWS_AS(load_dataset(p3), FormatError);
  // truncation too
  const std::string p4 = (fs::temp_directory_path() / "ds4.gwds").string();
  std::ofstream(p4, std::ios::binary) << b1.substr(0, b1.size() / 2);
  CHECK_THROWS_AS(load_dataset(p4), FormatError);
  fs::remove(p1);
  fs::remove(p2);
  fs::remove(p3);
  fs::remove(p4);
}
