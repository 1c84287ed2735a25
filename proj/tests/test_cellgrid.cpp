#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "cellgrid.hpp"
#include "errors.hpp"
#include "rng.hpp"

using namespace geoloc;

namespace {

GeoPoint random_point(Rng& rng) {
  const double z = rng.uniform(-1.0, 1.0);
  return make_geopoint(std::asin(z), rng.uniform(-M_PI, M_PI));
}

CellId random_cell(Rng& rng, int level) {
  const auto n = std::uint32_t{1} << level;
  return CellId{static_cast<std::uint8_t>(rng.uniform_index(6)),
                static_cast<std::uint8_t>(level),
                static_cast<std::uint32_t>(rng.uniform_index(n)),
                static_cast<std::uint32_t>(rng.uniform_index(n))};
}

}  // namespace

TEST_CASE("face-0 cell at the origin") {
  const CellId c = cell_from_point(make_geopoint(0.0, 0.0), 0);
  CHECK(c.face == 0);
  CHECK(c.level == 0);
  CHECK(c.i == 0);
  CHECK(c.j == 0);
  const GeoPoint ctr = cell_center(c);
  CHECK(ctr.lat == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(ctr.lon == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("face centers land on their own face") {
  const GeoPoint centers[6] = {
      make_geopoint(0, 0),           make_geopoint(0, M_PI / 2),
      make_geopoint(M_PI / 2, 0),    make_geopoint(0, M_PI),
      make_geopoint(0, -M_PI / 2),   make_geopoint(-M_PI / 2, 0)};
  for (int f = 0; f < 6; ++f) {
    const CellId c = cell_from_point(centers[f], 0);
    CHECK(static_cast<int>(c.face) == f);
    const GeoPoint back = cell_center(c);
    CHECK(haversine_m(back, centers[f]) < 1.0);
  }
}

TEST_CASE("golden packed id") {
  const GeoPoint zurich =
      make_geopoint(47.3769 * M_PI / 180.0, 8.5417 * M_PI / 180.0);
  CHECK(cell_from_point(zurich, 12).packed() == 0x4c00000b800006e8ULL);
}

TEST_CASE("pack/unpack is a bijection on valid ids") {
  Rng rng(7);
  for (int k = 0; k < 20000; ++k) {
    const CellId c = random_cell(rng, static_cast<int>(rng.uniform_index(21)));
    const CellId back = CellId::unpack(c.packed());
    CHECK(back == c);
    CHECK(back.packed() == c.packed());
  }
  CHECK_THROWS_AS(CellId::unpack((std::uint64_t{6} << 61)), InvalidArgumentError);
  CHECK_THROWS_AS(CellId::unpack((std::uint64_t{21} << 56)), InvalidArgumentError);
  // i out of range for the level
  CHECK_THROWS_AS(CellId::unpack((std::uint64_t{3} << 56) | (9ull << 28)),
                  InvalidArgumentError);
}

TEST_CASE("point/cell round trip and quadtree nesting") {
  Rng rng(11);
  for (int k = 0; k < 100000; ++k) {
    const GeoPoint p = random_point(rng);
    const CellId fine = cell_from_point(p, 16);
    CHECK(parent(fine, 15) == cell_from_point(p, 15));
    const CellId c = random_cell(rng, 12);
    CHECK(cell_from_point(cell_center(c), 12) == c);
  }
  // nesting across arbitrary level pairs
  for (int k = 0; k < 2000; ++k) {
    const GeoPoint p = random_point(rng);
    const int l1 = static_cast<int>(rng.uniform_index(10));
    const int l2 = l1 + 1 + static_cast<int>(rng.uniform_index(20 - l1));
    CHECK(parent(cell_from_point(p, l2), l1) == cell_from_point(p, l1));
  }
}

TEST_CASE("parent arithmetic") {
  const CellId c{2, 3, 5, 6};
  CHECK(parent(c, 3) == c);
  const CellId p = parent(c, 1);
  CHECK(p.face == 2);
  CHECK(p.level == 1);
  CHECK(p.i == 1);
  CHECK(p.j == 1);
  CHECK_THROWS_AS(parent(c, 4), InvalidArgumentError);
}

TEST_CASE("children split and cover") {
  const CellId f0{3, 0, 0, 0};
  const auto kids = children(f0);
  CHECK(kids.size() == 4);
  CHECK(kids[0] == CellId{3, 1, 0, 0});
  CHECK(kids[1] == CellId{3, 1, 0, 1});
  CHECK(kids[2] == CellId{3, 1, 1, 0});
  CHECK(kids[3] == CellId{3, 1, 1, 1});
  Rng rng(3);
  for (int k = 0; k < 500; ++k) {
    const CellId c = random_cell(rng, 1 + static_cast<int>(rng.uniform_index(18)));
    for (const CellId& kid : children(c)) CHECK(parent(kid, c.level) == c);
  }
  CHECK_THROWS_AS(children(CellId{0, 20, 0, 0}), InvalidArgumentError);
}

TEST_CASE("descendant counting matches 6 * 4^L") {
  // BFS enumeration for small levels
  for (int L = 0; L <= 5; ++L) {
    std::set<std::uint64_t> cells;
    for (std::uint8_t f = 0; f < 6; ++f) {
      std::vector<CellId> frontier{CellId{f, 0, 0, 0}};
      for (int step = 0; step < L; ++step) {
        std::vector<CellId> next;
        for (const CellId& c : frontier)
          for (const CellId& kid : children(c)) next.push_back(kid);
        frontier = std::move(next);
      }
      for (const CellId& c : frontier) cells.insert(c.packed());
    }
    CHECK(cells.size() == 6ull * (1ull << (2 * L)));
  }
}

TEST_CASE("sibling disjointness: points map into exactly one child") {
  Rng rng(13);
  for (int k = 0; k < 20000; ++k) {
    const GeoPoint p = random_point(rng);
    const int level = 1 + static_cast<int>(rng.uniform_index(16));
    const CellId c = cell_from_point(p, level);
    const CellId par = parent(c, level - 1);
    int containing = 0;
    for (const CellId& kid : children(par))
      if (kid == c) ++containing;
    CHECK(containing == 1);
  }
}

TEST_CASE("haversine basics") {
  const GeoPoint o = make_geopoint(0, 0);
  CHECK(haversine_m(o, o) == 0.0);
  CHECK(haversine_m(o, make_geopoint(0, M_PI)) ==
        doctest::Approx(M_PI * kEarthRadiusM).epsilon(1e-12));
  const GeoPoint paris = make_geopoint(48.8566 * M_PI / 180, 2.3522 * M_PI / 180);
  const GeoPoint berlin = make_geopoint(52.52 * M_PI / 180, 13.405 * M_PI / 180);
  CHECK(haversine_m(paris, berlin) == doctest::Approx(877460.0).epsilon(0.001));
}

TEST_CASE("haversine is a metric on random triples") {
  Rng rng(17);
  for (int k = 0; k < 10000; ++k) {
    const GeoPoint a = random_point(rng), b = random_point(rng),
                   c = random_point(rng);
    const double ab = haversine_m(a, b);
    const double ba = haversine_m(b, a);
    const double ac = haversine_m(a, c);
    const double cb = haversine_m(c, b);
    CHECK(ab == ba);
    CHECK(ab >= 0.0);
    CHECK(ab <= ac + cb + 1e-9 * (ab + ac + cb));
  }
  Rng rng2(18);
  for (int k = 0; k < 100; ++k) {
    const GeoPoint a = random_point(rng2);
    CHECK(haversine_m(a, a) == 0.0);
  }
}

TEST_CASE("average edge length") {
  for (int L = 0; L < 20; ++L)
    CHECK(avg_edge_length_m(L) ==
          doctest::Approx(2.0 * avg_edge_length_m(L + 1)).epsilon(1e-12));
  CHECK(std::fabs(avg_edge_length_m(15) - 281.0) <= 0.15 * 281.0);
  CHECK(std::fabs(avg_edge_length_m(16) - 140.0) <= 0.15 * 140.0);
}

TEST_CASE("adjacent sibling centers sit about one edge apart") {
  Rng rng(23);
  for (int k = 0; k < 100; ++k) {
    const int level = 3 + static_cast<int>(rng.uniform_index(12));
    const CellId par = random_cell(rng, level);
    const auto kids = children(par);
    const double edge = avg_edge_length_m(level + 1);
    const std::pair<int, int> adjacent[4] = {{0, 1}, {0, 2}, {1, 3}, {2, 3}};
    for (const auto& [x, y] : adjacent) {
      const double d = haversine_m(cell_center(kids[x]), cell_center(kids[y]));
      CHECK(d >= 0.5 * edge);
      CHECK(d <= 2.0 * edge);
    }
  }
}

TEST_CASE("k nearest cells: own cell first at its center") {
  Rng rng(29);
  for (int k = 0; k < 200; ++k) {
    const int level = 2 + static_cast<int>(rng.uniform_index(13));
    const CellId c = random_cell(rng, level);
    const auto nearest = k_nearest_cells(cell_center(c), level, 1);
    REQUIRE(nearest.size() == 1);
    CHECK(nearest[0] == c);
    const auto four = k_nearest_cells(cell_center(c), level, 4);
    REQUIRE(four.size() == 4);
    CHECK(four[0] == c);
  }
}

TEST_CASE("k nearest cells matches a dense neighborhood scan") {
  Rng rng(31);
  const int level = 12;
  const double edge = avg_edge_length_m(level);
  int checked = 0;
  for (int trial = 0; trial < 150; ++trial) {
    GeoPoint p = random_point(rng);
    if (std::fabs(p.lat) > 80.0 * M_PI / 180.0) continue;  // offset_point grid degenerates
    ++checked;
    // candidate cells from a dense point grid around p
    std::map<std::uint64_t, CellId> candidates;
    for (int di = -6; di <= 6; ++di)
      for (int dj = -6; dj <= 6; ++dj) {
        const CellId c = cell_from_point(
            offset_point(p, 0.5 * di * edge, 0.5 * dj * edge), level);
        candidates.emplace(c.packed(), c);
      }
    std::vector<std::pair<double, std::uint64_t>> ranked;
    for (const auto& [id, c] : candidates)
      ranked.emplace_back(haversine_m(p, cell_center(c)), id);
    std::sort(ranked.begin(), ranked.end());
    const auto got = k_nearest_cells(p, level, 4);
    REQUIRE(got.size() == 4);
    for (int r = 0; r < 4; ++r) CHECK(got[r].packed() == ranked[r].second);
  }
  CHECK(checked > 100);
}

TEST_CASE("k nearest works near a cube corner") {
  // corner where faces 0, 1, 2 meet
  const GeoPoint corner =
      make_geopoint(std::atan(1.0 / std::sqrt(2.0)) + 1e-4, M_PI / 4 - 1e-4);
  const auto got = k_nearest_cells(corner, 10, 9);
  REQUIRE(got.size() == 9);
  std::set<std::uint64_t> distinct;
  double prev = -1.0;
  for (const CellId& c : got) {
    distinct.insert(c.packed());
    const double d = haversine_m(corner, cell_center(c));
    CHECK(d >= prev - 1e-9);
    prev = d;
  }
  CHECK(distinct.size() == 9);
}

TEST_CASE("k at small levels returns every cell") {
  const auto all = k_nearest_cells(make_geopoint(0.1, 0.2), 0, 10);
  CHECK(all.size() == 6);
  const auto lots = k_nearest_cells(make_geopoint(0.1, 0.2), 1, 100);
  CHECK(lots.size() == 24);
}

TEST_CASE("cells_within_radius agrees with the negative-set predicate") {
  Rng rng(37);
  for (int trial = 0; trial < 30; ++trial) {
    const GeoPoint p = random_point(rng);
    const int level = 10;
    const double radius = 2.0 * avg_edge_length_m(level);
    const auto inside = cells_within_radius(p, level, radius);
    CHECK(!inside.empty());
    for (const CellId& c : inside)
      CHECK(haversine_m(p, cell_center(c)) <= radius);
    // own cell is always inside; its center is at most half a diagonal away
    const CellId own = cell_from_point(p, level);
    CHECK(std::binary_search(
        inside.begin(), inside.end(), own,
        [](const CellId& a, const CellId& b) { return a < b; }));
  }
}

TEST_CASE("triangle fully inside one cell") {
  const CellId c = cell_from_point(make_geopoint(0.3, 0.4), 8);
  const GeoPoint ctr = cell_center(c);
  const auto overlaps =
      cells_overlapping_triangle(ctr, 0.7, 60.0 * M_PI / 180.0, 50.0, 8);
  REQUIRE(overlaps.size() == 1);
  CHECK(overlaps[0].cell == c);
  CHECK(overlaps[0].fraction == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("apex on a shared edge pointing inward") {
  // two horizontally adjacent cells; apex on the shared boundary
  const int level = 10;
  const CellId left{0, level, 100, 200};
  const GeoPoint lc = cell_center(left);
  const GeoPoint rc = cell_center(CellId{0, level, 101, 200});
  // midpoint of the two centers is on the shared edge
  const GeoPoint apex = make_geopoint((lc.lat + rc.lat) / 2, (lc.lon + rc.lon) / 2);
  // heading straight toward the right cell center
  const double east = (rc.lon - apex.lon) * kEarthRadiusM * std::cos(apex.lat);
  const double north = (rc.lat - apex.lat) * kEarthRadiusM;
  const double heading = std::atan2(east, north);
  const auto overlaps = cells_overlapping_triangle(
      apex, heading, 10.0 * M_PI / 180.0, 200.0, level);
  double right_fraction = 0.0;
  for (const auto& o : overlaps)
    if (o.cell == CellId{0, level, 101, 200}) right_fraction = o.fraction;
  CHECK(right_fraction >= 0.99);
}

TEST_CASE("overlap fractions: simplex + Monte-Carlo oracle") {
  Rng rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    GeoPoint apex = random_point(rng);
    if (std::fabs(apex.lat) > 80.0 * M_PI / 180.0) apex.lat = 0.5;
    const double heading = rng.uniform(0, 2 * M_PI);
    const double fov = rng.uniform(45.0, 75.0) * M_PI / 180.0;
    const double depth = 400.0;
    const int level = 12;
    const auto overlaps =
        cells_overlapping_triangle(apex, heading, fov, depth, level);

    double total = 0.0;
    for (const auto& o : overlaps) {
      CHECK(o.fraction >= 0.0);
      total += o.fraction;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

    // Monte-Carlo oracle with the same triangle
    const double bx = std::sin(heading - fov / 2), by = std::cos(heading - fov / 2);
    const double cx = std::sin(heading + fov / 2), cy = std::cos(heading + fov / 2);
    std::map<std::uint64_t, int> counts;
    const int n_samples = 100000;
    for (int s = 0; s < n_samples; ++s) {
      double u = rng.uniform(), v = rng.uniform();
      if (u + v > 1.0) {
        u = 1.0 - u;
        v = 1.0 - v;
      }
      const GeoPoint q = offset_point(apex, depth * (u * bx + v * cx),
                                      depth * (u * by + v * cy));
      counts[cell_from_point(q, level).packed()] += 1;
    }
    for (const auto& o : overlaps) {
      const auto it = counts.find(o.cell.packed());
      const double mc =
          it == counts.end() ? 0.0 : static_cast<double>(it->second) / n_samples;
      CHECK(std::fabs(o.fraction - mc) <= 0.02);
    }
    for (const auto& [id, n] : counts) {
      bool found = false;
      for (const auto& o : overlaps) found |= o.cell.packed() == id;
      if (static_cast<double>(n) / n_samples > 0.02) CHECK(found);
    }
  }
}

TEST_CASE("argument validation") {
  CHECK_THROWS_AS(cell_from_point(make_geopoint(0, 0), 21), InvalidArgumentError);
  CHECK_THROWS_AS(cell_from_point(make_geopoint(0, 0), -1), InvalidArgumentError);
  CHECK_THROWS_AS(make_geopoint(2.0, 0.0), InvalidArgumentError);
  CHECK_THROWS_AS(make_geopoint(std::nan(""), 0.0), InvalidArgumentError);
  CHECK_THROWS_AS(k_nearest_cells(make_geopoint(0, 0), 5, 0), InvalidArgumentError);
  CHECK_THROWS_AS(
      cells_overlapping_triangle(make_geopoint(0, 0), 0, 0.0, 50, 5),
      InvalidArgumentError);
  CHECK_THROWS_AS(
      cells_overlapping_triangle(make_geopoint(0, 0), 0, 1.0, -5, 5),
      InvalidArgumentError);
  CHECK_THROWS_AS(make_level_config(12, 15), InvalidArgumentError);
  CHECK_THROWS_AS(make_level_config(13, 12), InvalidArgumentError);
  CHECK(make_level_config(12, 13).aerial_level == 13);
}

TEST_CASE("longitude normalization") {
  const GeoPoint p = make_geopoint(0.2, 3 * M_PI + 0.1);
  CHECK(p.lon == doctest::Approx(-M_PI + 0.1).epsilon(1e-12));
  CHECK(make_geopoint(0.0, M_PI).lon == doctest::Approx(-M_PI));
}
