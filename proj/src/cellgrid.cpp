#include "cellgrid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <unordered_set>

#include "errors.hpp"

namespace geoloc {
namespace {

struct Vec3 {
  double x, y, z;
};

Vec3 latlon_to_xyz(const GeoPoint& p) {
  const double cl = std::cos(p.lat);
  return {cl * std::cos(p.lon), cl * std::sin(p.lon), std::sin(p.lat)};
}

GeoPoint xyz_to_latlon(const Vec3& v) {
  const double lat = std::atan2(v.z, std::hypot(v.x, v.y));
  double lon = std::atan2(v.y, v.x);
  if (lon >= M_PI) lon -= 2.0 * M_PI;
  return {lat, lon};
}

// Face selection: axis of the largest |component|, +3 when negative.
int face_of(const Vec3& p) {
  const double ax = std::fabs(p.x), ay = std::fabs(p.y), az = std::fabs(p.z);
  int axis;
  if (ax >= ay && ax >= az)
    axis = 0;
  else if (ay >= az)
    axis = 1;
  else
    axis = 2;
  const double comp = axis == 0 ? p.x : axis == 1 ? p.y : p.z;
  return axis + (comp < 0 ? 3 : 0);
}

void face_xyz_to_uv(int face, const Vec3& p, double& u, double& v) {
  switch (face) {
    case 0: u = p.y / p.x; v = p.z / p.x; break;
    case 1: u = -p.x / p.y; v = p.z / p.y; break;
    case 2: u = -p.x / p.z; v = -p.y / p.z; break;
    case 3: u = p.z / p.x; v = p.y / p.x; break;
    case 4: u = p.z / p.y; v = -p.x / p.y; break;
    default: u = -p.y / p.z; v = -p.x / p.z; break;
  }
}

Vec3 face_uv_to_xyz(int face, double u, double v) {
  switch (face) {
    case 0: return {1.0, u, v};
    case 1: return {-u, 1.0, v};
    case 2: return {-u, -v, 1.0};
    case 3: return {-1.0, -v, -u};
    case 4: return {v, -1.0, -u};
    default: return {v, u, -1.0};
  }
}

std::uint32_t st_to_index(double s, int level) {
  const double n = static_cast<double>(std::uint64_t{1} << level);
  auto idx = static_cast<std::int64_t>(std::floor(s * n));
  idx = std::clamp<std::int64_t>(idx, 0, static_cast<std::int64_t>(n) - 1);
  return static_cast<std::uint32_t>(idx);
}

CellId cell_from_xyz(const Vec3& p, int level) {
  const int face = face_of(p);
  double u, v;
  face_xyz_to_uv(face, p, u, v);
  CellId c;
  c.face = static_cast<std::uint8_t>(face);
  c.level = static_cast<std::uint8_t>(level);
  c.i = st_to_index((u + 1.0) / 2.0, level);
  c.j = st_to_index((v + 1.0) / 2.0, level);
  return c;
}

void check_level(int level) {
  if (level < 0 || level > kMaxCellLevel)
    throw InvalidArgumentError("cell level out of range 0..20: " +
                               std::to_string(level));
}

// Center of the (possibly out-of-range) integer cell (i', j') on a face,
// projected through the extended gnomonic plane and re-resolved to the real
// cell. This is how ring search walks across face boundaries.
CellId virtual_cell(int face, int level, std::int64_t vi, std::int64_t vj) {
  const double n = static_cast<double>(std::uint64_t{1} << level);
  const double u = 2.0 * ((static_cast<double>(vi) + 0.5) / n) - 1.0;
  const double v = 2.0 * ((static_cast<double>(vj) + 0.5) / n) - 1.0;
  return cell_from_xyz(face_uv_to_xyz(face, u, v), level);
}

// Quadrature mean over a face of the local edge arc per ST unit. With the
// linear transform u = 2s-1 the u-direction derivative of the projected
// point has norm sqrt(1+v^2)/(1+u^2+v^2); the v direction is symmetric.
double mean_edge_factor() {
  static const double factor = [] {
    constexpr int n = 1024;
    double total = 0.0;
    for (int a = 0; a < n; ++a) {
      const double u = -1.0 + 2.0 * (a + 0.5) / n;
      double row = 0.0;
      for (int b = 0; b < n; ++b) {
        const double v = -1.0 + 2.0 * (b + 0.5) / n;
        row += std::sqrt(1.0 + v * v) / (1.0 + u * u + v * v);
      }
      total += row / n;
    }
    return total / n;
  }();
  return factor;
}

double cells_at_level(int level) {
  return 6.0 * std::pow(4.0, level);
}

}  // namespace

GeoPoint make_geopoint(double lat_rad, double lon_rad) {
  if (!std::isfinite(lat_rad) || !std::isfinite(lon_rad))
    throw InvalidArgumentError("non-finite coordinates");
  if (lat_rad < -M_PI / 2 - 1e-12 || lat_rad > M_PI / 2 + 1e-12)
    throw InvalidArgumentError("latitude out of [-pi/2, pi/2]");
  lat_rad = std::clamp(lat_rad, -M_PI / 2, M_PI / 2);
  double lon = std::fmod(lon_rad, 2.0 * M_PI);
  if (lon < -M_PI) lon += 2.0 * M_PI;
  if (lon >= M_PI) lon -= 2.0 * M_PI;
  return {lat_rad, lon};
}

CellId CellId::unpack(std::uint64_t bits) {
  CellId c;
  c.face = static_cast<std::uint8_t>(bits >> 61);
  c.level = static_cast<std::uint8_t>((bits >> 56) & 0x1f);
  c.i = static_cast<std::uint32_t>((bits >> 28) & 0x0fffffff);
  c.j = static_cast<std::uint32_t>(bits & 0x0fffffff);
  if (c.face > 5 || c.level > kMaxCellLevel)
    throw InvalidArgumentError("invalid packed cell id");
  const std::uint64_t n = std::uint64_t{1} << c.level;
  if (c.i >= n || c.j >= n)
    throw InvalidArgumentError("packed cell id has i/j out of level range");
  return c;
}

LevelConfig make_level_config(int prototype_level, int aerial_level) {
  check_level(prototype_level);
  check_level(aerial_level);
  const int gap = aerial_level - prototype_level;
  if (gap < 0 || gap > 2)
    throw InvalidArgumentError("aerial level must be prototype level + {0,1,2}");
  return {prototype_level, aerial_level};
}

CellId cell_from_point(const GeoPoint& p, int level) {
  check_level(level);
  return cell_from_xyz(latlon_to_xyz(p), level);
}

GeoPoint cell_center(const CellId& c) {
  const double n = static_cast<double>(std::uint64_t{1} << c.level);
  const double u = 2.0 * ((c.i + 0.5) / n) - 1.0;
  const double v = 2.0 * ((c.j + 0.5) / n) - 1.0;
  const Vec3 q = face_uv_to_xyz(c.face, u, v);
  const double norm = std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z);
  return xyz_to_latlon({q.x / norm, q.y / norm, q.z / norm});
}

CellId parent(const CellId& c, int target_level) {
  if (target_level > c.level)
    throw InvalidArgumentError("parent level must not exceed cell level");
  check_level(target_level);
  const int shift = c.level - target_level;
  return {c.face, static_cast<std::uint8_t>(target_level), c.i >> shift,
          c.j >> shift};
}

std::array<CellId, 4> children(const CellId& c) {
  if (c.level >= kMaxCellLevel)
    throw InvalidArgumentError("cannot split a level-20 cell");
  const auto lv = static_cast<std::uint8_t>(c.level + 1);
  return {CellId{c.face, lv, 2 * c.i, 2 * c.j},
          CellId{c.face, lv, 2 * c.i, 2 * c.j + 1},
          CellId{c.face, lv, 2 * c.i + 1, 2 * c.j},
          CellId{c.face, lv, 2 * c.i + 1, 2 * c.j + 1}};
}

double haversine_m(const GeoPoint& a, const GeoPoint& b) {
  const double sdlat = std::sin((b.lat - a.lat) / 2.0);
  const double sdlon = std::sin((b.lon - a.lon) / 2.0);
  const double h =
      sdlat * sdlat + std::cos(a.lat) * std::cos(b.lat) * sdlon * sdlon;
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

double avg_edge_length_m(int level) {
  check_level(level);
  return mean_edge_factor() * 2.0 * kEarthRadiusM /
         static_cast<double>(std::uint64_t{1} << level);
}

namespace {

struct RankedCell {
  double dist;
  std::uint64_t id;
  CellId cell;
  bool operator<(const RankedCell& o) const {
    return dist != o.dist ? dist < o.dist : id < o.id;
  }
};

// Collects the Chebyshev ring at radius r around (i0, j0), folded across
// face boundaries. Radius 0 is the center cell itself.
void collect_ring(const CellId& center, int r,
                  std::unordered_set<std::uint64_t>& seen,
                  std::vector<CellId>& out) {
  const auto push = [&](std::int64_t vi, std::int64_t vj) {
    const CellId c = virtual_cell(center.face, center.level, vi, vj);
    if (seen.insert(c.packed()).second) out.push_back(c);
  };
  const std::int64_t i0 = center.i, j0 = center.j;
  if (r == 0) {
    push(i0, j0);
    return;
  }
  for (std::int64_t d = -r; d <= r; ++d) {
    push(i0 + d, j0 - r);
    push(i0 + d, j0 + r);
  }
  for (std::int64_t d = -r + 1; d <= r - 1; ++d) {
    push(i0 - r, j0 + d);
    push(i0 + r, j0 + d);
  }
}

// Conservative lower bound on the center distance of any cell in ring r.
// The local edge arc factor is at least sqrt(2)/3 (face corners); the slack
// absorbs face-boundary folding.
double ring_min_distance_m(int level, int r) {
  if (r <= 1) return 0.0;
  const double min_edge =
      0.45 * 2.0 * kEarthRadiusM / static_cast<double>(std::uint64_t{1} << level);
  return (r - 1) * min_edge;
}

std::vector<RankedCell> ranked_neighborhood(const GeoPoint& p, int level,
                                            int want,
                                            double radius_m = -1.0) {
  std::vector<RankedCell> ranked;
  const double total = cells_at_level(level);

  if (total <= 32768.0) {
    // Small levels: exhaustive scan.
    const auto n = std::uint32_t{1} << level;
    for (std::uint8_t f = 0; f < 6; ++f)
      for (std::uint32_t i = 0; i < n; ++i)
        for (std::uint32_t j = 0; j < n; ++j) {
          const CellId c{f, static_cast<std::uint8_t>(level), i, j};
          ranked.push_back({haversine_m(p, cell_center(c)), c.packed(), c});
        }
    std::sort(ranked.begin(), ranked.end());
    return ranked;
  }

  const CellId start = cell_from_point(p, level);
  std::unordered_set<std::uint64_t> seen;
  std::vector<CellId> ring;
  const int max_ring = 1 << std::min(level, 14);
  for (int r = 0; r <= max_ring; ++r) {
    ring.clear();
    collect_ring(start, r, seen, ring);
    for (const CellId& c : ring)
      ranked.push_back({haversine_m(p, cell_center(c)), c.packed(), c});
    std::sort(ranked.begin(), ranked.end());

    if (radius_m >= 0.0) {
      if (ring_min_distance_m(level, r + 1) > radius_m) break;
    } else if (static_cast<int>(ranked.size()) >= want &&
               ring_min_distance_m(level, r + 1) > ranked[want - 1].dist) {
      break;
    }
  }
  return ranked;
}

}  // namespace

std::vector<CellId> k_nearest_cells(const GeoPoint& p, int level, int k) {
  check_level(level);
  if (k < 1) throw InvalidArgumentError("k must be >= 1");
  auto ranked = ranked_neighborhood(p, level, k);
  std::vector<CellId> out;
  out.reserve(std::min<std::size_t>(k, ranked.size()));
  for (const auto& rc : ranked) {
    out.push_back(rc.cell);
    if (static_cast<int>(out.size()) == k) break;
  }
  return out;
}

std::vector<CellId> cells_within_radius(const GeoPoint& p, int level,
                                        double radius_m) {
  check_level(level);
  if (radius_m < 0) throw InvalidArgumentError("radius must be >= 0");
  auto ranked = ranked_neighborhood(p, level, 1, radius_m);
  std::vector<CellId> out;
  for (const auto& rc : ranked)
    if (rc.dist <= radius_m) out.push_back(rc.cell);
  std::sort(out.begin(), out.end());
  return out;
}

FaceCoords face_coords(const GeoPoint& p) {
  const Vec3 q = latlon_to_xyz(p);
  const int face = face_of(q);
  double u, v;
  face_xyz_to_uv(face, q, u, v);
  return {face, (u + 1.0) / 2.0, (v + 1.0) / 2.0};
}

CellId folded_cell(int face, int level, std::int64_t i, std::int64_t j) {
  check_level(level);
  if (face < 0 || face > 5) throw InvalidArgumentError("face out of range");
  return virtual_cell(face, level, i, j);
}

GeoPoint offset_point(const GeoPoint& p, double east_m, double north_m) {
  const double lat = p.lat + north_m / kEarthRadiusM;
  const double coslat = std::max(std::cos(p.lat), 1e-9);
  const double lon = p.lon + east_m / (kEarthRadiusM * coslat);
  return make_geopoint(std::clamp(lat, -M_PI / 2, M_PI / 2), lon);
}

std::vector<CellOverlap> cells_overlapping_triangle(const GeoPoint& apex,
                                                    double heading_rad,
                                                    double fov_rad,
                                                    double depth_m, int level) {
  check_level(level);
  if (!(fov_rad > 0.0 && fov_rad < M_PI))
    throw InvalidArgumentError("fov must be in (0, pi)");
  if (!(depth_m > 0.0)) throw InvalidArgumentError("depth must be > 0");

  // Triangle vertices in the tangent plane (x east, y north); heading is
  // clockwise from north.
  const auto dir = [&](double h) {
    return std::pair<double, double>{std::sin(h), std::cos(h)};
  };
  const auto [bx, by] = dir(heading_rad - fov_rad / 2.0);
  const auto [cx, cy] = dir(heading_rad + fov_rad / 2.0);

  constexpr int kGrid = 32;
  std::vector<std::pair<std::uint64_t, int>> counts;
  const auto bump = [&](std::uint64_t id) {
    for (auto& [cid, n] : counts)
      if (cid == id) {
        ++n;
        return;
      }
    counts.emplace_back(id, 1);
  };

  for (int a = 0; a < kGrid; ++a) {
    for (int b = 0; b < kGrid; ++b) {
      double u = (a + 0.5) / kGrid;
      double v = (b + 0.5) / kGrid;
      if (u + v > 1.0) {  // fold the square onto the triangle
        u = 1.0 - u;
        v = 1.0 - v;
      }
      const double ex = depth_m * (u * bx + v * cx);
      const double ny = depth_m * (u * by + v * cy);
      bump(cell_from_point(offset_point(apex, ex, ny), level).packed());
    }
  }

  std::sort(counts.begin(), counts.end());
  std::vector<CellOverlap> out;
  out.reserve(counts.size());
  for (const auto& [id, n] : counts)
    out.push_back({CellId::unpack(id),
                   static_cast<double>(n) / (kGrid * kGrid)});
  return out;
}

}  // namespace geoloc
