#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <vector>

namespace geoloc {

inline constexpr double kEarthRadiusM = 6371008.8;
inline constexpr int kMaxCellLevel = 20;

// Latitude/longitude in radians. lat in [-pi/2, pi/2], lon normalized into
// [-pi, pi).
struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;
};

// Validates lat, normalizes lon.
GeoPoint make_geopoint(double lat_rad, double lon_rad);

// One cell of the cube-face quadtree over the sphere. Face planes use the
// gnomonic projection with a linear ST transform, so cells at a level are
// roughly (not exactly) equal in size.
//
// Packed form (unsigned 64-bit, little-endian when serialized):
//   bits 63-61 face, 60-56 level, 55-28 i, 27-0 j.
struct CellId {
  std::uint8_t face = 0;   // 0..5
  std::uint8_t level = 0;  // 0..20
  std::uint32_t i = 0;     // 0..2^level-1
  std::uint32_t j = 0;

  std::uint64_t packed() const {
    return (static_cast<std::uint64_t>(face) << 61) |
           (static_cast<std::uint64_t>(level) << 56) |
           (static_cast<std::uint64_t>(i) << 28) | static_cast<std::uint64_t>(j);
  }
  static CellId unpack(std::uint64_t bits);  // validates fields

  friend bool operator==(const CellId&, const CellId&) = default;
  friend std::strong_ordering operator<=>(const CellId& a, const CellId& b) {
    return a.packed() <=> b.packed();
  }
};

// Levels used by the pipeline: prototypes live at a coarser (or equal) level
// than aerial tiles. The gap must be in {0, 1, 2}.
struct LevelConfig {
  int prototype_level = 15;
  int aerial_level = 16;
};
LevelConfig make_level_config(int prototype_level, int aerial_level);

CellId cell_from_point(const GeoPoint& p, int level);
GeoPoint cell_center(const CellId& c);
CellId parent(const CellId& c, int target_level);
std::array<CellId, 4> children(const CellId& c);

double haversine_m(const GeoPoint& a, const GeoPoint& b);

// Mean great-circle edge length of cells at a level: the quadrature mean of
// the local edge arc over a face, divided by 2^level. Halves exactly per
// level.
double avg_edge_length_m(int level);

// k cells at `level` whose centers are nearest to p by haversine distance,
// ascending, ties broken by packed id. Returns fewer if the level has fewer
// cells than k.
std::vector<CellId> k_nearest_cells(const GeoPoint& p, int level, int k);

// All cells at `level` whose center lies within `radius_m` of p.
// Sorted by packed id.
std::vector<CellId> cells_within_radius(const GeoPoint& p, int level,
                                        double radius_m);

struct CellOverlap {
  CellId cell;
  double fraction;  // (triangle ∩ cell area) / triangle area
};

// Cells intersecting the camera-frustum triangle: apex plus two rays of
// half-angle fov/2 at range depth_m, in the local tangent plane. Fractions
// come from a deterministic 32x32 stratified grid over the triangle and sum
// to 1 exactly. Sorted by packed id.
std::vector<CellOverlap> cells_overlapping_triangle(const GeoPoint& apex,
                                                    double heading_rad,
                                                    double fov_rad,
                                                    double depth_m, int level);

// Tangent-plane step: moves east_m/north_m meters from p (local azimuthal
// approximation; valid for offsets much smaller than the Earth radius).
GeoPoint offset_point(const GeoPoint& p, double east_m, double north_m);

// Continuous position of p on its cube face, linear ST in [0, 1]^2.
struct FaceCoords {
  int face;
  double s, t;
};
FaceCoords face_coords(const GeoPoint& p);

// Cell holding the center of the (possibly out-of-range) integer coordinate
// (i, j) on `face`, folded across face boundaries through the extended
// gnomonic plane. In-range coordinates map to themselves.
CellId folded_cell(int face, int level, std::int64_t i, std::int64_t j);

}  // namespace geoloc
