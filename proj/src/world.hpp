#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cellgrid.hpp"
#include "rng.hpp"

namespace geoloc {

// Synthetic stand-in for the street-level / aerial imagery pipeline: a seeded
// latent appearance field over the sphere plus fixed observation projections.
// All distances tagged "paper-scale" below are multiplied by `scale`, which
// maps the method's native constants (40 m pano spacing, 80 m tile offset,
// 50 m frustum depth, 153.6 m tiles) onto benchmarks that run at coarser cell
// levels.
struct WorldConfig {
  GeoPoint region_center{};
  double region_radius_m = 60000.0;
  int latent_dim = 32;  // first half regional (low-frequency), second local
  int n_low_freq = 24;  // cosines per regional coordinate
  int n_high_freq = 24; // cosines per local coordinate
  int ground_feature_dim = 96;
  int aerial_feature_dim = 80;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
  double scale = 1.0;
};

// Paper-scale constants (meters before scaling).
inline constexpr double kPanoSpacingM = 40.0;
inline constexpr double kMaxAerialOffsetM = 80.0;
inline constexpr double kFrustumDepthM = 50.0;
inline constexpr double kTileSideM = 153.6;  // 256 px at 60 cm/px
inline constexpr double kGroundDepthsM[3] = {10.0, 25.0, 45.0};
inline constexpr double kMinFovRad = 45.0 * M_PI / 180.0;
inline constexpr double kMaxFovRad = 75.0 * M_PI / 180.0;

struct FourierTerm {
  double fx, fy, fz;  // frequency vector, radians^-1 on the unit sphere
  double phase;
};

struct WorldModel {
  WorldConfig config;
  // banks[c] holds the cosine mixture for latent coordinate c.
  std::vector<std::vector<FourierTerm>> banks;
  std::vector<double> amplitude;  // per coordinate
  std::vector<double> w_ground;   // ground_feature_dim x (3*latent_dim + 2)
  std::vector<double> w_aerial;   // aerial_feature_dim x latent_dim
};

WorldModel generate_world(const WorldConfig& config);

std::vector<double> latent_field(const WorldModel& world, const GeoPoint& p);

struct GroundObservation {
  std::vector<float> features;  // ground_feature_dim
  GeoPoint location{};
  double heading = 0.0;  // radians, clockwise from north
  double fov = kMinFovRad;
  std::uint8_t epoch = 0;  // 0 train-era, 1 test-era
};

struct AerialObservation {
  std::vector<float> features;  // aerial_feature_dim
  GeoPoint tile_center{};
  double rotation = 0.0;
  double offset_m = 0.0;  // displacement from the paired query, metadata
};

GroundObservation sample_ground_view(const WorldModel& world,
                                     const GeoPoint& location, double heading,
                                     double fov, Rng& rng);

AerialObservation sample_aerial_tile(const WorldModel& world,
                                     const GeoPoint& tile_center,
                                     double rotation, Rng& rng);

// Urban/rural intensity field: uniform base plus Gaussian bumps whose centers
// are derived from the dataset seed.
struct DensitySpec {
  int n_bumps = 6;
  double bump_sigma_m = 5000.0;
  double bump_weight = 12.0;
};

// The bump centers generate_dataset derives from (config, spec, seed), and
// the intensity value at a point.
std::vector<GeoPoint> density_bump_centers(const WorldConfig& config,
                                           const DensitySpec& spec,
                                           std::uint64_t seed);
double density_value(const GeoPoint& p, std::span<const GeoPoint> bumps,
                     const DensitySpec& spec);

struct DatasetCounts {
  int train_places = 0;
  int test_places = 0;
};

struct DatasetRecord {
  GroundObservation ground;
  AerialObservation aerial;  // paired tile sampled at generation time
  CellId cell;               // prototype-level cell containing the location
  std::uint32_t place = 0;
};

struct Dataset {
  int prototype_level = 0;
  int ground_dim = 0;
  int aerial_dim = 0;
  std::vector<DatasetRecord> records;
  std::vector<std::uint32_t> train_indices;
  std::vector<std::uint32_t> test_indices;

  // Density index: train ground-view count per prototype cell, sorted by id.
  std::vector<std::pair<std::uint64_t, std::uint32_t>> cell_train_counts;

  std::uint32_t train_count_for_cell(std::uint64_t packed) const;
  void rebuild_indices();
};

// Places are drawn proportionally to the density field, kept at least
// 40 m * scale apart, and each yields 4 ground views at stratified headings
// with a paired aerial tile (offset <= 80 m * scale, random rotation).
// Test-era places are additionally restricted to prototype cells that hold
// at least one train-era place. Throws CapacityError when the spacing
// constraint makes a count unreachable.
Dataset generate_dataset(const WorldModel& world, const DensitySpec& density,
                         const DatasetCounts& counts, int prototype_level,
                         std::uint64_t seed);

// GWDS container (exact layout documented in README.md).
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace geoloc
