#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "cellgrid.hpp"
#include "encoder.hpp"
#include "world.hpp"

namespace geoloc {

enum class GroundInterpMode { kNearest, kFrustumWeights, kFrustumAllCells };
enum class AerialInterpMode { kNearest, kBilinear };

struct LossConfig {
  double alpha = 0.2;
  double beta = 100.0;
  double lambda = 0.2;
  // Prototype cells whose center is within this radius of the query are
  // excluded from the negative set. <= 0 means "resolve to 2 x
  // avg_edge_length(prototype level)" at the call site.
  double neg_exclusion_radius_m = 0.0;
  // Block prototype gradients on both aerial-prototype terms so prototypes
  // aggregate ground-view information only.
  bool detach_ap_edge = true;
  GroundInterpMode ground_interp = GroundInterpMode::kFrustumWeights;
  AerialInterpMode aerial_interp = AerialInterpMode::kBilinear;
  bool renormalize_interp = false;
  // Edge toggles for the loss-term ablation.
  bool edge_ga = true;
  bool edge_gp = true;
  bool edge_ap = true;
  double frustum_depth_m = kFrustumDepthM;
};

double resolve_exclusion_radius(const LossConfig& config, int prototype_level);

// gamma(s) = exp(-alpha (s - lambda)), strictly decreasing;
// delta(s) = exp(beta (s - lambda)), strictly increasing.
double gamma_term(double s, double alpha, double lambda);
double delta_term(double s, double beta, double lambda);

// (1/alpha) log(1 + g(zq.za) + g(zq.zp) + g(za.zp))
double positive_term(std::span<const double> zq, std::span<const double> za,
                     std::span<const double> zp, double alpha, double lambda);

// (1/beta) log(1 + sum d(batch sims) + sum d(prototype sims)), summed in the
// given order.
double negative_term(std::span<const double> batch_sims,
                     std::span<const double> prototype_sims, double beta,
                     double lambda);

// Negative-set predicate: a prototype cell belongs to N(i) iff its center is
// strictly farther than the radius from the query.
bool in_negative_set(const GeoPoint& query, const GeoPoint& cell_center_point,
                     double radius_m);

// Sparse simplex weights over prototype cells.
struct InterpolationWeights {
  std::vector<std::pair<CellId, double>> weights;  // sorted by id, sum 1
  bool averaged = false;  // multi-positive support (frustum_all_cells)
};

InterpolationWeights frustum_weights(const GeoPoint& location, double heading,
                                     double fov, double depth_m,
                                     int prototype_level,
                                     GroundInterpMode mode);

InterpolationWeights bilinear_weights(const GeoPoint& tile_center,
                                      int prototype_level,
                                      AerialInterpMode mode);

// --- Multi-similarity loss over embeddings -------------------------------

// Read-only view of the prototype table (values row-major count x dim,
// cell ids sorted ascending, centers aligned with ids).
struct PrototypeSetView {
  const double* values = nullptr;
  const std::uint64_t* cell_ids = nullptr;
  const GeoPoint* centers = nullptr;
  std::uint32_t count = 0;
  int dim = 0;
  int level = 0;

  // Position of a packed cell id, or count when absent.
  std::uint32_t find(std::uint64_t packed) const;
};

struct EmbeddingExample {
  std::vector<double> zq, za;  // unit norm, dim each
  // Positive supports as positions into the prototype set, weights sum to 1.
  std::vector<std::pair<std::uint32_t, double>> ground_support;
  bool ground_averaged = false;
  std::vector<std::pair<std::uint32_t, double>> aerial_support;
  // Prototype positions excluded from N(i), ascending.
  std::vector<std::uint32_t> excluded;
};

struct MsLossGrads {
  double loss = 0.0, pos = 0.0, neg = 0.0;
  std::vector<std::vector<double>> dzq, dza;
  std::vector<double> dproto;           // dense count x dim
  std::vector<std::uint32_t> touched;   // positions with nonzero rows, ascending
};

// Loss and exact gradients for a batch of embeddings. Prototype negative
// sums are evaluated per contiguous shard range and combined in ascending
// shard order; every reduction has a fixed order so the result is a pure
// function of the inputs and the shard layout.
MsLossGrads ms_loss_embeddings(
    std::span<const EmbeddingExample> batch, const PrototypeSetView& protos,
    const LossConfig& config,
    std::span<const std::pair<std::uint32_t, std::uint32_t>> shard_ranges);

// Per-query prototype-negative partial sums, one entry per shard: the
// delta-sums over the shard's prototypes in N(i) for the query and aerial
// sides. Combining 1 + batch + partials in ascending shard order reproduces
// the monolithic negative term.
struct NegativePartials {
  std::vector<double> query_side;   // one per shard
  std::vector<double> aerial_side;
};
NegativePartials sharded_negative_sums(
    std::span<const double> zq, std::span<const double> za,
    const PrototypeSetView& protos, std::span<const std::uint32_t> excluded,
    const LossConfig& config,
    std::span<const std::pair<std::uint32_t, std::uint32_t>> shard_ranges);

// --- Batch-level wrapper over dataset records -----------------------------

struct BatchItem {
  const DatasetRecord* record = nullptr;
  // Aerial observation for this step (augmentation resamples it per epoch);
  // defaults to the record's stored pairing.
  const AerialObservation* aerial = nullptr;
};

struct EncoderGrads {
  std::vector<double> dw1, db1, dw2, db2;
  void init_like(const EncoderParams& p);
  void add(const GradientBundle& g);
};

struct MsBatchResult {
  double loss = 0.0, pos = 0.0, neg = 0.0;
  EncoderGrads ground_grads, aerial_grads;
  std::vector<double> dproto;
  std::vector<std::uint32_t> touched;
};

// Pose-derived pieces of an example that do not change across epochs; the
// trainer precomputes them once per record.
struct ExampleGeometry {
  std::vector<std::pair<std::uint32_t, double>> ground_support;
  bool ground_averaged = false;
  std::vector<std::uint32_t> excluded;
};
ExampleGeometry build_example_geometry(const DatasetRecord& record,
                                       const PrototypeSetView& protos,
                                       const LossConfig& config);

MsBatchResult ms_loss_batch(
    std::span<const BatchItem> batch, const EncoderParams& ground_encoder,
    const EncoderParams& aerial_encoder, const PrototypeSetView& protos,
    const LossConfig& config,
    std::span<const std::pair<std::uint32_t, std::uint32_t>> shard_ranges,
    std::span<const ExampleGeometry* const> cached_geometry = {});

// Support-building helpers (the trainer precomputes these per record).
std::vector<std::pair<std::uint32_t, double>> map_support(
    const InterpolationWeights& w, const PrototypeSetView& protos,
    bool require_all);
std::vector<std::uint32_t> excluded_positions(const GeoPoint& query,
                                              const PrototypeSetView& protos,
                                              double radius_m);

// --- Baseline losses -------------------------------------------------------

// Decoupled bidirectional InfoNCE with label smoothing; the positive logit
// is excluded from the log-denominator. Mean over both directions and the
// batch.
struct PairLossGrads {
  double loss = 0.0;
  std::vector<std::vector<double>> dzq, dza;
};
PairLossGrads infonce_bidirectional(
    std::span<const std::vector<double>> zq,
    std::span<const std::vector<double>> za, double tau,
    double label_smoothing);

struct ProtoLossGrads {
  double loss = 0.0;
  std::vector<double> dquery;
  std::vector<double> dproto;  // dense count x dim
  double dtemperature = 0.0;
};

// Cross-entropy against spatially smoothed targets q_j ~ exp(-d_j / tau_m).
ProtoLossGrads haversine_smoothed_ce(std::span<const double> query,
                                     const PrototypeSetView& protos,
                                     const GeoPoint& gt_location, double tau_m,
                                     double temperature);

// Sum of cross-entropies over ancestor levels; probabilities aggregated via
// parent(). `levels` descends from the prototype level in steps of 2.
ProtoLossGrads hierarchical_ce(std::span<const double> query,
                               const PrototypeSetView& protos,
                               const CellId& gt_cell,
                               std::span<const int> levels, double temperature);

ProtoLossGrads cosface_loss(std::span<const double> query,
                            const PrototypeSetView& protos,
                            std::uint32_t gt_position, double margin,
                            double scale);

}  // namespace geoloc
