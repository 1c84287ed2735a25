#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "encoder.hpp"
#include "loss.hpp"
#include "world.hpp"

namespace geoloc {

// Trainable class prototypes: one unit vector per prototype-level cell that
// holds at least one training place. Rows are kept in packed-id order; every
// optimizer step re-projects touched rows to unit norm.
struct PrototypeTable {
  int level = 0;
  int dim = 0;
  std::vector<std::uint64_t> cell_ids;  // sorted ascending
  std::vector<GeoPoint> centers;
  std::vector<double> values;  // count x dim

  std::uint32_t count() const {
    return static_cast<std::uint32_t>(cell_ids.size());
  }
  PrototypeSetView view() const {
    return {values.data(), cell_ids.data(), centers.data(), count(), dim, level};
  }
  std::optional<std::uint32_t> find(std::uint64_t packed) const;
};

PrototypeTable init_prototype_table(const Dataset& dataset, int dim,
                                    std::uint64_t seed);

// GPRT checkpoint.
void save_prototypes(const PrototypeTable& table, const std::string& path);
PrototypeTable load_prototypes(const std::string& path);

// Contiguous partition of prototype positions into d shards whose sizes
// differ by at most one.
struct ShardAssignment {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> ranges;
};
ShardAssignment shard_prototypes(std::uint32_t n_prototypes, std::uint32_t d);

struct TrainConfig {
  std::uint32_t steps = 5000;
  std::uint32_t batch_size = 256;
  double lr_encoders = 0.003;
  double lr_prototypes = 0.01;
  double lr_floor = 1e-6;  // cosine schedule floor
  std::uint64_t seed = 0;
  std::uint32_t shard_count = 1;
  int embedding_dim = 64;
  int encoder_hidden = 0;  // 0 -> 2 * embedding_dim
  LossConfig loss;
  // ms | infonce | haversine | hierarchical | cosface
  std::string loss_kind = "ms";
  std::uint32_t checkpoint_every = 0;
  std::string checkpoint_dir;
  // baseline hyperparameters
  double infonce_tau = 1.0 / 36.0;
  double infonce_label_smoothing = 0.1;
  double haversine_tau_m = 200.0;
  double baseline_init_temperature = 0.01;
  int hier_num_levels = 4;
  double cosface_margin = 0.35;
  double cosface_scale = 64.0;
};

double cosine_lr(double lr0, double floor, std::uint64_t step,
                 std::uint64_t total_steps);

struct AdamMoments {
  std::vector<double> m, v;
  std::uint64_t t = 0;
  void init(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    t = 0;
  }
};

struct EncoderOptState {
  AdamMoments w1, b1, w2, b2;
  void init_like(const EncoderParams& p) {
    w1.init(p.w1.size());
    b1.init(p.b1.size());
    w2.init(p.w2.size());
    b2.init(p.b2.size());
  }
};

// Per-prototype Adam rows, allocated on first touch.
struct ProtoOptState {
  struct Row {
    std::vector<double> m, v;
    std::uint64_t t = 0;
  };
  std::vector<std::unique_ptr<Row>> rows;
};

struct TrainState {
  EncoderParams ground_encoder, aerial_encoder;
  PrototypeTable prototypes;
  EncoderOptState ground_opt, aerial_opt;
  ProtoOptState proto_opt;
  double temperature = 0.01;  // learned by the classification baselines
  AdamMoments temperature_opt;
  std::uint64_t step = 0;
};

struct StepMetrics {
  std::uint64_t step = 0;
  double loss = 0.0, pos = 0.0, neg = 0.0;
  double lr_enc = 0.0, lr_proto = 0.0;
  double grad_norm_enc = 0.0, grad_norm_proto = 0.0;
};

TrainState init_train_state(const Dataset& dataset, const TrainConfig& config);

// One optimizer step on a batch of (record, current aerial pairing) items.
// `cached_geometry`, when nonempty, is aligned with the batch and skips the
// per-example frustum/exclusion recomputation.
StepMetrics train_step(TrainState& state, std::span<const BatchItem> batch,
                       const TrainConfig& config,
                       std::span<const ExampleGeometry* const> cached_geometry = {});

struct TrainOutput {
  TrainState state;
  std::vector<StepMetrics> history;
  double final_validation_loss = 0.0;
};

// Full loop: seeded per-epoch shuffling, per-epoch aerial augmentation
// resampling (offset <= 80 m * scale, fresh rotation), cosine schedules and
// optional periodic checkpointing. A pure function of (dataset, config).
TrainOutput train(const Dataset& dataset, const WorldModel& world,
                  const TrainConfig& config);

// Loss of the current model over the test-era records with their stored
// aerial pairings.
double validation_loss(const TrainState& state, const Dataset& dataset,
                       const TrainConfig& config);

void write_training_report(const std::vector<StepMetrics>& history,
                           const std::string& path);

}  // namespace geoloc
