#include "train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "bytesio.hpp"
#include "errors.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace geoloc {
namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void adam_update(std::vector<double>& param, const std::vector<double>& grad,
                 AdamMoments& opt, double lr) {
  opt.t += 1;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(opt.t));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(opt.t));
  for (std::size_t k = 0; k < param.size(); ++k) {
    const double g = grad[k];
    opt.m[k] = kAdamBeta1 * opt.m[k] + (1.0 - kAdamBeta1) * g;
    opt.v[k] = kAdamBeta2 * opt.v[k] + (1.0 - kAdamBeta2) * g * g;
    param[k] -= lr * (opt.m[k] / bc1) / (std::sqrt(opt.v[k] / bc2) + kAdamEps);
  }
}

double l2_norm_sq(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return acc;
}

int resolve_hidden(const TrainConfig& config) {
  return config.encoder_hidden > 0 ? config.encoder_hidden
                                   : 2 * config.embedding_dim;
}

}  // namespace

std::optional<std::uint32_t> PrototypeTable::find(std::uint64_t packed) const {
  const auto it = std::lower_bound(cell_ids.begin(), cell_ids.end(), packed);
  if (it == cell_ids.end() || *it != packed) return std::nullopt;
  return static_cast<std::uint32_t>(it - cell_ids.begin());
}

PrototypeTable init_prototype_table(const Dataset& dataset, int dim,
                                    std::uint64_t seed) {
  if (dim < 1) throw InvalidArgumentError("prototype dim must be >= 1");
  PrototypeTable table;
  table.level = dataset.prototype_level;
  table.dim = dim;
  table.cell_ids.reserve(dataset.cell_train_counts.size());
  for (const auto& [cell, n] : dataset.cell_train_counts)
    table.cell_ids.push_back(cell);  // already sorted
  table.centers.reserve(table.cell_ids.size());
  for (std::uint64_t id : table.cell_ids)
    table.centers.push_back(cell_center(CellId::unpack(id)));

  table.values.resize(table.cell_ids.size() * static_cast<std::size_t>(dim));
  Rng rng(derive_seed(seed, "prototypes"));
  for (std::size_t r = 0; r < table.cell_ids.size(); ++r) {
    double* row = table.values.data() + r * dim;
    double sq = 0.0;
    for (int c = 0; c < dim; ++c) {
      row[c] = rng.normal();
      sq += row[c] * row[c];
    }
    const double inv = 1.0 / std::sqrt(sq);
    for (int c = 0; c < dim; ++c) row[c] *= inv;
  }
  return table;
}

void save_prototypes(const PrototypeTable& table, const std::string& path) {
  ByteWriter w;
  w.magic("GPRT");
  w.u16(1);
  w.u8(static_cast<std::uint8_t>(table.level));
  w.u32(static_cast<std::uint32_t>(table.dim));
  w.u64(table.cell_ids.size());
  for (std::size_t r = 0; r < table.cell_ids.size(); ++r) {
    w.u64(table.cell_ids[r]);
    const double* row = table.values.data() + r * table.dim;
    for (int c = 0; c < table.dim; ++c) w.f32(static_cast<float>(row[c]));
  }
  w.write_file(path);
}

PrototypeTable load_prototypes(const std::string& path) {
  ByteReader rd = ByteReader::from_file(path);
  rd.expect_magic("GPRT", "prototype table");
  const std::uint16_t version = rd.u16();
  if (version != 1)
    throw FormatError("unsupported GPRT version " + std::to_string(version),
                      rd.offset() - 2);
  PrototypeTable table;
  table.level = rd.u8();
  table.dim = static_cast<int>(rd.u32());
  if (table.level > kMaxCellLevel || table.dim < 1)
    throw FormatError("invalid prototype header", rd.offset());
  const std::uint64_t count = rd.u64();
  table.cell_ids.reserve(count);
  table.values.resize(count * static_cast<std::size_t>(table.dim));
  for (std::uint64_t r = 0; r < count; ++r) {
    const std::uint64_t id = rd.u64();
    if (!table.cell_ids.empty() && id <= table.cell_ids.back())
      throw FormatError("prototype ids out of order", rd.offset() - 8);
    table.cell_ids.push_back(id);
    double* row = table.values.data() + r * table.dim;
    for (int c = 0; c < table.dim; ++c) row[c] = rd.f32();
  }
  rd.expect_end("prototype table");
  table.centers.reserve(count);
  for (std::uint64_t id : table.cell_ids)
    table.centers.push_back(cell_center(CellId::unpack(id)));
  return table;
}

ShardAssignment shard_prototypes(std::uint32_t n_prototypes, std::uint32_t d) {
  if (d < 1) throw InvalidArgumentError("shard count must be >= 1");
  if (d > n_prototypes)
    throw InvalidArgumentError("shard count exceeds prototype count");
  ShardAssignment out;
  const std::uint32_t base = n_prototypes / d;
  const std::uint32_t rem = n_prototypes % d;
  std::uint32_t begin = 0;
  for (std::uint32_t s = 0; s < d; ++s) {
    const std::uint32_t size = base + (s < rem ? 1 : 0);
    out.ranges.emplace_back(begin, begin + size);
    begin += size;
  }
  return out;
}

double cosine_lr(double lr0, double floor, std::uint64_t step,
                 std::uint64_t total_steps) {
  const double f = std::min(floor, lr0);
  if (total_steps <= 1) return lr0;
  const double x =
      static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return f + 0.5 * (lr0 - f) * (1.0 + std::cos(M_PI * std::min(1.0, x)));
}

TrainState init_train_state(const Dataset& dataset, const TrainConfig& config) {
  if (config.batch_size < 1)
    throw InvalidArgumentError("batch size must be >= 1");
  TrainState state;
  const int hidden = resolve_hidden(config);
  state.ground_encoder =
      init_encoder(dataset.ground_dim, hidden, config.embedding_dim,
                   derive_seed(config.seed, "ground-encoder"));
  state.aerial_encoder =
      init_encoder(dataset.aerial_dim, hidden, config.embedding_dim,
                   derive_seed(config.seed, "aerial-encoder"));
  state.prototypes =
      init_prototype_table(dataset, config.embedding_dim, config.seed);
  state.ground_opt.init_like(state.ground_encoder);
  state.aerial_opt.init_like(state.aerial_encoder);
  state.proto_opt.rows.resize(state.prototypes.count());
  state.temperature = config.baseline_init_temperature;
  state.temperature_opt.init(1);
  return state;
}

namespace {

void apply_encoder_update(EncoderParams& enc, EncoderOptState& opt,
                          const EncoderGrads& grads, double lr) {
  adam_update(enc.w1, grads.dw1, opt.w1, lr);
  adam_update(enc.b1, grads.db1, opt.b1, lr);
  adam_update(enc.w2, grads.dw2, opt.w2, lr);
  adam_update(enc.b2, grads.db2, opt.b2, lr);
}

// Sparse Adam on the touched prototype rows with per-row step counts,
// followed by the unit-norm projection.
void apply_prototype_update(PrototypeTable& table, ProtoOptState& opt,
                            const std::vector<double>& dproto,
                            const std::vector<std::uint32_t>& touched,
                            double lr) {
  const int dim = table.dim;
  for (std::uint32_t p : touched) {
    auto& row_ptr = opt.rows[p];
    if (!row_ptr) {
      row_ptr = std::make_unique<ProtoOptState::Row>();
      row_ptr->m.assign(dim, 0.0);
      row_ptr->v.assign(dim, 0.0);
    }
    ProtoOptState::Row& m = *row_ptr;
    m.t += 1;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(m.t));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(m.t));
    double* row = table.values.data() + static_cast<std::size_t>(p) * dim;
    const double* g = dproto.data() + static_cast<std::size_t>(p) * dim;
    double sq = 0.0;
    for (int c = 0; c < dim; ++c) {
      m.m[c] = kAdamBeta1 * m.m[c] + (1.0 - kAdamBeta1) * g[c];
      m.v[c] = kAdamBeta2 * m.v[c] + (1.0 - kAdamBeta2) * g[c] * g[c];
      row[c] -= lr * (m.m[c] / bc1) / (std::sqrt(m.v[c] / bc2) + kAdamEps);
      sq += row[c] * row[c];
    }
    if (sq <= 1e-24) throw NumericError("prototype collapsed to zero norm");
    const double inv = 1.0 / std::sqrt(sq);
    for (int c = 0; c < dim; ++c) row[c] *= inv;
  }
}

// Classification-baseline step: per-example loss of the query embedding
// against the full prototype set.
StepMetrics baseline_step(TrainState& state, std::span<const BatchItem> batch,
                          const TrainConfig& config, double lr_enc,
                          double lr_proto) {
  const PrototypeSetView view = state.prototypes.view();
  const int dim = view.dim;
  StepMetrics metrics;

  EncoderGrads ground_grads;
  ground_grads.init_like(state.ground_encoder);
  EncoderGrads aerial_grads;
  aerial_grads.init_like(state.aerial_encoder);
  std::vector<double> dproto(view.count * static_cast<std::size_t>(dim), 0.0);
  double dtemp = 0.0;
  double loss = 0.0;
  const bool uses_protos = config.loss_kind != "infonce";

  if (config.loss_kind == "infonce") {
    std::vector<std::vector<double>> zq(batch.size()), za(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const DatasetRecord& rec = *batch[i].record;
      const AerialObservation& aerial =
          batch[i].aerial ? *batch[i].aerial : rec.aerial;
      zq[i] = encode(state.ground_encoder, rec.ground.features);
      za[i] = encode(state.aerial_encoder, aerial.features);
    }
    const PairLossGrads g = infonce_bidirectional(
        zq, za, config.infonce_tau, config.infonce_label_smoothing);
    loss = g.loss;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const DatasetRecord& rec = *batch[i].record;
      const AerialObservation& aerial =
          batch[i].aerial ? *batch[i].aerial : rec.aerial;
      ground_grads.add(
          encode_backward(state.ground_encoder, rec.ground.features, g.dzq[i]));
      aerial_grads.add(
          encode_backward(state.aerial_encoder, aerial.features, g.dza[i]));
    }
  } else {
    std::vector<int> levels;
    if (config.loss_kind == "hierarchical") {
      for (int k = 0; k < config.hier_num_levels; ++k) {
        const int level = view.level - 2 * k;
        if (level < 0) break;
        levels.push_back(level);
      }
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const DatasetRecord& rec = *batch[i].record;
      const auto zq = encode(state.ground_encoder, rec.ground.features);
      ProtoLossGrads g;
      if (config.loss_kind == "haversine") {
        g = haversine_smoothed_ce(zq, view, rec.ground.location,
                                  config.haversine_tau_m, state.temperature);
      } else if (config.loss_kind == "hierarchical") {
        g = hierarchical_ce(zq, view, rec.cell, levels, state.temperature);
      } else if (config.loss_kind == "cosface") {
        const auto pos = state.prototypes.find(rec.cell.packed());
        if (!pos)
          throw CoverageError("no prototype for training cell " +
                              std::to_string(rec.cell.packed()));
        g = cosface_loss(zq, view, *pos, config.cosface_margin,
                         config.cosface_scale);
      } else {
        throw InvalidArgumentError("unknown loss kind: " + config.loss_kind);
      }
      loss += g.loss;
      dtemp += g.dtemperature;
      for (std::size_t k = 0; k < dproto.size(); ++k) dproto[k] += g.dproto[k];
      ground_grads.add(
          encode_backward(state.ground_encoder, rec.ground.features, g.dquery));
    }
  }

  if (!std::isfinite(loss)) throw NumericError("non-finite baseline loss");
  metrics.loss = loss;
  metrics.pos = loss;
  metrics.neg = 0.0;

  apply_encoder_update(state.ground_encoder, state.ground_opt, ground_grads,
                       lr_enc);
  if (config.loss_kind == "infonce")
    apply_encoder_update(state.aerial_encoder, state.aerial_opt, aerial_grads,
                         lr_enc);
  if (uses_protos) {
    std::vector<std::uint32_t> touched(view.count);
    for (std::uint32_t p = 0; p < view.count; ++p) touched[p] = p;
    apply_prototype_update(state.prototypes, state.proto_opt, dproto, touched,
                           lr_proto);
    std::vector<double> t{state.temperature}, gt{dtemp};
    adam_update(t, gt, state.temperature_opt, lr_enc);
    state.temperature = std::max(t[0], 1e-4);
  }
  return metrics;
}

}  // namespace

StepMetrics train_step(TrainState& state, std::span<const BatchItem> batch,
                       const TrainConfig& config,
                       std::span<const ExampleGeometry* const> cached_geometry) {
  const double lr_enc =
      cosine_lr(config.lr_encoders, config.lr_floor, state.step, config.steps);
  const double lr_proto =
      cosine_lr(config.lr_prototypes, config.lr_floor, state.step, config.steps);

  StepMetrics metrics;
  if (config.loss_kind == "ms") {
    const ShardAssignment shards = shard_prototypes(
        state.prototypes.count(),
        std::max<std::uint32_t>(
            1, std::min(config.shard_count, state.prototypes.count())));
    MsBatchResult res = ms_loss_batch(
        batch, state.ground_encoder, state.aerial_encoder,
        state.prototypes.view(), config.loss, shards.ranges, cached_geometry);
    metrics.loss = res.loss;
    metrics.pos = res.pos;
    metrics.neg = res.neg;
    double gsq = l2_norm_sq(res.ground_grads.dw1) +
                 l2_norm_sq(res.ground_grads.db1) +
                 l2_norm_sq(res.ground_grads.dw2) +
                 l2_norm_sq(res.ground_grads.db2) +
                 l2_norm_sq(res.aerial_grads.dw1) +
                 l2_norm_sq(res.aerial_grads.db1) +
                 l2_norm_sq(res.aerial_grads.dw2) +
                 l2_norm_sq(res.aerial_grads.db2);
    metrics.grad_norm_enc = std::sqrt(gsq);
    metrics.grad_norm_proto = std::sqrt(l2_norm_sq(res.dproto));

    apply_encoder_update(state.ground_encoder, state.ground_opt,
                         res.ground_grads, lr_enc);
    apply_encoder_update(state.aerial_encoder, state.aerial_opt,
                         res.aerial_grads, lr_enc);
    apply_prototype_update(state.prototypes, state.proto_opt, res.dproto,
                           res.touched, lr_proto);
  } else {
    metrics = baseline_step(state, batch, config, lr_enc, lr_proto);
  }

  metrics.step = state.step;
  metrics.lr_enc = lr_enc;
  metrics.lr_proto = lr_proto;
  state.step += 1;
  return metrics;
}

double validation_loss(const TrainState& state, const Dataset& dataset,
                       const TrainConfig& config) {
  if (dataset.test_indices.empty()) return 0.0;
  if (config.loss_kind != "ms")
    throw InvalidArgumentError("validation loss implemented for the ms loss");
  double total = 0.0;
  std::size_t n_batches = 0;
  std::vector<BatchItem> batch;
  const ShardAssignment shards = shard_prototypes(
      state.prototypes.count(),
      std::max<std::uint32_t>(
          1, std::min(config.shard_count, state.prototypes.count())));
  for (std::size_t k = 0; k < dataset.test_indices.size();
       k += config.batch_size) {
    batch.clear();
    const std::size_t hi =
        std::min(dataset.test_indices.size(), k + config.batch_size);
    for (std::size_t r = k; r < hi; ++r)
      batch.push_back({&dataset.records[dataset.test_indices[r]], nullptr});
    const MsBatchResult res =
        ms_loss_batch(batch, state.ground_encoder, state.aerial_encoder,
                      state.prototypes.view(), config.loss, shards.ranges);
    total += res.loss / static_cast<double>(batch.size());
    n_batches += 1;
  }
  return total / static_cast<double>(n_batches);
}

TrainOutput train(const Dataset& dataset, const WorldModel& world,
                  const TrainConfig& config) {
  if (dataset.train_indices.empty())
    throw InvalidArgumentError("dataset has no training records");
  TrainOutput out;
  out.state = init_train_state(dataset, config);

  // Every training place must be covered by the table (it is built from the
  // dataset, so a miss indicates an inconsistent dataset).
  for (std::uint32_t idx : dataset.train_indices)
    if (!out.state.prototypes.find(dataset.records[idx].cell.packed()))
      throw CoverageError("training place without a prototype cell");

  const std::size_t n_train = dataset.train_indices.size();
  std::vector<std::uint32_t> order(dataset.train_indices);
  std::vector<AerialObservation> aug(n_train);
  std::vector<BatchItem> batch;
  std::vector<const ExampleGeometry*> batch_geometry;
  std::uint64_t epoch = 0;
  std::size_t cursor = n_train;  // forces a reshuffle on the first step

  // Frustum supports and exclusion sets per train record, fixed for the run.
  std::vector<ExampleGeometry> geometry;
  if (config.loss_kind == "ms") {
    geometry.resize(n_train);
    const PrototypeSetView view = out.state.prototypes.view();
    parallel_for_chunks(n_train, 64, [&](std::size_t lo, std::size_t hi) {
      for (std::size_t k = lo; k < hi; ++k)
        geometry[k] = build_example_geometry(
            dataset.records[dataset.train_indices[k]], view, config.loss);
    });
  }

  out.history.reserve(config.steps);
  for (std::uint64_t step = 0; step < config.steps; ++step) {
    const std::size_t want = std::min<std::size_t>(config.batch_size, n_train);
    if (cursor + want > n_train) {
      // New epoch: reshuffle and resample every paired aerial tile.
      Rng shuffle_rng(derive_seed(config.seed, "shuffle", epoch));
      order = dataset.train_indices;
      for (std::size_t k = n_train - 1; k > 0; --k) {
        const std::size_t j = shuffle_rng.uniform_index(k + 1);
        std::swap(order[k], order[j]);
      }
      parallel_for_chunks(n_train, 64, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t k = lo; k < hi; ++k) {
          const DatasetRecord& rec = dataset.records[dataset.train_indices[k]];
          Rng arng(derive_seed(config.seed, "augment",
                               epoch * n_train + dataset.train_indices[k]));
          const double max_offset = kMaxAerialOffsetM * world.config.scale;
          const double r = max_offset * std::sqrt(arng.uniform());
          const double ang = arng.uniform(0.0, 2.0 * M_PI);
          const GeoPoint center = offset_point(
              rec.ground.location, r * std::sin(ang), r * std::cos(ang));
          aug[k] = sample_aerial_tile(world, center,
                                      arng.uniform(0.0, 2.0 * M_PI), arng);
          aug[k].offset_m = r;
        }
      });
      cursor = 0;
      epoch += 1;
    }
    batch.clear();
    batch_geometry.clear();
    for (std::size_t k = 0; k < want; ++k) {
      const std::uint32_t rec_idx = order[cursor + k];
      // position of rec_idx in train_indices == its slot in aug/geometry
      const auto slot =
          std::lower_bound(dataset.train_indices.begin(),
                           dataset.train_indices.end(), rec_idx) -
          dataset.train_indices.begin();
      batch.push_back({&dataset.records[rec_idx], &aug[slot]});
      if (!geometry.empty()) batch_geometry.push_back(&geometry[slot]);
    }
    cursor += want;
    out.history.push_back(
        train_step(out.state, batch, config, batch_geometry));

    if (config.checkpoint_every > 0 && !config.checkpoint_dir.empty() &&
        (step + 1) % config.checkpoint_every == 0) {
      namespace fs = std::filesystem;
      fs::create_directories(config.checkpoint_dir);
      save_encoder(out.state.ground_encoder,
                   (fs::path(config.checkpoint_dir) / "ground.genc").string());
      save_encoder(out.state.aerial_encoder,
                   (fs::path(config.checkpoint_dir) / "aerial.genc").string());
      save_prototypes(
          out.state.prototypes,
          (fs::path(config.checkpoint_dir) / "prototypes.gprt").string());
    }
  }

  if (config.loss_kind == "ms")
    out.final_validation_loss = validation_loss(out.state, dataset, config);
  return out;
}

void write_training_report(const std::vector<StepMetrics>& history,
                           const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw MissingArtifactError("cannot open for writing: " + path);
  out << "step,loss,pos,neg,lr_enc,lr_proto\n";
  out.precision(12);
  for (const StepMetrics& m : history)
    out << m.step << ',' << m.loss << ',' << m.pos << ',' << m.neg << ','
        << m.lr_enc << ',' << m.lr_proto << '\n';
}

}  // namespace geoloc
