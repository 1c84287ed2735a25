#include "loss.hpp"

#include <algorithm>
#include <cmath>

#include "errors.hpp"
#include "parallel.hpp"

namespace geoloc {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
  return acc;
}

double dot(std::span<const double> a, const double* b, int n) {
  double acc = 0.0;
  for (int k = 0; k < n; ++k) acc += a[k] * b[k];
  return acc;
}

void axpy(std::vector<double>& out, double c, const double* x, int n) {
  for (int k = 0; k < n; ++k) out[k] += c * x[k];
}

void axpy(double* out, double c, std::span<const double> x) {
  for (std::size_t k = 0; k < x.size(); ++k) out[k] += c * x[k];
}

constexpr std::size_t kExampleChunk = 8;
constexpr std::size_t kProtoChunk = 128;

}  // namespace

double resolve_exclusion_radius(const LossConfig& config, int prototype_level) {
  if (config.neg_exclusion_radius_m > 0.0) return config.neg_exclusion_radius_m;
  return 2.0 * avg_edge_length_m(prototype_level);
}

double gamma_term(double s, double alpha, double lambda) {
  return std::exp(-alpha * (s - lambda));
}

double delta_term(double s, double beta, double lambda) {
  return std::exp(beta * (s - lambda));
}

double positive_term(std::span<const double> zq, std::span<const double> za,
                     std::span<const double> zp, double alpha, double lambda) {
  const double t = gamma_term(dot(zq, za), alpha, lambda) +
                   gamma_term(dot(zq, zp), alpha, lambda) +
                   gamma_term(dot(za, zp), alpha, lambda);
  return std::log1p(t) / alpha;
}

double negative_term(std::span<const double> batch_sims,
                     std::span<const double> prototype_sims, double beta,
                     double lambda) {
  double s = 0.0;
  for (double v : batch_sims) s += delta_term(v, beta, lambda);
  for (double v : prototype_sims) s += delta_term(v, beta, lambda);
  return std::log1p(s) / beta;
}

bool in_negative_set(const GeoPoint& query, const GeoPoint& cell_center_point,
                     double radius_m) {
  return haversine_m(query, cell_center_point) > radius_m;
}

InterpolationWeights frustum_weights(const GeoPoint& location, double heading,
                                     double fov, double depth_m,
                                     int prototype_level,
                                     GroundInterpMode mode) {
  InterpolationWeights out;
  if (mode == GroundInterpMode::kNearest) {
    out.weights.emplace_back(cell_from_point(location, prototype_level), 1.0);
    return out;
  }
  const auto overlaps =
      cells_overlapping_triangle(location, heading, fov, depth_m, prototype_level);
  if (mode == GroundInterpMode::kFrustumWeights) {
    for (const CellOverlap& o : overlaps)
      out.weights.emplace_back(o.cell, o.fraction);
  } else {  // all overlapping cells as an averaged multi-positive
    out.averaged = true;
    const double w = 1.0 / static_cast<double>(overlaps.size());
    for (const CellOverlap& o : overlaps) out.weights.emplace_back(o.cell, w);
  }
  return out;
}

InterpolationWeights bilinear_weights(const GeoPoint& tile_center,
                                      int prototype_level,
                                      AerialInterpMode mode) {
  InterpolationWeights out;
  if (mode == AerialInterpMode::kNearest) {
    out.weights.emplace_back(cell_from_point(tile_center, prototype_level), 1.0);
    return out;
  }
  const FaceCoords fc = face_coords(tile_center);
  const double n = static_cast<double>(std::uint64_t{1} << prototype_level);
  const double x = fc.s * n - 0.5;
  const double y = fc.t * n - 0.5;
  const auto i0 = static_cast<std::int64_t>(std::floor(x));
  const auto j0 = static_cast<std::int64_t>(std::floor(y));
  const double fx = x - static_cast<double>(i0);
  const double fy = y - static_cast<double>(j0);

  // Product-form weights over the surrounding 2x2 grid in the face frame;
  // cells folded across a face boundary are merged.
  const std::pair<std::int64_t, std::int64_t> corners[4] = {
      {i0, j0}, {i0 + 1, j0}, {i0, j0 + 1}, {i0 + 1, j0 + 1}};
  const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy,
                       fx * fy};
  for (int k = 0; k < 4; ++k) {
    const CellId c =
        folded_cell(fc.face, prototype_level, corners[k].first, corners[k].second);
    bool merged = false;
    for (auto& [cell, weight] : out.weights)
      if (cell == c) {
        weight += w[k];
        merged = true;
        break;
      }
    if (!merged) out.weights.emplace_back(c, w[k]);
  }
  std::sort(out.weights.begin(), out.weights.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double total = 0.0;
  for (const auto& [cell, weight] : out.weights) total += weight;
  for (auto& [cell, weight] : out.weights) weight /= total;
  return out;
}

std::uint32_t PrototypeSetView::find(std::uint64_t packed) const {
  const auto* end = cell_ids + count;
  const auto* it = std::lower_bound(cell_ids, end, packed);
  if (it == end || *it != packed) return count;
  return static_cast<std::uint32_t>(it - cell_ids);
}

std::vector<std::pair<std::uint32_t, double>> map_support(
    const InterpolationWeights& w, const PrototypeSetView& protos,
    bool require_all) {
  std::vector<std::pair<std::uint32_t, double>> out;
  double total = 0.0;
  for (const auto& [cell, weight] : w.weights) {
    const std::uint32_t pos = protos.find(cell.packed());
    if (pos == protos.count) {
      if (require_all)
        throw CoverageError("no prototype for positive cell " +
                            std::to_string(cell.packed()));
      continue;  // dropped; remaining weights renormalized below
    }
    out.emplace_back(pos, weight);
    total += weight;
  }
  if (out.empty())
    throw CoverageError("no prototype covers any positive cell of a query");
  for (auto& [pos, weight] : out) weight /= total;
  return out;
}

std::vector<std::uint32_t> excluded_positions(const GeoPoint& query,
                                              const PrototypeSetView& protos,
                                              double radius_m) {
  std::vector<std::uint32_t> out;
  for (const CellId& c : cells_within_radius(query, protos.level, radius_m)) {
    const std::uint32_t pos = protos.find(c.packed());
    if (pos != protos.count) out.push_back(pos);
  }
  return out;  // cells_within_radius is id-sorted, so positions ascend
}

NegativePartials sharded_negative_sums(
    std::span<const double> zq, std::span<const double> za,
    const PrototypeSetView& protos, std::span<const std::uint32_t> excluded,
    const LossConfig& config,
    std::span<const std::pair<std::uint32_t, std::uint32_t>> shard_ranges) {
  NegativePartials out;
  out.query_side.resize(shard_ranges.size(), 0.0);
  out.aerial_side.resize(shard_ranges.size(), 0.0);
  for (std::size_t s = 0; s < shard_ranges.size(); ++s) {
    const auto [begin, end] = shard_ranges[s];
    std::size_t ex = 0;
    double sq = 0.0, sa = 0.0;
    for (std::uint32_t p = begin; p < end; ++p) {
      while (ex < excluded.size() && excluded[ex] < p) ++ex;
      if (ex < excluded.size() && excluded[ex] == p) continue;
      const double* row = protos.values + static_cast<std::size_t>(p) * protos.dim;
      if (config.edge_gp)
        sq += delta_term(dot(zq, row, protos.dim), config.beta, config.lambda);
      if (config.edge_ap)
        sa += delta_term(dot(za, row, protos.dim), config.beta, config.lambda);
    }
    out.query_side[s] = sq;
    out.aerial_side[s] = sa;
  }
  return out;
}

MsLossGrads ms_loss_embeddings(
    std::span<const EmbeddingExample> batch, const PrototypeSetView& protos,
    const LossConfig& config,
    std::span<const std::pair<std::uint32_t, std::uint32_t>> shard_ranges) {
  const std::size_t n = batch.size();
  if (n == 0) throw InvalidArgumentError("empty batch");
  const int dim = protos.dim;
  const std::uint32_t np = protos.count;
  for (const auto& ex : batch)
    if (static_cast<int>(ex.zq.size()) != dim ||
        static_cast<int>(ex.za.size()) != dim)
      throw InvalidArgumentError("embedding dimension mismatch");

  std::vector<std::pair<std::uint32_t, std::uint32_t>> default_range;
  if (shard_ranges.empty()) {
    default_range.emplace_back(0, np);
    shard_ranges = default_range;
  }

  // delta values per (example, prototype); zero when excluded or edge off.
  std::vector<double> delta_q(n * np, 0.0), delta_a(n * np, 0.0);
  // gamma terms and positive-side intermediates per example.
  std::vector<double> t_sum(n, 0.0);
  std::vector<double> g_qa(n, 0.0), g_gp(n, 0.0), g_ap(n, 0.0);
  // interpolated positive prototypes (empty when averaged / edge off)
  std::vector<std::vector<double>> zpg(n), zpa(n);
  std::vector<std::vector<double>> gp_term_gammas(n);  // averaged mode
  std::vector<double> sim_qa(n * n, 0.0);
  std::vector<double> delta_batch(n * n, 0.0);

  const auto combine = [&](const std::vector<std::pair<std::uint32_t, double>>&
                               support) {
    std::vector<double> v(dim, 0.0);
    for (const auto& [pos, w] : support)
      axpy(v, w, protos.values + static_cast<std::size_t>(pos) * dim, dim);
    return v;
  };

  parallel_for_chunks(n, kExampleChunk, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const EmbeddingExample& ex = batch[i];
      double t = 0.0;
      if (config.edge_ga) {
        // in-batch row of query-aerial sims, also the positive pair
        for (std::size_t j = 0; j < n; ++j)
          sim_qa[i * n + j] = dot(ex.zq, batch[j].za);
        g_qa[i] = gamma_term(sim_qa[i * n + i], config.alpha, config.lambda);
        t += g_qa[i];
        for (std::size_t j = 0; j < n; ++j)
          if (j != i)
            delta_batch[i * n + j] =
                delta_term(sim_qa[i * n + j], config.beta, config.lambda);
      }
      if (config.edge_gp) {
        if (ex.ground_support.empty())
          throw CoverageError("example has no ground positive support");
        if (ex.ground_averaged) {
          auto& gs = gp_term_gammas[i];
          gs.reserve(ex.ground_support.size());
          double acc = 0.0;
          const double k_inv = 1.0 / static_cast<double>(ex.ground_support.size());
          for (const auto& [pos, w] : ex.ground_support) {
            const double g = gamma_term(
                dot(ex.zq, protos.values + static_cast<std::size_t>(pos) * dim,
                    dim),
                config.alpha, config.lambda);
            gs.push_back(g);
            acc += k_inv * g;
          }
          g_gp[i] = acc;
        } else {
          auto v = combine(ex.ground_support);
          if (config.renormalize_interp) {
            zpg[i] = v;  // keep the raw combination for the vjp
            g_gp[i] = gamma_term(dot(ex.zq, l2_normalize(v)), config.alpha,
                                 config.lambda);
          } else {
            g_gp[i] = gamma_term(dot(ex.zq, v), config.alpha, config.lambda);
            zpg[i] = std::move(v);
          }
        }
        t += g_gp[i];
      }
      if (config.edge_ap) {
        if (ex.aerial_support.empty())
          throw CoverageError("example has no aerial positive support");
        auto v = combine(ex.aerial_support);
        if (config.renormalize_interp) {
          zpa[i] = v;
          g_ap[i] = gamma_term(dot(ex.za, l2_normalize(v)), config.alpha,
                               config.lambda);
        } else {
          g_ap[i] = gamma_term(dot(ex.za, v), config.alpha, config.lambda);
          zpa[i] = std::move(v);
        }
        t += g_ap[i];
      }
      t_sum[i] = t;

      // prototype deltas, skipping the exclusion zone
      std::size_t exq = 0;
      for (std::uint32_t p = 0; p < np; ++p) {
        while (exq < ex.excluded.size() && ex.excluded[exq] < p) ++exq;
        if (exq < ex.excluded.size() && ex.excluded[exq] == p) continue;
        const double* row = protos.values + static_cast<std::size_t>(p) * dim;
        if (config.edge_gp)
          delta_q[i * np + p] =
              delta_term(dot(ex.zq, row, dim), config.beta, config.lambda);
        if (config.edge_ap)
          delta_a[i * np + p] =
              delta_term(dot(ex.za, row, dim), config.beta, config.lambda);
      }
    }
  });

  // Fixed-order reduction: batch negatives in ascending j, then prototype
  // partials in ascending shard order (query side before aerial side).
  MsLossGrads out;
  std::vector<double> s_sum(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) s += delta_batch[i * n + j] + delta_batch[j * n + i];
    for (const auto& [begin, end] : shard_ranges) {
      double pq = 0.0, pa = 0.0;
      for (std::uint32_t p = begin; p < end; ++p) pq += delta_q[i * np + p];
      for (std::uint32_t p = begin; p < end; ++p) pa += delta_a[i * np + p];
      s += pq + pa;
    }
    s_sum[i] = s;
    const double pos_i = std::log1p(t_sum[i]) / config.alpha;
    const double neg_i = std::log1p(s) / config.beta;
    out.pos += pos_i;
    out.neg += neg_i;
    out.loss += pos_i + neg_i;
  }
  if (!std::isfinite(out.loss)) throw NumericError("non-finite loss");

  std::vector<double> coef_p(n), coef_n(n);
  for (std::size_t i = 0; i < n; ++i) {
    coef_p[i] = 1.0 / (1.0 + t_sum[i]);
    coef_n[i] = 1.0 / (1.0 + s_sum[i]);
  }

  out.dzq.assign(n, std::vector<double>(dim, 0.0));
  out.dza.assign(n, std::vector<double>(dim, 0.0));
  out.dproto.assign(static_cast<std::size_t>(np) * dim, 0.0);
  std::vector<std::uint8_t> touched_flag(np, 0);

  // Embedding gradients (disjoint slots per example).
  parallel_for_chunks(n, kExampleChunk, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const EmbeddingExample& ex = batch[i];
      auto& dzq = out.dzq[i];
      auto& dza = out.dza[i];

      if (config.edge_ga) {
        const double c = -g_qa[i] * coef_p[i];
        axpy(dzq.data(), c, ex.za);
        axpy(dza.data(), c, ex.zq);
        for (std::size_t j = 0; j < n; ++j) {
          if (j == i) continue;
          const double cij = delta_batch[i * n + j] * (coef_n[i] + coef_n[j]);
          const double cji = delta_batch[j * n + i] * (coef_n[j] + coef_n[i]);
          axpy(dzq.data(), cij, batch[j].za);
          axpy(dza.data(), cji, batch[j].zq);
        }
      }
      if (config.edge_gp) {
        if (ex.ground_averaged) {
          const double k_inv = 1.0 / static_cast<double>(ex.ground_support.size());
          for (std::size_t k = 0; k < ex.ground_support.size(); ++k) {
            const double c = -k_inv * gp_term_gammas[i][k] * coef_p[i];
            axpy(dzq, c,
                 protos.values +
                     static_cast<std::size_t>(ex.ground_support[k].first) * dim,
                 dim);
          }
        } else if (config.renormalize_interp) {
          const double c = -g_gp[i] * coef_p[i];
          axpy(dzq.data(), c, l2_normalize(zpg[i]));
        } else {
          const double c = -g_gp[i] * coef_p[i];
          axpy(dzq.data(), c, zpg[i]);
        }
        // negative prototype pull on the query embedding
        std::vector<double> acc(dim, 0.0);
        for (std::uint32_t p = 0; p < np; ++p) {
          const double d = delta_q[i * np + p];
          if (d != 0.0)
            axpy(acc, d, protos.values + static_cast<std::size_t>(p) * dim, dim);
        }
        axpy(dzq.data(), coef_n[i], acc);
      }
      if (config.edge_ap) {
        const double c = -g_ap[i] * coef_p[i];
        if (config.renormalize_interp)
          axpy(dza.data(), c, l2_normalize(zpa[i]));
        else
          axpy(dza.data(), c, zpa[i]);
        std::vector<double> acc(dim, 0.0);
        for (std::uint32_t p = 0; p < np; ++p) {
          const double d = delta_a[i * np + p];
          if (d != 0.0)
            axpy(acc, d, protos.values + static_cast<std::size_t>(p) * dim, dim);
        }
        axpy(dza.data(), coef_n[i], acc);
      }
    }
  });

  // Prototype gradients from the negative sums; ascending example order
  // inside each prototype row, rows partitioned across workers.
  parallel_for_chunks(np, kProtoChunk, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t p = lo; p < hi; ++p) {
      double* row = out.dproto.data() + p * dim;
      bool any = false;
      for (std::size_t i = 0; i < n; ++i) {
        const double dq = delta_q[i * np + p];
        if (dq != 0.0) {
          axpy(row, dq * coef_n[i], std::span<const double>(batch[i].zq));
          any = true;
        }
        if (!config.detach_ap_edge) {
          const double da = delta_a[i * np + p];
          if (da != 0.0) {
            axpy(row, da * coef_n[i], std::span<const double>(batch[i].za));
            any = true;
          }
        }
      }
      if (any) touched_flag[p] = 1;
    }
  });

  // Positive-edge prototype gradients, serial in ascending example order.
  for (std::size_t i = 0; i < n; ++i) {
    const EmbeddingExample& ex = batch[i];
    if (config.edge_gp) {
      if (ex.ground_averaged) {
        const double k_inv = 1.0 / static_cast<double>(ex.ground_support.size());
        for (std::size_t k = 0; k < ex.ground_support.size(); ++k) {
          const std::uint32_t p = ex.ground_support[k].first;
          const double c = -k_inv * gp_term_gammas[i][k] * coef_p[i];
          axpy(out.dproto.data() + static_cast<std::size_t>(p) * dim, c,
               std::span<const double>(ex.zq));
          touched_flag[p] = 1;
        }
      } else {
        const double c = -g_gp[i] * coef_p[i];
        std::vector<double> dv(dim);
        if (config.renormalize_interp) {
          dv = l2_normalize_vjp(zpg[i], ex.zq);
          for (double& v : dv) v *= c;
        } else {
          for (int k = 0; k < dim; ++k) dv[k] = c * ex.zq[k];
        }
        for (const auto& [p, w] : ex.ground_support) {
          axpy(out.dproto.data() + static_cast<std::size_t>(p) * dim, w,
               std::span<const double>(dv));
          touched_flag[p] = 1;
        }
      }
    }
    if (config.edge_ap && !config.detach_ap_edge) {
      const double c = -g_ap[i] * coef_p[i];
      std::vector<double> dv(dim);
      if (config.renormalize_interp) {
        dv = l2_normalize_vjp(zpa[i], ex.za);
        for (double& v : dv) v *= c;
      } else {
        for (int k = 0; k < dim; ++k) dv[k] = c * ex.za[k];
      }
      for (const auto& [p, w] : ex.aerial_support) {
        axpy(out.dproto.data() + static_cast<std::size_t>(p) * dim, w,
             std::span<const double>(dv));
        touched_flag[p] = 1;
      }
    }
  }

  for (std::uint32_t p = 0; p < np; ++p)
    if (touched_flag[p]) out.touched.push_back(p);
  return out;
}

void EncoderGrads::init_like(const EncoderParams& p) {
  dw1.assign(p.w1.size(), 0.0);
  db1.assign(p.b1.size(), 0.0);
  dw2.assign(p.w2.size(), 0.0);
  db2.assign(p.b2.size(), 0.0);
}

void EncoderGrads::add(const GradientBundle& g) {
  for (std::size_t k = 0; k < dw1.size(); ++k) dw1[k] += g.dw1[k];
  for (std::size_t k = 0; k < db1.size(); ++k) db1[k] += g.db1[k];
  for (std::size_t k = 0; k < dw2.size(); ++k) dw2[k] += g.dw2[k];
  for (std::size_t k = 0; k < db2.size(); ++k) db2[k] += g.db2[k];
}

ExampleGeometry build_example_geometry(const DatasetRecord& record,
                                       const PrototypeSetView& protos,
                                       const LossConfig& config) {
  ExampleGeometry geom;
  const auto gw = frustum_weights(record.ground.location, record.ground.heading,
                                  record.ground.fov, config.frustum_depth_m,
                                  protos.level, config.ground_interp);
  geom.ground_support = map_support(gw, protos, /*require_all=*/false);
  geom.ground_averaged = gw.averaged;
  geom.excluded =
      excluded_positions(record.ground.location, protos,
                         resolve_exclusion_radius(config, protos.level));
  return geom;
}

MsBatchResult ms_loss_batch(
    std::span<const BatchItem> batch, const EncoderParams& ground_encoder,
    const EncoderParams& aerial_encoder, const PrototypeSetView& protos,
    const LossConfig& config,
    std::span<const std::pair<std::uint32_t, std::uint32_t>> shard_ranges,
    std::span<const ExampleGeometry* const> cached_geometry) {
  const std::size_t n = batch.size();
  if (n == 0) throw InvalidArgumentError("empty batch");
  if (!cached_geometry.empty() && cached_geometry.size() != n)
    throw InvalidArgumentError("geometry cache size mismatch");

  std::vector<EmbeddingExample> examples(n);
  parallel_for_chunks(n, kExampleChunk, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const DatasetRecord& rec = *batch[i].record;
      const AerialObservation& aerial =
          batch[i].aerial ? *batch[i].aerial : rec.aerial;
      EmbeddingExample& ex = examples[i];
      ex.zq = encode(ground_encoder, rec.ground.features);
      ex.za = encode(aerial_encoder, aerial.features);
      if (cached_geometry.empty()) {
        const ExampleGeometry geom =
            build_example_geometry(rec, protos, config);
        ex.ground_support = geom.ground_support;
        ex.ground_averaged = geom.ground_averaged;
        ex.excluded = geom.excluded;
      } else {
        ex.ground_support = cached_geometry[i]->ground_support;
        ex.ground_averaged = cached_geometry[i]->ground_averaged;
        ex.excluded = cached_geometry[i]->excluded;
      }
      ex.aerial_support = map_support(
          bilinear_weights(aerial.tile_center, protos.level, config.aerial_interp),
          protos, /*require_all=*/false);
    }
  });

  MsLossGrads grads = ms_loss_embeddings(examples, protos, config, shard_ranges);

  MsBatchResult out;
  out.loss = grads.loss;
  out.pos = grads.pos;
  out.neg = grads.neg;
  out.dproto = std::move(grads.dproto);
  out.touched = std::move(grads.touched);
  out.ground_grads.init_like(ground_encoder);
  out.aerial_grads.init_like(aerial_encoder);
  for (std::size_t i = 0; i < n; ++i) {
    const DatasetRecord& rec = *batch[i].record;
    const AerialObservation& aerial =
        batch[i].aerial ? *batch[i].aerial : rec.aerial;
    out.ground_grads.add(
        encode_backward(ground_encoder, rec.ground.features, grads.dzq[i]));
    out.aerial_grads.add(
        encode_backward(aerial_encoder, aerial.features, grads.dza[i]));
  }
  return out;
}

PairLossGrads infonce_bidirectional(std::span<const std::vector<double>> zq,
                                    std::span<const std::vector<double>> za,
                                    double tau, double label_smoothing) {
  const std::size_t n = zq.size();
  if (n < 2) throw InvalidArgumentError("infonce needs a batch of >= 2");
  if (za.size() != n) throw InvalidArgumentError("batch size mismatch");
  if (!(tau > 0)) throw InvalidArgumentError("temperature must be > 0");
  const int dim = static_cast<int>(zq[0].size());
  const double eps = label_smoothing;

  PairLossGrads out;
  out.dzq.assign(n, std::vector<double>(dim, 0.0));
  out.dza.assign(n, std::vector<double>(dim, 0.0));

  std::vector<double> logits(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      logits[i * n + j] = dot(zq[i], za[j]) / tau;

  // One direction: rows are anchors, columns candidates. dl[i*n+j] receives
  // the gradient w.r.t. logits.
  const auto direction = [&](bool ground_to_aerial, std::vector<double>& dl) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto logit = [&](std::size_t j) {
        return ground_to_aerial ? logits[i * n + j] : logits[j * n + i];
      };
      double mx = -1e300;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) mx = std::max(mx, logit(j));
      double denom = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) denom += std::exp(logit(j) - mx);
      const double lse = mx + std::log(denom);
      double qdotl = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double q = (j == i ? 1.0 - eps : 0.0) + eps / n;
        qdotl += q * logit(j);
      }
      total += -qdotl + lse;
      for (std::size_t j = 0; j < n; ++j) {
        const double q = (j == i ? 1.0 - eps : 0.0) + eps / n;
        const double soft = j == i ? 0.0 : std::exp(logit(j) - mx) / denom;
        const double g = (-q + soft) / (2.0 * n);
        if (ground_to_aerial)
          dl[i * n + j] += g;
        else
          dl[j * n + i] += g;
      }
    }
    return total;
  };

  std::vector<double> dl(n * n, 0.0);
  const double loss_ga = direction(true, dl);
  const double loss_ag = direction(false, dl);
  out.loss = (loss_ga + loss_ag) / (2.0 * n);

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double g = dl[i * n + j] / tau;
      if (g == 0.0) continue;
      axpy(out.dzq[i].data(), g, std::span<const double>(za[j]));
      axpy(out.dza[j].data(), g, std::span<const double>(zq[i]));
    }
  return out;
}

namespace {

// Shared softmax-CE machinery over the prototype set: given target
// distribution q, produces loss and gradients through logits s/T.
ProtoLossGrads softmax_ce_against(std::span<const double> query,
                                  const PrototypeSetView& protos,
                                  std::span<const double> q,
                                  double temperature) {
  const std::uint32_t np = protos.count;
  const int dim = protos.dim;
  std::vector<double> sims(np), logits(np);
  double mx = -1e300;
  for (std::uint32_t j = 0; j < np; ++j) {
    sims[j] = dot(query, protos.values + static_cast<std::size_t>(j) * dim, dim);
    logits[j] = sims[j] / temperature;
    mx = std::max(mx, logits[j]);
  }
  double denom = 0.0;
  for (std::uint32_t j = 0; j < np; ++j) denom += std::exp(logits[j] - mx);
  const double lse = mx + std::log(denom);

  ProtoLossGrads out;
  out.dquery.assign(dim, 0.0);
  out.dproto.assign(static_cast<std::size_t>(np) * dim, 0.0);
  double qdotl = 0.0;
  for (std::uint32_t j = 0; j < np; ++j) qdotl += q[j] * logits[j];
  out.loss = -qdotl + lse;
  for (std::uint32_t j = 0; j < np; ++j) {
    const double p = std::exp(logits[j] - mx) / denom;
    const double dlj = p - q[j];
    axpy(out.dquery.data(), dlj / temperature,
         std::span<const double>(protos.values + static_cast<std::size_t>(j) * dim,
                                 static_cast<std::size_t>(dim)));
    axpy(out.dproto.data() + static_cast<std::size_t>(j) * dim,
         dlj / temperature, query);
    out.dtemperature += dlj * (-sims[j] / (temperature * temperature));
  }
  return out;
}

}  // namespace

ProtoLossGrads haversine_smoothed_ce(std::span<const double> query,
                                     const PrototypeSetView& protos,
                                     const GeoPoint& gt_location, double tau_m,
                                     double temperature) {
  if (!(tau_m > 0)) throw InvalidArgumentError("haversine tau must be > 0");
  if (!(temperature > 0))
    throw InvalidArgumentError("temperature must be > 0");
  const std::uint32_t np = protos.count;
  std::vector<double> q(np);
  double mx = -1e300;
  for (std::uint32_t j = 0; j < np; ++j) {
    q[j] = -haversine_m(protos.centers[j], gt_location) / tau_m;
    mx = std::max(mx, q[j]);
  }
  double total = 0.0;
  for (std::uint32_t j = 0; j < np; ++j) {
    q[j] = std::exp(q[j] - mx);
    total += q[j];
  }
  for (std::uint32_t j = 0; j < np; ++j) q[j] /= total;
  return softmax_ce_against(query, protos, q, temperature);
}

ProtoLossGrads hierarchical_ce(std::span<const double> query,
                               const PrototypeSetView& protos,
                               const CellId& gt_cell,
                               std::span<const int> levels, double temperature) {
  if (levels.empty()) throw InvalidArgumentError("levels must be nonempty");
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const int expect = protos.level - 2 * static_cast<int>(k);
    if (levels[k] != expect || levels[k] < 0)
      throw InvalidArgumentError(
          "levels must descend from the prototype level in steps of 2");
  }
  if (gt_cell.level != protos.level)
    throw InvalidArgumentError("ground-truth cell must be at prototype level");
  if (!(temperature > 0))
    throw InvalidArgumentError("temperature must be > 0");

  const std::uint32_t np = protos.count;
  const int dim = protos.dim;
  std::vector<double> sims(np), logits(np), p(np);
  double mx = -1e300;
  for (std::uint32_t j = 0; j < np; ++j) {
    sims[j] = dot(query, protos.values + static_cast<std::size_t>(j) * dim, dim);
    logits[j] = sims[j] / temperature;
    mx = std::max(mx, logits[j]);
  }
  double denom = 0.0;
  for (std::uint32_t j = 0; j < np; ++j) denom += std::exp(logits[j] - mx);
  for (std::uint32_t j = 0; j < np; ++j) p[j] = std::exp(logits[j] - mx) / denom;

  ProtoLossGrads out;
  std::vector<double> dp(np, 0.0);
  for (int level : levels) {
    const std::uint64_t anc =
        parent(gt_cell, level).packed();
    double mass = 0.0;
    std::vector<std::uint8_t> member(np, 0);
    for (std::uint32_t j = 0; j < np; ++j) {
      member[j] =
          parent(CellId::unpack(protos.cell_ids[j]), level).packed() == anc;
      if (member[j]) mass += p[j];
    }
    if (mass <= 0.0)
      throw CoverageError("no prototype descends from the ground-truth cell");
    out.loss += -std::log(mass);
    for (std::uint32_t j = 0; j < np; ++j)
      if (member[j]) dp[j] += -1.0 / mass;
  }

  // softmax backward: dl_j = p_j (dp_j - sum_k p_k dp_k)
  double inner = 0.0;
  for (std::uint32_t j = 0; j < np; ++j) inner += p[j] * dp[j];
  out.dquery.assign(dim, 0.0);
  out.dproto.assign(static_cast<std::size_t>(np) * dim, 0.0);
  for (std::uint32_t j = 0; j < np; ++j) {
    const double dlj = p[j] * (dp[j] - inner);
    axpy(out.dquery.data(), dlj / temperature,
         std::span<const double>(protos.values + static_cast<std::size_t>(j) * dim,
                                 static_cast<std::size_t>(dim)));
    axpy(out.dproto.data() + static_cast<std::size_t>(j) * dim,
         dlj / temperature, query);
    out.dtemperature += dlj * (-sims[j] / (temperature * temperature));
  }
  return out;
}

ProtoLossGrads cosface_loss(std::span<const double> query,
                            const PrototypeSetView& protos,
                            std::uint32_t gt_position, double margin,
                            double scale) {
  if (!(margin >= 0 && margin < 1))
    throw InvalidArgumentError("margin must be in [0, 1)");
  if (!(scale > 0)) throw InvalidArgumentError("scale must be > 0");
  if (gt_position >= protos.count)
    throw InvalidArgumentError("gt position out of range");
  const std::uint32_t np = protos.count;
  const int dim = protos.dim;
  std::vector<double> logits(np);
  double mx = -1e300;
  for (std::uint32_t j = 0; j < np; ++j) {
    const double s =
        dot(query, protos.values + static_cast<std::size_t>(j) * dim, dim);
    logits[j] = scale * (s - (j == gt_position ? margin : 0.0));
    mx = std::max(mx, logits[j]);
  }
  double denom = 0.0;
  for (std::uint32_t j = 0; j < np; ++j) denom += std::exp(logits[j] - mx);

  ProtoLossGrads out;
  out.loss = -(logits[gt_position] - mx) + std::log(denom);
  out.dquery.assign(dim, 0.0);
  out.dproto.assign(static_cast<std::size_t>(np) * dim, 0.0);
  for (std::uint32_t j = 0; j < np; ++j) {
    const double p = std::exp(logits[j] - mx) / denom;
    const double dlj = (p - (j == gt_position ? 1.0 : 0.0)) * scale;
    axpy(out.dquery.data(), dlj,
         std::span<const double>(protos.values + static_cast<std::size_t>(j) * dim,
                                 static_cast<std::size_t>(dim)));
    axpy(out.dproto.data() + static_cast<std::size_t>(j) * dim, dlj, query);
  }
  return out;
}

}  // namespace geoloc
