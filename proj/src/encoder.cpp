#include "encoder.hpp"

#include <cmath>

#include "bytesio.hpp"
#include "errors.hpp"
#include "rng.hpp"

namespace geoloc {
namespace {

constexpr double kNormEps = 1e-12;

void check_input(const EncoderParams& p, std::span<const float> x) {
  if (static_cast<int>(x.size()) != p.input_dim)
    throw InvalidArgumentError("feature dimension " + std::to_string(x.size()) +
                               " does not match encoder input " +
                               std::to_string(p.input_dim));
}

// Forward pass with intermediates kept for the backward pass.
struct Activations {
  std::vector<double> hidden;    // tanh output
  std::vector<double> pre_norm;  // W2 h + b2
  double norm = 0.0;
};

Activations forward(const EncoderParams& p, std::span<const float> x) {
  Activations act;
  act.hidden.resize(p.hidden_dim);
  for (int r = 0; r < p.hidden_dim; ++r) {
    double acc = p.b1[r];
    const double* row = &p.w1[static_cast<std::size_t>(r) * p.input_dim];
    for (int c = 0; c < p.input_dim; ++c) acc += row[c] * x[c];
    act.hidden[r] = std::tanh(acc);
  }
  act.pre_norm.resize(p.output_dim);
  double sq = 0.0;
  for (int r = 0; r < p.output_dim; ++r) {
    double acc = p.b2[r];
    const double* row = &p.w2[static_cast<std::size_t>(r) * p.hidden_dim];
    for (int c = 0; c < p.hidden_dim; ++c) acc += row[c] * act.hidden[c];
    act.pre_norm[r] = acc;
    sq += acc * acc;
  }
  act.norm = std::sqrt(sq);
  if (act.norm <= kNormEps)
    throw NumericError("encoder produced a near-zero pre-normalization output");
  return act;
}

}  // namespace

EncoderParams init_encoder(int input_dim, int hidden_dim, int output_dim,
                           std::uint64_t seed) {
  if (input_dim < 1 || hidden_dim < 1 || output_dim < 1)
    throw InvalidArgumentError("encoder dimensions must be >= 1");
  EncoderParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.output_dim = output_dim;
  Rng rng(derive_seed(seed, "encoder"));
  const auto fill = [&](std::vector<double>& w, std::size_t n, int fan_in,
                        int fan_out) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    w.resize(n);
    for (auto& v : w) v = rng.uniform(-bound, bound);
  };
  fill(p.w1, static_cast<std::size_t>(hidden_dim) * input_dim, input_dim,
       hidden_dim);
  p.b1.assign(hidden_dim, 0.0);
  fill(p.w2, static_cast<std::size_t>(output_dim) * hidden_dim, hidden_dim,
       output_dim);
  p.b2.assign(output_dim, 0.0);
  return p;
}

std::vector<double> encode(const EncoderParams& params,
                           std::span<const float> features) {
  check_input(params, features);
  const Activations act = forward(params, features);
  std::vector<double> out(params.output_dim);
  for (int r = 0; r < params.output_dim; ++r)
    out[r] = act.pre_norm[r] / act.norm;
  return out;
}

GradientBundle encode_backward(const EncoderParams& params,
                               std::span<const float> features,
                               std::span<const double> upstream) {
  check_input(params, features);
  if (static_cast<int>(upstream.size()) != params.output_dim)
    throw InvalidArgumentError("upstream dimension mismatch");
  const Activations act = forward(params, features);

  // Through the normalization: g_pre = (g - u (u.g)) / ||y||.
  std::vector<double> g_pre(params.output_dim);
  double udotg = 0.0;
  for (int r = 0; r < params.output_dim; ++r)
    udotg += act.pre_norm[r] / act.norm * upstream[r];
  for (int r = 0; r < params.output_dim; ++r)
    g_pre[r] = (upstream[r] - act.pre_norm[r] / act.norm * udotg) / act.norm;

  GradientBundle g;
  g.dw2.assign(params.w2.size(), 0.0);
  g.db2 = g_pre;
  std::vector<double> g_hidden(params.hidden_dim, 0.0);
  for (int r = 0; r < params.output_dim; ++r) {
    const double gr = g_pre[r];
    const double* row = &params.w2[static_cast<std::size_t>(r) * params.hidden_dim];
    double* grow = &g.dw2[static_cast<std::size_t>(r) * params.hidden_dim];
    for (int c = 0; c < params.hidden_dim; ++c) {
      grow[c] = gr * act.hidden[c];
      g_hidden[c] += gr * row[c];
    }
  }

  // tanh' = 1 - tanh^2
  std::vector<double> g_act(params.hidden_dim);
  for (int c = 0; c < params.hidden_dim; ++c)
    g_act[c] = g_hidden[c] * (1.0 - act.hidden[c] * act.hidden[c]);

  g.dw1.assign(params.w1.size(), 0.0);
  g.db1 = g_act;
  g.dinput.assign(params.input_dim, 0.0);
  for (int r = 0; r < params.hidden_dim; ++r) {
    const double gr = g_act[r];
    const double* row = &params.w1[static_cast<std::size_t>(r) * params.input_dim];
    double* grow = &g.dw1[static_cast<std::size_t>(r) * params.input_dim];
    for (int c = 0; c < params.input_dim; ++c) {
      grow[c] = gr * features[c];
      g.dinput[c] += gr * row[c];
    }
  }
  return g;
}

std::vector<double> l2_normalize(std::span<const double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm <= kNormEps)
    throw NumericError("cannot normalize a near-zero vector");
  std::vector<double> out(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) out[k] = v[k] / norm;
  return out;
}

std::vector<double> l2_normalize_vjp(std::span<const double> v,
                                     std::span<const double> upstream) {
  if (v.size() != upstream.size())
    throw InvalidArgumentError("vjp dimension mismatch");
  double sq = 0.0;
  for (double x : v) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm <= kNormEps)
    throw NumericError("cannot normalize a near-zero vector");
  double udotg = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) udotg += v[k] / norm * upstream[k];
  std::vector<double> out(v.size());
  for (std::size_t k = 0; k < v.size(); ++k)
    out[k] = (upstream[k] - v[k] / norm * udotg) / norm;
  return out;
}

void save_encoder(const EncoderParams& params, const std::string& path) {
  ByteWriter w;
  w.magic("GENC");
  w.u16(1);
  w.u32(static_cast<std::uint32_t>(params.input_dim));
  w.u32(static_cast<std::uint32_t>(params.hidden_dim));
  w.u32(static_cast<std::uint32_t>(params.output_dim));
  const auto dump = [&](const std::vector<double>& v) {
    for (double x : v) w.f32(static_cast<float>(x));
  };
  dump(params.w1);
  dump(params.b1);
  dump(params.w2);
  dump(params.b2);
  w.write_file(path);
}

EncoderParams load_encoder(const std::string& path) {
  ByteReader rd = ByteReader::from_file(path);
  rd.expect_magic("GENC", "encoder checkpoint");
  const std::uint16_t version = rd.u16();
  if (version != 1)
    throw FormatError("unsupported GENC version " + std::to_string(version),
                      rd.offset() - 2);
  EncoderParams p;
  p.input_dim = static_cast<int>(rd.u32());
  p.hidden_dim = static_cast<int>(rd.u32());
  p.output_dim = static_cast<int>(rd.u32());
  if (p.input_dim < 1 || p.hidden_dim < 1 || p.output_dim < 1)
    throw FormatError("invalid encoder shape", rd.offset());
  const auto slurp = [&](std::vector<double>& v, std::size_t n) {
    v.resize(n);
    for (auto& x : v) x = rd.f32();
  };
  slurp(p.w1, static_cast<std::size_t>(p.hidden_dim) * p.input_dim);
  slurp(p.b1, p.hidden_dim);
  slurp(p.w2, static_cast<std::size_t>(p.output_dim) * p.hidden_dim);
  slurp(p.b2, p.output_dim);
  rd.expect_end("encoder checkpoint");
  return p;
}

}  // namespace geoloc
