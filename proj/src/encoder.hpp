#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace geoloc {

// Two-layer tanh MLP with l2-normalized output: z = normalize(W2 tanh(W1 x
// + b1) + b2). Stands in for the full vision stack; inputs here are already
// pooled feature vectors. Gradients are exact reverse-mode and validated
// against central finite differences.
struct EncoderParams {
  int input_dim = 0;
  int hidden_dim = 0;
  int output_dim = 0;
  std::vector<double> w1;  // hidden x input, row-major
  std::vector<double> b1;
  std::vector<double> w2;  // output x hidden, row-major
  std::vector<double> b2;

  std::size_t parameter_count() const {
    return w1.size() + b1.size() + w2.size() + b2.size();
  }
};

// Glorot uniform: +-sqrt(6 / (fan_in + fan_out)) per layer.
EncoderParams init_encoder(int input_dim, int hidden_dim, int output_dim,
                           std::uint64_t seed);

struct GradientBundle {
  std::vector<double> dw1, db1, dw2, db2;
  std::vector<double> dinput;
};

std::vector<double> encode(const EncoderParams& params,
                           std::span<const float> features);

// Gradients of upstream . encode(params, features) with respect to every
// parameter and the input.
GradientBundle encode_backward(const EncoderParams& params,
                               std::span<const float> features,
                               std::span<const double> upstream);

// v / ||v||. Throws on ||v|| <= 1e-12.
std::vector<double> l2_normalize(std::span<const double> v);

// vjp of l2_normalize: (I - u u^T) g / ||v|| with u = v/||v||.
std::vector<double> l2_normalize_vjp(std::span<const double> v,
                                     std::span<const double> upstream);

// GENC checkpoint; f32 payload, bit-exact round trip.
void save_encoder(const EncoderParams& params, const std::string& path);
EncoderParams load_encoder(const std::string& path);

}  // namespace geoloc
