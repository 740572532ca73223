#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ffnlab/activations.hpp"
#include "ffnlab/rng.hpp"
#include "ffnlab/tensor.hpp"

namespace ffnlab {

// The eight position-wise feed-forward variants. The first three use two
// weight matrices (activation(x W1) W2); the last five are gated and add a
// third matrix V: (activation(x W) (*) x V) W2.
enum class FfnVariant { ReLU, GELU, Swish, GLU, Bilinear, ReGLU, GEGLU, SwiGLU };

inline constexpr FfnVariant kAllVariants[] = {
    FfnVariant::ReLU,   FfnVariant::GELU,  FfnVariant::Swish,
    FfnVariant::GLU,    FfnVariant::Bilinear, FfnVariant::ReGLU,
    FfnVariant::GEGLU,  FfnVariant::SwiGLU};

bool is_gated(FfnVariant v);
ActivationKind variant_activation(FfnVariant v);
std::string variant_name(FfnVariant v);
// Accepts the stable names "relu","gelu","swish","glu","bilinear","reglu",
// "geglu","swiglu"; throws listing all valid names otherwise.
FfnVariant variant_from_name(const std::string& name);

struct FfnLayer {
  FfnVariant variant = FfnVariant::ReLU;
  double swish_beta = 1.0;  // fixed per layer, the reference config uses 1
  Tensor w1;                // [d_model, d_ff]
  Tensor v;                 // [d_model, d_ff], present iff gated
  Tensor w2;                // [d_ff, d_model]
  bool use_bias = false;    // off in every reference configuration
  Tensor b1;                // [d_ff]
  Tensor c;                 // [d_ff], gated only
  Tensor b2;                // [d_model]

  int64_t d_model() const { return w1.dim(0); }
  int64_t d_ff() const { return w1.dim(1); }
  void validate() const;
};

// Weights i.i.d. normal with stddev 1/sqrt(fan_in); biases zero.
FfnLayer make_ffn_layer(FfnVariant variant, int64_t d_model, int64_t d_ff,
                        Rng& rng, bool use_bias = false,
                        bool requires_grad = true);

// x: [.., d_model] -> [.., d_model], exactly the variant's formula.
Tensor ffn_forward(const FfnLayer& layer, const Tensor& x);

// Largest multiple of multiple_of that is <= 2 * d_ff_base / 3.
// With the reference dims (3072, 1) this is exactly 2048.
int64_t matched_hidden_width(int64_t d_ff_base, int64_t multiple_of);

// Matrix (and optional bias) parameters of one FFN layer.
int64_t parameter_count(FfnVariant variant, int64_t d_model, int64_t d_ff,
                        bool use_bias);

// Matmul multiply-add flops (2 per MAC) over `tokens` positions.
// Elementwise costs are reported separately by ffn_elementwise_count.
int64_t flop_count(FfnVariant variant, int64_t d_model, int64_t d_ff,
                   int64_t tokens);
// Activation evaluations plus gate products, per `tokens` positions.
int64_t ffn_elementwise_count(FfnVariant variant, int64_t d_ff, int64_t tokens);

}  // namespace ffnlab
