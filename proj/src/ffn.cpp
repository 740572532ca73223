#include "ffnlab/ffn.hpp"

#include <stdexcept>

namespace ffnlab {

bool is_gated(FfnVariant v) {
  switch (v) {
    case FfnVariant::ReLU:
    case FfnVariant::GELU:
    case FfnVariant::Swish:
      return false;
    default:
      return true;
  }
}

ActivationKind variant_activation(FfnVariant v) {
  switch (v) {
    case FfnVariant::ReLU: return ActivationKind::ReLU;
    case FfnVariant::GELU: return ActivationKind::GELU;
    case FfnVariant::Swish: return ActivationKind::Swish;
    case FfnVariant::GLU: return ActivationKind::Sigmoid;
    case FfnVariant::Bilinear: return ActivationKind::Identity;
    case FfnVariant::ReGLU: return ActivationKind::ReLU;
    case FfnVariant::GEGLU: return ActivationKind::GELU;
    case FfnVariant::SwiGLU: return ActivationKind::Swish;
  }
  throw std::invalid_argument("unknown FFN variant");
}

std::string variant_name(FfnVariant v) {
  switch (v) {
    case FfnVariant::ReLU: return "relu";
    case FfnVariant::GELU: return "gelu";
    case FfnVariant::Swish: return "swish";
    case FfnVariant::GLU: return "glu";
    case FfnVariant::Bilinear: return "bilinear";
    case FfnVariant::ReGLU: return "reglu";
    case FfnVariant::GEGLU: return "geglu";
    case FfnVariant::SwiGLU: return "swiglu";
  }
  throw std::invalid_argument("unknown FFN variant");
}

FfnVariant variant_from_name(const std::string& name) {
  for (FfnVariant v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  std::string valid;
  for (FfnVariant v : kAllVariants) {
    if (!valid.empty()) valid += ",";
    valid += variant_name(v);
  }
  throw std::invalid_argument("unknown FFN variant \"" + name +
                              "\"; valid names: " + valid);
}

void FfnLayer::validate() const {
  if (!w1.defined() || !w2.defined()) {
    throw std::invalid_argument("ffn layer: missing weight matrices");
  }
  bool gated = is_gated(variant);
  if (gated != v.defined()) {
    throw std::invalid_argument("ffn layer: V must be present iff the variant is gated");
  }
  if (w1.ndim() != 2 || w2.ndim() != 2 || w2.dim(0) != w1.dim(1) ||
      w2.dim(1) != w1.dim(0)) {
    throw std::invalid_argument("ffn layer: weight shapes " +
                                shape_str(w1.shape()) + " / " +
                                shape_str(w2.shape()) + " are inconsistent");
  }
  if (gated && v.shape() != w1.shape()) {
    throw std::invalid_argument("ffn layer: V shape " + shape_str(v.shape()) +
                                " must match W shape " + shape_str(w1.shape()));
  }
  if (use_bias) {
    if (!b1.defined() || b1.dim(0) != d_ff() || !b2.defined() ||
        b2.dim(0) != d_model() || (gated && (!c.defined() || c.dim(0) != d_ff()))) {
      throw std::invalid_argument("ffn layer: bias vector shapes do not match projections");
    }
  }
}

namespace {

Tensor init_matrix(int64_t rows, int64_t cols, Rng& rng, bool requires_grad) {
  std::vector<double> w(static_cast<size_t>(rows * cols));
  double stddev = 1.0 / std::sqrt(static_cast<double>(rows));
  for (double& x : w) x = stddev * rng.normal();
  return Tensor::from_data({rows, cols}, std::move(w), requires_grad);
}

}  // namespace

FfnLayer make_ffn_layer(FfnVariant variant, int64_t d_model, int64_t d_ff,
                        Rng& rng, bool use_bias, bool requires_grad) {
  FfnLayer layer;
  layer.variant = variant;
  layer.use_bias = use_bias;
  layer.w1 = init_matrix(d_model, d_ff, rng, requires_grad);
  if (is_gated(variant)) layer.v = init_matrix(d_model, d_ff, rng, requires_grad);
  layer.w2 = init_matrix(d_ff, d_model, rng, requires_grad);
  if (use_bias) {
    layer.b1 = Tensor::zeros({d_ff}, requires_grad);
    if (is_gated(variant)) layer.c = Tensor::zeros({d_ff}, requires_grad);
    layer.b2 = Tensor::zeros({d_model}, requires_grad);
  }
  layer.validate();
  return layer;
}

Tensor ffn_forward(const FfnLayer& layer, const Tensor& x) {
  layer.validate();
  if (x.shape().back() != layer.d_model()) {
    throw std::invalid_argument("ffn_forward: input width " +
                                std::to_string(x.shape().back()) +
                                " != d_model " +
                                std::to_string(layer.d_model()));
  }
  Tensor h = matmul(x, layer.w1);
  if (layer.use_bias) h = add(h, layer.b1);
  h = activation(h, variant_activation(layer.variant), layer.swish_beta);
  if (is_gated(layer.variant)) {
    Tensor gate_arg = matmul(x, layer.v);
    if (layer.use_bias) gate_arg = add(gate_arg, layer.c);
    h = mul(h, gate_arg);
  }
  Tensor out = matmul(h, layer.w2);
  if (layer.use_bias) out = add(out, layer.b2);
  return out;
}

int64_t matched_hidden_width(int64_t d_ff_base, int64_t multiple_of) {
  if (d_ff_base < multiple_of || multiple_of <= 0) {
    throw std::invalid_argument("matched_hidden_width: d_ff_base must be >= multiple_of > 0");
  }
  int64_t width = (2 * d_ff_base / 3) / multiple_of * multiple_of;
  if (width == 0) {
    throw std::invalid_argument("matched_hidden_width: no positive multiple of " +
                                std::to_string(multiple_of) + " fits in 2/3 of " +
                                std::to_string(d_ff_base));
  }
  return width;
}

int64_t parameter_count(FfnVariant variant, int64_t d_model, int64_t d_ff,
                        bool use_bias) {
  if (d_model <= 0 || d_ff <= 0) {
    throw std::invalid_argument("parameter_count: dimensions must be positive");
  }
  int64_t matrices = is_gated(variant) ? 3 : 2;
  int64_t count = matrices * d_model * d_ff;
  if (use_bias) {
    count += (is_gated(variant) ? 2 : 1) * d_ff + d_model;
  }
  return count;
}

int64_t flop_count(FfnVariant variant, int64_t d_model, int64_t d_ff,
                   int64_t tokens) {
  if (d_model <= 0 || d_ff <= 0 || tokens < 0) {
    throw std::invalid_argument("flop_count: invalid arguments");
  }
  int64_t matrices = is_gated(variant) ? 3 : 2;
  return 2 * tokens * matrices * d_model * d_ff;
}

int64_t ffn_elementwise_count(FfnVariant variant, int64_t d_ff, int64_t tokens) {
  int64_t per_token = d_ff;                      // activation evaluations
  if (is_gated(variant)) per_token += d_ff;      // gate products
  return tokens * per_token;
}

}  // namespace ffnlab
