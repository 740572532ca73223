#include "ffnlab/activations.hpp"

#include <cmath>
#include <stdexcept>

namespace ffnlab {

namespace {

constexpr double kInvSqrtPi = 0.564189583547756286948;   // 1/sqrt(pi)
constexpr double kInvSqrt2 = 0.707106781186547524401;    // 1/sqrt(2)
constexpr double kInvSqrt2Pi = 0.398942280401432677940;  // 1/sqrt(2*pi)

// Maclaurin series erf(x) = 2/sqrt(pi) * sum (-1)^n x^(2n+1) / (n! (2n+1)),
// adequate for |x| < 2.5 where cancellation costs at most ~2 digits.
double erf_series(double x) {
  double term = x;
  double sum = x;
  double x2 = x * x;
  for (int n = 1; n < 200; ++n) {
    term *= -x2 / n;
    double contrib = term / (2 * n + 1);
    sum += contrib;
    if (std::abs(contrib) < 1e-18 * std::abs(sum)) break;
  }
  return 2.0 * kInvSqrtPi * sum;
}

// Continued fraction for erfc(x), x >= 2.5 (modified Lentz):
// erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
double erfc_cf(double x) {
  constexpr double tiny = 1e-300;
  double f = x, c = f, d = 0.0;
  for (int n = 1; n < 300; ++n) {
    double a = n * 0.5;
    d = x + a * d;
    if (d == 0.0) d = tiny;
    c = x + a / c;
    if (c == 0.0) c = tiny;
    d = 1.0 / d;
    double delta = c * d;
    f *= delta;
    if (std::abs(delta - 1.0) < 1e-17) break;
  }
  return std::exp(-x * x) * kInvSqrtPi / f;
}

}  // namespace

double erf_approx(double x) {
  double ax = std::abs(x);
  double r;
  if (ax < 2.5) {
    r = erf_series(ax);
  } else if (ax < 6.0) {
    r = 1.0 - erfc_cf(ax);
  } else {
    r = 1.0;  // erfc(6) ~ 2e-17, below the 1e-12 budget
  }
  return x < 0 ? -r : r;
}

double sigmoid(double x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

double relu(double x) { return x > 0 ? x : 0.0; }

double normal_cdf(double x) { return 0.5 * (1.0 + erf_approx(x * kInvSqrt2)); }

double gelu(double x) { return x * normal_cdf(x); }

double swish(double x, double beta) { return x * sigmoid(beta * x); }

double sigmoid_deriv(double x) {
  double s = sigmoid(x);
  return s * (1.0 - s);
}

double relu_deriv(double x) { return x > 0 ? 1.0 : 0.0; }

double gelu_deriv(double x) {
  double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return normal_cdf(x) + x * pdf;
}

double swish_deriv(double x, double beta) {
  double s = sigmoid(beta * x);
  return s + beta * x * s * (1.0 - s);
}

double activation_value(ActivationKind kind, double x, double beta) {
  switch (kind) {
    case ActivationKind::Identity: return x;
    case ActivationKind::Sigmoid: return sigmoid(x);
    case ActivationKind::ReLU: return relu(x);
    case ActivationKind::GELU: return gelu(x);
    case ActivationKind::Swish: return swish(x, beta);
  }
  throw std::invalid_argument("unknown activation kind");
}

double activation_deriv(ActivationKind kind, double x, double beta) {
  switch (kind) {
    case ActivationKind::Identity: return 1.0;
    case ActivationKind::Sigmoid: return sigmoid_deriv(x);
    case ActivationKind::ReLU: return relu_deriv(x);
    case ActivationKind::GELU: return gelu_deriv(x);
    case ActivationKind::Swish: return swish_deriv(x, beta);
  }
  throw std::invalid_argument("unknown activation kind");
}

Tensor activation(const Tensor& x, ActivationKind kind, double beta) {
  if (!std::isfinite(beta)) {
    throw std::invalid_argument("activation: beta must be finite");
  }
  std::vector<double> out(x.data());
  for (double& v : out) v = activation_value(kind, v, beta);
  if (precision() == Precision::F32) {
    for (double& v : out) v = static_cast<double>(static_cast<float>(v));
  }
  Tensor y = Tensor::from_data(x.shape(), std::move(out));
  // Record on the tape by hand: derivative needs the op input.
  if (grad_enabled() && x.requires_grad()) {
    auto& node = *y.node();
    node.requires_grad = true;
    node.parents = {x.node()};
    node.backward_fn = [kind, beta](TensorNode& n) {
      auto& px = *n.parents[0];
      if (!px.requires_grad) return;
      auto& gx = px.ensure_grad();
      for (size_t i = 0; i < n.grad.size(); ++i) {
        gx[i] += n.grad[i] * activation_deriv(kind, px.data[i], beta);
      }
    };
  }
  return y;
}

}  // namespace ffnlab
