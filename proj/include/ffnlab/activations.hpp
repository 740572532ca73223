#pragma once

#include "ffnlab/tensor.hpp"

namespace ffnlab {

// Scalar nonlinearities with exact analytic derivatives.
// GELU uses the exact erf form, not a tanh/sigmoid approximation.

enum class ActivationKind { Identity, Sigmoid, ReLU, GELU, Swish };

// Error function, rational/series approximation accurate to <= 1e-12
// absolute error (validated against the committed oracle table).
double erf_approx(double x);

// Stable logistic: never overflows for finite x.
double sigmoid(double x);
double relu(double x);
// Standard normal CDF via erf_approx.
double normal_cdf(double x);
// x * Phi(x)
double gelu(double x);
// x * sigmoid(beta * x)
double swish(double x, double beta);

double sigmoid_deriv(double x);
// Subgradient at 0 is 0, matching max(x, 0).
double relu_deriv(double x);
// Phi(x) + x * phi(x)
double gelu_deriv(double x);
// sigma(bx) + bx * sigma(bx) * (1 - sigma(bx))
double swish_deriv(double x, double beta);

double activation_value(ActivationKind kind, double x, double beta = 1.0);
double activation_deriv(ActivationKind kind, double x, double beta = 1.0);

// Elementwise application on the tape.
Tensor activation(const Tensor& x, ActivationKind kind, double beta = 1.0);

}  // namespace ffnlab
