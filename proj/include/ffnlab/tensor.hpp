#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ffnlab {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Tensor-wide precision mode. F32 rounds every freshly produced value buffer
// through float storage; accumulation itself stays in double.
enum class Precision { F64, F32 };
void set_precision(Precision p);
Precision precision();

// Disables tape recording inside its scope (evaluation, finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};
bool grad_enabled();

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches this node
  bool requires_grad = false;
  bool detached = false;
  bool consumed = false;  // set once a backward pass has run through this node
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  std::vector<double>& ensure_grad();
};

// Dense row-major real tensor participating in a reverse-mode tape.
// Copying a Tensor copies the handle, not the buffer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t ndim() const;
  int64_t dim(int axis) const;
  int64_t size() const;
  const std::vector<double>& data() const;
  std::vector<double>& mutable_data();

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  const std::vector<double>& grad() const;
  void zero_grad();

  double item() const;
  Tensor detach() const;

  // Treats *this as the scalar loss and populates grads of every
  // requires_grad tensor reachable through the tape. A second backward
  // through the same graph is an error.
  void backward() const;

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

// ---- operations ------------------------------------------------------------

// a: [.., m, k] x b: [k, n] -> [.., m, n]
Tensor matmul(const Tensor& a, const Tensor& b);
// a: [L.., m, k] x b: [L.., k, n] -> [L.., m, n], matching leading dims
Tensor bmm(const Tensor& a, const Tensor& b);
// b's shape must equal a's shape or a trailing suffix of it (bias broadcast)
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
// componentwise product, identical shapes
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// swaps the last two axes
Tensor transpose(const Tensor& a);
Tensor permute(const Tensor& a, const std::vector<int>& perm);
Tensor reshape(const Tensor& a, Shape shape);
// concatenation along the last axis
Tensor concat(const std::vector<Tensor>& parts);
Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len);
// sum of all elements -> scalar
Tensor reduce_sum(const Tensor& a);
// last-axis softmax / log-softmax, both with max subtraction
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
// table: [rows, cols]; result: [id_shape.., cols]
Tensor embedding_lookup(const Tensor& table, const std::vector<int64_t>& ids,
                        Shape id_shape);
// x: [.., n], gain: [n]; y = gain * x / sqrt(mean(x^2) + eps)
Tensor rms_normalize(const Tensor& x, const Tensor& gain, double eps = 1e-6);
// log_probs: [.., vocab], targets: one id per row, pad rows skipped.
// Returns the scalar sum of -log_probs[row, target[row]].
Tensor nll_sum(const Tensor& log_probs, const std::vector<int64_t>& targets,
               int64_t pad_id);
int64_t count_non_pad(const std::vector<int64_t>& targets, int64_t pad_id);

// Throws if t contains NaN or Inf, naming `what`.
void check_finite(const Tensor& t, const std::string& what);

// Central-difference gradient check of a scalar-valued f against the tape.
// Returns max over coordinates of |analytic - numeric| / max(1, |a|, |n|).
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& x, double eps);

}  // namespace ffnlab
