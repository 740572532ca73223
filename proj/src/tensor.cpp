#include "ffnlab/tensor.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace ffnlab {

namespace {

thread_local Precision g_precision = Precision::F64;
thread_local bool g_grad_enabled = true;

void quantize(std::vector<double>& values) {
  if (g_precision == Precision::F32) {
    for (double& v : values) v = static_cast<double>(static_cast<float>(v));
  }
}

void dgemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k,
           double alpha, const double* a, int64_t lda, const double* b,
           int64_t ldb, double beta, double* c, int64_t ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<blasint>(m),
              static_cast<blasint>(n), static_cast<blasint>(k), alpha, a,
              static_cast<blasint>(lda), b, static_cast<blasint>(ldb), beta, c,
              static_cast<blasint>(ldc));
}

[[noreturn]] void shape_error(const std::string& op, const Shape& a,
                              const Shape& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a) +
                              " and " + shape_str(b));
}

bool any_requires_grad(const std::vector<Tensor>& inputs) {
  for (const Tensor& t : inputs) {
    if (t.requires_grad()) return true;
  }
  return false;
}

Tensor make_node(Shape shape, std::vector<double> data,
                 const std::vector<Tensor>& inputs,
                 std::function<void(TensorNode&)> backward_fn) {
  quantize(data);
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (g_grad_enabled && any_requires_grad(inputs)) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const Tensor& t : inputs) node->parents.push_back(t.node());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

}  // namespace

int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

void set_precision(Precision p) { g_precision = p; }
Precision precision() { return g_precision; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

std::vector<double>& TensorNode::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  int64_t n = numel(shape);
  if (n < 0 || std::any_of(shape.begin(), shape.end(),
                           [](int64_t d) { return d <= 0; })) {
    throw std::invalid_argument("tensor shape " + shape_str(shape) +
                                " has a non-positive extent");
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data.assign(static_cast<size_t>(n), value);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  if (numel(shape) != static_cast<int64_t>(data.size())) {
    throw std::invalid_argument(
        "tensor data length " + std::to_string(data.size()) +
        " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
int64_t Tensor::ndim() const { return static_cast<int64_t>(node_->shape.size()); }
int64_t Tensor::dim(int axis) const { return node_->shape.at(axis); }
int64_t Tensor::size() const { return static_cast<int64_t>(node_->data.size()); }
const std::vector<double>& Tensor::data() const { return node_->data; }
std::vector<double>& Tensor::mutable_data() { return node_->data; }

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool value) { node_->requires_grad = value; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  if (node_->grad.empty()) {
    throw std::runtime_error("tensor has no gradient; run backward() first");
  }
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

double Tensor::item() const {
  if (size() != 1) {
    throw std::invalid_argument("item() on non-scalar tensor of shape " +
                                shape_str(shape()));
  }
  return node_->data[0];
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<TensorNode>();
  node->shape = node_->shape;
  node->data = node_->data;
  node->detached = true;
  return Tensor(std::move(node));
}

void Tensor::backward() const {
  TensorNode* loss = node_.get();
  if (loss == nullptr) throw std::runtime_error("backward() on empty tensor");
  if (loss->data.size() != 1) {
    throw std::invalid_argument("backward() requires a scalar loss, got shape " +
                                shape_str(loss->shape));
  }
  if (loss->detached) {
    throw std::runtime_error("backward() on a detached tensor");
  }
  if (!loss->backward_fn && !loss->requires_grad) {
    return;  // constant loss: nothing reachable, no-op
  }

  // Post-order DFS gives parents before children; reversed, the loss runs
  // first and every node before its parents.
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  std::vector<std::pair<TensorNode*, size_t>> stack;
  stack.emplace_back(loss, 0);
  visited.insert(loss);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (node->backward_fn && node->consumed) {
      throw std::runtime_error(
          "backward() on an already-consumed graph; rebuild the forward pass");
    }
    if (next < node->parents.size()) {
      TensorNode* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss->ensure_grad()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* node = *it;
    if (node->backward_fn) {
      if (!node->grad.empty()) node->backward_fn(*node);
      node->consumed = true;
    }
  }
}

// ---- operations ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() != 2) {
    throw std::invalid_argument("matmul: need a rank>=2 and b rank 2, got " +
                                shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  }
  int64_t k = a.shape().back();
  int64_t n = b.dim(1);
  if (b.dim(0) != k) shape_error("matmul", a.shape(), b.shape());
  int64_t rows = a.size() / k;

  std::vector<double> out(static_cast<size_t>(rows * n));
  dgemm(false, false, rows, n, k, 1.0, a.data().data(), k, b.data().data(), n,
        0.0, out.data(), n);

  Shape out_shape(a.shape());
  out_shape.back() = n;
  return make_node(std::move(out_shape), std::move(out), {a, b},
                   [rows, n, k](TensorNode& node) {
                     const auto& g = node.grad;
                     auto& pa = *node.parents[0];
                     auto& pb = *node.parents[1];
                     if (pa.requires_grad) {
                       dgemm(false, true, rows, k, n, 1.0, g.data(), n,
                             pb.data.data(), n, 1.0, pa.ensure_grad().data(),
                             k);
                     }
                     if (pb.requires_grad) {
                       dgemm(true, false, k, n, rows, 1.0, pa.data.data(), k,
                             g.data(), n, 1.0, pb.ensure_grad().data(), n);
                     }
                   });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || a.ndim() != b.ndim()) {
    shape_error("bmm", a.shape(), b.shape());
  }
  size_t nd = a.shape().size();
  for (size_t i = 0; i + 2 < nd; ++i) {
    if (a.shape()[i] != b.shape()[i]) shape_error("bmm", a.shape(), b.shape());
  }
  int64_t m = a.shape()[nd - 2], k = a.shape()[nd - 1];
  int64_t n = b.shape()[nd - 1];
  if (b.shape()[nd - 2] != k) shape_error("bmm", a.shape(), b.shape());
  int64_t batches = a.size() / (m * k);

  std::vector<double> out(static_cast<size_t>(batches * m * n));
  for (int64_t l = 0; l < batches; ++l) {
    dgemm(false, false, m, n, k, 1.0, a.data().data() + l * m * k, k,
          b.data().data() + l * k * n, n, 0.0, out.data() + l * m * n, n);
  }

  Shape out_shape(a.shape());
  out_shape[nd - 1] = n;
  return make_node(std::move(out_shape), std::move(out), {a, b},
                   [batches, m, n, k](TensorNode& node) {
                     const auto& g = node.grad;
                     auto& pa = *node.parents[0];
                     auto& pb = *node.parents[1];
                     for (int64_t l = 0; l < batches; ++l) {
                       const double* gl = g.data() + l * m * n;
                       if (pa.requires_grad) {
                         dgemm(false, true, m, k, n, 1.0, gl, n,
                               pb.data.data() + l * k * n, n, 1.0,
                               pa.ensure_grad().data() + l * m * k, k);
                       }
                       if (pb.requires_grad) {
                         dgemm(true, false, k, n, m, 1.0,
                               pa.data.data() + l * m * k, k, gl, n, 1.0,
                               pb.ensure_grad().data() + l * k * n, n);
                       }
                     }
                   });
}

namespace {

// b broadcast as a trailing suffix of a's shape (covers bias vectors,
// per-row masks, per-head bias tables).
void check_suffix(const char* op, const Tensor& a, const Tensor& b) {
  if (b.ndim() > a.ndim()) shape_error(op, a.shape(), b.shape());
  size_t off = a.shape().size() - b.shape().size();
  for (size_t i = 0; i < b.shape().size(); ++i) {
    if (b.shape()[i] != a.shape()[off + i]) {
      shape_error(op, a.shape(), b.shape());
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_suffix("add", a, b);
  int64_t bs = b.size();
  std::vector<double> out(a.data());
  for (int64_t i = 0; i < a.size(); ++i) out[i] += b.data()[i % bs];
  return make_node(a.shape(), std::move(out), {a, b}, [bs](TensorNode& node) {
    const auto& g = node.grad;
    auto& pa = *node.parents[0];
    auto& pb = *node.parents[1];
    if (pa.requires_grad) {
      auto& ga = pa.ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (pb.requires_grad) {
      auto& gb = pb.ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) gb[i % bs] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  std::vector<double> out(a.data());
  for (int64_t i = 0; i < a.size(); ++i) out[i] -= b.data()[i];
  return make_node(a.shape(), std::move(out), {a, b}, [](TensorNode& node) {
    const auto& g = node.grad;
    auto& pa = *node.parents[0];
    auto& pb = *node.parents[1];
    if (pa.requires_grad) {
      auto& ga = pa.ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (pb.requires_grad) {
      auto& gb = pb.ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("elementwise_mul", a.shape(), b.shape());
  std::vector<double> out(a.data());
  for (int64_t i = 0; i < a.size(); ++i) out[i] *= b.data()[i];
  return make_node(a.shape(), std::move(out), {a, b}, [](TensorNode& node) {
    const auto& g = node.grad;
    auto& pa = *node.parents[0];
    auto& pb = *node.parents[1];
    if (pa.requires_grad) {
      auto& ga = pa.ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto& gb = pb.ensure_grad();
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa.data[i];
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data());
  for (double& v : out) v *= c;
  return make_node(a.shape(), std::move(out), {a}, [c](TensorNode& node) {
    auto& pa = *node.parents[0];
    if (pa.requires_grad) {
      auto& ga = pa.ensure_grad();
      for (size_t i = 0; i < node.grad.size(); ++i) ga[i] += c * node.grad[i];
    }
  });
}

namespace {

void transpose_2d_blocks(const double* in, double* out, int64_t batches,
                         int64_t rows, int64_t cols, bool accumulate) {
  for (int64_t l = 0; l < batches; ++l) {
    const double* src = in + l * rows * cols;
    double* dst = out + l * rows * cols;
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t c = 0; c < cols; ++c) {
        if (accumulate) {
          dst[c * rows + r] += src[r * cols + c];
        } else {
          dst[c * rows + r] = src[r * cols + c];
        }
      }
    }
  }
}

}  // namespace

Tensor transpose(const Tensor& a) {
  if (a.ndim() < 2) {
    throw std::invalid_argument("transpose: rank must be >= 2, got " +
                                shape_str(a.shape()));
  }
  size_t nd = a.shape().size();
  int64_t rows = a.shape()[nd - 2], cols = a.shape()[nd - 1];
  int64_t batches = a.size() / (rows * cols);
  std::vector<double> out(a.data().size());
  transpose_2d_blocks(a.data().data(), out.data(), batches, rows, cols, false);
  Shape out_shape(a.shape());
  std::swap(out_shape[nd - 2], out_shape[nd - 1]);
  return make_node(std::move(out_shape), std::move(out), {a},
                   [batches, rows, cols](TensorNode& node) {
                     auto& pa = *node.parents[0];
                     if (pa.requires_grad) {
                       transpose_2d_blocks(node.grad.data(),
                                           pa.ensure_grad().data(), batches,
                                           cols, rows, true);
                     }
                   });
}

Tensor permute(const Tensor& a, const std::vector<int>& perm) {
  size_t nd = a.shape().size();
  if (perm.size() != nd) {
    throw std::invalid_argument("permute: axis list length mismatch");
  }
  std::vector<bool> seen(nd, false);
  for (int p : perm) {
    if (p < 0 || static_cast<size_t>(p) >= nd || seen[p]) {
      throw std::invalid_argument("permute: invalid axis permutation");
    }
    seen[p] = true;
  }

  Shape out_shape(nd);
  for (size_t i = 0; i < nd; ++i) out_shape[i] = a.shape()[perm[i]];

  std::vector<int64_t> in_strides(nd, 1), out_strides(nd, 1);
  for (size_t i = nd - 1; i > 0; --i) {
    in_strides[i - 1] = in_strides[i] * a.shape()[i];
    out_strides[i - 1] = out_strides[i] * out_shape[i];
  }

  auto source = std::make_shared<std::vector<int64_t>>(a.size());
  for (int64_t o = 0; o < a.size(); ++o) {
    int64_t rem = o, src = 0;
    for (size_t i = 0; i < nd; ++i) {
      int64_t coord = rem / out_strides[i];
      rem %= out_strides[i];
      src += coord * in_strides[perm[i]];
    }
    (*source)[o] = src;
  }

  std::vector<double> out(a.data().size());
  for (int64_t o = 0; o < a.size(); ++o) out[o] = a.data()[(*source)[o]];
  return make_node(std::move(out_shape), std::move(out), {a},
                   [source](TensorNode& node) {
                     auto& pa = *node.parents[0];
                     if (pa.requires_grad) {
                       auto& ga = pa.ensure_grad();
                       for (size_t o = 0; o < node.grad.size(); ++o) {
                         ga[(*source)[o]] += node.grad[o];
                       }
                     }
                   });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    shape_error("reshape", a.shape(), shape);
  }
  return make_node(std::move(shape), a.data(), {a}, [](TensorNode& node) {
    auto& pa = *node.parents[0];
    if (pa.requires_grad) {
      auto& ga = pa.ensure_grad();
      for (size_t i = 0; i < node.grad.size(); ++i) ga[i] += node.grad[i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  size_t nd = parts[0].shape().size();
  int64_t total_last = 0;
  for (const Tensor& p : parts) {
    if (p.shape().size() != nd) shape_error("concat", parts[0].shape(), p.shape());
    for (size_t i = 0; i + 1 < nd; ++i) {
      if (p.shape()[i] != parts[0].shape()[i]) {
        shape_error("concat", parts[0].shape(), p.shape());
      }
    }
    total_last += p.shape().back();
  }
  Shape out_shape(parts[0].shape());
  out_shape.back() = total_last;
  int64_t rows = numel(out_shape) / total_last;

  std::vector<int64_t> widths;
  for (const Tensor& p : parts) widths.push_back(p.shape().back());

  std::vector<double> out(static_cast<size_t>(rows * total_last));
  int64_t off = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    int64_t w = widths[pi];
    const auto& src = parts[pi].data();
    for (int64_t r = 0; r < rows; ++r) {
      std::copy_n(src.data() + r * w, w, out.data() + r * total_last + off);
    }
    off += w;
  }
  return make_node(std::move(out_shape), std::move(out), parts,
                   [rows, total_last, widths](TensorNode& node) {
                     int64_t off = 0;
                     for (size_t pi = 0; pi < node.parents.size(); ++pi) {
                       int64_t w = widths[pi];
                       auto& p = *node.parents[pi];
                       if (p.requires_grad) {
                         auto& gp = p.ensure_grad();
                         for (int64_t r = 0; r < rows; ++r) {
                           for (int64_t c = 0; c < w; ++c) {
                             gp[r * w + c] += node.grad[r * total_last + off + c];
                           }
                         }
                       }
                       off += w;
                     }
                   });
}

Tensor slice(const Tensor& a, int axis, int64_t start, int64_t len) {
  if (axis < 0 || axis >= a.ndim()) {
    throw std::invalid_argument("slice: axis out of range");
  }
  int64_t extent = a.shape()[axis];
  if (start < 0 || len <= 0 || start + len > extent) {
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) +
                                ") outside extent " + std::to_string(extent));
  }
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= a.shape()[i];
  for (size_t i = axis + 1; i < a.shape().size(); ++i) inner *= a.shape()[i];

  Shape out_shape(a.shape());
  out_shape[axis] = len;
  std::vector<double> out(static_cast<size_t>(outer * len * inner));
  for (int64_t o = 0; o < outer; ++o) {
    std::copy_n(a.data().data() + (o * extent + start) * inner, len * inner,
                out.data() + o * len * inner);
  }
  return make_node(std::move(out_shape), std::move(out), {a},
                   [outer, inner, extent, start, len](TensorNode& node) {
                     auto& pa = *node.parents[0];
                     if (pa.requires_grad) {
                       auto& ga = pa.ensure_grad();
                       for (int64_t o = 0; o < outer; ++o) {
                         const double* g = node.grad.data() + o * len * inner;
                         double* dst = ga.data() + (o * extent + start) * inner;
                         for (int64_t i = 0; i < len * inner; ++i) dst[i] += g[i];
                       }
                     }
                   });
}

Tensor reduce_sum(const Tensor& a) {
  if (a.size() == 0) throw std::invalid_argument("reduce_sum: empty tensor");
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_node({1}, {total}, {a}, [](TensorNode& node) {
    auto& pa = *node.parents[0];
    if (pa.requires_grad) {
      auto& ga = pa.ensure_grad();
      for (double& v : ga) v += node.grad[0];
    }
  });
}

Tensor softmax(const Tensor& a) {
  int64_t n = a.shape().back();
  int64_t rows = a.size() / n;
  std::vector<double> out(a.data().size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * n;
    double* p = out.data() + r * n;
    double m = *std::max_element(x, x + n);
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      p[i] = std::exp(x[i] - m);
      s += p[i];
    }
    for (int64_t i = 0; i < n; ++i) p[i] /= s;
  }
  return make_node(a.shape(), std::move(out), {a}, [rows, n](TensorNode& node) {
    auto& pa = *node.parents[0];
    if (!pa.requires_grad) return;
    auto& ga = pa.ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* p = node.data.data() + r * n;
      const double* g = node.grad.data() + r * n;
      double dot = 0.0;
      for (int64_t i = 0; i < n; ++i) dot += g[i] * p[i];
      double* gx = ga.data() + r * n;
      for (int64_t i = 0; i < n; ++i) gx[i] += p[i] * (g[i] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& a) {
  int64_t n = a.shape().back();
  int64_t rows = a.size() / n;
  std::vector<double> out(a.data().size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * n;
    double* y = out.data() + r * n;
    double m = *std::max_element(x, x + n);
    double s = 0.0;
    for (int64_t i = 0; i < n; ++i) s += std::exp(x[i] - m);
    double lse = m + std::log(s);
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] - lse;
  }
  return make_node(a.shape(), std::move(out), {a}, [rows, n](TensorNode& node) {
    auto& pa = *node.parents[0];
    if (!pa.requires_grad) return;
    auto& ga = pa.ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* y = node.data.data() + r * n;
      const double* g = node.grad.data() + r * n;
      double gsum = 0.0;
      for (int64_t i = 0; i < n; ++i) gsum += g[i];
      double* gx = ga.data() + r * n;
      for (int64_t i = 0; i < n; ++i) gx[i] += g[i] - std::exp(y[i]) * gsum;
    }
  });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int64_t>& ids,
                        Shape id_shape) {
  if (table.ndim() != 2) {
    throw std::invalid_argument("embedding_lookup: table must be rank 2");
  }
  if (numel(id_shape) != static_cast<int64_t>(ids.size())) {
    throw std::invalid_argument("embedding_lookup: id count does not match shape");
  }
  int64_t rows = table.dim(0), cols = table.dim(1);
  for (int64_t id : ids) {
    if (id < 0 || id >= rows) {
      throw std::out_of_range("embedding_lookup: token id " +
                              std::to_string(id) + " outside table of " +
                              std::to_string(rows) + " rows");
    }
  }
  std::vector<double> out(ids.size() * cols);
  for (size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(table.data().data() + ids[i] * cols, cols,
                out.data() + i * cols);
  }
  Shape out_shape(std::move(id_shape));
  out_shape.push_back(cols);
  auto ids_copy = std::make_shared<std::vector<int64_t>>(ids);
  return make_node(std::move(out_shape), std::move(out), {table},
                   [ids_copy, cols](TensorNode& node) {
                     auto& pt = *node.parents[0];
                     if (!pt.requires_grad) return;
                     auto& gt = pt.ensure_grad();
                     for (size_t i = 0; i < ids_copy->size(); ++i) {
                       const double* g = node.grad.data() + i * cols;
                       double* dst = gt.data() + (*ids_copy)[i] * cols;
                       for (int64_t c = 0; c < cols; ++c) dst[c] += g[c];
                     }
                   });
}

Tensor rms_normalize(const Tensor& x, const Tensor& gain, double eps) {
  int64_t n = x.shape().back();
  if (gain.ndim() != 1 || gain.dim(0) != n) {
    shape_error("rms_normalize", x.shape(), gain.shape());
  }
  int64_t rows = x.size() / n;
  auto inv_r = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.data().size());
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * n;
    double ms = 0.0;
    for (int64_t i = 0; i < n; ++i) ms += xr[i] * xr[i];
    ms /= static_cast<double>(n);
    double ir = 1.0 / std::sqrt(ms + eps);
    (*inv_r)[r] = ir;
    double* yr = out.data() + r * n;
    for (int64_t i = 0; i < n; ++i) yr[i] = gain.data()[i] * xr[i] * ir;
  }
  return make_node(x.shape(), std::move(out), {x, gain},
                   [rows, n, inv_r](TensorNode& node) {
                     auto& px = *node.parents[0];
                     auto& pg = *node.parents[1];
                     for (int64_t r = 0; r < rows; ++r) {
                       const double* xr = px.data.data() + r * n;
                       const double* go = node.grad.data() + r * n;
                       double ir = (*inv_r)[r];
                       if (pg.requires_grad) {
                         auto& gg = pg.ensure_grad();
                         for (int64_t i = 0; i < n; ++i) {
                           gg[i] += go[i] * xr[i] * ir;
                         }
                       }
                       if (px.requires_grad) {
                         auto& gx = px.ensure_grad();
                         const auto& gain = pg.data;
                         double dot = 0.0;
                         for (int64_t i = 0; i < n; ++i) {
                           dot += go[i] * gain[i] * xr[i];
                         }
                         double c = dot * ir * ir * ir / static_cast<double>(n);
                         double* gxr = gx.data() + r * n;
                         for (int64_t i = 0; i < n; ++i) {
                           gxr[i] += go[i] * gain[i] * ir - xr[i] * c;
                         }
                       }
                     }
                   });
}

Tensor nll_sum(const Tensor& log_probs, const std::vector<int64_t>& targets,
               int64_t pad_id) {
  int64_t vocab = log_probs.shape().back();
  int64_t rows = log_probs.size() / vocab;
  if (rows != static_cast<int64_t>(targets.size())) {
    throw std::invalid_argument("nll_sum: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(rows) +
                                " rows");
  }
  double total = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    int64_t t = targets[r];
    if (t == pad_id) continue;
    if (t < 0 || t >= vocab) {
      throw std::out_of_range("nll_sum: target id " + std::to_string(t) +
                              " outside vocab of " + std::to_string(vocab));
    }
    total -= log_probs.data()[r * vocab + t];
  }
  auto targets_copy = std::make_shared<std::vector<int64_t>>(targets);
  return make_node({1}, {total}, {log_probs},
                   [targets_copy, vocab, pad_id](TensorNode& node) {
                     auto& p = *node.parents[0];
                     if (!p.requires_grad) return;
                     auto& gp = p.ensure_grad();
                     double g0 = node.grad[0];
                     for (size_t r = 0; r < targets_copy->size(); ++r) {
                       int64_t t = (*targets_copy)[r];
                       if (t == pad_id) continue;
                       gp[r * vocab + t] -= g0;
                     }
                   });
}

int64_t count_non_pad(const std::vector<int64_t>& targets, int64_t pad_id) {
  int64_t n = 0;
  for (int64_t t : targets) n += (t != pad_id);
  return n;
}

void check_finite(const Tensor& t, const std::string& what) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw std::runtime_error("non-finite value in " + what);
    }
  }
}

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f,
                               const Tensor& x, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) {
    throw std::invalid_argument("finite_difference_check: eps must be in (0, 1e-2]");
  }
  Tensor var = Tensor::from_data(x.shape(), x.data(), true);
  Tensor y = f(var);
  if (y.size() != 1) {
    throw std::invalid_argument("finite_difference_check: f must be scalar-valued");
  }
  y.backward();
  std::vector<double> analytic = var.has_grad()
                                     ? var.grad()
                                     : std::vector<double>(x.size(), 0.0);

  NoGradGuard no_grad;
  std::vector<double> probe = x.data();
  double worst = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) {
    double orig = probe[i];
    probe[i] = orig + eps;
    double fp = f(Tensor::from_data(x.shape(), probe)).item();
    probe[i] = orig - eps;
    double fm = f(Tensor::from_data(x.shape(), probe)).item();
    probe[i] = orig;
    double numeric = (fp - fm) / (2.0 * eps);
    double a = analytic[i];
    double err = std::abs(a - numeric) /
                 std::max({1.0, std::abs(a), std::abs(numeric)});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace ffnlab
