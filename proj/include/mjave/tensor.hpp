#pragma once

// Minimal dense 2-D tensor with reverse-mode automatic differentiation.
//
// Every tensor is a row-major matrix; scalars are [1 x 1]. Operations build
// an implicit DAG of nodes (parents created before children), and backward()
// walks the reachable nodes in reverse creation order, which is a valid
// reverse topological order. All reductions use a fixed summation order, so
// repeated backward passes over the same graph are bit-identical.
//
// Values are checked for finiteness after every public operation; a NaN/Inf
// raises NumericError naming the operation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mjave/errors.hpp"

namespace mjave {

namespace detail {

inline std::uint64_t next_node_id() {
  static std::uint64_t counter = 0;
  return ++counter;
}

template <typename T>
struct Node {
  std::uint64_t id = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily; same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void(Node<T>&)> backprop;  // empty for leaves
  const char* op = "leaf";

  std::size_t size() const { return rows * cols; }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using Node = detail::Node<T>;

  Tensor() = default;

  Tensor(std::size_t rows, std::size_t cols, T fill = T(0),
         bool requires_grad = false)
      : node_(make_node(rows, cols, std::vector<T>(rows * cols, fill),
                        requires_grad)) {}

  Tensor(std::size_t rows, std::size_t cols, std::vector<T> data,
         bool requires_grad = false) {
    if (data.size() != rows * cols) {
      std::ostringstream os;
      os << "tensor: data length " << data.size() << " does not match shape ["
         << rows << " x " << cols << "]";
      throw ShapeError(os.str());
    }
    node_ = make_node(rows, cols, std::move(data), requires_grad);
    check_finite("tensor");
  }

  static Tensor scalar(T v) { return Tensor(1, 1, std::vector<T>{v}); }

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->size(); }
  std::vector<std::size_t> shape() const { return {rows(), cols()}; }
  bool requires_grad() const { return node_->requires_grad; }
  // Leaf-only toggle, used to freeze parameter groups.
  void set_requires_grad(bool enabled) {
    node_->requires_grad = enabled;
    if (enabled) node_->ensure_grad();
  }
  const char* op() const { return node_->op; }
  std::uint64_t node_id() const { return node_->id; }

  const std::vector<T>& value() const { return node_->value; }
  T operator()(std::size_t r, std::size_t c) const {
    return node_->value[r * cols() + c];
  }
  // Scalar extraction; the tensor must be [1 x 1].
  T item() const {
    if (rows() != 1 || cols() != 1) {
      throw ShapeError("item: tensor is " + shape_str() + ", expected [1 x 1]");
    }
    return node_->value[0];
  }

  // Mutable access is reserved for construction-time init, optimizer updates
  // and finite-difference probing. Anything built on top of this tensor
  // (graph nodes) sees stale values after mutation, so only leaves should be
  // touched.
  std::vector<T>& mutable_value() { return node_->value; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const std::vector<T>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    node_->ensure_grad();
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[" << rows() << " x " << cols() << "]";
    return os.str();
  }

  std::shared_ptr<Node> node() const { return node_; }

  void check_finite(const char* op_name) const {
    const auto& v = node_->value;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!std::isfinite(v[i])) {
        std::ostringstream os;
        os << op_name << ": non-finite value at flat index " << i << " of "
           << shape_str();
        throw NumericError(os.str());
      }
    }
  }

  static Tensor from_node(std::shared_ptr<Node> n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  static std::shared_ptr<Node> make_node(std::size_t rows, std::size_t cols,
                                         std::vector<T> data,
                                         bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->id = detail::next_node_id();
    n->rows = rows;
    n->cols = cols;
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    if (requires_grad) n->ensure_grad();
    return n;
  }

  std::shared_ptr<Node> node_;
};

namespace detail {

template <typename T>
std::shared_ptr<Node<T>> make_op_node(
    const char* op, std::size_t rows, std::size_t cols, std::vector<T> value,
    std::vector<std::shared_ptr<Node<T>>> parents,
    std::function<void(Node<T>&)> backprop) {
  auto n = std::make_shared<Node<T>>();
  n->id = next_node_id();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(value);
  n->op = op;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  n->requires_grad = needs;
  if (needs) {
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
  }
  return n;
}

template <typename T>
Tensor<T> finish_op(const char* op, std::size_t rows, std::size_t cols,
                    std::vector<T> value,
                    std::vector<std::shared_ptr<Node<T>>> parents,
                    std::function<void(Node<T>&)> backprop) {
  auto out = Tensor<T>::from_node(make_op_node<T>(
      op, rows, cols, std::move(value), std::move(parents), std::move(backprop)));
  out.check_finite(op);
  return out;
}

[[noreturn]] inline void shape_fail(const char* op, const std::string& a,
                                    const std::string& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a + " and " + b);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Core operations
// ---------------------------------------------------------------------------

// C = A * B with A [m x k], B [k x n]. Gradients dA = G * B^T, dB = A^T * G.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows()) detail::shape_fail("matmul", a.shape_str(), b.shape_str());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<T> out(m * n, T(0));
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = av[i * k + p];
      if (aip == T(0)) continue;
      const std::size_t bo = p * n;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[bo + j];
    }
  }
  auto an = a.node();
  auto bn = b.node();
  return detail::finish_op<T>(
      "matmul", m, n, std::move(out), {an, bn},
      [an, bn, m, k, n](detail::Node<T>& self) {
        const auto& g = self.grad;
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              const T gij = g[i * n + j];
              if (gij == T(0)) continue;
              for (std::size_t p = 0; p < k; ++p)
                an->grad[i * k + p] += gij * bn->value[p * n + j];
            }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const T aip = an->value[i * k + p];
              if (aip == T(0)) continue;
              for (std::size_t j = 0; j < n; ++j)
                bn->grad[p * n + j] += aip * g[i * n + j];
            }
        }
      });
}

// C = A * B^T with A [m x k], B [n x k]. The usual layout for weights stored
// as [out x in]. Gradients dA = G * B, dB = G^T * A.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.cols())
    detail::shape_fail("matmul_nt", a.shape_str(), b.shape_str());
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<T> out(m * n, T(0));
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      T acc = T(0);
      const std::size_t ao = i * k, bo = j * k;
      for (std::size_t p = 0; p < k; ++p) acc += av[ao + p] * bv[bo + p];
      out[i * n + j] = acc;
    }
  auto an = a.node();
  auto bn = b.node();
  return detail::finish_op<T>(
      "matmul_nt", m, n, std::move(out), {an, bn},
      [an, bn, m, k, n](detail::Node<T>& self) {
        const auto& g = self.grad;
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              const T gij = g[i * n + j];
              if (gij == T(0)) continue;
              for (std::size_t p = 0; p < k; ++p)
                an->grad[i * k + p] += gij * bn->value[j * k + p];
            }
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t j = 0; j < n; ++j)
            for (std::size_t i = 0; i < m; ++i) {
              const T gij = g[i * n + j];
              if (gij == T(0)) continue;
              for (std::size_t p = 0; p < k; ++p)
                bn->grad[j * k + p] += gij * an->value[i * k + p];
            }
        }
      });
}

namespace detail {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    shape_fail(op, a.shape_str(), b.shape_str());
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  auto an = a.node();
  auto bn = b.node();
  return detail::finish_op<T>(
      "add", a.rows(), a.cols(), std::move(out), {an, bn},
      [an, bn](detail::Node<T>& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            bn->grad[i] += self.grad[i];
        }
      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  auto an = a.node();
  auto bn = b.node();
  return detail::finish_op<T>(
      "sub", a.rows(), a.cols(), std::move(out), {an, bn},
      [an, bn](detail::Node<T>& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            bn->grad[i] -= self.grad[i];
        }
      });
}

// Hadamard product.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto an = a.node();
  auto bn = b.node();
  return detail::finish_op<T>(
      "mul", a.rows(), a.cols(), std::move(out), {an, bn},
      [an, bn](detail::Node<T>& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            bn->grad[i] += self.grad[i] * an->value[i];
        }
      });
}

// Elementwise a * X + b with compile-time constants (covers scaling, negation
// and 1 - x).
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T a, T b) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x.value()[i] + b;
  auto xn = x.node();
  return detail::finish_op<T>(
      "affine", x.rows(), x.cols(), std::move(out), {xn},
      [xn, a](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          xn->grad[i] += a * self.grad[i];
      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T a) {
  return affine(x, a, T(0));
}

// A [m x n] + row vector r [1 x n] broadcast over rows.
template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& a, const Tensor<T>& r) {
  if (r.rows() != 1 || r.cols() != a.cols())
    detail::shape_fail("add_rowvec", a.shape_str(), r.shape_str());
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = a.value()[i * n + j] + r.value()[j];
  auto an = a.node();
  auto rn = r.node();
  return detail::finish_op<T>(
      "add_rowvec", m, n, std::move(out), {an, rn},
      [an, rn, m, n](detail::Node<T>& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i];
        }
        if (rn->requires_grad) {
          rn->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
              rn->grad[j] += self.grad[i * n + j];
        }
      });
}

// A + s broadcast, with s a [1 x 1] tensor.
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, const Tensor<T>& s) {
  if (s.rows() != 1 || s.cols() != 1)
    detail::shape_fail("add_scalar", a.shape_str(), s.shape_str());
  std::vector<T> out(a.size());
  const T sv = s.value()[0];
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + sv;
  auto an = a.node();
  auto sn = s.node();
  return detail::finish_op<T>(
      "add_scalar", a.rows(), a.cols(), std::move(out), {an, sn},
      [an, sn](detail::Node<T>& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i];
        }
        if (sn->requires_grad) {
          sn->ensure_grad();
          T acc = T(0);
          for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i];
          sn->grad[0] += acc;
        }
      });
}

// Row scaling: C_ij = A_ij * s_i with s a column vector [m x 1].
template <typename T>
Tensor<T> scale_rows(const Tensor<T>& a, const Tensor<T>& s) {
  if (s.rows() != a.rows() || s.cols() != 1)
    detail::shape_fail("scale_rows", a.shape_str(), s.shape_str());
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < m; ++i) {
    const T si = s.value()[i];
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.value()[i * n + j] * si;
  }
  auto an = a.node();
  auto sn = s.node();
  return detail::finish_op<T>(
      "scale_rows", m, n, std::move(out), {an, sn},
      [an, sn, m, n](detail::Node<T>& self) {
        if (an->requires_grad) {
          an->ensure_grad();
          for (std::size_t i = 0; i < m; ++i) {
            const T si = sn->value[i];
            for (std::size_t j = 0; j < n; ++j)
              an->grad[i * n + j] += self.grad[i * n + j] * si;
          }
        }
        if (sn->requires_grad) {
          sn->ensure_grad();
          for (std::size_t i = 0; i < m; ++i) {
            T acc = T(0);
            for (std::size_t j = 0; j < n; ++j)
              acc += self.grad[i * n + j] * an->value[i * n + j];
            sn->grad[i] += acc;
          }
        }
      });
}

// Elementwise logistic sigmoid, computed in the overflow-free form and with
// the output clamped into the open interval (0, 1).
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  static const T lo = std::numeric_limits<T>::min();
  static const T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.value()[i];
    T y;
    if (v >= T(0)) {
      y = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      y = e / (T(1) + e);
    }
    out[i] = std::min(hi, std::max(lo, y));
  }
  auto xn = x.node();
  auto on = detail::make_op_node<T>(
      "sigmoid", x.rows(), x.cols(), std::move(out), {xn},
      [xn](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const T y = self.value[i];
          xn->grad[i] += self.grad[i] * y * (T(1) - y);
        }
      });
  auto t = Tensor<T>::from_node(on);
  t.check_finite("sigmoid");
  return t;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x.value()[i] > T(0) ? x.value()[i] : T(0);
  auto xn = x.node();
  return detail::finish_op<T>(
      "relu", x.rows(), x.cols(), std::move(out), {xn},
      [xn](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          if (xn->value[i] > T(0)) xn->grad[i] += self.grad[i];
      });
}

// log(max(x, floor)). The gradient is 1/x inside the domain and 0 where the
// floor is active, so a clamped argument contributes no spurious signal.
template <typename T>
Tensor<T> log_floored(const Tensor<T>& x, T floor = T(1e-12)) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::log(std::max(x.value()[i], floor));
  auto xn = x.node();
  return detail::finish_op<T>(
      "log_floored", x.rows(), x.cols(), std::move(out), {xn},
      [xn, floor](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const T v = xn->value[i];
          if (v > floor) xn->grad[i] += self.grad[i] / v;
        }
      });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(hi, std::max(lo, x.value()[i]));
  auto xn = x.node();
  return detail::finish_op<T>(
      "clamp", x.rows(), x.cols(), std::move(out), {xn},
      [xn, lo, hi](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const T v = xn->value[i];
          if (v > lo && v < hi) xn->grad[i] += self.grad[i];
        }
      });
}

// Row-wise softmax over the columns where mask[j] is true. Masked columns are
// exactly zero in the output. Stabilized by max subtraction. Every row must
// have at least one unmasked column.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, const std::vector<unsigned char>& mask) {
  if (mask.size() != x.cols()) {
    std::ostringstream os;
    os << "masked_softmax: mask length " << mask.size() << " does not match "
       << x.shape_str();
    throw ShapeError(os.str());
  }
  bool any = false;
  for (auto m : mask) any = any || (m != 0);
  if (!any) throw ShapeError("masked_softmax: fully masked row (no unmasked column)");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<T> out(x.size(), T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if (mask[j] && x.value()[i * n + j] > mx) mx = x.value()[i * n + j];
    T denom = T(0);
    for (std::size_t j = 0; j < n; ++j)
      if (mask[j]) {
        const T e = std::exp(x.value()[i * n + j] - mx);
        out[i * n + j] = e;
        denom += e;
      }
    for (std::size_t j = 0; j < n; ++j)
      if (mask[j]) out[i * n + j] /= denom;
  }
  auto xn = x.node();
  auto on = detail::make_op_node<T>(
      "masked_softmax", m, n, std::move(out), {xn},
      [xn, mask, m, n](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
          T dot = T(0);
          for (std::size_t j = 0; j < n; ++j)
            if (mask[j]) dot += self.grad[i * n + j] * self.value[i * n + j];
          for (std::size_t j = 0; j < n; ++j)
            if (mask[j])
              xn->grad[i * n + j] +=
                  self.value[i * n + j] * (self.grad[i * n + j] - dot);
        }
      });
  auto t = Tensor<T>::from_node(on);
  t.check_finite("masked_softmax");
  return t;
}

// Softmax over all columns of each row.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  return masked_softmax(x, std::vector<unsigned char>(x.cols(), 1));
}

// Column-wise max over the rows where mask[i] is true; result is [1 x n].
// The gradient flows to the first maximal element of each column.
template <typename T>
Tensor<T> masked_colmax(const Tensor<T>& x, const std::vector<unsigned char>& mask) {
  if (mask.size() != x.rows()) {
    std::ostringstream os;
    os << "masked_colmax: mask length " << mask.size() << " does not match "
       << x.shape_str();
    throw ShapeError(os.str());
  }
  bool any = false;
  for (auto m : mask) any = any || (m != 0);
  if (!any) throw ShapeError("masked_colmax: all rows masked");
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<T> out(n);
  std::vector<std::size_t> arg(n, 0);
  for (std::size_t j = 0; j < n; ++j) {
    T best = -std::numeric_limits<T>::infinity();
    std::size_t bi = 0;
    for (std::size_t i = 0; i < m; ++i)
      if (mask[i] && x.value()[i * n + j] > best) {
        best = x.value()[i * n + j];
        bi = i;
      }
    out[j] = best;
    arg[j] = bi;
  }
  auto xn = x.node();
  return detail::finish_op<T>(
      "masked_colmax", 1, n, std::move(out), {xn},
      [xn, arg, n](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t j = 0; j < n; ++j)
          xn->grad[arg[j] * n + j] += self.grad[j];
      });
}

// Sum of all entries, as a [1 x 1] tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (std::size_t i = 0; i < x.size(); ++i) acc += x.value()[i];
  auto xn = x.node();
  return detail::finish_op<T>(
      "sum", 1, 1, std::vector<T>{acc}, {xn}, [xn](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < xn->grad.size(); ++i)
          xn->grad[i] += self.grad[0];
      });
}

// Embedding lookup: rows of table [V x d] selected by ids; repeated ids
// accumulate gradient into the same row.
template <typename T>
Tensor<T> embed(const Tensor<T>& table, const std::vector<int>& ids) {
  const std::size_t v = table.rows(), d = table.cols(), s = ids.size();
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      std::ostringstream os;
      os << "embed: id " << id << " outside table " << table.shape_str();
      throw ShapeError(os.str());
    }
  }
  std::vector<T> out(s * d);
  for (std::size_t i = 0; i < s; ++i)
    std::copy_n(table.value().begin() + static_cast<std::size_t>(ids[i]) * d, d,
                out.begin() + i * d);
  auto tn = table.node();
  return detail::finish_op<T>(
      "embed", s, d, std::move(out), {tn},
      [tn, ids, d](detail::Node<T>& self) {
        if (!tn->requires_grad) return;
        tn->ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i) {
          const std::size_t ro = static_cast<std::size_t>(ids[i]) * d;
          for (std::size_t j = 0; j < d; ++j)
            tn->grad[ro + j] += self.grad[i * d + j];
        }
      });
}

// Contiguous row slice [begin, begin + count).
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  if (begin + count > x.rows()) {
    std::ostringstream os;
    os << "slice_rows: [" << begin << ", " << begin + count << ") outside "
       << x.shape_str();
    throw ShapeError(os.str());
  }
  const std::size_t n = x.cols();
  std::vector<T> out(x.value().begin() + begin * n,
                     x.value().begin() + (begin + count) * n);
  auto xn = x.node();
  return detail::finish_op<T>(
      "slice_rows", count, n, std::move(out), {xn},
      [xn, begin, n](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t i = 0; i < self.rows; ++i)
          for (std::size_t j = 0; j < n; ++j)
            xn->grad[(begin + i) * n + j] += self.grad[i * n + j];
      });
}

// Gather scattered elements (r, c) into a [1 x P] tensor.
template <typename T>
Tensor<T> gather_elems(const Tensor<T>& x,
                       const std::vector<std::pair<std::size_t, std::size_t>>& pos) {
  const std::size_t n = x.cols();
  std::vector<T> out(pos.size());
  for (std::size_t p = 0; p < pos.size(); ++p) {
    if (pos[p].first >= x.rows() || pos[p].second >= n) {
      std::ostringstream os;
      os << "gather_elems: position (" << pos[p].first << ", " << pos[p].second
         << ") outside " << x.shape_str();
      throw ShapeError(os.str());
    }
    out[p] = x.value()[pos[p].first * n + pos[p].second];
  }
  auto xn = x.node();
  return detail::finish_op<T>(
      "gather_elems", 1, pos.size(), std::move(out), {xn},
      [xn, pos, n](detail::Node<T>& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (std::size_t p = 0; p < pos.size(); ++p)
          xn->grad[pos[p].first * n + pos[p].second] += self.grad[p];
      });
}

// Per-row layer normalization with learned gain/bias [1 x n].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps = T(1e-5)) {
  if (gamma.rows() != 1 || gamma.cols() != x.cols() || beta.rows() != 1 ||
      beta.cols() != x.cols())
    detail::shape_fail("layer_norm", x.shape_str(), gamma.shape_str());
  const std::size_t m = x.rows(), n = x.cols();
  std::vector<T> out(x.size());
  std::vector<T> inv_std(m), xhat(x.size());
  for (std::size_t i = 0; i < m; ++i) {
    T mean = T(0);
    for (std::size_t j = 0; j < n; ++j) mean += x.value()[i * n + j];
    mean /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      const T d = x.value()[i * n + j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(n);
    const T inv = T(1) / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (x.value()[i * n + j] - mean) * inv;
      xhat[i * n + j] = h;
      out[i * n + j] = gamma.value()[j] * h + beta.value()[j];
    }
  }
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  return detail::finish_op<T>(
      "layer_norm", m, n, std::move(out), {xn, gn, bn},
      [xn, gn, bn, inv_std = std::move(inv_std), xhat = std::move(xhat), m,
       n](detail::Node<T>& self) {
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
              gn->grad[j] += self.grad[i * n + j] * xhat[i * n + j];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
              bn->grad[j] += self.grad[i * n + j];
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          for (std::size_t i = 0; i < m; ++i) {
            T mean_dh = T(0), mean_dh_xhat = T(0);
            for (std::size_t j = 0; j < n; ++j) {
              const T dh = self.grad[i * n + j] * gn->value[j];
              mean_dh += dh;
              mean_dh_xhat += dh * xhat[i * n + j];
            }
            mean_dh /= static_cast<T>(n);
            mean_dh_xhat /= static_cast<T>(n);
            for (std::size_t j = 0; j < n; ++j) {
              const T dh = self.grad[i * n + j] * gn->value[j];
              xn->grad[i * n + j] +=
                  inv_std[i] * (dh - mean_dh - xhat[i * n + j] * mean_dh_xhat);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

namespace detail {

// Nodes reachable from `root`, ordered by descending creation id. Since every
// parent is created before its children, this is a reverse topological order
// and each node appears exactly once.
template <typename T>
std::vector<std::shared_ptr<Node<T>>> collect_graph(
    const std::shared_ptr<Node<T>>& root) {
  std::vector<std::shared_ptr<Node<T>>> nodes;
  std::unordered_set<const Node<T>*> seen;
  std::vector<std::shared_ptr<Node<T>>> stack{root};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    nodes.push_back(n);
    for (const auto& p : n->parents)
      if (seen.insert(p.get()).second) stack.push_back(p);
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const auto& a, const auto& b) { return a->id > b->id; });
  return nodes;
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
// reachable tensor with requires_grad; unreachable parameters keep their
// (zero-initialized) gradient buffers untouched.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + loss.shape_str());
  }
  if (!loss.requires_grad()) return;
  auto root = loss.node();
  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto& n : detail::collect_graph(root)) {
    if (n->requires_grad && n->backprop) {
      n->ensure_grad();
      n->backprop(*n);
    }
  }
}

}  // namespace mjave
