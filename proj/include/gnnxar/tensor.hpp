#pragma once

// Dense row-major matrices with define-by-run reverse-mode differentiation.
//
// Every op returns a new Tensor whose tape node keeps its parents alive for
// as long as the result is reachable. Calling backward() on a 1x1 result
// walks the tape in reverse topological order; leaf gradients accumulate
// across calls, intermediate gradients are recomputed on every call.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gnnxar/error.hpp"

namespace gnnxar {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(Shape s) {
  return "(" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + ")";
}

namespace detail {

struct TapeNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TapeNode>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(const TapeNode&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::TapeNode>()) {
    if (values.size() != shape.size()) {
      throw ShapeError("tensor value count " + std::to_string(values.size()) +
                       " does not match shape " + to_string(shape));
    }
    node_->shape = shape;
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(shape, std::vector<double>(shape.size(), 0.0), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({1, 1}, {v}, requires_grad);
  }

  static Tensor column(std::vector<double> v, bool requires_grad = false) {
    const Shape s{v.size(), 1};
    return Tensor(s, std::move(v), requires_grad);
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rows() const { return node_->shape.rows; }
  std::size_t cols() const { return node_->shape.cols; }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }

  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  // Fresh leaf holding a copy of the values.
  Tensor detach(bool requires_grad = false) const {
    return Tensor(shape(), node_->value, requires_grad);
  }

  void backward() const;

  detail::TapeNode* node() const noexcept { return node_.get(); }
  const std::shared_ptr<detail::TapeNode>& handle() const noexcept { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TapeNode> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::TapeNode> node_;

  friend Tensor make_result(Shape, std::vector<double>, std::initializer_list<Tensor>,
                            std::function<void(const detail::TapeNode&)>);
};

// Builds an op output. Parents and the backward closure are only retained
// when at least one parent participates in differentiation.
inline Tensor make_result(Shape shape, std::vector<double> values,
                          std::initializer_list<Tensor> parents,
                          std::function<void(const detail::TapeNode&)> backward) {
  auto node = std::make_shared<detail::TapeNode>();
  node->shape = shape;
  node->value = std::move(values);
  for (const Tensor& p : parents) {
    if (p.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    for (const Tensor& p : parents) node->parents.push_back(p.handle());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

inline void Tensor::backward() const {
  if (size() != 1) throw ShapeError("backward() needs a scalar, got " + to_string(shape()));
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::TapeNode*> order;
  std::unordered_set<detail::TapeNode*> seen;
  std::vector<std::pair<detail::TapeNode*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::TapeNode* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (detail::TapeNode* n : order) {
    if (n->backward) n->grad.assign(n->value.size(), 0.0);
    else n->ensure_grad();
  }
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

inline TapeNode* grad_target(const Tensor& t) {
  TapeNode* n = t.node();
  if (!n->requires_grad) return nullptr;
  n->ensure_grad();
  return n;
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  std::vector<double> out(n * m, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = bv.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  return make_result({n, m}, std::move(out), {a, b}, [a, b, n, k, m](const detail::TapeNode& self) {
    const auto& g = self.grad;
    if (auto* an = detail::grad_target(a)) {
      const auto bv = b.values();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += g[i * m + j] * bv[p * m + j];
          an->grad[i * k + p] += s;
        }
      }
    }
    if (auto* bn = detail::grad_target(b)) {
      const auto av = a.values();
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) bn->grad[p * m + j] += aip * g[i * m + j];
        }
      }
    }
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](const detail::TapeNode& self) {
    for (const Tensor* t : {&a, &b}) {
      if (auto* tn = detail::grad_target(*t)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) tn->grad[i] += self.grad[i];
      }
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result(a.shape(), std::move(out), {a, b}, [a, b](const detail::TapeNode& self) {
    if (auto* an = detail::grad_target(a)) {
      const auto bv = b.values();
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bv[i];
    }
    if (auto* bn = detail::grad_target(b)) {
      const auto av = a.values();
      for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * av[i];
    }
  });
}

// a (n x m) + bias (1 x m) broadcast over rows.
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw ShapeError("add_bias: shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(bias.shape()));
  }
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = bias.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] += bv[j];
  return make_result(a.shape(), std::move(out), {a, bias},
                     [a, bias, n, m](const detail::TapeNode& self) {
                       if (auto* an = detail::grad_target(a)) {
                         for (std::size_t i = 0; i < self.grad.size(); ++i)
                           an->grad[i] += self.grad[i];
                       }
                       if (auto* bn = detail::grad_target(bias)) {
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < m; ++j) bn->grad[j] += self.grad[i * m + j];
                       }
                     });
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= c;
  return make_result(a.shape(), std::move(out), {a}, [a, c](const detail::TapeNode& self) {
    if (auto* an = detail::grad_target(a)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += c * self.grad[i];
    }
  });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v += c;
  return make_result(a.shape(), std::move(out), {a}, [a](const detail::TapeNode& self) {
    if (auto* an = detail::grad_target(a)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  const std::size_t n = a.rows(), ca = a.cols(), cb = b.cols(), c = ca + cb;
  std::vector<double> out(n * c);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(av.data() + i * ca, ca, out.data() + i * c);
    std::copy_n(bv.data() + i * cb, cb, out.data() + i * c + ca);
  }
  return make_result({n, c}, std::move(out), {a, b}, [a, b, n, ca, cb, c](const detail::TapeNode& self) {
    if (auto* an = detail::grad_target(a)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < ca; ++j) an->grad[i * ca + j] += self.grad[i * c + j];
    }
    if (auto* bn = detail::grad_target(b)) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < cb; ++j) bn->grad[i * cb + j] += self.grad[i * c + ca + j];
    }
  });
}

// out[i] = a[indices[i]]; duplicate indices accumulate in backward.
inline Tensor gather_rows(const Tensor& a, std::vector<std::size_t> indices) {
  const std::size_t m = a.cols();
  std::vector<double> out(indices.size() * m);
  const auto av = a.values();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= a.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(indices[i]) +
                       " out of range for shape " + to_string(a.shape()));
    }
    std::copy_n(av.data() + indices[i] * m, m, out.data() + i * m);
  }
  const Shape s{indices.size(), m};
  return make_result(s, std::move(out), {a}, [a, idx = std::move(indices), m](const detail::TapeNode& self) {
    if (auto* an = detail::grad_target(a)) {
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < m; ++j) an->grad[idx[i] * m + j] += self.grad[i * m + j];
    }
  });
}

inline Tensor embedding_lookup(const Tensor& table, std::vector<std::size_t> ids) {
  return gather_rows(table, std::move(ids));
}

inline Tensor reshape(const Tensor& a, Shape s) {
  if (s.size() != a.size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(s));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return make_result(s, std::move(out), {a}, [a](const detail::TapeNode& self) {
    if (auto* an = detail::grad_target(a)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
  });
}

// Multiplies row i of a (n x m) by w[i], w is (n x 1).
inline Tensor scale_rows(const Tensor& a, const Tensor& w) {
  if (w.cols() != 1 || w.rows() != a.rows()) {
    throw ShapeError("scale_rows: shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(w.shape()));
  }
  const std::size_t n = a.rows(), m = a.cols();
  std::vector<double> out(n * m);
  const auto av = a.values();
  const auto wv = w.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = av[i * m + j] * wv[i];
  return make_result(a.shape(), std::move(out), {a, w}, [a, w, n, m](const detail::TapeNode& self) {
    if (auto* an = detail::grad_target(a)) {
      const auto wv = w.values();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) an->grad[i * m + j] += self.grad[i * m + j] * wv[i];
    }
    if (auto* wn = detail::grad_target(w)) {
      const auto av = a.values();
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += self.grad[i * m + j] * av[i * m + j];
        wn->grad[i] += s;
      }
    }
  });
}

// Sums rows of values into num_segments buckets: out[segment_ids[i]] += values[i].
inline Tensor segment_sum(const Tensor& values, std::vector<std::size_t> segment_ids,
                          std::size_t num_segments) {
  if (segment_ids.size() != values.rows()) {
    throw ShapeError("segment_sum: " + std::to_string(segment_ids.size()) +
                     " segment ids for shape " + to_string(values.shape()));
  }
  const std::size_t m = values.cols();
  std::vector<double> out(num_segments * m, 0.0);
  const auto vv = values.values();
  for (std::size_t i = 0; i < segment_ids.size(); ++i) {
    if (segment_ids[i] >= num_segments) {
      throw ShapeError("segment_sum: segment id " + std::to_string(segment_ids[i]) +
                       " out of range " + std::to_string(num_segments));
    }
    for (std::size_t j = 0; j < m; ++j) out[segment_ids[i] * m + j] += vv[i * m + j];
  }
  const Shape s{num_segments, m};
  return make_result(s, std::move(out), {values},
                     [values, ids = std::move(segment_ids), m](const detail::TapeNode& self) {
                       if (auto* vn = detail::grad_target(values)) {
                         for (std::size_t i = 0; i < ids.size(); ++i)
                           for (std::size_t j = 0; j < m; ++j)
                             vn->grad[i * m + j] += self.grad[ids[i] * m + j];
                       }
                     });
}

inline Tensor leaky_relu(const Tensor& a, double slope) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v = v > 0.0 ? v : slope * v;
  return make_result(a.shape(), std::move(out), {a}, [a, slope](const detail::TapeNode& self) {
    if (auto* an = detail::grad_target(a)) {
      const auto av = a.values();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        an->grad[i] += self.grad[i] * (av[i] > 0.0 ? 1.0 : slope);
    }
  });
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = av[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  auto y = out;
  return make_result(a.shape(), std::move(out), {a}, [a, y = std::move(y)](const detail::TapeNode& self) {
    if (auto* an = detail::grad_target(a)) {
      for (std::size_t i = 0; i < y.size(); ++i) an->grad[i] += self.grad[i] * y[i] * (1.0 - y[i]);
    }
  });
}

inline Tensor log(const Tensor& a) {
  std::vector<double> out(a.size());
  const auto av = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(av[i]);
  return make_result(a.shape(), std::move(out), {a}, [a](const detail::TapeNode& self) {
    if (auto* an = detail::grad_target(a)) {
      const auto av = a.values();
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] / av[i];
    }
  });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return make_result({1, 1}, {s}, {a}, [a](const detail::TapeNode& self) {
    if (auto* an = detail::grad_target(a)) {
      for (double& g : an->grad) g += self.grad[0];
    }
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

namespace detail {

inline std::vector<double> row_softmax(std::span<const double> v, std::size_t n, std::size_t m) {
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = v.data() + i * m;
    const double mx = *std::max_element(row, row + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += (out[i * m + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] /= z;
  }
  return out;
}

}  // namespace detail

// Row-wise softmax.
inline Tensor softmax(const Tensor& a) {
  const std::size_t n = a.rows(), m = a.cols();
  auto p = detail::row_softmax(a.values(), n, m);
  auto y = p;
  return make_result(a.shape(), std::move(p), {a}, [a, y = std::move(y), n, m](const detail::TapeNode& self) {
    if (auto* an = detail::grad_target(a)) {
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < m; ++j) dot += self.grad[i * m + j] * y[i * m + j];
        for (std::size_t j = 0; j < m; ++j)
          an->grad[i * m + j] += y[i * m + j] * (self.grad[i * m + j] - dot);
      }
    }
  });
}

// Mean over rows of -log softmax(logits)[row, target[row]].
inline Tensor softmax_cross_entropy(const Tensor& logits, std::vector<std::size_t> targets) {
  const std::size_t n = logits.rows(), m = logits.cols();
  if (targets.size() != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                     " targets for logits " + to_string(logits.shape()));
  }
  auto p = detail::row_softmax(logits.values(), n, m);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] >= m) {
      throw ShapeError("softmax_cross_entropy: target " + std::to_string(targets[i]) +
                       " out of range for " + std::to_string(m) + " classes");
    }
    const double* row = logits.values().data() + i * m;
    const double mx = *std::max_element(row, row + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(row[j] - mx);
    loss += -(row[targets[i]] - mx - std::log(z));
  }
  loss /= static_cast<double>(n);
  return make_result({1, 1}, {loss}, {logits},
                     [logits, p = std::move(p), t = std::move(targets), n, m](const detail::TapeNode& self) {
                       if (auto* ln = detail::grad_target(logits)) {
                         const double g = self.grad[0] / static_cast<double>(n);
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < m; ++j)
                             ln->grad[i * m + j] +=
                                 g * (p[i * m + j] - (j == t[i] ? 1.0 : 0.0));
                       }
                     });
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
};

// Relative error with a floor on the denominator so that near-zero gradients
// are compared absolutely.
inline double gradient_rel_error(double analytic, double numeric, double floor = 1e-3) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares analytic gradients of f against central differences for every
// element of every parameter. f must rebuild its tape on each call.
inline GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                                  double step = 1e-5) {
  for (Tensor& p : params) {
    p.set_requires_grad(true);
    p.mutable_grad();
    p.zero_grad();
  }
  f().backward();
  std::vector<std::vector<double>> analytic;
  for (Tensor& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + step;
      const double fp = f().item();
      values[i] = orig - step;
      const double fm = f().item();
      values[i] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double err = gradient_rel_error(analytic[k][i], numeric);
      ++result.checked;
      if (err > result.max_rel_error || !std::isfinite(err)) {
        result.max_rel_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
        result.worst_param = k;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace gnnxar
