#pragma once

// Minimal reverse-mode autodiff over dense float32 tensors. Each op builds a
// fresh node holding its forward value and a backward closure; the tape is
// whatever graph the forward pass built, torn down when the last handle
// drops. Gradients accumulate (+=) so shared subgraphs and multi-sample
// batches work without extra machinery.

#include <cassert>
#include <functional>
#include <memory>
#include <unordered_set>

#include "cloze/common.hpp"

namespace cloze {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline int shape_numel(const Shape& s) {
  int n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeMismatchError("non-positive dim in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

struct autograd {
  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }
};

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(autograd::enabled()) { autograd::enabled() = false; }
  ~NoGradGuard() { autograd::enabled() = prev; }
};

namespace detail {
struct Node {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;  // allocated on first touch
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<float>& grad_buf() {
    if (grad.empty()) grad.assign(value.size(), 0.0f);
    return grad;
  }
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), 0.0f, requires_grad);
  }

  static Tensor filled(Shape shape, float v, bool requires_grad = false) {
    auto n = std::make_shared<detail::Node>();
    int numel = shape_numel(shape);
    n->shape = std::move(shape);
    n->value.assign(size_t(numel), v);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from_values(Shape shape, std::vector<float> values, bool requires_grad = false) {
    if (shape_numel(shape) != int(values.size()))
      throw ShapeMismatchError("from_values: shape " + shape_str(shape) + " needs " +
                               std::to_string(shape_numel(shape)) + " values, got " +
                               std::to_string(values.size()));
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(float v, bool requires_grad = false) { return filled({1}, v, requires_grad); }

  static Tensor randn(Shape shape, Rng& rng, float stddev = 1.0f, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.values()) v = rand_normal(rng) * stddev;
    return t;
  }

  static Tensor uniform(Shape shape, Rng& rng, float lo, float hi, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.values()) v = float(rand_uniform(rng, lo, hi));
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape.at(size_t(i)); }
  int ndim() const { return int(node_->shape.size()); }
  int numel() const { return int(node_->value.size()); }

  std::vector<float>& values() { return node_->value; }
  const std::vector<float>& values() const { return node_->value; }
  std::vector<float>& grad() { return node_->grad_buf(); }
  bool has_grad() const { return !node_->grad.empty(); }

  float item() const {
    if (numel() != 1) throw ShapeMismatchError("item() on non-scalar " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool b) { node_->requires_grad = b; }
  void zero_grad() { node_->grad.clear(); }

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline Tensor make_op(Shape shape, std::vector<float> value, std::vector<Tensor> parents,
                      std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool rg = false;
  if (autograd::enabled())
    for (const auto& p : parents) rg = rg || p.requires_grad();
  n->requires_grad = rg;
  if (rg) {
    for (auto& p : parents) n->parents.push_back(p.node());
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

}  // namespace detail

// Runs reverse-mode accumulation from a scalar loss.
inline void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ShapeMismatchError("backward() needs a scalar, got " + shape_str(loss.shape()));
  if (!loss.requires_grad())
    throw MissingGradError("backward() on a tensor that does not require grad");

  // topo order via iterative DFS
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      detail::Node* p = n->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  // Interior (op) nodes get a fresh accumulator each pass so re-running
  // backward on the same graph never double-counts; leaf grads accumulate.
  for (detail::Node* n : order)
    if (n->backward && !n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), 0.0f);
  loss.node()->grad_buf()[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

// ---------------------------------------------------------------------------
// Dense kernels (row-major). C is accumulated into.

namespace detail {

inline void sgemm_acc(int n, int k, int m, const float* A, const float* B, float* C) {
  for (int i = 0; i < n; ++i) {
    const float* a = A + size_t(i) * size_t(k);
    float* c = C + size_t(i) * size_t(m);
    for (int p = 0; p < k; ++p) {
      float av = a[p];
      if (av == 0.0f) continue;
      const float* b = B + size_t(p) * size_t(m);
      for (int j = 0; j < m; ++j) c[j] += av * b[j];
    }
  }
}

// C[k x m] += A^T B for A [n x k], B [n x m]
inline void sgemm_atb_acc(int n, int k, int m, const float* A, const float* B, float* C) {
  for (int i = 0; i < n; ++i) {
    const float* a = A + size_t(i) * size_t(k);
    const float* b = B + size_t(i) * size_t(m);
    for (int p = 0; p < k; ++p) {
      float av = a[p];
      if (av == 0.0f) continue;
      float* c = C + size_t(p) * size_t(m);
      for (int j = 0; j < m; ++j) c[j] += av * b[j];
    }
  }
}

inline std::vector<float> transpose_buf(const std::vector<float>& a, int n, int m) {
  std::vector<float> t(a.size());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) t[size_t(j) * size_t(n) + size_t(i)] = a[size_t(i) * size_t(m) + size_t(j)];
  return t;
}

inline void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2) throw ShapeMismatchError(std::string(op) + ": expected 2-D, got " + shape_str(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and shape ops

inline Tensor add(const Tensor& a, const Tensor& b) {
  // same shape, scalar broadcast, or row broadcast of a vector over a matrix
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa == sb) {
    std::vector<float> out(a.values());
    for (int i = 0; i < b.numel(); ++i) out[size_t(i)] += b.values()[size_t(i)];
    return detail::make_op(sa, std::move(out), {a, b}, [](detail::Node& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) {
        auto& g = pa.grad_buf();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (pb.requires_grad) {
        auto& g = pb.grad_buf();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    });
  }
  if (b.numel() == 1) {
    std::vector<float> out(a.values());
    float bv = b.values()[0];
    for (auto& v : out) v += bv;
    return detail::make_op(sa, std::move(out), {a, b}, [](detail::Node& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) {
        auto& g = pa.grad_buf();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (pb.requires_grad) {
        double acc = 0;
        for (float g : self.grad) acc += g;
        pb.grad_buf()[0] += float(acc);
      }
    });
  }
  if (sa.size() == 2 && sb.size() == 1 && sa[1] == sb[0]) {
    std::vector<float> out(a.values());
    int n = sa[0], m = sa[1];
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) out[size_t(i) * size_t(m) + size_t(j)] += b.values()[size_t(j)];
    return detail::make_op(sa, std::move(out), {a, b}, [n, m](detail::Node& self) {
      auto& pa = *self.parents[0];
      auto& pb = *self.parents[1];
      if (pa.requires_grad) {
        auto& g = pa.grad_buf();
        for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (pb.requires_grad) {
        auto& g = pb.grad_buf();
        for (int j = 0; j < m; ++j) {
          double acc = 0;
          for (int i = 0; i < n; ++i) acc += self.grad[size_t(i) * size_t(m) + size_t(j)];
          g[size_t(j)] += float(acc);
        }
      }
    });
  }
  throw ShapeMismatchError("add: incompatible shapes " + shape_str(sa) + " and " + shape_str(sb));
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeMismatchError("mul: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<float> out(a.values());
  for (int i = 0; i < b.numel(); ++i) out[size_t(i)] *= b.values()[size_t(i)];
  return detail::make_op(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buf();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buf();
      for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

inline Tensor scale(const Tensor& a, float c) {
  std::vector<float> out(a.values());
  for (auto& v : out) v *= c;
  return detail::make_op(a.shape(), std::move(out), {a}, [c](detail::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buf();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
  });
}

inline Tensor relu(const Tensor& a) {
  std::vector<float> out(a.values());
  for (auto& v : out) v = v > 0.0f ? v : 0.0f;
  return detail::make_op(a.shape(), std::move(out), {a}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buf();
    for (size_t i = 0; i < g.size(); ++i) g[i] += pa.value[i] > 0.0f ? self.grad[i] : 0.0f;
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeMismatchError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape) +
                             " changes element count");
  return detail::make_op(std::move(shape), a.values(), {a}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buf();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_2d(a, "transpose");
  int n = a.dim(0), m = a.dim(1);
  auto out = detail::transpose_buf(a.values(), n, m);
  return detail::make_op({m, n}, std::move(out), {a}, [n, m](detail::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buf();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j)
        g[size_t(i) * size_t(m) + size_t(j)] += self.grad[size_t(j) * size_t(n) + size_t(i)];
  });
}

inline Tensor slice_cols(const Tensor& a, int c0, int c1) {
  detail::require_2d(a, "slice_cols");
  int n = a.dim(0), m = a.dim(1);
  if (c0 < 0 || c1 > m || c0 >= c1)
    throw ShapeMismatchError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) +
                             ") out of " + shape_str(a.shape()));
  int w = c1 - c0;
  std::vector<float> out(size_t(n) * size_t(w));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < w; ++j)
      out[size_t(i) * size_t(w) + size_t(j)] = a.values()[size_t(i) * size_t(m) + size_t(c0 + j)];
  return detail::make_op({n, w}, std::move(out), {a}, [n, m, c0, w](detail::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buf();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < w; ++j)
        g[size_t(i) * size_t(m) + size_t(c0 + j)] += self.grad[size_t(i) * size_t(w) + size_t(j)];
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeMismatchError("concat_cols: no parts");
  int n = parts[0].dim(0), total = 0;
  for (const auto& p : parts) {
    detail::require_2d(p, "concat_cols");
    if (p.dim(0) != n)
      throw ShapeMismatchError("concat_cols: row mismatch " + shape_str(parts[0].shape()) +
                               " vs " + shape_str(p.shape()));
    total += p.dim(1);
  }
  std::vector<float> out(size_t(n) * size_t(total));
  std::vector<int> widths;
  int at = 0;
  for (const auto& p : parts) {
    int w = p.dim(1);
    widths.push_back(w);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < w; ++j)
        out[size_t(i) * size_t(total) + size_t(at + j)] = p.values()[size_t(i) * size_t(w) + size_t(j)];
    at += w;
  }
  return detail::make_op({n, total}, std::move(out), parts, [n, total, widths](detail::Node& self) {
    int c0 = 0;
    for (size_t pi = 0; pi < self.parents.size(); ++pi) {
      auto& p = *self.parents[pi];
      int w = widths[pi];
      if (p.requires_grad) {
        auto& g = p.grad_buf();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < w; ++j)
            g[size_t(i) * size_t(w) + size_t(j)] += self.grad[size_t(i) * size_t(total) + size_t(c0 + j)];
      }
      c0 += w;
    }
  });
}

inline Tensor sum(const Tensor& a) {
  double acc = 0;
  for (float v : a.values()) acc += v;
  return detail::make_op({1}, {float(acc)}, {a}, [](detail::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buf();
    for (auto& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  double acc = 0;
  for (float v : a.values()) acc += v;
  float inv = 1.0f / float(a.numel());
  return detail::make_op({1}, {float(acc / a.numel())}, {a}, [inv](detail::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buf();
    for (auto& v : g) v += self.grad[0] * inv;
  });
}

// ---------------------------------------------------------------------------
// Matrix multiply

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_2d(a, "matmul");
  detail::require_2d(b, "matmul");
  if (a.dim(1) != b.dim(0))
    throw ShapeMismatchError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  int n = a.dim(0), k = a.dim(1), m = b.dim(1);
  std::vector<float> out(size_t(n) * size_t(m), 0.0f);
  detail::sgemm_acc(n, k, m, a.values().data(), b.values().data(), out.data());
  return detail::make_op({n, m}, std::move(out), {a, b}, [n, k, m](detail::Node& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto bt = detail::transpose_buf(pb.value, k, m);  // [m,k]
      detail::sgemm_acc(n, m, k, self.grad.data(), bt.data(), pa.grad_buf().data());
    }
    if (pb.requires_grad)
      detail::sgemm_atb_acc(n, k, m, pa.value.data(), self.grad.data(), pb.grad_buf().data());
  });
}

// ---------------------------------------------------------------------------
// Row-wise (masked) softmax family. `mask` entries are additive 0 / -inf;
// shape [cols] (shared by all rows) or the full logits shape.

inline Tensor masked_softmax(const Tensor& x, const Tensor* mask = nullptr) {
  detail::require_2d(x, "masked_softmax");
  int n = x.dim(0), m = x.dim(1);
  bool row_mask = false;
  if (mask) {
    if (mask->shape() == Shape{m})
      row_mask = true;
    else if (mask->shape() != x.shape())
      throw ShapeMismatchError("masked_softmax: mask " + shape_str(mask->shape()) +
                               " does not fit logits " + shape_str(x.shape()));
  }
  std::vector<float> out(size_t(n) * size_t(m));
  for (int i = 0; i < n; ++i) {
    const float* xi = x.values().data() + size_t(i) * size_t(m);
    const float* mi = nullptr;
    if (mask) mi = mask->values().data() + (row_mask ? 0 : size_t(i) * size_t(m));
    float best = -std::numeric_limits<float>::infinity();
    for (int j = 0; j < m; ++j) {
      float z = xi[j] + (mi ? mi[j] : 0.0f);
      best = std::max(best, z);
    }
    if (!(best > -std::numeric_limits<float>::infinity()))
      throw AllMaskedRowError("masked_softmax: row " + std::to_string(i) + " fully masked");
    double denom = 0;
    float* oi = out.data() + size_t(i) * size_t(m);
    for (int j = 0; j < m; ++j) {
      float z = xi[j] + (mi ? mi[j] : 0.0f);
      float e = std::isinf(z) ? 0.0f : std::exp(z - best);
      oi[j] = e;
      denom += e;
    }
    float inv = float(1.0 / denom);
    for (int j = 0; j < m; ++j) oi[j] *= inv;
  }
  std::vector<Tensor> parents{x};
  return detail::make_op({n, m}, std::move(out), std::move(parents), [n, m](detail::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buf();
    for (int i = 0; i < n; ++i) {
      const float* p = self.value.data() + size_t(i) * size_t(m);
      const float* dy = self.grad.data() + size_t(i) * size_t(m);
      double dot = 0;
      for (int j = 0; j < m; ++j) dot += double(dy[j]) * double(p[j]);
      float* gi = g.data() + size_t(i) * size_t(m);
      for (int j = 0; j < m; ++j) gi[j] += p[j] * (dy[j] - float(dot));
    }
  });
}

inline Tensor softmax_rows(const Tensor& x) { return masked_softmax(x, nullptr); }

inline Tensor log_softmax_rows(const Tensor& x) {
  detail::require_2d(x, "log_softmax");
  int n = x.dim(0), m = x.dim(1);
  std::vector<float> out(size_t(n) * size_t(m));
  for (int i = 0; i < n; ++i) {
    const float* xi = x.values().data() + size_t(i) * size_t(m);
    float best = xi[0];
    for (int j = 1; j < m; ++j) best = std::max(best, xi[j]);
    double denom = 0;
    for (int j = 0; j < m; ++j) denom += std::exp(double(xi[j]) - double(best));
    float lse = best + float(std::log(denom));
    float* oi = out.data() + size_t(i) * size_t(m);
    for (int j = 0; j < m; ++j) oi[j] = xi[j] - lse;
  }
  return detail::make_op({n, m}, std::move(out), {x}, [n, m](detail::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buf();
    for (int i = 0; i < n; ++i) {
      const float* lp = self.value.data() + size_t(i) * size_t(m);
      const float* dy = self.grad.data() + size_t(i) * size_t(m);
      double tot = 0;
      for (int j = 0; j < m; ++j) tot += dy[j];
      float* gi = g.data() + size_t(i) * size_t(m);
      for (int j = 0; j < m; ++j) gi[j] += dy[j] - float(std::exp(double(lp[j])) * tot);
    }
  });
}

// ---------------------------------------------------------------------------
// Layer norm over rows of a 2-D tensor

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         float eps = 1e-5f) {
  detail::require_2d(x, "layer_norm");
  int n = x.dim(0), d = x.dim(1);
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    throw ShapeMismatchError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                             shape_str(bias.shape()) + " do not fit " + shape_str(x.shape()));
  std::vector<float> out(size_t(n) * size_t(d));
  std::vector<float> xhat(size_t(n) * size_t(d));
  std::vector<float> inv_sigma(size_t(n), 0.0f);
  for (int i = 0; i < n; ++i) {
    const float* xi = x.values().data() + size_t(i) * size_t(d);
    double mu = 0;
    for (int j = 0; j < d; ++j) mu += xi[j];
    mu /= d;
    double var = 0;
    for (int j = 0; j < d; ++j) var += (xi[j] - mu) * (xi[j] - mu);
    var /= d;
    float is = float(1.0 / std::sqrt(var + eps));
    inv_sigma[size_t(i)] = is;
    for (int j = 0; j < d; ++j) {
      float xh = (xi[j] - float(mu)) * is;
      xhat[size_t(i) * size_t(d) + size_t(j)] = xh;
      out[size_t(i) * size_t(d) + size_t(j)] = xh * gain.values()[size_t(j)] + bias.values()[size_t(j)];
    }
  }
  return detail::make_op({n, d}, std::move(out), {x, gain, bias},
                         [n, d, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](detail::Node& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    for (int i = 0; i < n; ++i) {
      const float* dy = self.grad.data() + size_t(i) * size_t(d);
      const float* xh = xhat.data() + size_t(i) * size_t(d);
      if (pg.requires_grad) {
        auto& gg = pg.grad_buf();
        for (int j = 0; j < d; ++j) gg[size_t(j)] += dy[j] * xh[j];
      }
      if (pb.requires_grad) {
        auto& gb = pb.grad_buf();
        for (int j = 0; j < d; ++j) gb[size_t(j)] += dy[j];
      }
      if (px.requires_grad) {
        // dx = (1/sigma) * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
        double m1 = 0, m2 = 0;
        for (int j = 0; j < d; ++j) {
          float dxh = dy[j] * pg.value[size_t(j)];
          m1 += dxh;
          m2 += double(dxh) * double(xh[j]);
        }
        m1 /= d;
        m2 /= d;
        auto& gx = px.grad_buf();
        float is = inv_sigma[size_t(i)];
        for (int j = 0; j < d; ++j) {
          float dxh = dy[j] * pg.value[size_t(j)];
          gx[size_t(i) * size_t(d) + size_t(j)] += is * (dxh - float(m1) - xh[j] * float(m2));
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Dropout (inverted scaling, deterministic per rng state)

inline Tensor dropout(const Tensor& x, float rate, Rng& rng, bool training) {
  if (!training || rate <= 0.0f) return x;
  if (rate >= 1.0f) throw std::invalid_argument("dropout rate must be < 1");
  float keep = 1.0f - rate;
  std::vector<float> mask(size_t(x.numel()));
  for (auto& v : mask) v = rand_uniform(rng) < double(rate) ? 0.0f : 1.0f / keep;
  std::vector<float> out(x.values());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return detail::make_op(x.shape(), std::move(out), {x}, [mask = std::move(mask)](detail::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buf();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

// ---------------------------------------------------------------------------
// Embedding lookup: table [V, D] gathered by ids -> [ids.size(), D]

inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  detail::require_2d(table, "embedding_lookup");
  int v = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= v)
      throw ShapeMismatchError("embedding_lookup: id " + std::to_string(id) + " outside table " +
                               shape_str(table.shape()));
  int L = int(ids.size());
  std::vector<float> out(size_t(L) * size_t(d));
  for (int i = 0; i < L; ++i)
    std::copy_n(table.values().data() + size_t(ids[size_t(i)]) * size_t(d), size_t(d),
                out.data() + size_t(i) * size_t(d));
  return detail::make_op({L, d}, std::move(out), {table}, [ids, d](detail::Node& self) {
    auto& pt = *self.parents[0];
    if (!pt.requires_grad) return;
    auto& g = pt.grad_buf();
    for (size_t i = 0; i < ids.size(); ++i) {
      const float* dy = self.grad.data() + i * size_t(d);
      float* gi = g.data() + size_t(ids[i]) * size_t(d);
      for (int j = 0; j < d; ++j) gi[j] += dy[j];
    }
  });
}

// ---------------------------------------------------------------------------
// conv2d: x [C,H,W], w [O,C,kh,kw], bias [O], stride 1, symmetric zero pad.
// Images here use background 0 after inversion, so zero padding is neutral.

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int pad) {
  if (x.ndim() != 3 || w.ndim() != 4)
    throw ShapeMismatchError("conv2d: x " + shape_str(x.shape()) + " w " + shape_str(w.shape()));
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C)
    throw ShapeMismatchError("conv2d: channel mismatch x " + shape_str(x.shape()) + " w " +
                             shape_str(w.shape()));
  if (b.shape() != Shape{O})
    throw ShapeMismatchError("conv2d: bias " + shape_str(b.shape()) + " for " +
                             std::to_string(O) + " filters");
  int Ho = H + 2 * pad - kh + 1, Wo = W + 2 * pad - kw + 1;
  if (Ho <= 0 || Wo <= 0)
    throw ShapeMismatchError("conv2d: kernel " + shape_str(w.shape()) + " too large for " +
                             shape_str(x.shape()));
  const int ckk = C * kh * kw;
  const int hw = Ho * Wo;

  // im2col
  std::vector<float> col(size_t(hw) * size_t(ckk), 0.0f);
  for (int oy = 0; oy < Ho; ++oy)
    for (int ox = 0; ox < Wo; ++ox) {
      float* row = col.data() + (size_t(oy) * size_t(Wo) + size_t(ox)) * size_t(ckk);
      for (int c = 0; c < C; ++c)
        for (int dy = 0; dy < kh; ++dy) {
          int iy = oy + dy - pad;
          if (iy < 0 || iy >= H) continue;
          const float* src = x.values().data() + (size_t(c) * size_t(H) + size_t(iy)) * size_t(W);
          float* dst = row + (size_t(c) * size_t(kh) + size_t(dy)) * size_t(kw);
          for (int dx = 0; dx < kw; ++dx) {
            int ix = ox + dx - pad;
            if (ix >= 0 && ix < W) dst[dx] = src[ix];
          }
        }
    }

  // kernel matrix [ckk, O]
  std::vector<float> kmat(size_t(ckk) * size_t(O));
  for (int o = 0; o < O; ++o)
    for (int q = 0; q < ckk; ++q)
      kmat[size_t(q) * size_t(O) + size_t(o)] = w.values()[size_t(o) * size_t(ckk) + size_t(q)];

  std::vector<float> outmat(size_t(hw) * size_t(O), 0.0f);
  detail::sgemm_acc(hw, ckk, O, col.data(), kmat.data(), outmat.data());

  std::vector<float> out(size_t(O) * size_t(hw));
  for (int p = 0; p < hw; ++p) {
    const float* r = outmat.data() + size_t(p) * size_t(O);
    for (int o = 0; o < O; ++o) out[size_t(o) * size_t(hw) + size_t(p)] = r[o] + b.values()[size_t(o)];
  }

  return detail::make_op(
      {O, Ho, Wo}, std::move(out), {x, w, b},
      [C, H, W, O, kh, kw, pad, Ho, Wo, ckk, hw, col = std::move(col),
       kmat = std::move(kmat)](detail::Node& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        auto& pb = *self.parents[2];
        // grad as [hw, O]
        std::vector<float> dout(size_t(hw) * size_t(O));
        for (int o = 0; o < O; ++o)
          for (int p = 0; p < hw; ++p)
            dout[size_t(p) * size_t(O) + size_t(o)] = self.grad[size_t(o) * size_t(hw) + size_t(p)];
        if (pb.requires_grad) {
          auto& gb = pb.grad_buf();
          for (int o = 0; o < O; ++o) {
            double acc = 0;
            for (int p = 0; p < hw; ++p) acc += self.grad[size_t(o) * size_t(hw) + size_t(p)];
            gb[size_t(o)] += float(acc);
          }
        }
        if (pw.requires_grad) {
          std::vector<float> dk(size_t(ckk) * size_t(O), 0.0f);
          detail::sgemm_atb_acc(hw, ckk, O, col.data(), dout.data(), dk.data());
          auto& gw = pw.grad_buf();
          for (int o = 0; o < O; ++o)
            for (int q = 0; q < ckk; ++q)
              gw[size_t(o) * size_t(ckk) + size_t(q)] += dk[size_t(q) * size_t(O) + size_t(o)];
        }
        if (px.requires_grad) {
          std::vector<float> kt = detail::transpose_buf(kmat, ckk, O);  // [O, ckk]
          std::vector<float> dcol(size_t(hw) * size_t(ckk), 0.0f);
          detail::sgemm_acc(hw, O, ckk, dout.data(), kt.data(), dcol.data());
          auto& gx = px.grad_buf();
          for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
              const float* row = dcol.data() + (size_t(oy) * size_t(Wo) + size_t(ox)) * size_t(ckk);
              for (int c = 0; c < C; ++c)
                for (int dy = 0; dy < kh; ++dy) {
                  int iy = oy + dy - pad;
                  if (iy < 0 || iy >= H) continue;
                  float* dst = gx.data() + (size_t(c) * size_t(H) + size_t(iy)) * size_t(W);
                  const float* src = row + (size_t(c) * size_t(kh) + size_t(dy)) * size_t(kw);
                  for (int dx = 0; dx < kw; ++dx) {
                    int ix = ox + dx - pad;
                    if (ix >= 0 && ix < W) dst[ix] += src[dx];
                  }
                }
            }
        }
      });
}

// maxpool over non-overlapping (kh, kw) windows; dims must divide evenly
inline Tensor maxpool2d(const Tensor& x, int kh, int kw) {
  if (x.ndim() != 3) throw ShapeMismatchError("maxpool2d: expected [C,H,W], got " + shape_str(x.shape()));
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (kh <= 0 || kw <= 0 || H % kh != 0 || W % kw != 0)
    throw ShapeMismatchError("maxpool2d: window " + std::to_string(kh) + "x" + std::to_string(kw) +
                             " does not tile " + shape_str(x.shape()));
  int Ho = H / kh, Wo = W / kw;
  std::vector<float> out(size_t(C) * size_t(Ho) * size_t(Wo));
  std::vector<int> argmax(out.size());
  for (int c = 0; c < C; ++c)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        float best = -std::numeric_limits<float>::infinity();
        int best_at = -1;
        for (int dy = 0; dy < kh; ++dy)
          for (int dx = 0; dx < kw; ++dx) {
            int iy = oy * kh + dy, ix = ox * kw + dx;
            size_t at = (size_t(c) * size_t(H) + size_t(iy)) * size_t(W) + size_t(ix);
            if (x.values()[at] > best) {
              best = x.values()[at];
              best_at = int(at);
            }
          }
        size_t oat = (size_t(c) * size_t(Ho) + size_t(oy)) * size_t(Wo) + size_t(ox);
        out[oat] = best;
        argmax[oat] = best_at;
      }
  return detail::make_op({C, Ho, Wo}, std::move(out), {x},
                         [argmax = std::move(argmax)](detail::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buf();
    for (size_t i = 0; i < argmax.size(); ++i) g[size_t(argmax[i])] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Mean cross entropy over selected rows of logits [n, m]

inline Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets,
                                 const std::vector<uint8_t>& valid) {
  detail::require_2d(logits, "cross_entropy_rows");
  int n = logits.dim(0), m = logits.dim(1);
  if (int(targets.size()) != n || int(valid.size()) != n)
    throw LengthMismatchError("cross_entropy_rows: " + std::to_string(targets.size()) +
                              " targets / " + std::to_string(valid.size()) + " valid flags for " +
                              std::to_string(n) + " rows");
  int count = 0;
  for (auto v : valid) count += v ? 1 : 0;
  if (count == 0) throw LengthMismatchError("cross_entropy_rows: no valid rows");
  for (int i = 0; i < n; ++i)
    if (valid[size_t(i)] && (targets[size_t(i)] < 0 || targets[size_t(i)] >= m))
      throw ShapeMismatchError("cross_entropy_rows: target " + std::to_string(targets[size_t(i)]) +
                               " outside " + std::to_string(m) + " classes");

  std::vector<float> probs(size_t(n) * size_t(m));
  double loss = 0;
  for (int i = 0; i < n; ++i) {
    const float* xi = logits.values().data() + size_t(i) * size_t(m);
    float best = xi[0];
    for (int j = 1; j < m; ++j) best = std::max(best, xi[j]);
    double denom = 0;
    for (int j = 0; j < m; ++j) denom += std::exp(double(xi[j]) - double(best));
    float* pi = probs.data() + size_t(i) * size_t(m);
    for (int j = 0; j < m; ++j) pi[j] = float(std::exp(double(xi[j]) - double(best)) / denom);
    if (valid[size_t(i)])
      loss -= double(xi[targets[size_t(i)]]) - double(best) - std::log(denom);
  }
  loss /= count;
  return detail::make_op({1}, {float(loss)}, {logits},
                         [n, m, count, targets, valid, probs = std::move(probs)](detail::Node& self) {
    auto& pa = *self.parents[0];
    if (!pa.requires_grad) return;
    auto& g = pa.grad_buf();
    float s = self.grad[0] / float(count);
    for (int i = 0; i < n; ++i) {
      if (!valid[size_t(i)]) continue;
      const float* pi = probs.data() + size_t(i) * size_t(m);
      float* gi = g.data() + size_t(i) * size_t(m);
      for (int j = 0; j < m; ++j) gi[j] += s * pi[j];
      gi[targets[size_t(i)]] -= s;
    }
  });
}

}  // namespace cloze
