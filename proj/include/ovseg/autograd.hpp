// Copyright 2026 The ovseg Authors.
// SPDX-License-Identifier: Apache-2.0

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// A Tape records every operation of one forward pass. Leaves that do not
// require gradients (inputs, frozen weights) make downstream nodes skip their
// backward closures entirely, so frozen sub-networks cost a forward pass only.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include "ovseg/tensor.hpp"

namespace ovseg::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }
  Var leaf(Tensor value, bool requires_grad = true) {
    return push(std::move(value), requires_grad, nullptr);
  }

  /// Leaf bound to a persistent weight tensor. Repeated calls with the same
  /// tensor return the same node, so gradients from several uses accumulate.
  Var parameter(const Tensor& weight, bool trainable) {
    if (auto it = param_nodes_.find(&weight); it != param_nodes_.end())
      return Var(this, it->second);
    Var v = push(weight, trainable, nullptr);
    param_nodes_.emplace(&weight, v.id());
    return v;
  }

  /// Gradient of a parameter after backward(); empty tensor when the
  /// parameter was not used or is not trainable.
  const Tensor* param_grad(const Tensor& weight) const {
    auto it = param_nodes_.find(&weight);
    if (it == param_nodes_.end()) return nullptr;
    const Node& n = nodes_[static_cast<std::size_t>(it->second)];
    return n.grad.empty() ? nullptr : &n.grad;
  }

  Var record(Tensor value, std::span<const Var> parents, BackwardFn fn) {
    bool any = std::any_of(parents.begin(), parents.end(),
                           [](const Var& p) { return p.requires_grad(); });
    return push(std::move(value), any, any ? std::move(fn) : nullptr);
  }

  void backward(const Var& loss) {
    if (loss.value().size() != 1)
      throw ValidationError("backward() expects a scalar loss, got shape " +
                            shape_str(loss.shape()));
    if (!loss.requires_grad()) return;
    grad_ref(loss.id())[0] += 1.0;
    for (int i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.backward || n.grad.empty()) continue;
      n.backward(*this, n.grad);
    }
  }

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const {
    return nodes_[static_cast<std::size_t>(id)].requires_grad;
  }

  /// Gradient buffer of a node, allocated as zeros on first access.
  Tensor& grad_ref(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
    return n.grad;
  }

  const Tensor& grad(const Var& v) {
    return grad_ref(v.id());
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(fn)});
    return Var(this, static_cast<int>(nodes_.size() - 1));
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, int> param_nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ValidationError(std::string(op) + ": shape mismatch " +
                          shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline void accumulate(Tape& t, const Var& v, const Tensor& g) {
  if (!v.requires_grad()) return;
  Tensor& dst = t.grad_ref(v.id());
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

template <typename F>
Var unary(const Var& x, Tensor out, F&& grad_fn) {
  Tape& t = *x.tape();
  Var parents[] = {x};
  return t.record(std::move(out), parents,
                  [x, grad_fn = std::forward<F>(grad_fn)](Tape& t, const Tensor& g) {
                    if (!x.requires_grad()) return;
                    Tensor& dx = t.grad_ref(x.id());
                    grad_fn(t, g, dx);
                  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Element-wise arithmetic

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  Var parents[] = {a, b};
  return a.tape()->record(std::move(out), parents, [a, b](Tape& t, const Tensor& g) {
    detail::accumulate(t, a, g);
    detail::accumulate(t, b, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  Var parents[] = {a, b};
  return a.tape()->record(std::move(out), parents, [a, b](Tape& t, const Tensor& g) {
    detail::accumulate(t, a, g);
    if (b.requires_grad()) {
      Tensor& db = t.grad_ref(b.id());
      for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  Var parents[] = {a, b};
  return a.tape()->record(std::move(out), parents, [a, b](Tape& t, const Tensor& g) {
    if (a.requires_grad()) {
      Tensor& da = t.grad_ref(a.id());
      const Tensor& bv = b.value();
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      Tensor& db = t.grad_ref(b.id());
      const Tensor& av = a.value();
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
    }
  });
}

inline Var scale(const Var& x, double s) {
  Tensor out = x.value();
  for (auto& v : out.values()) v *= s;
  return detail::unary(x, std::move(out), [s](Tape&, const Tensor& g, Tensor& dx) {
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += s * g[i];
  });
}

inline Var add_scalar(const Var& x, double s) {
  Tensor out = x.value();
  for (auto& v : out.values()) v += s;
  return detail::unary(x, std::move(out), [](Tape&, const Tensor& g, Tensor& dx) {
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

inline Var abs(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = std::fabs(v);
  return detail::unary(x, std::move(out), [x](Tape&, const Tensor& g, Tensor& dx) {
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < g.size(); ++i)
      dx[i] += xv[i] > 0 ? g[i] : (xv[i] < 0 ? -g[i] : 0.0);
  });
}

inline double sigmoid_scalar(double v) { return 1.0 / (1.0 + std::exp(-v)); }

inline Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = sigmoid_scalar(v);
  Var parents[] = {x};
  Tape& tape = *x.tape();
  int self = static_cast<int>(tape.size());
  return tape.record(std::move(out), parents, [x, self](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor& dx = t.grad_ref(x.id());
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

/// Exact (erf-based) GELU.
inline Var gelu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.values()) v = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
  return detail::unary(x, std::move(out), [x](Tape&, const Tensor& g, Tensor& dx) {
    const Tensor& xv = x.value();
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    for (std::size_t i = 0; i < g.size(); ++i) {
      double v = xv[i];
      double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
      double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
      dx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra (tensors viewed as matrices over their last dimension)

/// a [.., k] times b [k, n] -> [.., n].
inline Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.rank() != 2 || av.cols() != bv.dim(0))
    throw ValidationError("matmul: shape mismatch " + shape_str(av.shape()) +
                          " x " + shape_str(bv.shape()));
  const std::size_t m = av.rows(), k = av.cols(), n = bv.dim(1);
  Shape out_shape = av.shape();
  out_shape.back() = n;
  Tensor out(out_shape);
  gemm_nn(av.data(), bv.data(), out.data(), m, k, n);
  Var parents[] = {a, b};
  return a.tape()->record(std::move(out), parents, [a, b, m, k, n](Tape& t, const Tensor& g) {
    if (a.requires_grad())
      gemm_nt(g.data(), b.value().data(), t.grad_ref(a.id()).data(), m, n, k, true);
    if (b.requires_grad())
      gemm_tn(a.value().data(), g.data(), t.grad_ref(b.id()).data(), m, k, n, true);
  });
}

/// a [m, k] times b[n, k]^T -> [m, n].
inline Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols())
    throw ValidationError("matmul_nt: shape mismatch " + shape_str(av.shape()) +
                          " x " + shape_str(bv.shape()) + "^T");
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  Tensor out({m, n});
  gemm_nt(av.data(), bv.data(), out.data(), m, k, n);
  Var parents[] = {a, b};
  return a.tape()->record(std::move(out), parents, [a, b, m, k, n](Tape& t, const Tensor& g) {
    if (a.requires_grad())
      gemm_nn(g.data(), b.value().data(), t.grad_ref(a.id()).data(), m, n, k, true);
    if (b.requires_grad())
      gemm_tn(g.data(), a.value().data(), t.grad_ref(b.id()).data(), m, n, k, true);
  });
}

/// Adds bias [n] to every row of x [.., n].
inline Var add_bias(const Var& x, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.size() != xv.cols())
    throw ValidationError("add_bias: bias " + shape_str(bv.shape()) +
                          " does not match " + shape_str(xv.shape()));
  Tensor out = xv;
  const std::size_t m = xv.rows(), n = xv.cols();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bv[c];
  Var parents[] = {x, bias};
  return x.tape()->record(std::move(out), parents, [x, bias, m, n](Tape& t, const Tensor& g) {
    detail::accumulate(t, x, g);
    if (bias.requires_grad()) {
      Tensor& db = t.grad_ref(bias.id());
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) db[c] += g[r * n + c];
    }
  });
}

inline Var linear(const Var& x, const Var& weight, const Var& bias) {
  return add_bias(matmul(x, weight), bias);
}

// ---------------------------------------------------------------------------
// Row-wise normalisations

inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta,
                      double eps = 1e-6) {
  const Tensor& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (gamma.value().size() != n || beta.value().size() != n)
    throw ValidationError("layer_norm: affine size mismatch");
  Tensor out(xv.shape());
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(m);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = xv.data() + r * n;
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += row[c];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(n);
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      double h = (row[c] - mean) * is;
      (*xhat)[r * n + c] = h;
      out[r * n + c] = h * gv[c] + bv[c];
    }
  }
  Var parents[] = {x, gamma, beta};
  return x.tape()->record(
      std::move(out), parents,
      [x, gamma, beta, xhat, inv_std, m, n](Tape& t, const Tensor& g) {
        const Tensor& gv = gamma.value();
        if (gamma.requires_grad()) {
          Tensor& dg = t.grad_ref(gamma.id());
          for (std::size_t i = 0; i < m * n; ++i) dg[i % n] += g[i] * (*xhat)[i];
        }
        if (beta.requires_grad()) {
          Tensor& db = t.grad_ref(beta.id());
          for (std::size_t i = 0; i < m * n; ++i) db[i % n] += g[i];
        }
        if (x.requires_grad()) {
          Tensor& dx = t.grad_ref(x.id());
          std::vector<double> dh(n);
          for (std::size_t r = 0; r < m; ++r) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
              dh[c] = g[r * n + c] * gv[c];
              mean_dh += dh[c];
              mean_dh_h += dh[c] * (*xhat)[r * n + c];
            }
            mean_dh /= static_cast<double>(n);
            mean_dh_h /= static_cast<double>(n);
            for (std::size_t c = 0; c < n; ++c)
              dx[r * n + c] += (*inv_std)[r] *
                               (dh[c] - mean_dh - (*xhat)[r * n + c] * mean_dh_h);
          }
        }
      });
}

inline Var softmax_rows(const Var& x) {
  const Tensor& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = xv.data() + r * n;
    double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += (out[r * n + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] /= s;
  }
  Tape& tape = *x.tape();
  int self = static_cast<int>(tape.size());
  Var parents[] = {x};
  return tape.record(std::move(out), parents, [x, self, m, n](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor& dx = t.grad_ref(x.id());
    for (std::size_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * y[r * n + c];
      for (std::size_t c = 0; c < n; ++c)
        dx[r * n + c] += y[r * n + c] * (g[r * n + c] - dot);
    }
  });
}

/// Divides every row by its L2 norm. All-zero rows map to zero rows.
inline Var l2_normalize_rows(const Var& x) {
  const Tensor& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out(xv.shape());
  auto norms = std::make_shared<std::vector<double>>(m);
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += xv[r * n + c] * xv[r * n + c];
    double nr = std::sqrt(s);
    (*norms)[r] = nr;
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = nr > 0 ? xv[r * n + c] / nr : 0.0;
  }
  Tape& tape = *x.tape();
  int self = static_cast<int>(tape.size());
  Var parents[] = {x};
  return tape.record(std::move(out), parents, [x, self, norms, m, n](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor& dx = t.grad_ref(x.id());
    for (std::size_t r = 0; r < m; ++r) {
      double nr = (*norms)[r];
      if (nr == 0.0) continue;
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * y[r * n + c];
      for (std::size_t c = 0; c < n; ++c)
        dx[r * n + c] += (g[r * n + c] - y[r * n + c] * dot) / nr;
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions and losses

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return detail::unary(x, Tensor({1}, s), [](Tape&, const Tensor& g, Tensor& dx) {
    for (auto& v : dx.values()) v += g[0];
  });
}

inline Var mean(const Var& x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

/// Mean over rows: [m, n] -> [1, n].
inline Var mean_rows(const Var& x) {
  const Tensor& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out({1, n});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c] += xv[r * n + c];
  for (auto& v : out.values()) v /= static_cast<double>(m);
  return detail::unary(x, std::move(out), [m, n](Tape&, const Tensor& g, Tensor& dx) {
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) dx[r * n + c] += g[c] * inv;
  });
}

/// Mean over non-ignored rows of -log softmax(logits)[target]. Rows whose
/// target equals `ignore` are skipped. Throws when every row is ignored.
inline Var cross_entropy(const Var& logits, std::span<const int> targets, int ignore) {
  const Tensor& lv = logits.value();
  const std::size_t m = lv.rows(), n = lv.cols();
  if (targets.size() != m)
    throw ValidationError("cross_entropy: " + std::to_string(targets.size()) +
                          " targets for " + std::to_string(m) + " rows");
  auto probs = std::make_shared<std::vector<double>>(m * n);
  auto tgt = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < m; ++r) {
    int y = targets[r];
    if (y == ignore) continue;
    if (y < 0 || static_cast<std::size_t>(y) >= n)
      throw ValidationError("cross_entropy: target " + std::to_string(y) +
                            " out of range for " + std::to_string(n) + " classes");
    const double* row = lv.data() + r * n;
    double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += ((*probs)[r * n + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < n; ++c) (*probs)[r * n + c] /= s;
    total += (mx + std::log(s)) - row[y];
    ++count;
  }
  if (count == 0)
    throw ValidationError("cross_entropy: every pixel is ignored (empty supervision)");
  const double inv = 1.0 / static_cast<double>(count);
  return detail::unary(
      logits, Tensor({1}, total * inv),
      [probs, tgt, ignore, m, n, inv](Tape&, const Tensor& g, Tensor& dx) {
        for (std::size_t r = 0; r < m; ++r) {
          int y = (*tgt)[r];
          if (y == ignore) continue;
          for (std::size_t c = 0; c < n; ++c) {
            double p = (*probs)[r * n + c] - (static_cast<int>(c) == y ? 1.0 : 0.0);
            dx[r * n + c] += g[0] * inv * p;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Data movement

/// out[i] = x[index[i]], or 0 where index[i] < 0. Covers slicing, transposes,
/// broadcasting, patch extraction and im2col.
inline Var gather(const Var& x, Shape out_shape, std::vector<std::int64_t> index) {
  if (shape_numel(out_shape) != index.size())
    throw ValidationError("gather: index size does not match output shape");
  const Tensor& xv = x.value();
  Tensor out(std::move(out_shape));
  for (std::size_t i = 0; i < index.size(); ++i)
    out[i] = index[i] >= 0 ? xv[static_cast<std::size_t>(index[i])] : 0.0;
  auto idx = std::make_shared<std::vector<std::int64_t>>(std::move(index));
  return detail::unary(x, std::move(out), [idx](Tape&, const Tensor& g, Tensor& dx) {
    for (std::size_t i = 0; i < idx->size(); ++i)
      if ((*idx)[i] >= 0) dx[static_cast<std::size_t>((*idx)[i])] += g[i];
  });
}

inline Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return detail::unary(x, std::move(out), [](Tape&, const Tensor& g, Tensor& dx) {
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

inline Var transpose(const Var& x) {
  const Tensor& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  std::vector<std::int64_t> idx(m * n);
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t r = 0; r < m; ++r)
      idx[c * m + r] = static_cast<std::int64_t>(r * n + c);
  return gather(x, {n, m}, std::move(idx));
}

inline Var slice_cols(const Var& x, std::size_t c0, std::size_t c1) {
  const Tensor& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (c0 > c1 || c1 > n) throw ValidationError("slice_cols: range out of bounds");
  const std::size_t w = c1 - c0;
  std::vector<std::int64_t> idx(m * w);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < w; ++c)
      idx[r * w + c] = static_cast<std::int64_t>(r * n + c0 + c);
  return gather(x, {m, w}, std::move(idx));
}

inline Var slice_rows(const Var& x, std::size_t r0, std::size_t r1) {
  const Tensor& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  if (r0 > r1 || r1 > m) throw ValidationError("slice_rows: range out of bounds");
  std::vector<std::int64_t> idx((r1 - r0) * n);
  for (std::size_t i = 0; i < idx.size(); ++i)
    idx[i] = static_cast<std::int64_t>(r0 * n + i);
  return gather(x, {r1 - r0, n}, std::move(idx));
}

/// Repeats the rows of x [m, n] `times` times: -> [times*m, n].
inline Var tile_rows(const Var& x, std::size_t times) {
  const Tensor& xv = x.value();
  const std::size_t m = xv.rows(), n = xv.cols();
  std::vector<std::int64_t> idx(times * m * n);
  for (std::size_t t = 0; t < times; ++t)
    for (std::size_t i = 0; i < m * n; ++i)
      idx[t * m * n + i] = static_cast<std::int64_t>(i);
  return gather(x, {times * m, n}, std::move(idx));
}

/// Concatenates matrices along columns; all parts share the row count.
inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no inputs");
  const std::size_t m = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.value().rows() != m) throw ValidationError("concat_cols: row count mismatch");
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Tensor out({m, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t r = 0; r < m; ++r)
      std::copy_n(pv.data() + r * widths[k], widths[k], out.data() + r * total + off);
    off += widths[k];
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].tape()->record(
      std::move(out), parts, [ps, widths, m, total](Tape& t, const Tensor& g) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < ps.size(); ++k) {
          if (ps[k].requires_grad()) {
            Tensor& d = t.grad_ref(ps[k].id());
            for (std::size_t r = 0; r < m; ++r)
              for (std::size_t c = 0; c < widths[k]; ++c)
                d[r * widths[k] + c] += g[r * total + off + c];
          }
          off += widths[k];
        }
      });
}

inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

/// Stacks matrices along rows; all parts share the column count.
inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError("concat_rows: no inputs");
  const std::size_t n = parts[0].value().cols();
  std::size_t m = 0;
  for (const Var& p : parts) {
    if (p.value().cols() != n) throw ValidationError("concat_rows: column count mismatch");
    m += p.value().rows();
  }
  Tensor out({m, n});
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().storage().begin(), p.value().storage().end(), out.data() + off);
    off += p.value().size();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return parts[0].tape()->record(std::move(out), parts, [ps](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (const Var& p : ps) {
      const std::size_t sz = p.value().size();
      if (p.requires_grad()) {
        Tensor& d = t.grad_ref(p.id());
        for (std::size_t i = 0; i < sz; ++i) d[i] += g[off + i];
      }
      off += sz;
    }
  });
}

// ---------------------------------------------------------------------------
// Spatial ops on channels-last maps [B, H, W, C]

/// Stride-1 patch extraction with zero padding: [B,H,W,C] -> [B*H*W, k*k*C],
/// column order (ky, kx, c).
inline Var im2col(const Var& x, std::size_t k, std::size_t pad) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4) throw ValidationError("im2col expects [B,H,W,C], got " + shape_str(xv.shape()));
  const std::size_t B = xv.dim(0), H = xv.dim(1), W = xv.dim(2), C = xv.dim(3);
  const std::size_t cols = k * k * C;
  std::vector<std::int64_t> idx(B * H * W * cols);
  std::size_t o = 0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx)
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) {
            const auto sy = static_cast<std::int64_t>(y + ky) - static_cast<std::int64_t>(pad);
            const auto sx = static_cast<std::int64_t>(xx + kx) - static_cast<std::int64_t>(pad);
            const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::int64_t>(H) &&
                                sx < static_cast<std::int64_t>(W);
            for (std::size_t c = 0; c < C; ++c)
              idx[o++] = inside ? static_cast<std::int64_t>(
                                      ((b * H + static_cast<std::size_t>(sy)) * W +
                                       static_cast<std::size_t>(sx)) * C + c)
                                : -1;
          }
  return gather(x, {B * H * W, cols}, std::move(idx));
}

/// Stride-1, zero-padded ("same") convolution. weight: [k*k*Cin, Cout],
/// bias: [Cout]. Output [B,H,W,Cout].
inline Var conv2d_same(const Var& x, const Var& weight, const Var& bias, std::size_t k) {
  const Tensor& xv = x.value();
  const std::size_t B = xv.dim(0), H = xv.dim(1), W = xv.dim(2);
  Var y = k == 1 ? reshape(x, {B * H * W, xv.dim(3)}) : im2col(x, k, k / 2);
  Var out = linear(y, weight, bias);
  return reshape(out, {B, H, W, weight.value().dim(1)});
}

/// Bilinear resize with half-pixel centres and edge clamping (the
/// align_corners=false convention): [B,h,w,C] -> [B,H,W,C].
inline Var resize_bilinear(const Var& x, std::size_t out_h, std::size_t out_w) {
  const Tensor& xv = x.value();
  if (xv.rank() != 4)
    throw ValidationError("resize_bilinear expects [B,H,W,C], got " + shape_str(xv.shape()));
  const std::size_t B = xv.dim(0), h = xv.dim(1), w = xv.dim(2), C = xv.dim(3);
  struct Tap {
    std::size_t i0, i1;
    double w1;
  };
  auto axis = [](std::size_t in, std::size_t out) {
    std::vector<Tap> taps(out);
    const double s = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * s - 0.5;
      if (src < 0) src = 0;
      auto i0 = static_cast<std::size_t>(std::floor(src));
      if (i0 > in - 1) i0 = in - 1;
      std::size_t i1 = std::min(i0 + 1, in - 1);
      taps[o] = {i0, i1, src - static_cast<double>(i0)};
    }
    return taps;
  };
  auto ty = std::make_shared<std::vector<Tap>>(axis(h, out_h));
  auto tx = std::make_shared<std::vector<Tap>>(axis(w, out_w));
  Tensor out({B, out_h, out_w, C});
  auto in_at = [&](std::size_t b, std::size_t y, std::size_t xx) {
    return ((b * h + y) * w + xx) * C;
  };
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t oy = 0; oy < out_h; ++oy)
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const Tap& a = (*ty)[oy];
        const Tap& c = (*tx)[ox];
        const double w00 = (1 - a.w1) * (1 - c.w1), w01 = (1 - a.w1) * c.w1;
        const double w10 = a.w1 * (1 - c.w1), w11 = a.w1 * c.w1;
        double* o = out.data() + ((b * out_h + oy) * out_w + ox) * C;
        const double* p00 = xv.data() + in_at(b, a.i0, c.i0);
        const double* p01 = xv.data() + in_at(b, a.i0, c.i1);
        const double* p10 = xv.data() + in_at(b, a.i1, c.i0);
        const double* p11 = xv.data() + in_at(b, a.i1, c.i1);
        for (std::size_t ch = 0; ch < C; ++ch)
          o[ch] = w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
      }
  return detail::unary(
      x, std::move(out), [ty, tx, B, h, w, C, out_h, out_w](Tape&, const Tensor& g, Tensor& dx) {
        auto in_at = [&](std::size_t b, std::size_t y, std::size_t xx) {
          return ((b * h + y) * w + xx) * C;
        };
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t oy = 0; oy < out_h; ++oy)
            for (std::size_t ox = 0; ox < out_w; ++ox) {
              const Tap& a = (*ty)[oy];
              const Tap& c = (*tx)[ox];
              const double w00 = (1 - a.w1) * (1 - c.w1), w01 = (1 - a.w1) * c.w1;
              const double w10 = a.w1 * (1 - c.w1), w11 = a.w1 * c.w1;
              const double* gi = g.data() + ((b * out_h + oy) * out_w + ox) * C;
              double* d00 = dx.data() + in_at(b, a.i0, c.i0);
              double* d01 = dx.data() + in_at(b, a.i0, c.i1);
              double* d10 = dx.data() + in_at(b, a.i1, c.i0);
              double* d11 = dx.data() + in_at(b, a.i1, c.i1);
              for (std::size_t ch = 0; ch < C; ++ch) {
                d00[ch] += w00 * gi[ch];
                d01[ch] += w01 * gi[ch];
                d10[ch] += w10 * gi[ch];
                d11[ch] += w11 * gi[ch];
              }
            }
      });
}

}  // namespace ovseg::ad
