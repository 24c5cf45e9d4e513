#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ecgtext/error.hpp"

namespace ecgtext {

namespace detail {

inline std::string shape_string(std::span<const std::int64_t> shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Tree reduction. Sums of 2^k identical addends stay exact, which the loss
// anchors rely on.
template <typename S>
S pairwise_sum(const S* v, std::size_t n) {
  if (n == 0) return S(0);
  if (n == 1) return v[0];
  if (n == 2) return v[0] + v[1];
  const std::size_t mid = n / 2;
  return pairwise_sum(v, mid) + pairwise_sum(v + mid, n - mid);
}

template <typename S>
void assert_finite(const char* op, std::span<const S> values) {
#ifndef NDEBUG
  for (S v : values) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw std::runtime_error(std::string(op) + ": produced a non-finite value");
    }
  }
#else
  (void)op;
  (void)values;
#endif
}

}  // namespace detail

// Dense tensor with a recorded reverse-mode graph. A tensor is a shared
// handle; ops allocate fresh outputs and never mutate their inputs. The
// graph lives in the output nodes (no global tape) and is confined to the
// thread that built it.
template <typename S>
class Tensor {
 public:
  struct Impl {
    std::vector<std::int64_t> shape;
    std::vector<S> data;
    bool requires_grad = false;
    std::vector<S> grad;  // sized lazily, same length as data
    std::vector<std::shared_ptr<Impl>> parents;
    std::function<void()> backprop;  // reads own grad, accumulates into parents
  };

  Tensor() = default;

  static Tensor zeros(std::vector<std::int64_t> shape, bool requires_grad = false) {
    auto t = Tensor();
    t.impl = std::make_shared<Impl>();
    t.impl->shape = std::move(shape);
    t.impl->data.assign(static_cast<std::size_t>(numel_of(t.impl->shape)), S(0));
    t.impl->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(std::vector<std::int64_t> shape, S value, bool requires_grad = false) {
    auto t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.impl->data) v = value;
    return t;
  }

  static Tensor from_data(std::vector<std::int64_t> shape, std::vector<S> values,
                          bool requires_grad = false) {
    if (numel_of(shape) != static_cast<std::int64_t>(values.size())) {
      throw ShapeError("tensor: " + std::to_string(values.size()) +
                       " values do not fill shape " + detail::shape_string(shape));
    }
    auto t = Tensor();
    t.impl = std::make_shared<Impl>();
    t.impl->shape = std::move(shape);
    t.impl->data = std::move(values);
    t.impl->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(S value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  bool defined() const { return impl != nullptr; }
  const std::vector<std::int64_t>& shape() const { return impl->shape; }
  int dim() const { return static_cast<int>(impl->shape.size()); }
  std::int64_t size(int d) const { return impl->shape[static_cast<std::size_t>(d)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl->data.size()); }

  std::span<const S> data() const { return impl->data; }
  // In-place mutation is reserved for leaves between graph builds (optimizer
  // updates, running statistics).
  std::span<S> raw_data() { return impl->data; }

  S item() const {
    if (!impl || impl->data.size() != 1) {
      throw ShapeError("item: tensor is not a scalar, shape " +
                       (impl ? detail::shape_string(impl->shape) : std::string("<undefined>")));
    }
    return impl->data[0];
  }

  S at(std::initializer_list<std::int64_t> idx) const {
    std::int64_t flat = 0;
    std::size_t d = 0;
    for (std::int64_t i : idx) {
      flat = flat * impl->shape[d] + i;
      ++d;
    }
    return impl->data[static_cast<std::size_t>(flat)];
  }

  bool requires_grad() const { return impl && impl->requires_grad; }
  void set_requires_grad(bool v) { impl->requires_grad = v; }

  bool has_grad() const { return impl && !impl->grad.empty(); }
  std::span<const S> grad() const { return impl->grad; }
  void zero_grad() {
    if (impl) impl->grad.assign(impl->data.size(), S(0));
  }

  // Deep copy of shape/data/requires_grad; drops graph and gradients.
  Tensor clone_detached() const {
    auto t = Tensor();
    t.impl = std::make_shared<Impl>();
    t.impl->shape = impl->shape;
    t.impl->data = impl->data;
    t.impl->requires_grad = impl->requires_grad;
    return t;
  }

  // Reverse-mode sweep from a scalar loss. Gradients accumulate into the
  // .grad buffers of every reachable node that requires grad; each node's
  // backprop runs exactly once.
  void backward() const {
    if (!impl || impl->data.size() != 1) {
      throw ShapeError("backward: loss must be scalar, shape " +
                       (impl ? detail::shape_string(impl->shape) : std::string("<undefined>")));
    }
    if (!impl->requires_grad) {
      throw std::invalid_argument("backward: loss is not connected to any differentiable leaf");
    }
    std::vector<Impl*> order;
    std::unordered_set<Impl*> seen;
    std::vector<std::pair<Impl*, std::size_t>> stack;
    stack.emplace_back(impl.get(), 0);
    seen.insert(impl.get());
    while (!stack.empty()) {
      auto [node, next] = stack.back();
      if (next < node->parents.size()) {
        ++stack.back().second;
        Impl* p = node->parents[next].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    grad_buffer(*impl)[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backprop) (*it)->backprop();
    }
  }

  static std::int64_t numel_of(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t e : shape) n *= e;
    return n;
  }

  static std::vector<S>& grad_buffer(Impl& node) {
    if (node.grad.empty()) node.grad.assign(node.data.size(), S(0));
    return node.grad;
  }

  std::shared_ptr<Impl> impl;
};

namespace detail {

template <typename S>
void check_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
}

// Wires up the recorded node when any input participates in the graph.
// `backprop` may capture raw Impl pointers to out/parents: the parents
// vector on the output keeps them alive for the lambda's lifetime.
template <typename S>
void attach(Tensor<S>& out, std::vector<Tensor<S>> parents, std::function<void()> backprop) {
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (!needs) return;
  out.impl->requires_grad = true;
  out.impl->parents.reserve(parents.size());
  for (auto& p : parents) out.impl->parents.push_back(p.impl);
  out.impl->backprop = std::move(backprop);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("add", a, b);
  auto out = Tensor<S>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out.impl->data[i] = a.impl->data[i] + b.impl->data[i];
  detail::assert_finite<S>("add", out.data());
  auto* ai = a.impl.get();
  auto* bi = b.impl.get();
  auto* oi = out.impl.get();
  detail::attach(out, {a, b}, [ai, bi, oi] {
    if (ai->requires_grad) {
      auto& g = Tensor<S>::grad_buffer(*ai);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i];
    }
    if (bi->requires_grad) {
      auto& g = Tensor<S>::grad_buffer(*bi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i];
    }
  });
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("sub", a, b);
  auto out = Tensor<S>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out.impl->data[i] = a.impl->data[i] - b.impl->data[i];
  detail::assert_finite<S>("sub", out.data());
  auto* ai = a.impl.get();
  auto* bi = b.impl.get();
  auto* oi = out.impl.get();
  detail::attach(out, {a, b}, [ai, bi, oi] {
    if (ai->requires_grad) {
      auto& g = Tensor<S>::grad_buffer(*ai);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i];
    }
    if (bi->requires_grad) {
      auto& g = Tensor<S>::grad_buffer(*bi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= oi->grad[i];
    }
  });
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("mul", a, b);
  auto out = Tensor<S>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out.impl->data[i] = a.impl->data[i] * b.impl->data[i];
  detail::assert_finite<S>("mul", out.data());
  auto* ai = a.impl.get();
  auto* bi = b.impl.get();
  auto* oi = out.impl.get();
  detail::attach(out, {a, b}, [ai, bi, oi] {
    if (ai->requires_grad) {
      auto& g = Tensor<S>::grad_buffer(*ai);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      auto& g = Tensor<S>::grad_buffer(*bi);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * ai->data[i];
    }
  });
  return out;
}

template <typename S>
Tensor<S> neg(const Tensor<S>& a) {
  auto out = Tensor<S>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out.impl->data[i] = -a.impl->data[i];
  auto* ai = a.impl.get();
  auto* oi = out.impl.get();
  detail::attach(out, {a}, [ai, oi] {
    auto& g = Tensor<S>::grad_buffer(*ai);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= oi->grad[i];
  });
  return out;
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& a, double c) {
  auto out = Tensor<S>::zeros(a.shape());
  const S cs = static_cast<S>(c);
  for (std::int64_t i = 0; i < a.numel(); ++i) out.impl->data[i] = a.impl->data[i] * cs;
  detail::assert_finite<S>("mul_scalar", out.data());
  auto* ai = a.impl.get();
  auto* oi = out.impl.get();
  detail::attach(out, {a}, [ai, oi, cs] {
    auto& g = Tensor<S>::grad_buffer(*ai);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * cs;
  });
  return out;
}

template <typename S>
Tensor<S> exp(const Tensor<S>& a) {
  auto out = Tensor<S>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out.impl->data[i] = std::exp(a.impl->data[i]);
  detail::assert_finite<S>("exp", out.data());
  auto* ai = a.impl.get();
  auto* oi = out.impl.get();
  detail::attach(out, {a}, [ai, oi] {
    auto& g = Tensor<S>::grad_buffer(*ai);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] * oi->data[i];
  });
  return out;
}

template <typename S>
Tensor<S> log(const Tensor<S>& a) {
  auto out = Tensor<S>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out.impl->data[i] = std::log(a.impl->data[i]);
  detail::assert_finite<S>("log", out.data());
  auto* ai = a.impl.get();
  auto* oi = out.impl.get();
  detail::attach(out, {a}, [ai, oi] {
    auto& g = Tensor<S>::grad_buffer(*ai);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] / ai->data[i];
  });
  return out;
}

// out = a / s where s is a one-element tensor; differentiable in both.
template <typename S>
Tensor<S> div_by_scalar(const Tensor<S>& a, const Tensor<S>& s) {
  if (s.numel() != 1) {
    throw ShapeError("div_by_scalar: divisor must have one element, shape " +
                     detail::shape_string(s.shape()));
  }
  const S sv = s.impl->data[0];
  auto out = Tensor<S>::zeros(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) out.impl->data[i] = a.impl->data[i] / sv;
  detail::assert_finite<S>("div_by_scalar", out.data());
  auto* ai = a.impl.get();
  auto* si = s.impl.get();
  auto* oi = out.impl.get();
  detail::attach(out, {a, s}, [ai, si, oi, sv] {
    if (ai->requires_grad) {
      auto& g = Tensor<S>::grad_buffer(*ai);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[i] / sv;
    }
    if (si->requires_grad) {
      auto& g = Tensor<S>::grad_buffer(*si);
      S acc = S(0);
      for (std::size_t i = 0; i < ai->data.size(); ++i) acc += oi->grad[i] * ai->data[i];
      g[0] -= acc / (sv * sv);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Matrix ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.dim() != 2 || b.dim() != 2 || a.size(1) != b.size(0)) {
    throw ShapeError("matmul: incompatible shapes " + detail::shape_string(a.shape()) +
                     " vs " + detail::shape_string(b.shape()));
  }
  const std::int64_t n = a.size(0), k = a.size(1), m = b.size(1);
  auto out = Tensor<S>::zeros({n, m});
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < m; ++j) {
      S acc = S(0);
      for (std::int64_t p = 0; p < k; ++p) acc += a.impl->data[i * k + p] * b.impl->data[p * m + j];
      out.impl->data[i * m + j] = acc;
    }
  }
  detail::assert_finite<S>("matmul", out.data());
  auto* ai = a.impl.get();
  auto* bi = b.impl.get();
  auto* oi = out.impl.get();
  detail::attach(out, {a, b}, [ai, bi, oi, n, k, m] {
    if (ai->requires_grad) {
      auto& g = Tensor<S>::grad_buffer(*ai);
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t p = 0; p < k; ++p) {
          S acc = S(0);
          for (std::int64_t j = 0; j < m; ++j) acc += oi->grad[i * m + j] * bi->data[p * m + j];
          g[i * k + p] += acc;
        }
    }
    if (bi->requires_grad) {
      auto& g = Tensor<S>::grad_buffer(*bi);
      for (std::int64_t p = 0; p < k; ++p)
        for (std::int64_t j = 0; j < m; ++j) {
          S acc = S(0);
          for (std::int64_t i = 0; i < n; ++i) acc += ai->data[i * k + p] * oi->grad[i * m + j];
          g[p * m + j] += acc;
        }
    }
  });
  return out;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
  if (a.dim() != 2) {
    throw ShapeError("transpose: expected 2-d tensor, shape " + detail::shape_string(a.shape()));
  }
  const std::int64_t n = a.size(0), m = a.size(1);
  auto out = Tensor<S>::zeros({m, n});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < m; ++j) out.impl->data[j * n + i] = a.impl->data[i * m + j];
  auto* ai = a.impl.get();
  auto* oi = out.impl.get();
  detail::attach(out, {a}, [ai, oi, n, m] {
    auto& g = Tensor<S>::grad_buffer(*ai);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < m; ++j) g[i * m + j] += oi->grad[j * n + i];
  });
  return out;
}

// Main diagonal of a square matrix.
template <typename S>
Tensor<S> diag(const Tensor<S>& a) {
  if (a.dim() != 2 || a.size(0) != a.size(1)) {
    throw ShapeError("diag: expected square matrix, shape " + detail::shape_string(a.shape()));
  }
  const std::int64_t n = a.size(0);
  auto out = Tensor<S>::zeros({n});
  for (std::int64_t i = 0; i < n; ++i) out.impl->data[i] = a.impl->data[i * n + i];
  auto* ai = a.impl.get();
  auto* oi = out.impl.get();
  detail::attach(out, {a}, [ai, oi, n] {
    auto& g = Tensor<S>::grad_buffer(*ai);
    for (std::int64_t i = 0; i < n; ++i) g[i * n + i] += oi->grad[i];
  });
  return out;
}

// Row-wise log(sum(exp(x))) with max subtraction.
template <typename S>
Tensor<S> logsumexp_rows(const Tensor<S>& a) {
  if (a.dim() != 2) {
    throw ShapeError("logsumexp_rows: expected 2-d tensor, shape " +
                     detail::shape_string(a.shape()));
  }
  const std::int64_t n = a.size(0), m = a.size(1);
  auto out = Tensor<S>::zeros({n});
  for (std::int64_t i = 0; i < n; ++i) {
    const S* row = a.impl->data.data() + i * m;
    S mx = row[0];
    for (std::int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    S acc = S(0);
    for (std::int64_t j = 0; j < m; ++j) acc += std::exp(row[j] - mx);
    out.impl->data[i] = std::log(acc) + mx;
  }
  detail::assert_finite<S>("logsumexp_rows", out.data());
  auto* ai = a.impl.get();
  auto* oi = out.impl.get();
  detail::attach(out, {a}, [ai, oi, n, m] {
    auto& g = Tensor<S>::grad_buffer(*ai);
    for (std::int64_t i = 0; i < n; ++i) {
      const S* row = ai->data.data() + i * m;
      S mx = row[0];
      for (std::int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
      S denom = S(0);
      for (std::int64_t j = 0; j < m; ++j) denom += std::exp(row[j] - mx);
      for (std::int64_t j = 0; j < m; ++j)
        g[i * m + j] += oi->grad[i] * std::exp(row[j] - mx) / denom;
    }
  });
  return out;
}

// Row-wise softmax cross-entropy against the main diagonal:
//   out_i = log(sum_j exp(a_ij - m_i)) + (m_i - a_ii),  m_i = max_j a_ij.
// The max is subtracted before exponentiation and re-added as (m_i - a_ii),
// so a uniform row yields exactly log(columns).
template <typename S>
Tensor<S> softmax_xent_diag_rows(const Tensor<S>& a) {
  if (a.dim() != 2 || a.size(0) != a.size(1)) {
    throw ShapeError("softmax_xent_diag_rows: expected square matrix, shape " +
                     detail::shape_string(a.shape()));
  }
  const std::int64_t n = a.size(0);
  auto out = Tensor<S>::zeros({n});
  for (std::int64_t i = 0; i < n; ++i) {
    const S* row = a.impl->data.data() + i * n;
    S mx = row[0];
    for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    S acc = S(0);
    for (std::int64_t j = 0; j < n; ++j) acc += std::exp(row[j] - mx);
    out.impl->data[i] = std::log(acc) + (mx - row[i]);
  }
  detail::assert_finite<S>("softmax_xent_diag_rows", out.data());
  auto* ai = a.impl.get();
  auto* oi = out.impl.get();
  detail::attach(out, {a}, [ai, oi, n] {
    auto& g = Tensor<S>::grad_buffer(*ai);
    for (std::int64_t i = 0; i < n; ++i) {
      const S* row = ai->data.data() + i * n;
      S mx = row[0];
      for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
      S denom = S(0);
      for (std::int64_t j = 0; j < n; ++j) denom += std::exp(row[j] - mx);
      for (std::int64_t j = 0; j < n; ++j) {
        S soft = std::exp(row[j] - mx) / denom;
        g[i * n + j] += oi->grad[i] * (soft - (i == j ? S(1) : S(0)));
      }
    }
  });
  return out;
}

// Each row scaled to unit L2 norm. Rows with norm <= 1e-12 signal a dead
// encoder and are rejected rather than silently zeroed.
template <typename S>
Tensor<S> l2_normalize_rows(const Tensor<S>& a) {
  if (a.dim() != 2) {
    throw ShapeError("l2_normalize_rows: expected 2-d tensor, shape " +
                     detail::shape_string(a.shape()));
  }
  const std::int64_t n = a.size(0), m = a.size(1);
  auto out = Tensor<S>::zeros({n, m});
  std::vector<S> norms(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    S sq = S(0);
    for (std::int64_t j = 0; j < m; ++j) {
      S v = a.impl->data[i * m + j];
      sq += v * v;
    }
    S norm = std::sqrt(sq);
    if (!(norm > S(1e-12))) {
      throw DegenerateEmbeddingError("l2_normalize_rows: row " + std::to_string(i) +
                                     " has zero norm");
    }
    norms[static_cast<std::size_t>(i)] = norm;
    for (std::int64_t j = 0; j < m; ++j) out.impl->data[i * m + j] = a.impl->data[i * m + j] / norm;
  }
  auto* ai = a.impl.get();
  auto* oi = out.impl.get();
  detail::attach(out, {a}, [ai, oi, n, m, norms = std::move(norms)] {
    auto& g = Tensor<S>::grad_buffer(*ai);
    for (std::int64_t i = 0; i < n; ++i) {
      const S norm = norms[static_cast<std::size_t>(i)];
      S dot = S(0);
      for (std::int64_t j = 0; j < m; ++j) dot += oi->data[i * m + j] * oi->grad[i * m + j];
      for (std::int64_t j = 0; j < m; ++j)
        g[i * m + j] += (oi->grad[i * m + j] - oi->data[i * m + j] * dot) / norm;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  auto out = Tensor<S>::scalar(detail::pairwise_sum(a.impl->data.data(), a.impl->data.size()));
  detail::assert_finite<S>("sum", out.data());
  auto* ai = a.impl.get();
  auto* oi = out.impl.get();
  detail::attach(out, {a}, [ai, oi] {
    auto& g = Tensor<S>::grad_buffer(*ai);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += oi->grad[0];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Finite differences (independent gradient oracle)
// ---------------------------------------------------------------------------

// Central differences of a pure scalar-valued function, elementwise in x.
// Works on a detached copy; f must not depend on hidden mutable state.
template <typename S>
Tensor<S> finite_diff_grad(const std::function<S(const Tensor<S>&)>& f, const Tensor<S>& x,
                           S step) {
  auto probe = x.clone_detached();
  probe.set_requires_grad(false);
  auto out = Tensor<S>::zeros(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const S orig = probe.impl->data[i];
    probe.impl->data[i] = orig + step;
    const S fp = f(probe);
    probe.impl->data[i] = orig - step;
    const S fm = f(probe);
    probe.impl->data[i] = orig;
    out.impl->data[i] = (fp - fm) / (S(2) * step);
  }
  return out;
}

}  // namespace ecgtext
