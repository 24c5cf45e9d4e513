#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "ecgtext/tensor.hpp"

namespace ecgtext {

// 1-d cross-correlation over [N, C_in, L] with kernel [C_out, C_in, K].
// Zero padding, no bias (batch norm follows every conv in the backbone).
template <typename S>
Tensor<S> conv1d(const Tensor<S>& input, const Tensor<S>& weight, int stride, int padding) {
  if (input.dim() != 3 || weight.dim() != 3 || input.size(1) != weight.size(1)) {
    throw ShapeError("conv1d: shape mismatch, input " + detail::shape_string(input.shape()) +
                     " weight " + detail::shape_string(weight.shape()));
  }
  if (stride < 1) throw std::invalid_argument("conv1d: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv1d: padding must be >= 0");
  const std::int64_t n = input.size(0), cin = input.size(1), len = input.size(2);
  const std::int64_t cout = weight.size(0), k = weight.size(2);
  if (len + 2 * padding < k) {
    throw ShapeError("conv1d: kernel does not fit, input " + detail::shape_string(input.shape()) +
                     " weight " + detail::shape_string(weight.shape()) + " padding " +
                     std::to_string(padding));
  }
  const std::int64_t lout = (len + 2 * padding - k) / stride + 1;
  auto out = Tensor<S>::zeros({n, cout, lout});
  const S* x = input.impl->data.data();
  const S* w = weight.impl->data.data();
  S* y = out.impl->data.data();
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t co = 0; co < cout; ++co)
      for (std::int64_t lo = 0; lo < lout; ++lo) {
        const std::int64_t base = lo * stride - padding;
        S acc = S(0);
        for (std::int64_t ci = 0; ci < cin; ++ci)
          for (std::int64_t t = 0; t < k; ++t) {
            const std::int64_t pos = base + t;
            if (pos < 0 || pos >= len) continue;
            acc += x[(b * cin + ci) * len + pos] * w[(co * cin + ci) * k + t];
          }
        y[(b * cout + co) * lout + lo] = acc;
      }
  detail::assert_finite<S>("conv1d", out.data());
  auto* xi = input.impl.get();
  auto* wi = weight.impl.get();
  auto* oi = out.impl.get();
  detail::attach(out, {input, weight}, [xi, wi, oi, n, cin, len, cout, k, lout, stride, padding] {
    const bool need_x = xi->requires_grad;
    const bool need_w = wi->requires_grad;
    auto* gx = need_x ? &Tensor<S>::grad_buffer(*xi) : nullptr;
    auto* gw = need_w ? &Tensor<S>::grad_buffer(*wi) : nullptr;
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t co = 0; co < cout; ++co)
        for (std::int64_t lo = 0; lo < lout; ++lo) {
          const S g = oi->grad[(b * cout + co) * lout + lo];
          if (g == S(0)) continue;
          const std::int64_t base = lo * stride - padding;
          for (std::int64_t ci = 0; ci < cin; ++ci)
            for (std::int64_t t = 0; t < k; ++t) {
              const std::int64_t pos = base + t;
              if (pos < 0 || pos >= len) continue;
              if (need_x) (*gx)[(b * cin + ci) * len + pos] += g * wi->data[(co * cin + ci) * k + t];
              if (need_w) (*gw)[(co * cin + ci) * k + t] += g * xi->data[(b * cin + ci) * len + pos];
            }
        }
  });
  return out;
}

// Per-channel batch normalization over [N, C, L]. Training mode normalizes
// by batch statistics (population variance) and updates running stats in
// place: running <- (1 - momentum) * running + momentum * batch, with the
// unbiased variance entering the running buffer. Eval mode uses the stored
// running statistics and touches nothing.
template <typename S>
Tensor<S> batchnorm1d(const Tensor<S>& input, const Tensor<S>& gamma, const Tensor<S>& beta,
                      Tensor<S>& running_mean, Tensor<S>& running_var, bool training,
                      double momentum = 0.1, double eps = 1e-5) {
  if (input.dim() != 3) {
    throw ShapeError("batchnorm1d: expected [N,C,L] input, shape " +
                     detail::shape_string(input.shape()));
  }
  const std::int64_t n = input.size(0), c = input.size(1), len = input.size(2);
  if (gamma.numel() != c || beta.numel() != c || running_mean.numel() != c ||
      running_var.numel() != c) {
    throw ShapeError("batchnorm1d: parameter size does not match " + std::to_string(c) +
                     " channels");
  }
  const std::int64_t m = n * len;
  if (training && m < 2) {
    throw std::invalid_argument("batchnorm1d: degenerate batch, need N*L >= 2 in training mode");
  }
  auto out = Tensor<S>::zeros({n, c, len});
  std::vector<S> xhat(static_cast<std::size_t>(input.numel()));
  std::vector<S> inv_std(static_cast<std::size_t>(c));
  const S* x = input.impl->data.data();
  S* y = out.impl->data.data();
  for (std::int64_t ch = 0; ch < c; ++ch) {
    S mean, var;
    if (training) {
      S acc = S(0);
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t t = 0; t < len; ++t) acc += x[(b * c + ch) * len + t];
      mean = acc / static_cast<S>(m);
      S sq = S(0);
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t t = 0; t < len; ++t) {
          const S d = x[(b * c + ch) * len + t] - mean;
          sq += d * d;
        }
      var = sq / static_cast<S>(m);
      const S unbiased = sq / static_cast<S>(m - 1);
      auto rm = running_mean.raw_data();
      auto rv = running_var.raw_data();
      rm[ch] = static_cast<S>((1.0 - momentum) * rm[ch] + momentum * mean);
      rv[ch] = static_cast<S>((1.0 - momentum) * rv[ch] + momentum * unbiased);
    } else {
      mean = running_mean.data()[ch];
      var = running_var.data()[ch];
    }
    const S istd = S(1) / std::sqrt(var + static_cast<S>(eps));
    inv_std[static_cast<std::size_t>(ch)] = istd;
    const S g = gamma.data()[ch];
    const S bta = beta.data()[ch];
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t t = 0; t < len; ++t) {
        const std::int64_t idx = (b * c + ch) * len + t;
        xhat[static_cast<std::size_t>(idx)] = (x[idx] - mean) * istd;
        y[idx] = g * xhat[static_cast<std::size_t>(idx)] + bta;
      }
  }
  detail::assert_finite<S>("batchnorm1d", out.data());
  auto* xi = input.impl.get();
  auto* gi = gamma.impl.get();
  auto* bi = beta.impl.get();
  auto* oi = out.impl.get();
  detail::attach(out, {input, gamma, beta},
                 [xi, gi, bi, oi, n, c, len, m, training, xhat = std::move(xhat),
                  inv_std = std::move(inv_std)] {
                   for (std::int64_t ch = 0; ch < c; ++ch) {
                     S sum_g = S(0), sum_gx = S(0);
                     for (std::int64_t b = 0; b < n; ++b)
                       for (std::int64_t t = 0; t < len; ++t) {
                         const std::int64_t idx = (b * c + ch) * len + t;
                         sum_g += oi->grad[idx];
                         sum_gx += oi->grad[idx] * xhat[static_cast<std::size_t>(idx)];
                       }
                     if (gi->requires_grad) Tensor<S>::grad_buffer(*gi)[ch] += sum_gx;
                     if (bi->requires_grad) Tensor<S>::grad_buffer(*bi)[ch] += sum_g;
                     if (xi->requires_grad) {
                       auto& gx = Tensor<S>::grad_buffer(*xi);
                       const S scale = gi->data[ch] * inv_std[static_cast<std::size_t>(ch)];
                       if (training) {
                         const S inv_m = S(1) / static_cast<S>(m);
                         for (std::int64_t b = 0; b < n; ++b)
                           for (std::int64_t t = 0; t < len; ++t) {
                             const std::int64_t idx = (b * c + ch) * len + t;
                             gx[idx] += scale * (oi->grad[idx] - sum_g * inv_m -
                                                 xhat[static_cast<std::size_t>(idx)] * sum_gx * inv_m);
                           }
                       } else {
                         for (std::int64_t b = 0; b < n; ++b)
                           for (std::int64_t t = 0; t < len; ++t) {
                             const std::int64_t idx = (b * c + ch) * len + t;
                             gx[idx] += scale * oi->grad[idx];
                           }
                       }
                     }
                   }
                 });
  return out;
}

// Affine map: out[n,o] = bias[o] + sum_i input[n,i] * weight[o,i].
template <typename S>
Tensor<S> linear(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias) {
  if (input.dim() != 2 || weight.dim() != 2 || input.size(1) != weight.size(1) ||
      bias.numel() != weight.size(0)) {
    throw ShapeError("linear: shape mismatch, input " + detail::shape_string(input.shape()) +
                     " weight " + detail::shape_string(weight.shape()) + " bias " +
                     detail::shape_string(bias.shape()));
  }
  const std::int64_t n = input.size(0), fin = input.size(1), fout = weight.size(0);
  auto out = Tensor<S>::zeros({n, fout});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t o = 0; o < fout; ++o) {
      S acc = bias.impl->data[o];
      for (std::int64_t i = 0; i < fin; ++i)
        acc += input.impl->data[b * fin + i] * weight.impl->data[o * fin + i];
      out.impl->data[b * fout + o] = acc;
    }
  detail::assert_finite<S>("linear", out.data());
  auto* xi = input.impl.get();
  auto* wi = weight.impl.get();
  auto* bi = bias.impl.get();
  auto* oi = out.impl.get();
  detail::attach(out, {input, weight, bias}, [xi, wi, bi, oi, n, fin, fout] {
    if (xi->requires_grad) {
      auto& g = Tensor<S>::grad_buffer(*xi);
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t i = 0; i < fin; ++i) {
          S acc = S(0);
          for (std::int64_t o = 0; o < fout; ++o)
            acc += oi->grad[b * fout + o] * wi->data[o * fin + i];
          g[b * fin + i] += acc;
        }
    }
    if (wi->requires_grad) {
      auto& g = Tensor<S>::grad_buffer(*wi);
      for (std::int64_t o = 0; o < fout; ++o)
        for (std::int64_t i = 0; i < fin; ++i) {
          S acc = S(0);
          for (std::int64_t b = 0; b < n; ++b)
            acc += oi->grad[b * fout + o] * xi->data[b * fin + i];
          g[o * fin + i] += acc;
        }
    }
    if (bi->requires_grad) {
      auto& g = Tensor<S>::grad_buffer(*bi);
      for (std::int64_t o = 0; o < fout; ++o) {
        S acc = S(0);
        for (std::int64_t b = 0; b < n; ++b) acc += oi->grad[b * fout + o];
        g[o] += acc;
      }
    }
  });
  return out;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& input) {
  auto out = Tensor<S>::zeros(input.shape());
  for (std::int64_t i = 0; i < input.numel(); ++i)
    out.impl->data[i] = std::max(input.impl->data[i], S(0));
  auto* xi = input.impl.get();
  auto* oi = out.impl.get();
  detail::attach(out, {input}, [xi, oi] {
    auto& g = Tensor<S>::grad_buffer(*xi);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xi->data[i] > S(0)) g[i] += oi->grad[i];
  });
  return out;
}

// Max pooling over the time axis of [N, C, L]. Padded positions never win;
// ties resolve to the lowest index so gradient routing is deterministic.
template <typename S>
Tensor<S> maxpool1d(const Tensor<S>& input, int kernel, int stride, int padding) {
  if (input.dim() != 3) {
    throw ShapeError("maxpool1d: expected [N,C,L] input, shape " +
                     detail::shape_string(input.shape()));
  }
  if (kernel < 1 || stride < 1 || padding < 0 || padding >= kernel) {
    throw std::invalid_argument("maxpool1d: need kernel >= 1, stride >= 1, 0 <= padding < kernel");
  }
  const std::int64_t n = input.size(0), c = input.size(1), len = input.size(2);
  if (len + 2 * padding < kernel) {
    throw ShapeError("maxpool1d: kernel does not fit, input " +
                     detail::shape_string(input.shape()));
  }
  const std::int64_t lout = (len + 2 * padding - kernel) / stride + 1;
  auto out = Tensor<S>::zeros({n, c, lout});
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(out.numel()));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t lo = 0; lo < lout; ++lo) {
        const std::int64_t base = lo * stride - padding;
        S best = -std::numeric_limits<S>::infinity();
        std::int64_t best_idx = -1;
        for (std::int64_t t = 0; t < kernel; ++t) {
          const std::int64_t pos = base + t;
          if (pos < 0 || pos >= len) continue;
          const S v = input.impl->data[(b * c + ch) * len + pos];
          if (v > best) {
            best = v;
            best_idx = pos;
          }
        }
        out.impl->data[(b * c + ch) * lout + lo] = best;
        argmax[static_cast<std::size_t>((b * c + ch) * lout + lo)] = (b * c + ch) * len + best_idx;
      }
  detail::assert_finite<S>("maxpool1d", out.data());
  auto* xi = input.impl.get();
  auto* oi = out.impl.get();
  detail::attach(out, {input}, [xi, oi, argmax = std::move(argmax)] {
    auto& g = Tensor<S>::grad_buffer(*xi);
    for (std::size_t i = 0; i < argmax.size(); ++i)
      g[static_cast<std::size_t>(argmax[i])] += oi->grad[i];
  });
  return out;
}

// Mean over the time axis: [N, C, L] -> [N, C].
template <typename S>
Tensor<S> global_avg_pool1d(const Tensor<S>& input) {
  if (input.dim() != 3) {
    throw ShapeError("global_avg_pool1d: expected [N,C,L] input, shape " +
                     detail::shape_string(input.shape()));
  }
  const std::int64_t n = input.size(0), c = input.size(1), len = input.size(2);
  auto out = Tensor<S>::zeros({n, c});
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      S acc = S(0);
      for (std::int64_t t = 0; t < len; ++t) acc += input.impl->data[(b * c + ch) * len + t];
      out.impl->data[b * c + ch] = acc / static_cast<S>(len);
    }
  detail::assert_finite<S>("global_avg_pool1d", out.data());
  auto* xi = input.impl.get();
  auto* oi = out.impl.get();
  detail::attach(out, {input}, [xi, oi, n, c, len] {
    auto& g = Tensor<S>::grad_buffer(*xi);
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const S share = oi->grad[b * c + ch] / static_cast<S>(len);
        for (std::int64_t t = 0; t < len; ++t) g[(b * c + ch) * len + t] += share;
      }
  });
  return out;
}

}  // namespace ecgtext
