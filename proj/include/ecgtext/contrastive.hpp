#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>

#include "ecgtext/tensor.hpp"

namespace ecgtext {

// Cosine similarity of two equal-length vectors, clamped to [-1, 1].
// A zero-norm argument means a dead encoder and is an error, not 0.
template <typename S>
S cosine_similarity(std::span<const S> t, std::span<const S> e) {
  if (t.size() != e.size()) {
    throw ShapeError("cosine_similarity: length mismatch " + std::to_string(t.size()) + " vs " +
                     std::to_string(e.size()));
  }
  S dot = S(0), nt = S(0), ne = S(0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    dot += t[i] * e[i];
    nt += t[i] * t[i];
    ne += e[i] * e[i];
  }
  const S norm_t = std::sqrt(nt);
  const S norm_e = std::sqrt(ne);
  if (!(norm_t > S(1e-12)) || !(norm_e > S(1e-12))) {
    throw DegenerateEmbeddingError("cosine_similarity: zero-norm vector");
  }
  const S sim = dot / (norm_t * norm_e);
  return std::min(S(1), std::max(S(-1), sim));
}

// N x N matrix of pairwise cosine similarities for one batch; entry (i, j)
// compares text row i with signal-embedding row j.
template <typename S>
struct SimilarityMatrix {
  Tensor<S> values;
  std::int64_t batch_size = 0;

  // Wraps an existing matrix, enforcing squareness and the cosine range
  // (with a 1e-6 slack for accumulated rounding).
  static SimilarityMatrix from_values(const Tensor<S>& v) {
    if (!v.defined() || v.dim() != 2 || v.size(0) != v.size(1)) {
      throw ShapeError("similarity matrix must be square, shape " +
                       (v.defined() ? detail::shape_string(v.shape()) : std::string("<undefined>")));
    }
    for (S x : v.data()) {
      if (!std::isfinite(static_cast<double>(x)) || x < S(-1) - S(1e-6) || x > S(1) + S(1e-6)) {
        throw std::invalid_argument("similarity matrix entry outside [-1, 1]");
      }
    }
    return SimilarityMatrix{v, v.size(0)};
  }
};

// Builds the similarity matrix from row-wise embeddings: text [N, D] and
// signal embeddings [N, D]. Differentiable through both sides; the text side
// is normally a constant (frozen provider output).
template <typename S>
SimilarityMatrix<S> similarity_matrix(const Tensor<S>& text, const Tensor<S>& ecg) {
  if (text.dim() != 2 || ecg.dim() != 2 || text.shape() != ecg.shape()) {
    throw ShapeError("similarity_matrix: expected equal [N,D] inputs, got " +
                     detail::shape_string(text.shape()) + " vs " +
                     detail::shape_string(ecg.shape()));
  }
  const std::int64_t n = text.size(0), d = text.size(1);
  for (std::int64_t side = 0; side < 2; ++side) {
    const Tensor<S>& m = side == 0 ? text : ecg;
    for (std::int64_t i = 0; i < n; ++i) {
      S sq = S(0);
      for (std::int64_t j = 0; j < d; ++j) {
        const S v = m.data()[i * d + j];
        sq += v * v;
      }
      if (!(std::sqrt(sq) > S(1e-12))) {
        throw DegenerateEmbeddingError(std::string("similarity_matrix: zero-norm ") +
                                       (side == 0 ? "text" : "ecg") + " row " + std::to_string(i));
      }
    }
  }
  auto values = matmul(l2_normalize_rows(text), transpose(l2_normalize_rows(ecg)));
  return SimilarityMatrix<S>::from_values(values);
}

namespace detail {

template <typename S>
void check_temperature(const Tensor<S>& tau) {
  if (!tau.defined() || tau.numel() != 1) {
    throw ShapeError("temperature must be a one-element tensor");
  }
  if (!(tau.item() > S(0))) {
    throw std::invalid_argument("temperature must be positive, got " +
                                std::to_string(static_cast<double>(tau.item())));
  }
}

}  // namespace detail

// Per-pair loss over rows: l_i = -log( exp(S_ii / tau) / sum_j exp(S_ij / tau) ).
template <typename S>
Tensor<S> loss_e_to_t(const SimilarityMatrix<S>& sim, const Tensor<S>& tau) {
  detail::check_temperature(tau);
  return softmax_xent_diag_rows(div_by_scalar(sim.values, tau));
}

// Column-wise counterpart; identical to the row-wise loss on the transpose.
template <typename S>
Tensor<S> loss_t_to_e(const SimilarityMatrix<S>& sim, const Tensor<S>& tau) {
  detail::check_temperature(tau);
  SimilarityMatrix<S> flipped{transpose(sim.values), sim.batch_size};
  return loss_e_to_t(flipped, tau);
}

// Batch objective: mean over pairs of the average of the two directional
// losses. Differentiable with respect to the similarity entries and tau.
template <typename S>
Tensor<S> batch_loss(const SimilarityMatrix<S>& sim, const Tensor<S>& tau) {
  auto per_pair = mul_scalar(add(loss_e_to_t(sim, tau), loss_t_to_e(sim, tau)), 0.5);
  return mul_scalar(sum(per_pair), 1.0 / static_cast<double>(sim.batch_size));
}

template <typename S>
Tensor<S> loss_e_to_t(const SimilarityMatrix<S>& sim, double tau) {
  return loss_e_to_t(sim, Tensor<S>::scalar(static_cast<S>(tau)));
}

template <typename S>
Tensor<S> loss_t_to_e(const SimilarityMatrix<S>& sim, double tau) {
  return loss_t_to_e(sim, Tensor<S>::scalar(static_cast<S>(tau)));
}

template <typename S>
Tensor<S> batch_loss(const SimilarityMatrix<S>& sim, double tau) {
  return batch_loss(sim, Tensor<S>::scalar(static_cast<S>(tau)));
}

}  // namespace ecgtext
