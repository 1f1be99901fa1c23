// Causal multi-head self-attention with rotary Q/K and a post-softmax hook.
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

#include "atnt/numerics.hpp"
#include "atnt/rope.hpp"

namespace atnt {

/// A hook or transform broke a shape or stochasticity contract.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Post-softmax attention weights, [batch x heads x query x key].
class AttnTensor {
 public:
  AttnTensor() = default;

  explicit AttnTensor(DenseArray weights) : w_(std::move(weights)) {
    if (w_.rank() != 4 || w_.extent(2) != w_.extent(3)) {
      throw DimensionError("AttnTensor: expected [b x n x l x l], got " + shape_str(w_.shape()));
    }
  }

  std::size_t batch() const { return w_.extent(0); }
  std::size_t heads() const { return w_.extent(1); }
  std::size_t length() const { return w_.extent(2); }

  double& operator()(std::size_t b, std::size_t h, std::size_t q, std::size_t k) {
    return w_(b, h, q, k);
  }
  double operator()(std::size_t b, std::size_t h, std::size_t q, std::size_t k) const {
    return w_(b, h, q, k);
  }

  std::span<double> row(std::size_t b, std::size_t h, std::size_t q) { return w_.row(b, h, q); }
  std::span<const double> row(std::size_t b, std::size_t h, std::size_t q) const {
    return w_.row(b, h, q);
  }

  const DenseArray& array() const { return w_; }
  DenseArray& array() { return w_; }

  bool is_causal() const {
    for (std::size_t b = 0; b < batch(); ++b)
      for (std::size_t h = 0; h < heads(); ++h)
        for (std::size_t q = 0; q < length(); ++q)
          for (std::size_t k = q + 1; k < length(); ++k)
            if (w_(b, h, q, k) != 0.0) return false;
    return true;
  }

  friend bool operator==(const AttnTensor&, const AttnTensor&) = default;

 private:
  DenseArray w_;
};

/// Transform applied to post-softmax weights. An empty function means none.
using AttnHook = std::function<AttnTensor(const AttnTensor&)>;

/// Per-head Q/K/V projections stacked as [n_heads x d_model x d_head] and the
/// output projection [n_heads*d_head x d_model].
struct HeadProjections {
  DenseArray wq;
  DenseArray wk;
  DenseArray wv;
  DenseArray wo;

  std::size_t n_heads() const { return wq.extent(0); }
  std::size_t d_model() const { return wq.extent(1); }
  std::size_t d_head() const { return wq.extent(2); }

  void validate() const {
    const Shape qkv{n_heads(), d_model(), d_head()};
    if (wq.shape() != qkv || wk.shape() != qkv || wv.shape() != qkv) {
      throw DimensionError("HeadProjections: Wq/Wk/Wv shapes " + shape_str(wq.shape()) + ", " +
                           shape_str(wk.shape()) + ", " + shape_str(wv.shape()));
    }
    if (d_model() != n_heads() * d_head()) {
      throw DimensionError("HeadProjections: d_model " + std::to_string(d_model()) +
                           " != n_heads * d_head");
    }
    if (wo.shape() != Shape{n_heads() * d_head(), d_model()}) {
      throw DimensionError("HeadProjections: Wo shape " + shape_str(wo.shape()));
    }
  }

  friend bool operator==(const HeadProjections&, const HeadProjections&) = default;
};

/// x [b x l x d_model] times each head's [d_model x d_head] -> [b x n x l x d_head].
inline DenseArray project_heads(const DenseArray& x, const DenseArray& w) {
  if (x.rank() != 3 || x.extent(2) != w.extent(1)) {
    throw DimensionError("project_heads: input " + shape_str(x.shape()) + " vs weights " +
                         shape_str(w.shape()));
  }
  const std::size_t b = x.extent(0), l = x.extent(1), n = w.extent(0), dh = w.extent(2);
  DenseArray out({b, n, l, dh});
  for (std::size_t h = 0; h < n; ++h) {
    const DenseArray wh =
        slice(w, {SliceRange{static_cast<std::ptrdiff_t>(h), static_cast<std::ptrdiff_t>(h + 1)}})
            .reshaped({w.extent(1), dh});
    const DenseArray ph = matmul(x, wh);  // [b x l x dh]
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t p = 0; p < l; ++p)
        for (std::size_t j = 0; j < dh; ++j) out(bi, h, p, j) = ph(bi, p, j);
  }
  return out;
}

/// Scaled rotary dot-product scores with future keys set to -inf.
inline DenseArray attention_scores(const DenseArray& x, const HeadProjections& proj,
                                   const RopeConfig& rope) {
  proj.validate();
  if (x.rank() != 3 || x.extent(2) != proj.d_model()) {
    throw DimensionError("attention_scores: input " + shape_str(x.shape()) + " for d_model " +
                         std::to_string(proj.d_model()));
  }
  if (rope.head_dim != proj.d_head()) {
    throw DimensionError("attention_scores: rope head_dim " + std::to_string(rope.head_dim) +
                         " != d_head " + std::to_string(proj.d_head()));
  }
  const std::size_t b = x.extent(0), l = x.extent(1), n = proj.n_heads();
  if (l > rope.max_pos) {
    throw DimensionError("attention_scores: length " + std::to_string(l) + " exceeds max_pos " +
                         std::to_string(rope.max_pos));
  }

  DenseArray q = project_heads(x, proj.wq);
  DenseArray k = project_heads(x, proj.wk);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t h = 0; h < n; ++h)
      for (std::size_t p = 0; p < l; ++p) {
        apply_rotary_inplace(q.row(bi, h, p), p, rope);
        apply_rotary_inplace(k.row(bi, h, p), p, rope);
      }

  DenseArray scores = matmul(q, transpose_last2(k));
  const double scale = std::sqrt(static_cast<double>(proj.d_head()));
  for (double& v : scores.data()) v /= scale;
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t h = 0; h < n; ++h)
      for (std::size_t qi = 0; qi < l; ++qi)
        for (std::size_t ki = qi + 1; ki < l; ++ki)
          scores(bi, h, qi, ki) = -std::numeric_limits<double>::infinity();
  return scores;
}

struct AttendResult {
  DenseArray context;       // [b x l x d_model], after Wo
  DenseArray heads_concat;  // [b x l x n*d_head], before Wo
  AttnTensor weights;       // post-softmax, post-hook
};

/// softmax -> hook -> weights * V -> concat heads -> Wo.
inline AttendResult attend(const DenseArray& scores, const DenseArray& x,
                           const HeadProjections& proj, const AttnHook& hook = {}) {
  AttnTensor weights(softmax_lastdim(scores));
  if (hook) {
    const Shape expected = weights.array().shape();
    weights = hook(weights);
    if (weights.array().shape() != expected) {
      throw ContractError("attend: hook returned shape " + shape_str(weights.array().shape()) +
                          ", expected " + shape_str(expected));
    }
  }

  const DenseArray v = project_heads(x, proj.wv);          // [b x n x l x dh]
  const DenseArray per_head = matmul(weights.array(), v);  // [b x n x l x dh]

  const std::size_t b = x.extent(0), l = x.extent(1), n = proj.n_heads(), dh = proj.d_head();
  DenseArray concat({b, l, n * dh});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t h = 0; h < n; ++h)
      for (std::size_t p = 0; p < l; ++p)
        for (std::size_t j = 0; j < dh; ++j) concat(bi, p, h * dh + j) = per_head(bi, h, p, j);

  DenseArray context = matmul(concat, proj.wo);
  return {std::move(context), std::move(concat), std::move(weights)};
}

}  // namespace atnt
