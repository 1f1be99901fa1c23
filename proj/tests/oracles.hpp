// Test-only reference implementations. These are written as plain scalar
// loops and deliberately share no code path with include/atnt beyond the
// DenseArray container and parameter structs.
#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <random>
#include <tuple>
#include <vector>

#include "atnt/attention.hpp"
#include "atnt/numerics.hpp"
#include "atnt/transition.hpp"

namespace atnt::oracle {

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> v(n);
  for (double& x : v) x = nd(rng);
  return v;
}

inline DenseArray random_array(std::mt19937_64& rng, Shape shape, double scale = 1.0) {
  const std::size_t n = shape_numel(shape);
  return DenseArray(std::move(shape), random_vector(rng, n, scale));
}

inline double theta(std::size_t j, std::size_t d, double base) {
  return std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(d));
}

/// Explicit block-diagonal rotation matrix R_m (d x d).
inline std::vector<std::vector<double>> rotation_matrix(std::size_t d, std::size_t m, double base) {
  std::vector<std::vector<double>> r(d, std::vector<double>(d, 0.0));
  for (std::size_t j = 0; j < d / 2; ++j) {
    const double a = static_cast<double>(m) * theta(j, d, base);
    r[2 * j][2 * j] = std::cos(a);
    r[2 * j][2 * j + 1] = -std::sin(a);
    r[2 * j + 1][2 * j] = std::sin(a);
    r[2 * j + 1][2 * j + 1] = std::cos(a);
  }
  return r;
}

/// Re[sum_j q~_j conj(k~_j) e^{i (m - n) theta_j}] with q~_j = q_{2j} + i q_{2j+1}.
inline double complex_rotary_dot(const std::vector<double>& q, const std::vector<double>& k, long rel,
                                 double base) {
  const std::size_t d = q.size();
  std::complex<double> acc{0, 0};
  for (std::size_t j = 0; j < d / 2; ++j) {
    const std::complex<double> qj{q[2 * j], q[2 * j + 1]}, kj{k[2 * j], k[2 * j + 1]};
    acc += qj * std::conj(kj) * std::polar(1.0, static_cast<double>(rel) * theta(j, d, base));
  }
  return acc.real();
}

struct ScalarAttention {
  DenseArray weights;       // [b x n x l x l]
  DenseArray heads_concat;  // [b x l x n*dh]
  DenseArray context;       // [b x l x d_model]
};

/// Multi-head causal attention with every product spelled out as a loop and
/// rotary applied in complex form.
inline ScalarAttention scalar_attention(const DenseArray& x, const HeadProjections& p, double base) {
  const std::size_t b = x.extent(0), l = x.extent(1), d = x.extent(2);
  const std::size_t n = p.n_heads(), dh = p.d_head();
  ScalarAttention out{DenseArray({b, n, l, l}), DenseArray({b, l, n * dh}), DenseArray({b, l, d})};
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t h = 0; h < n; ++h) {
      std::vector<std::vector<std::complex<double>>> qr(l), kr(l);
      std::vector<std::vector<double>> v(l, std::vector<double>(dh, 0.0));
      for (std::size_t pos = 0; pos < l; ++pos) {
        std::vector<double> q(dh, 0.0), k(dh, 0.0);
        for (std::size_t c = 0; c < dh; ++c)
          for (std::size_t j = 0; j < d; ++j) {
            q[c] += x(bi, pos, j) * p.wq(h, j, c);
            k[c] += x(bi, pos, j) * p.wk(h, j, c);
            v[pos][c] += x(bi, pos, j) * p.wv(h, j, c);
          }
        for (std::size_t j = 0; j < dh / 2; ++j) {
          const auto rot = std::polar(1.0, static_cast<double>(pos) * theta(j, dh, base));
          qr[pos].push_back(std::complex<double>{q[2 * j], q[2 * j + 1]} * rot);
          kr[pos].push_back(std::complex<double>{k[2 * j], k[2 * j + 1]} * rot);
        }
      }
      for (std::size_t qi = 0; qi < l; ++qi) {
        std::vector<double> s(qi + 1);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t ki = 0; ki <= qi; ++ki) {
          std::complex<double> acc{0, 0};
          for (std::size_t j = 0; j < dh / 2; ++j) acc += qr[qi][j] * std::conj(kr[ki][j]);
          s[ki] = acc.real() / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[ki]);
        }
        double z = 0.0;
        for (double& e : s) z += (e = std::exp(e - mx));
        for (std::size_t ki = 0; ki <= qi; ++ki) out.weights(bi, h, qi, ki) = s[ki] / z;
        for (std::size_t c = 0; c < dh; ++c) {
          double acc = 0.0;
          for (std::size_t ki = 0; ki <= qi; ++ki) acc += out.weights(bi, h, qi, ki) * v[ki][c];
          out.heads_concat(bi, qi, h * dh + c) = acc;
        }
      }
    }
    for (std::size_t pos = 0; pos < l; ++pos)
      for (std::size_t o = 0; o < d; ++o) {
        double acc = 0.0;
        for (std::size_t c = 0; c < n * dh; ++c) acc += out.heads_concat(bi, pos, c) * p.wo(c, o);
        out.context(bi, pos, o) = acc;
      }
  }
  return out;
}

struct OracleRow {
  double kept;
  double eliminated;
  double mask_sum;
  double beta;
  double post;
};

/// Row-by-row transcription of the dispenser (broadcast reading of the add
/// matrix: every target column in a row receives the same quantum).
inline std::pair<DenseArray, std::vector<OracleRow>> dispense_scalar(const DenseArray& att_in, std::size_t s,
                                                                     std::size_t e, const TransitionParams& p) {
  DenseArray att = att_in;
  std::vector<OracleRow> rows;
  const std::size_t i = e - s;
  const double bound = p.alpha / static_cast<double>(e);
  for (std::size_t b = 0; b < att.extent(0); ++b)
    for (std::size_t h = 0; h < att.extent(1); ++h)
      for (std::size_t r = s; r < e; ++r) {
        double first = 0.0;
        if (p.halve_first_token) {
          const double orig = att(b, h, r, 0);
          const double half = orig * 0.5;
          att(b, h, r, 0) = half;
          first = orig - half;
        }
        double pre = 0.0;
        for (std::size_t k = 0; k < e; ++k) pre += att(b, h, r, k);
        for (std::size_t k = 0; k < e; ++k)
          if (att(b, h, r, k) < bound) att(b, h, r, k) = 0.0;
        double kept = 0.0;
        for (std::size_t k = 0; k < e; ++k) kept += att(b, h, r, k);
        const double eliminated = pre - kept + first;
        double msum = 0.0;
        for (std::size_t k = s - 2 * i; k < e - i; ++k) msum += att(b, h, r, k) >= bound ? 1.0 : p.mask_floor;
        const double beta =
            p.renormalize ? msum / ((p.near_factor + p.far_factor) * static_cast<double>(i)) : p.beta;
        const double add = eliminated / msum * beta;
        for (std::size_t k = s - i; k < e - i; ++k) att(b, h, r, k) += add * p.near_factor;
        for (std::size_t k = s - 2 * i; k < e - 2 * i; ++k) att(b, h, r, k) += add * p.far_factor;
        double post = 0.0;
        for (std::size_t k = 0; k < e; ++k) post += att(b, h, r, k);
        rows.push_back({kept, eliminated, msum, beta, post});
      }
  return {att, rows};
}

/// Enumerates intervals first and maps each to its layer by group index.
inline std::vector<ScheduledInterval> schedule_enumeration(std::size_t seq_len, std::size_t n_layers,
                                                           std::size_t lay, std::size_t interval,
                                                           std::size_t start = 3) {
  std::vector<ScheduledInterval> out;
  if (lay == 0) return out;
  const std::size_t total = seq_len / interval;
  for (std::size_t k = start; k <= total; ++k) {
    const std::size_t group = (k - start) / lay;
    const std::size_t layer = 1 + group;
    if (layer > n_layers - 3) break;
    const std::size_t group_last = start + (group + 1) * lay - 1;
    if (group_last > total) break;
    out.push_back({layer, k, (k - 1) * interval, k * interval});
  }
  return out;
}

/// Random causal row-stochastic attention, [b x n x l x l]. `sharp` scales
/// the logits so a useful share of weights falls under typical bounds.
inline AttnTensor random_attention(std::mt19937_64& rng, std::size_t b, std::size_t n, std::size_t l,
                                   double sharp = 1.5) {
  std::normal_distribution<double> nd(0.0, sharp);
  DenseArray a({b, n, l, l});
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t h = 0; h < n; ++h)
      for (std::size_t q = 0; q < l; ++q) {
        double z = 0.0;
        for (std::size_t k = 0; k <= q; ++k) z += (a(bi, h, q, k) = std::exp(nd(rng)));
        for (std::size_t k = 0; k <= q; ++k) a(bi, h, q, k) /= z;
      }
  return AttnTensor(std::move(a));
}

}  // namespace atnt::oracle
