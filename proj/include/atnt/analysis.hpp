// Exploration harness: last-row attention statistics, threshold-elimination
// disturbance sweeps and logit-lens token overlap between layers.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "atnt/attention.hpp"
#include "atnt/model.hpp"
#include "atnt/numerics.hpp"

namespace atnt {

// --- distribution statistics ------------------------------------------------

struct HeadStats {
  double frac_below_inv_len;  // share of weights strictly below 1/l
  double max_weight;
  std::size_t max_pos;
  double first_token_weight;
  std::size_t count_above_half;
};

struct LayerDistribution {
  std::vector<HeadStats> heads;
  DenseArray head_similarity;  // [n x n] cosine of last-row attention
};

struct DistributionStats {
  std::size_t length = 0;
  std::vector<LayerDistribution> layers;
};

/// Statistics of the last query row of every layer and head (batch entry 0).
inline DistributionStats distribution_stats(std::span<const AttnTensor> attention) {
  DistributionStats out;
  for (const AttnTensor& att : attention) {
    const std::size_t l = att.length(), n = att.heads();
    out.length = l;
    const double inv_len = 1.0 / static_cast<double>(l);
    LayerDistribution layer;
    for (std::size_t h = 0; h < n; ++h) {
      const auto row = att.row(0, h, l - 1);
      HeadStats st{};
      std::size_t below = 0;
      for (std::size_t k = 0; k < l; ++k) {
        if (row[k] < inv_len) ++below;
        if (row[k] > 0.5) ++st.count_above_half;
        if (k == 0 || row[k] > st.max_weight) {
          st.max_weight = row[k];
          st.max_pos = k;
        }
      }
      st.frac_below_inv_len = static_cast<double>(below) / static_cast<double>(l);
      st.first_token_weight = row[0];
      layer.heads.push_back(st);
    }
    layer.head_similarity = DenseArray({n, n});
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a; b < n; ++b) {
        const auto ra = att.row(0, a, l - 1), rb = att.row(0, b, l - 1);
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t k = 0; k < l; ++k) {
          dot += ra[k] * rb[k];
          na += ra[k] * ra[k];
          nb += rb[k] * rb[k];
        }
        double c = (na > 0.0 && nb > 0.0) ? dot / std::sqrt(na * nb) : 0.0;
        if (a == b) c = 1.0;
        layer.head_similarity(a, b) = c;
        layer.head_similarity(b, a) = c;
      }
    }
    out.layers.push_back(std::move(layer));
  }
  return out;
}

inline DistributionStats distribution_stats(const LayerTrace& trace) {
  return distribution_stats(std::span<const AttnTensor>(trace.attention));
}

/// Mean cosine similarity over head pairs of opposite index parity.
inline double cross_parity_similarity(const LayerDistribution& layer) {
  const std::size_t n = layer.heads.size();
  double acc = 0.0;
  std::size_t cnt = 0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b)
      if ((a + b) % 2 == 1) {
        acc += layer.head_similarity(a, b);
        ++cnt;
      }
  return cnt ? acc / static_cast<double>(cnt) : 1.0;
}

// --- disturbance ---------------------------------------------------------------

/// Zeroes every causal weight below level / (q + 1) in query row q. The
/// row's first maximum is always kept, so no row is emptied. Returns the
/// eliminated mass.
inline double eliminate_row(std::span<double> row, std::size_t q, double level, bool rescale) {
  const double thr = level / static_cast<double>(q + 1);
  const std::size_t keep =
      static_cast<std::size_t>(std::max_element(row.begin(), row.begin() + q + 1) - row.begin());
  double removed = 0.0;
  bool touched = false;
  for (std::size_t k = 0; k <= q; ++k) {
    if (k != keep && row[k] < thr && row[k] != 0.0) {
      removed += row[k];
      row[k] = 0.0;
      touched = true;
    }
  }
  if (rescale && touched) {
    double sum = 0.0;
    for (std::size_t k = 0; k <= q; ++k) sum += row[k];
    for (std::size_t k = 0; k <= q; ++k) row[k] /= sum;
  }
  return removed;
}

struct EliminationTally {
  double total_mass = 0.0;
  double eliminated_mass = 0.0;
  double row_sum_acc = 0.0;
  double min_row_sum = 1.0;
  std::size_t rows = 0;
};

/// Threshold-elimination hook; tallies mass into `tally` when given.
inline AttnHook make_elimination_hook(double level, bool rescale, EliminationTally* tally = nullptr) {
  return [level, rescale, tally](const AttnTensor& att) {
    AttnTensor out = att;
    for (std::size_t b = 0; b < out.batch(); ++b)
      for (std::size_t h = 0; h < out.heads(); ++h)
        for (std::size_t q = 0; q < out.length(); ++q) {
          auto row = out.row(b, h, q);
          double before = 0.0;
          for (std::size_t k = 0; k <= q; ++k) before += row[k];
          const double removed = eliminate_row(row, q, level, rescale);
          if (tally) {
            double after = 0.0;
            for (std::size_t k = 0; k <= q; ++k) after += row[k];
            tally->total_mass += before;
            tally->eliminated_mass += removed;
            tally->row_sum_acc += after;
            tally->min_row_sum = std::min(tally->min_row_sum, after);
            ++tally->rows;
          }
        }
    return out;
  };
}

/// Share of attention mass on the hooked layers of `baseline` that a level
/// would eliminate. Nondecreasing in `level`.
inline double eliminated_mass_fraction(const LayerTrace& baseline, double level, bool skip_first_layer) {
  double total = 0.0, removed = 0.0;
  for (std::size_t li = skip_first_layer ? 1 : 0; li < baseline.n_layers(); ++li) {
    AttnTensor att = baseline.attention[li];
    for (std::size_t b = 0; b < att.batch(); ++b)
      for (std::size_t h = 0; h < att.heads(); ++h)
        for (std::size_t q = 0; q < att.length(); ++q) {
          auto row = att.row(b, h, q);
          for (std::size_t k = 0; k <= q; ++k) total += row[k];
          removed += eliminate_row(row, q, level, false);
        }
  }
  return total > 0.0 ? removed / total : 0.0;
}

/// Levels whose baseline eliminated-mass fraction reaches each target
/// (bisection; targets beyond what is reachable map to the saturating level).
inline std::vector<double> calibrate_levels(const LayerTrace& baseline, std::span<const double> targets,
                                            bool skip_first_layer) {
  std::vector<double> out;
  const double top = static_cast<double>(baseline.length()) + 1.0;
  for (double target : targets) {
    if (target <= 0.0) {
      out.push_back(0.0);
      continue;
    }
    double lo = 0.0, hi = top;
    if (eliminated_mass_fraction(baseline, hi, skip_first_layer) < target) {
      out.push_back(hi);
      continue;
    }
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      (eliminated_mass_fraction(baseline, mid, skip_first_layer) >= target ? hi : lo) = mid;
    }
    out.push_back(hi);
  }
  return out;
}

struct DisturbanceLevel {
  double level = 0.0;
  double realized_mass_fraction = 0.0;  // measured on the baseline attention
  std::vector<double> abs_diff;         // per layer, mean |logit lens delta|
  std::vector<double> sq_diff;          // per layer, mean squared delta
  bool argmax_match = true;             // final position, final logits
  bool rescaled = false;
  double mean_row_sum = 1.0;            // hooked rows, during the disturbed pass
  double min_row_sum = 1.0;
};

struct DisturbanceReport {
  std::vector<DisturbanceLevel> levels;
};

/// For each level (sorted ascending), reruns the forward pass with rows
/// thresholded at level / row_length on every layer except, optionally, the
/// first, then compares each layer's logit-lens output with the baseline.
inline DisturbanceReport disturbance_experiment(const ModelWeights& w, std::span<const TokenId> tokens,
                                                std::span<const double> levels, bool rescale,
                                                bool skip_first_layer = true) {
  DisturbanceReport report;
  if (levels.empty()) return report;
  if (tokens.size() < 16) throw InputError("disturbance_experiment: need at least 16 tokens");

  std::vector<double> sorted(levels.begin(), levels.end());
  std::sort(sorted.begin(), sorted.end());

  const LayerTrace base = forward(w, tokens);
  std::vector<DenseArray> base_lens;
  for (std::size_t li = 0; li < base.n_layers(); ++li) base_lens.push_back(lens_logits(base, li, w));
  const TokenId base_top = argmax(base.logits.row(base.length() - 1));

  for (double level : sorted) {
    EliminationTally tally;
    LayerHooks hooks(w.config.n_layers);
    for (std::size_t li = skip_first_layer ? 1 : 0; li < hooks.size(); ++li) {
      hooks[li] = make_elimination_hook(level, rescale, &tally);
    }
    const LayerTrace run = forward(w, tokens, hooks);

    DisturbanceLevel out;
    out.level = level;
    out.rescaled = rescale;
    out.realized_mass_fraction = eliminated_mass_fraction(base, level, skip_first_layer);
    for (std::size_t li = 0; li < run.n_layers(); ++li) {
      const DenseArray lens = lens_logits(run, li, w);
      double a = 0.0, s = 0.0;
      for (std::size_t k = 0; k < lens.size(); ++k) {
        const double d = lens.data()[k] - base_lens[li].data()[k];
        a += std::abs(d);
        s += d * d;
      }
      out.abs_diff.push_back(a / static_cast<double>(lens.size()));
      out.sq_diff.push_back(s / static_cast<double>(lens.size()));
    }
    out.argmax_match = argmax(run.logits.row(run.length() - 1)) == base_top;
    if (tally.rows > 0) {
      out.mean_row_sum = tally.row_sum_acc / static_cast<double>(tally.rows);
      out.min_row_sum = tally.min_row_sum;
    }
    report.levels.push_back(std::move(out));
  }
  return report;
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("spearman: need >= 2 paired values");
  const auto ranks = [](std::span<const double> v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// --- logit-lens overlap -------------------------------------------------------

struct LayerOverlap {
  std::size_t layer_a;
  std::size_t layer_b;
  double jaccard;  // mean over positions of |A ∩ B| / |A ∪ B| of top-k sets
  std::map<long, std::size_t> shift_histogram;  // p_b - p_a for the nearest recurrence
};

inline LayerOverlap layer_pair_overlap(const std::vector<std::vector<TokenId>>& top_a,
                                       const std::vector<std::vector<TokenId>>& top_b,
                                       std::size_t layer_a, std::size_t layer_b) {
  LayerOverlap out{layer_a, layer_b, 0.0, {}};
  const std::size_t l = top_a.size();
  std::map<TokenId, std::vector<std::size_t>> where_a;
  for (std::size_t p = 0; p < l; ++p)
    for (TokenId t : top_a[p]) where_a[t].push_back(p);

  double acc = 0.0;
  for (std::size_t p = 0; p < l; ++p) {
    std::vector<TokenId> a = top_a[p], b = top_b[p];
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<TokenId> inter;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
    const std::size_t uni = a.size() + b.size() - inter.size();
    acc += uni ? static_cast<double>(inter.size()) / static_cast<double>(uni) : 1.0;

    for (TokenId t : top_b[p]) {
      const auto it = where_a.find(t);
      if (it == where_a.end()) continue;
      long best = 0;
      bool found = false;
      for (std::size_t pa : it->second) {
        const long shift = static_cast<long>(p) - static_cast<long>(pa);
        if (!found || std::labs(shift) < std::labs(best) || (std::labs(shift) == std::labs(best) && shift > best)) {
          best = shift;
          found = true;
        }
      }
      ++out.shift_histogram[best];
    }
  }
  out.jaccard = l ? acc / static_cast<double>(l) : 1.0;
  return out;
}

inline LayerOverlap layer_pair_overlap(const LayerTrace& trace, const ModelWeights& w, std::size_t layer_a,
                                       std::size_t layer_b, std::size_t k) {
  if (k == 0) throw std::invalid_argument("layer_pair_overlap: k must be >= 1");
  return layer_pair_overlap(logit_lens(trace, layer_a, w, k), logit_lens(trace, layer_b, w, k), layer_a, layer_b);
}

/// Overlap for every adjacent layer pair (l, l + 1).
inline std::vector<LayerOverlap> layer_token_overlap(const LayerTrace& trace, const ModelWeights& w, std::size_t k) {
  if (k == 0) throw std::invalid_argument("layer_token_overlap: k must be >= 1");
  std::vector<std::vector<std::vector<TokenId>>> lens;
  for (std::size_t li = 0; li < trace.n_layers(); ++li) lens.push_back(logit_lens(trace, li, w, k));
  std::vector<LayerOverlap> out;
  for (std::size_t li = 0; li + 1 < trace.n_layers(); ++li) {
    out.push_back(layer_pair_overlap(lens[li], lens[li + 1], li, li + 1));
  }
  return out;
}

}  // namespace atnt
