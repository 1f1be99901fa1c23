// Attention Transition: an interval scheduler that picks (layer, interval)
// pairs and a dispenser that eliminates small attention weights in an interval
// and hands their mass to the two preceding intervals.
#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "atnt/attention.hpp"
#include "atnt/model.hpp"
#include "atnt/numerics.hpp"

namespace atnt {

class ScheduleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IntervalError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TransitionParams {
  double alpha = 1.0;          // elimination bound is alpha / e
  double beta = 0.5;           // dispensation scale; > 0.1 extends rows past 1
  std::size_t lay = 2;         // intervals per scheduled layer; 0 disables
  std::size_t interval = 16;   // tokens per interval
  double near_factor = 7.0;    // weight on the interval just before [s, e)
  double far_factor = 3.0;     // weight on the interval two back
  double mask_floor = 0.01;    // mask value for window entries below the bound
  bool halve_first_token = false;
  bool renormalize = false;    // pick beta per row so every row sums to 1

  void validate() const {
    if (!(alpha >= 0.0)) throw std::invalid_argument("TransitionParams: alpha must be >= 0");
    if (!(beta >= 0.0)) throw std::invalid_argument("TransitionParams: beta must be >= 0");
    if (interval == 0) throw std::invalid_argument("TransitionParams: interval must be >= 1");
    if (!(near_factor >= 0.0) || !(far_factor >= 0.0)) {
      throw std::invalid_argument("TransitionParams: dispensation factors must be >= 0");
    }
    if (!(mask_floor > 0.0 && mask_floor <= 1.0)) {
      throw std::invalid_argument("TransitionParams: mask_floor must be in (0, 1]");
    }
  }

  friend bool operator==(const TransitionParams&, const TransitionParams&) = default;
};

inline void to_json(nlohmann::json& j, const TransitionParams& p) {
  j = nlohmann::json{{"alpha", p.alpha},
                     {"beta", p.beta},
                     {"lay", p.lay},
                     {"interval", p.interval},
                     {"near_factor", p.near_factor},
                     {"far_factor", p.far_factor},
                     {"mask_floor", p.mask_floor},
                     {"halve_first_token", p.halve_first_token},
                     {"renormalize", p.renormalize}};
}

inline void from_json(const nlohmann::json& j, TransitionParams& p) {
  const TransitionParams d;
  p.alpha = j.value("alpha", d.alpha);
  p.beta = j.value("beta", d.beta);
  p.lay = j.value("lay", d.lay);
  p.interval = j.value("interval", d.interval);
  p.near_factor = j.value("near_factor", d.near_factor);
  p.far_factor = j.value("far_factor", d.far_factor);
  p.mask_floor = j.value("mask_floor", d.mask_floor);
  p.halve_first_token = j.value("halve_first_token", d.halve_first_token);
  p.renormalize = j.value("renormalize", d.renormalize);
}

// --- decision maker ----------------------------------------------------------

struct ScheduledInterval {
  std::size_t layer;
  std::size_t index;  // 1-based interval number
  std::size_t start;
  std::size_t end;

  friend bool operator==(const ScheduledInterval&, const ScheduledInterval&) = default;
};

struct IntervalSchedule {
  std::size_t interval = 0;
  std::size_t total_intervals = 0;  // floor(seq_len / interval)
  std::vector<ScheduledInterval> entries;

  bool empty() const { return entries.empty(); }

  std::vector<ScheduledInterval> for_layer(std::size_t layer) const {
    std::vector<ScheduledInterval> out;
    std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
                 [&](const ScheduledInterval& e) { return e.layer == layer; });
    return out;
  }
};

/// Sequential scheduler. Layer 0 and the last two layers are never touched;
/// the remaining layers, in order, each take the next `lay` intervals counting
/// up from `start_interval`. A layer is only scheduled while `lay` whole
/// intervals remain.
inline IntervalSchedule plan_schedule(std::size_t seq_len, std::size_t n_layers,
                                      const TransitionParams& params,
                                      std::size_t start_interval = 3) {
  params.validate();
  if (n_layers < 4) {
    throw ScheduleError("plan_schedule: n_layers must be >= 4 (first layer and last two are excluded), got " +
                        std::to_string(n_layers));
  }
  if (start_interval < 3) {
    throw ScheduleError("plan_schedule: start_interval must be >= 3 so the far window s - 2i stays in range, got " +
                        std::to_string(start_interval));
  }
  const std::size_t i = params.interval;
  if (seq_len < start_interval * i) {
    throw ScheduleError("plan_schedule: seq_len " + std::to_string(seq_len) +
                        " shorter than start_interval * interval = " +
                        std::to_string(start_interval * i));
  }

  IntervalSchedule sched;
  sched.interval = i;
  sched.total_intervals = seq_len / i;
  if (params.lay == 0) return sched;

  std::size_t next = start_interval;
  for (std::size_t layer = 1; layer + 2 < n_layers; ++layer) {
    if (next + params.lay - 1 > sched.total_intervals) break;
    for (std::size_t k = 0; k < params.lay; ++k, ++next) {
      sched.entries.push_back({layer, next, (next - 1) * i, next * i});
    }
  }
  return sched;
}

// --- dispenser ---------------------------------------------------------------

struct RowDispense {
  std::size_t batch;
  std::size_t head;
  std::size_t row;
  double first_token_mass;   // removed by halving column 0
  double kept_mass;          // row sum after elimination
  double eliminated_mass;    // E, includes first_token_mass
  double mask_sum;
  double beta;               // effective beta (differs from params under renormalize)
  double added_mass;
  double post_row_sum;
  std::size_t eliminated_count;  // causal entries below the bound
  bool degenerate;               // bound >= every weight in the row
};

struct DispenseReport {
  std::size_t start = 0;
  std::size_t end = 0;
  double bound = 0.0;
  std::vector<RowDispense> rows;

  bool degenerate() const {
    return std::any_of(rows.begin(), rows.end(), [](const RowDispense& r) { return r.degenerate; });
  }
  double total_eliminated() const {
    double s = 0.0;
    for (const auto& r : rows) s += r.eliminated_mass;
    return s;
  }
  double total_added() const {
    double s = 0.0;
    for (const auto& r : rows) s += r.added_mass;
    return s;
  }
  std::size_t total_eliminated_count() const {
    std::size_t s = 0;
    for (const auto& r : rows) s += r.eliminated_count;
    return s;
  }
  double mean_post_row_sum() const {
    if (rows.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : rows) s += r.post_row_sum;
    return s / static_cast<double>(rows.size());
  }
  double mean_mask_sum() const {
    if (rows.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : rows) s += r.mask_sum;
    return s / static_cast<double>(rows.size());
  }
};

struct DispenseResult {
  AttnTensor attention;
  DispenseReport report;
};

/// Eliminates and dispenses attention for query rows [s, e) of every batch
/// entry and head. With i = e - s and bound = alpha / e:
///   1. optionally halve column 0, counting the removed half as eliminated;
///   2. zero entries of columns [0, e) below the bound;
///   3. mask over columns [s - 2i, e - i): 1 where the weight is >= bound,
///      mask_floor elsewhere;
///   4. quantum = E / sum(mask) * beta per row, where E is the eliminated mass;
///   5. add near_factor * quantum to each column in [s - i, s) and
///      far_factor * quantum to each column in [s - 2i, s - i).
/// Columns >= s never receive mass and rows outside [s, e) are not touched.
inline DispenseResult dispense(const AttnTensor& att, std::size_t s, std::size_t e,
                               const TransitionParams& params) {
  params.validate();
  const std::size_t len = att.length();
  if (!(s < e && e <= len)) {
    throw IntervalError("dispense: need s < e <= length, got s=" + std::to_string(s) +
                        " e=" + std::to_string(e) + " length=" + std::to_string(len));
  }
  const std::size_t i = e - s;
  if (i != params.interval) {
    throw IntervalError("dispense: e - s = " + std::to_string(i) + " but interval is " +
                        std::to_string(params.interval));
  }
  if (s < 2 * i) {
    throw IntervalError("dispense: s=" + std::to_string(s) + " < 2 * interval; far window would start before 0");
  }

  const DenseArray rows_in = slice(att.array(), {SliceRange::all(), SliceRange::all(), SliceRange{std::ptrdiff_t(s), std::ptrdiff_t(e)}});
  const DenseArray in_sums = sum_lastdim(rows_in);
  for (std::size_t k = 0; k < in_sums.size(); ++k) {
    if (in_sums.data()[k] > 1.0 + 1e-6) {
      throw IntervalError("dispense: row sum " + std::to_string(in_sums.data()[k]) +
                          " exceeds 1; rows [s, e) must be normalized");
    }
  }

  const auto ps = static_cast<std::ptrdiff_t>(s);
  const auto pe = static_cast<std::ptrdiff_t>(e);
  const auto pi = static_cast<std::ptrdiff_t>(i);
  const SliceRange all = SliceRange::all();
  const double bound = params.alpha / static_cast<double>(e);

  // [b x n x i x e]: the rows being rewritten, restricted to columns < e.
  DenseArray block = slice(att.array(), {all, all, {ps, pe}, {0, pe}});
  const std::size_t nb = block.extent(0), nh = block.extent(1);

  DenseArray first_mass({nb, nh, i});
  if (params.halve_first_token) {
    const DenseArray col0 = slice(block, {all, all, all, {0, 1}});
    const DenseArray halved = col0 * 0.5;
    assign_slice(block, {all, all, all, {0, 1}}, halved);
    first_mass = (col0 - halved).reshaped({nb, nh, i});
  }

  const DenseArray pre_sum = sum_lastdim(block);
  const DenseArray pre_block = block;
  block = masked_fill(block, Threshold{Cmp::kGreaterEqual, bound}, 0.0);
  const DenseArray kept = sum_lastdim(block);
  const DenseArray eliminated = (pre_sum - kept) + first_mass;

  const DenseArray window = slice(block, {all, all, all, {ps - 2 * pi, pe - pi}});
  const DenseArray mask = select(window, Threshold{Cmp::kGreaterEqual, bound}, 1.0, params.mask_floor);
  const DenseArray mask_sum = sum_lastdim(mask);

  DenseArray beta_eff({nb, nh, i}, params.beta);
  if (params.renormalize) {
    const double spread = (params.near_factor + params.far_factor) * static_cast<double>(i);
    beta_eff = mask_sum * (1.0 / spread);
  }
  const DenseArray quantum = hadamard(eliminated / mask_sum, beta_eff);

  const SliceRange near{ps - pi, pe - pi};
  const SliceRange far{ps - 2 * pi, pe - 2 * pi};
  assign_slice(block, {all, all, all, near},
               slice(block, {all, all, all, near}) + broadcast_lastdim(quantum * params.near_factor, i));
  assign_slice(block, {all, all, all, far},
               slice(block, {all, all, all, far}) + broadcast_lastdim(quantum * params.far_factor, i));

  const DenseArray post_sum = sum_lastdim(block);

  DenseArray out = att.array();
  assign_slice(out, {all, all, {ps, pe}, {0, pe}}, block);

  DispenseReport report;
  report.start = s;
  report.end = e;
  report.bound = bound;
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t h = 0; h < nh; ++h)
      for (std::size_t r = 0; r < i; ++r) {
        std::size_t count = 0;
        double row_max = 0.0;
        for (std::size_t k = 0; k <= s + r; ++k) {
          const double v = pre_block(b, h, r, k);
          row_max = std::max(row_max, v);
          if (v < bound) ++count;
        }
        const double q = quantum(b, h, r);
        report.rows.push_back(RowDispense{
            b, h, s + r, first_mass(b, h, r), kept(b, h, r), eliminated(b, h, r), mask_sum(b, h, r),
            beta_eff(b, h, r), (params.near_factor + params.far_factor) * static_cast<double>(i) * q,
            post_sum(b, h, r), count, bound >= row_max && bound > 0.0});
      }
  return {AttnTensor(std::move(out)), std::move(report)};
}

// --- composition -------------------------------------------------------------

struct ScheduledReport {
  ScheduledInterval where;
  DispenseReport report;
};

struct TransitionTrace {
  LayerTrace trace;
  IntervalSchedule schedule;
  std::vector<ScheduledReport> reports;  // in application order
};

/// Forward pass with the dispenser hooked into every scheduled layer. The
/// schedule is planned for the full sequence length; a disabled (lay = 0) or
/// empty schedule installs no hooks at all.
inline TransitionTrace run_with_transition(const ModelWeights& w, std::span<const TokenId> tokens,
                                           const TransitionParams& params,
                                           std::size_t start_interval = 3) {
  TransitionTrace out;
  if (params.lay == 0) {
    out.trace = forward(w, tokens);
    return out;
  }
  out.schedule = plan_schedule(tokens.size(), w.config.n_layers, params, start_interval);
  if (out.schedule.empty()) {
    out.trace = forward(w, tokens);
    return out;
  }

  LayerHooks hooks(w.config.n_layers);
  for (std::size_t layer = 0; layer < hooks.size(); ++layer) {
    auto entries = out.schedule.for_layer(layer);
    if (entries.empty()) continue;
    hooks[layer] = [entries = std::move(entries), &params, &reports = out.reports](const AttnTensor& att) {
      AttnTensor cur = att;
      for (const auto& where : entries) {
        DispenseResult r = dispense(cur, where.start, where.end, params);
        cur = std::move(r.attention);
        reports.push_back({where, std::move(r.report)});
      }
      return cur;
    };
  }
  out.trace = forward(w, tokens, hooks);
  return out;
}

}  // namespace atnt
