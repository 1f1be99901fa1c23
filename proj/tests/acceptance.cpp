// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "atnt/analysis.hpp"
#include "atnt/cli.hpp"
#include "atnt/rope.hpp"
#include "atnt/transition.hpp"
#include "golden_util.hpp"
#include "oracles.hpp"

namespace {

using namespace atnt;
namespace fs = std::filesystem;

struct Outcome {
  bool pass;
  std::string detail;
};

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// --- shared dispenser cases -----------------------------------------------------

struct DispenseCase {
  AttnTensor att;
  std::size_t s, e;
  TransitionParams p;
};

std::vector<DispenseCase> dispense_cases() {
  std::mt19937_64 rng(20240601);
  std::vector<DispenseCase> out;
  for (std::size_t b : {1, 2})
    for (std::size_t n : {1, 4})
      for (std::size_t i : {2, 8})
        for (double alpha : {0.5, 1.0, 1.5})
          for (double beta : {0.1, 0.5, 1.2})
            for (int rep = 0; rep < 3; ++rep) {
              TransitionParams p;
              p.alpha = alpha;
              p.beta = beta;
              p.interval = i;
              p.halve_first_token = rep == 1;
              const std::size_t k = 3 + rng() % 4;  // interval index
              const std::size_t e = k * i, s = e - i;
              const std::size_t len = e + rng() % (2 * i + 1);
              const double sharp = 0.5 + static_cast<double>(rng() % 4) * 0.5;
              out.push_back({oracle::random_attention(rng, b, n, len, sharp), s, e, p});
            }
  return out;
}

double row_sum(const AttnTensor& a, std::size_t b, std::size_t h, std::size_t q, std::size_t upto) {
  double acc = 0.0;
  for (std::size_t k = 0; k < upto; ++k) acc += a(b, h, q, k);
  return acc;
}

// --- criteria ---------------------------------------------------------------------

Outcome dispenser_oracle() {
  const auto cases = dispense_cases();
  double worst = 0.0;
  for (const auto& c : cases) {
    const auto got = dispense(c.att, c.s, c.e, c.p);
    const auto [want, rows] = oracle::dispense_scalar(c.att.array(), c.s, c.e, c.p);
    worst = std::max(worst, max_abs_diff(got.attention.array(), want));
  }
  return {cases.size() >= 200 && worst <= 1e-12,
          std::to_string(cases.size()) + " cases, max |diff| " + num(worst)};
}

Outcome mass_accounting() {
  double worst = 0.0;
  std::size_t rows_checked = 0;
  for (const auto& c : dispense_cases()) {
    const auto got = dispense(c.att, c.s, c.e, c.p);
    const auto [want, orows] = oracle::dispense_scalar(c.att.array(), c.s, c.e, c.p);
    const double i = static_cast<double>(c.e - c.s);
    std::size_t idx = 0;
    for (std::size_t b = 0; b < c.att.batch(); ++b)
      for (std::size_t h = 0; h < c.att.heads(); ++h)
        for (std::size_t q = c.s; q < c.e; ++q, ++idx) {
          const auto& o = orows[idx];
          const double post = row_sum(got.attention, b, h, q, c.e);
          const double expect = c.p.beta * o.eliminated * (c.p.near_factor + c.p.far_factor) * i / o.mask_sum;
          worst = std::max(worst, std::abs((post - o.kept) - expect));
          ++rows_checked;
        }
  }

  // Full-mask rows: every window weight is at or above the bound, so the mask
  // sum is 2i and the added mass is 5 * beta * E with the default factors.
  std::mt19937_64 rng(7);
  std::size_t full_rows = 0;
  double worst_full = 0.0;
  for (int t = 0; t < 60; ++t) {
    TransitionParams p;
    p.interval = (t % 2) ? 8 : 2;
    p.alpha = (t % 3 == 0) ? 0.5 : 1.0;
    p.beta = std::vector<double>{0.1, 0.5, 1.2}[t % 3];
    const std::size_t i = p.interval, e = (3 + t % 3) * i, s = e - i, len = e;
    const double bound = p.alpha / static_cast<double>(e);
    DenseArray a = oracle::random_attention(rng, 1, 1, len).array();
    std::uniform_real_distribution<double> below(0.2, 0.9);
    for (std::size_t q = s; q < e; ++q) {
      std::fill(a.row(0, 0, q).begin(), a.row(0, 0, q).end(), 0.0);
      double rest = 0.0;
      for (std::size_t k = 0; k <= q; ++k)
        if (k < s - 2 * i || k >= s) rest += (a(0, 0, q, k) = below(rng) * bound);
      const double win = (1.0 - rest) / static_cast<double>(2 * i);
      if (win < bound) return {false, "bad full-mask construction"};
      for (std::size_t k = s - 2 * i; k < s; ++k) a(0, 0, q, k) = win;
    }
    const AttnTensor att(a);
    const auto got = dispense(att, s, e, p);
    for (const auto& r : got.report.rows) {
      if (r.mask_sum != static_cast<double>(2 * i)) return {false, "full-mask row has mask sum " + num(r.mask_sum)};
      const double post = row_sum(got.attention, 0, 0, r.row, e);
      worst_full = std::max(worst_full, std::abs((post - r.kept_mass) - 5.0 * p.beta * r.eliminated_mass));
      ++full_rows;
    }
  }
  return {worst <= 1e-9 && worst_full <= 1e-9,
          std::to_string(rows_checked) + " rows max err " + num(worst) + "; " + std::to_string(full_rows) +
              " full-mask rows (5*beta*E) max err " + num(worst_full)};
}

Outcome causality_locality() {
  std::size_t violations = 0, entries = 0;
  for (const auto& c : dispense_cases()) {
    const auto got = dispense(c.att, c.s, c.e, c.p);
    const std::size_t l = c.att.length();
    for (std::size_t b = 0; b < c.att.batch(); ++b)
      for (std::size_t h = 0; h < c.att.heads(); ++h)
        for (std::size_t q = 0; q < l; ++q)
          for (std::size_t k = 0; k < l; ++k) {
            if (q >= c.s && q < c.e && k < c.e) continue;
            ++entries;
            if (got.attention(b, h, q, k) != c.att(b, h, q, k)) ++violations;
          }
  }
  return {violations == 0, std::to_string(entries) + " protected entries, " + std::to_string(violations) + " violations"};
}

Outcome schedule_constraints() {
  std::mt19937_64 rng(99);
  std::size_t configs = 0;
  for (int t = 0; t < 1000; ++t) {
    TransitionParams p;
    const std::size_t n = 4 + rng() % 13;
    p.interval = 1 + rng() % 64;
    p.lay = 1 + rng() % 5;
    const std::size_t len = 3 * p.interval + rng() % 1500;
    const auto s = plan_schedule(len, n, p);
    ++configs;
    if (s.entries != oracle::schedule_enumeration(len, n, p.lay, p.interval)) {
      return {false, "enumeration mismatch at config " + std::to_string(t)};
    }
    std::vector<std::size_t> per_layer(n, 0);
    for (const auto& e : s.entries) {
      if (e.layer == 0 || e.layer + 2 >= n) return {false, "excluded layer scheduled"};
      if (e.start < 2 * p.interval || e.index < 3 || e.end - e.start != p.interval || e.end > len) {
        return {false, "interval bounds violated"};
      }
      ++per_layer[e.layer];
    }
    const std::size_t avail = s.total_intervals >= 3 ? s.total_intervals - 2 : 0;
    const std::size_t full = std::min(n - 3, avail / p.lay);
    for (std::size_t l = 1; l + 2 < n; ++l) {
      if (per_layer[l] != (l <= full ? p.lay : 0)) return {false, "layer " + std::to_string(l) + " count"};
    }
  }
  TransitionParams long_ctx;
  long_ctx.interval = 70;
  const std::size_t total = plan_schedule(2030, 32, long_ctx).total_intervals;
  return {total == 29, std::to_string(configs) + " configs match; seq_len 2030 / interval 70 -> " +
                           std::to_string(total) + " intervals"};
}

Outcome rotary_properties() {
  std::mt19937_64 rng(5);
  double inv = 0.0, norm = 0.0, ident = 0.0;
  std::size_t cases = 0;
  bool decay_ok = true;
  const std::size_t dims[] = {2, 4, 64, 128};
  for (std::size_t d : dims) {
    const RopeConfig cfg{d, 10000.0, 1 << 16};
    for (int t = 0; t < 250; ++t, ++cases) {
      const auto q = oracle::random_vector(rng, d), k = oracle::random_vector(rng, d);
      const std::size_t m = rng() % 4096, n = rng() % 4096, delta = rng() % 4096;
      inv = std::max(inv, std::abs(rotary_dot(q, k, m, n, cfg) - rotary_dot(q, k, m + delta, n + delta, cfg)));
      double n0 = 0.0, n1 = 0.0;
      const auto r = apply_rotary(q, m, cfg);
      for (std::size_t j = 0; j < d; ++j) {
        n0 += q[j] * q[j];
        n1 += r[j] * r[j];
      }
      norm = std::max(norm, std::abs(std::sqrt(n0) - std::sqrt(n1)));
      if (apply_rotary(q, 0, cfg) != q) ident = 1.0;
    }
    const double peak = decay_upper_bound(0, cfg);
    decay_ok &= peak == (static_cast<double>(d) / 2.0 + 1.0) / 2.0;
    for (std::size_t r = 1; r <= 2048; ++r) decay_ok &= decay_upper_bound(r, cfg) <= peak;
  }
  return {cases == 1000 && inv <= 1e-9 && norm <= 1e-9 && ident == 0.0 && decay_ok,
          std::to_string(cases) + " cases; invariance " + num(inv) + ", norm " + num(norm) +
              (decay_ok ? ", decay peak at 0" : ", decay check failed")};
}

HeadProjections random_proj(std::mt19937_64& rng, std::size_t n, std::size_t dh) {
  const std::size_t d = n * dh;
  return {oracle::random_array(rng, {n, d, dh}, 0.5), oracle::random_array(rng, {n, d, dh}, 0.5),
          oracle::random_array(rng, {n, d, dh}, 0.5), oracle::random_array(rng, {d, d}, 0.5)};
}

Outcome attention_correctness() {
  std::mt19937_64 rng(11);
  double worst = 0.0;
  std::size_t causal_bad = 0;
  for (int t = 0; t <= 50; ++t) {
    const bool fixed = t == 0;
    const std::size_t b = fixed ? 1 : 1 + rng() % 2, n = fixed ? 2 : 1 + rng() % 4;
    const std::size_t dh = fixed ? 2 : 2 * (1 + rng() % 4), l = fixed ? 3 : 1 + rng() % 12;
    const auto p = random_proj(rng, n, dh);
    DenseArray x = oracle::random_array(rng, {b, l, n * dh});
    const RopeConfig rope{dh, 10000.0, 64};
    const auto got = attend(attention_scores(x, p, rope), x, p);
    const auto want = oracle::scalar_attention(x, p, 10000.0);
    worst = std::max({worst, max_abs_diff(got.weights.array(), want.weights), max_abs_diff(got.context, want.context)});

    // Perturb the last position; every earlier output must be bit-identical.
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t j = 0; j < n * dh; ++j) x(bi, l - 1, j) += 1.0 + static_cast<double>(j);
    const auto moved = attend(attention_scores(x, p, rope), x, p);
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t pos = 0; pos + 1 < l; ++pos)
        for (std::size_t j = 0; j < n * dh; ++j) causal_bad += moved.context(bi, pos, j) != got.context(bi, pos, j);
  }

  const ModelWeights w = init_random(ModelConfig{});
  std::vector<TokenId> toks(40);
  for (std::size_t k = 0; k < toks.size(); ++k) toks[k] = static_cast<TokenId>((k * 13 + 5) % 256);
  const LayerTrace a = forward(w, toks);
  toks.back() ^= 0x55;
  const LayerTrace c = forward(w, toks);
  for (std::size_t pos = 0; pos + 1 < toks.size(); ++pos)
    for (std::size_t v = 0; v < 256; ++v) causal_bad += a.logits(pos, v) != c.logits(pos, v);

  return {worst <= 1e-12 && causal_bad == 0,
          "b=1,n=2,l=3 + 50 random cases max |diff| " + num(worst) + "; " + std::to_string(causal_bad) +
              " causal violations"};
}

Outcome noop_equivalences() {
  const ModelWeights w = init_random(ModelConfig{});
  std::mt19937_64 rng(3);
  std::vector<TokenId> toks(128);
  for (auto& t : toks) t = static_cast<TokenId>(rng() % 256);
  const LayerTrace plain = forward(w, toks);

  std::vector<std::string> bad;
  TransitionParams off;
  off.lay = 0;
  if (run_with_transition(w, toks, off).trace != plain) bad.push_back("lay=0");

  TransitionParams wide;
  wide.lay = 4;
  const std::vector<TokenId> short_toks(toks.begin(), toks.begin() + 80);
  const auto empty = run_with_transition(w, short_toks, wide);
  if (!empty.schedule.empty() || empty.trace != forward(w, short_toks)) bad.push_back("empty schedule");

  TransitionParams zero_alpha;
  zero_alpha.alpha = 0.0;
  zero_alpha.beta = 1.2;
  const auto za = run_with_transition(w, toks, zero_alpha);
  if (za.reports.empty() || za.trace != plain) bad.push_back("alpha=0");

  TransitionParams zero_beta;
  zero_beta.alpha = 0.0;
  zero_beta.beta = 0.0;
  if (run_with_transition(w, toks, zero_beta).trace != plain) bad.push_back("beta=0");

  std::string d = "lay=0, empty schedule, alpha=0, beta=0 with zero elimination";
  for (const auto& b : bad) d += "; differs: " + b;
  return {bad.empty(), d};
}

Outcome disturbance_trend() {
  const std::vector<double> targets{0.0, 0.05, 0.10, 0.20, 0.40};
  std::vector<double> mass(targets.size(), 0.0), diff(targets.size(), 0.0), diff_rs(targets.size(), 0.0);
  bool zero_exact = true;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    ModelConfig cfg;
    cfg.rng_seed = 1000 + seed;
    const ModelWeights w = init_random(cfg);
    std::mt19937_64 rng(seed);
    std::vector<TokenId> toks(128);
    for (auto& t : toks) t = static_cast<TokenId>(rng() % 256);
    const auto levels = calibrate_levels(forward(w, toks), targets, true);
    const auto plain = disturbance_experiment(w, toks, levels, false);
    const auto rescaled = disturbance_experiment(w, toks, levels, true);
    for (std::size_t k = 0; k < targets.size(); ++k) {
      mass[k] += plain.levels[k].realized_mass_fraction / 20.0;
      diff[k] += plain.levels[k].abs_diff.back() / 20.0;
      diff_rs[k] += rescaled.levels[k].abs_diff.back() / 20.0;
    }
    for (const auto* rep : {&plain, &rescaled})
      for (double v : rep->levels[0].abs_diff) zero_exact &= v == 0.0;
  }
  const double rho = spearman(mass, diff), rho_rs = spearman(mass, diff_rs);
  std::string d = "20 seeds; mass";
  for (double m : mass) d += " " + num(m);
  d += "; |diff|";
  for (double v : diff) d += " " + num(v);
  d += "; spearman " + num(rho) + " (rescaled " + num(rho_rs) + ")";
  d += zero_exact ? "; level 0 exact" : "; level 0 NOT exact";
  return {rho >= 0.9 && rho_rs >= 0.9 && zero_exact, d};
}

struct CliRun {
  int code;
  std::string err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"atnt"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "atnt_acceptance" / name;
  fs::remove_all(p);
  return p;
}

std::string fixture(const std::string& name) { return (golden::fixture_dir() / (name + ".json")).string(); }

Outcome determinism() {
  const std::vector<std::pair<std::string, std::string>> cmds{
      {"gen-model", "gen_model"}, {"run", "run"},         {"sweep", "sweep"},       {"analyze-dist", "analyze"},
      {"disturb", "disturb"},     {"overlap", "overlap"}, {"decay-bound", "decay"}};
  std::size_t files = 0;
  for (const auto& [cmd, fx] : cmds) {
    const fs::path a = scratch(fx + "_a"), b = scratch(fx + "_b");
    for (const auto& dir : {a, b}) {
      const auto r = cli({cmd, "--config", fixture(fx), "--out", dir.string()});
      if (r.code != 0) return {false, cmd + " exited " + std::to_string(r.code) + ": " + r.err};
    }
    const auto fa = golden::files_in(a), fb = golden::files_in(b);
    if (fa.empty() || fa.size() != fb.size()) return {false, cmd + " produced different file sets"};
    for (std::size_t k = 0; k < fa.size(); ++k, ++files) {
      if (golden::read_file(fa[k]) != golden::read_file(fb[k])) return {false, cmd + ": " + fa[k].filename().string()};
    }
  }
  const fs::path w = scratch("roundtrip");
  fs::create_directories(w);
  const ModelWeights m = init_random(ModelConfig{});
  save_weights(m, (w / "a.atnt").string());
  save_weights(load_weights((w / "a.atnt").string()), (w / "b.atnt").string());
  const bool same = golden::read_file(w / "a.atnt") == golden::read_file(w / "b.atnt");
  return {same, std::to_string(cmds.size()) + " subcommands, " + std::to_string(files) +
                    " files byte-identical; weight save/load/save " + (same ? "identical" : "DIFFERS")};
}

Outcome golden_regressions() {
  std::vector<TokenId> prompt16(16);
  for (std::size_t k = 0; k < 16; ++k) prompt16[k] = static_cast<TokenId>((37 * k + 11) % 256);
  const double dev = golden::array_deviation(forward(init_random(ModelConfig{}), prompt16).logits,
                                             golden::golden_dir() / "forward_seed42_logits.txt");
  const std::vector<TokenId> tiny_toks{1, 7, 3, 31, 0, 12, 12, 5, 9, 20};
  const double dev_tiny =
      golden::array_deviation(forward(load_weights((golden::fixture_dir() / "tiny.atnt").string()), tiny_toks).logits,
                              golden::golden_dir() / "tiny_logits.txt");

  std::vector<std::string> mismatched;
  std::size_t files = 0;
  for (const auto& [cmd, fx] : std::vector<std::pair<std::string, std::string>>{{"run", "run"}, {"sweep", "sweep"}}) {
    const fs::path out = scratch("golden_" + fx);
    if (cli({cmd, "--config", fixture(fx), "--out", out.string()}).code != 0) return {false, cmd + " failed"};
    for (const auto& f : golden::files_in(out)) {
      ++files;
      std::string why;
      if (!golden::matches_bytes(f, golden::golden_dir() / "cli" / fx / f.filename(), &why)) mismatched.push_back(why);
    }
  }
  std::string d = "logits dev " + num(dev) + " (fixture weights " + num(dev_tiny) + "); " + std::to_string(files) +
                  " run/sweep files";
  for (const auto& m : mismatched) d += "; " + m;
  return {dev <= 1e-10 && dev_tiny <= 1e-10 && mismatched.empty() && files == 5, d};
}

struct Criterion {
  int id;
  const char* name;
  double time_limit_s;  // 0 = none
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "dispenser oracle equivalence", 10.0, dispenser_oracle},
      {2, "mass accounting", 0.0, mass_accounting},
      {3, "causality and locality", 0.0, causality_locality},
      {4, "schedule constraints", 0.0, schedule_constraints},
      {5, "rotary properties", 5.0, rotary_properties},
      {6, "attention correctness", 0.0, attention_correctness},
      {7, "no-op equivalences", 0.0, noop_equivalences},
      {8, "disturbance monotone trend", 60.0, disturbance_trend},
      {9, "end-to-end determinism", 0.0, determinism},
      {10, "golden regressions", 0.0, golden_regressions},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.time_limit_s > 0.0 && secs >= c.time_limit_s) {
      o.pass = false;
      o.detail += "; over time limit " + num(c.time_limit_s) + "s";
    }
    std::printf("%s [%d] %s (%.2fs): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, secs, o.detail.c_str());
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
