// JSON experiment configs and the subcommands behind the `atnt` tool. Every
// command is deterministic: same config and inputs, byte-identical outputs.
#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <exception>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "atnt/analysis.hpp"
#include "atnt/model.hpp"
#include "atnt/rope.hpp"
#include "atnt/transition.hpp"

namespace atnt {

namespace fs = std::filesystem;

/// Invalid or inconsistent experiment configuration (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kConfigVersion = 1;

struct PromptSource {
  enum class Kind { kIds, kText, kIdsFile, kBytesFile, kRandom };
  Kind kind = Kind::kRandom;
  std::vector<TokenId> ids;
  std::string text;  // literal text or a file path
  std::size_t length = 128;
  std::uint64_t seed = 7;

  friend bool operator==(const PromptSource&, const PromptSource&) = default;
};

struct SweepGrid {
  std::vector<double> alpha{0.5, 1.0, 1.5};
  std::vector<double> beta{0.1, 0.3, 0.5, 0.8, 1.0, 1.2};
  std::vector<std::size_t> lay{2, 3, 4};

  friend bool operator==(const SweepGrid&, const SweepGrid&) = default;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  std::optional<ModelConfig> model;
  std::optional<std::string> weights_path;
  PromptSource prompt;
  bool transition_enabled = true;
  TransitionParams transition;
  std::size_t start_interval = 3;

  std::string kind;  // optional; when set it must match the subcommand
  std::size_t new_tokens = 16;
  SweepGrid grid;
  std::size_t max_cells = 512;
  std::vector<double> levels;
  std::vector<double> mass_targets;  // when non-empty, levels are calibrated to these
  std::vector<bool> rescale{false, true};
  bool skip_first_layer = true;
  std::size_t top_k = 5;
  std::size_t head_dim = 128;
  double theta_base = 10000.0;
  std::size_t max_dist = 2048;

  std::string output_dir = "out";
  fs::path base_dir;  // directory relative paths resolve against; not serialized

  friend bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
    return nlohmann::json(a) == nlohmann::json(b);
  }

  fs::path resolve(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
  }

  friend void to_json(nlohmann::json& j, const ExperimentConfig& c);
};

inline void to_json(nlohmann::json& j, const PromptSource& p) {
  using K = PromptSource::Kind;
  switch (p.kind) {
    case K::kIds: j = {{"ids", p.ids}}; break;
    case K::kText: j = {{"text", p.text}}; break;
    case K::kIdsFile: j = {{"ids_file", p.text}}; break;
    case K::kBytesFile: j = {{"bytes_file", p.text}}; break;
    case K::kRandom: j = {{"random", {{"length", p.length}, {"seed", p.seed}}}}; break;
  }
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json::object();
  j["version"] = c.version;
  if (c.model) j["model"] = {{"config", *c.model}};
  if (c.weights_path) j["model"] = {{"weights", *c.weights_path}};
  j["prompt"] = c.prompt;
  nlohmann::json t = c.transition;
  t["enabled"] = c.transition_enabled;
  t["start_interval"] = c.start_interval;
  j["transition"] = t;
  j["experiment"] = {{"kind", c.kind},
                     {"new_tokens", c.new_tokens},
                     {"grid", {{"alpha", c.grid.alpha}, {"beta", c.grid.beta}, {"lay", c.grid.lay}}},
                     {"max_cells", c.max_cells},
                     {"levels", c.levels},
                     {"mass_targets", c.mass_targets},
                     {"rescale", c.rescale},
                     {"skip_first_layer", c.skip_first_layer},
                     {"k", c.top_k},
                     {"head_dim", c.head_dim},
                     {"theta_base", c.theta_base},
                     {"max_dist", c.max_dist}};
  j["output_dir"] = c.output_dir;
}

/// Parses and validates a config document. Relative file references are
/// resolved against `base_dir` and must exist.
inline ExperimentConfig parse_config(const nlohmann::json& j, const fs::path& base_dir = {}) {
  ExperimentConfig c;
  c.base_dir = base_dir;
  try {
    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    if (!j.contains("version")) throw ConfigError("config: missing required field 'version'");
    c.version = j.at("version").get<int>();
    if (c.version != kConfigVersion) {
      throw ConfigError("config: unsupported version " + std::to_string(c.version));
    }

    if (j.contains("model")) {
      const auto& m = j.at("model");
      const bool has_cfg = m.contains("config"), has_w = m.contains("weights");
      if (has_cfg == has_w) throw ConfigError("config: model needs exactly one of 'config' or 'weights'");
      if (has_cfg) {
        c.model = m.at("config").get<ModelConfig>();
        c.model->validate();
      } else {
        c.weights_path = m.at("weights").get<std::string>();
        if (!fs::exists(c.resolve(*c.weights_path))) {
          throw ConfigError("config: weight file not found: " + c.resolve(*c.weights_path).string());
        }
      }
    } else {
      c.model = ModelConfig{};
    }

    if (j.contains("prompt")) {
      const auto& p = j.at("prompt");
      if (!p.is_object() || p.size() != 1) {
        throw ConfigError("config: prompt needs exactly one of ids, text, ids_file, bytes_file, random");
      }
      using K = PromptSource::Kind;
      if (p.contains("ids")) {
        c.prompt.kind = K::kIds;
        c.prompt.ids = p.at("ids").get<std::vector<TokenId>>();
      } else if (p.contains("text")) {
        c.prompt.kind = K::kText;
        c.prompt.text = p.at("text").get<std::string>();
      } else if (p.contains("ids_file") || p.contains("bytes_file")) {
        c.prompt.kind = p.contains("ids_file") ? K::kIdsFile : K::kBytesFile;
        c.prompt.text = p.begin().value().get<std::string>();
        if (!fs::exists(c.resolve(c.prompt.text))) {
          throw ConfigError("config: prompt file not found: " + c.resolve(c.prompt.text).string());
        }
      } else if (p.contains("random")) {
        c.prompt.kind = K::kRandom;
        c.prompt.length = p.at("random").value("length", std::size_t{128});
        c.prompt.seed = p.at("random").value("seed", std::uint64_t{7});
      } else {
        throw ConfigError("config: unknown prompt source '" + p.begin().key() + "'");
      }
    }

    if (j.contains("transition")) {
      const auto& t = j.at("transition");
      c.transition = t.get<TransitionParams>();
      c.transition_enabled = t.value("enabled", true);
      c.start_interval = t.value("start_interval", std::size_t{3});
      c.transition.validate();
    }

    if (j.contains("experiment")) {
      const auto& e = j.at("experiment");
      c.kind = e.value("kind", std::string{});
      c.new_tokens = e.value("new_tokens", c.new_tokens);
      if (e.contains("grid")) {
        const auto& g = e.at("grid");
        c.grid.alpha = g.value("alpha", c.grid.alpha);
        c.grid.beta = g.value("beta", c.grid.beta);
        c.grid.lay = g.value("lay", c.grid.lay);
      }
      c.max_cells = e.value("max_cells", c.max_cells);
      c.levels = e.value("levels", c.levels);
      c.mass_targets = e.value("mass_targets", c.mass_targets);
      c.rescale = e.value("rescale", c.rescale);
      c.skip_first_layer = e.value("skip_first_layer", c.skip_first_layer);
      c.top_k = e.value("k", c.top_k);
      c.head_dim = e.value("head_dim", c.head_dim);
      c.theta_base = e.value("theta_base", c.theta_base);
      c.max_dist = e.value("max_dist", c.max_dist);
    }
    c.output_dir = j.value("output_dir", c.output_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  return parse_config(j, path.parent_path());
}

inline std::string serialize_config(const ExperimentConfig& c) { return nlohmann::json(c).dump(2) + "\n"; }

// --- inputs --------------------------------------------------------------------

inline ModelWeights resolve_model(const ExperimentConfig& c) {
  if (c.weights_path) return load_weights(c.resolve(*c.weights_path).string());
  return init_random(c.model.value_or(ModelConfig{}));
}

inline std::vector<TokenId> resolve_prompt(const ExperimentConfig& c, std::size_t vocab_size) {
  using K = PromptSource::Kind;
  std::vector<TokenId> out;
  const auto slurp = [&](const std::string& p) {
    std::ifstream f(c.resolve(p), std::ios::binary);
    if (!f) throw ConfigError("config: cannot read prompt file " + c.resolve(p).string());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  };
  switch (c.prompt.kind) {
    case K::kIds: out = c.prompt.ids; break;
    case K::kText: out = tokens_from_bytes(c.prompt.text); break;
    case K::kIdsFile: out = parse_token_ids(slurp(c.prompt.text)); break;
    case K::kBytesFile: out = tokens_from_bytes(slurp(c.prompt.text)); break;
    case K::kRandom: {
      std::mt19937_64 eng(c.prompt.seed);
      for (std::size_t i = 0; i < c.prompt.length; ++i) out.push_back(static_cast<TokenId>(eng() % vocab_size));
      break;
    }
  }
  return out;
}

// --- output helpers -----------------------------------------------------------

/// Shortest decimal that round-trips to the same double.
inline std::string fmt_num(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
inline std::string fmt_num(std::size_t v) { return std::to_string(v); }
inline std::string fmt_bool(bool v) { return v ? "true" : "false"; }

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    row(header);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

inline fs::path prepare_out(const std::string& dir) {
  const fs::path p(dir);
  fs::create_directories(p);
  return p;
}

// --- gen-model -----------------------------------------------------------------

/// Writes `<out>/model.atnt`; returns the weight checksum.
inline std::uint64_t cmd_gen_model(const ExperimentConfig& c, const std::string& out_dir) {
  if (c.weights_path) throw ConfigError("gen-model: needs a model config, not a weight file");
  const ModelWeights w = init_random(c.model.value_or(ModelConfig{}));
  save_weights(w, (prepare_out(out_dir) / "model.atnt").string());
  return weights_checksum(w);
}

// --- run / sweep ---------------------------------------------------------------

struct RunSummary {
  TransitionParams params;
  std::size_t scheduled_intervals = 0;  // on the prompt pass
  double eliminated_mass = 0.0;         // summed over every step's reports
  double added_mass = 0.0;
  double mean_post_row_sum = 0.0;
  std::size_t eliminated_count = 0;
  std::size_t degenerate_rows = 0;
  double first_logit_l2 = 0.0;  // prompt-pass final-position logits, baseline vs transition
  double mean_logit_l2 = 0.0;
  std::size_t tokens_changed = 0;
};

struct StepReports {
  std::size_t step;
  std::vector<ScheduledReport> reports;
};

struct RunOutcome {
  std::vector<GreedyStep> baseline;
  std::vector<GreedyStep> transition;
  IntervalSchedule prompt_schedule;
  std::vector<StepReports> reports;
  RunSummary summary;
};

inline double l2_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

inline RunOutcome run_comparison(const ModelWeights& w, const std::vector<TokenId>& prompt,
                                 const std::vector<GreedyStep>& baseline, const TransitionParams& params,
                                 bool enabled, std::size_t start_interval, std::size_t new_tokens) {
  RunOutcome out;
  out.baseline = baseline;
  out.summary.params = params;
  if (!enabled) {
    out.transition = baseline;
  } else {
    std::size_t step = 0;
    out.transition = greedy_decode(prompt, new_tokens, [&](std::span<const TokenId> toks) {
      TransitionTrace tt = run_with_transition(w, toks, params, start_interval);
      if (step == 0) out.prompt_schedule = tt.schedule;
      out.reports.push_back({step++, std::move(tt.reports)});
      return std::move(tt.trace);
    });
  }

  RunSummary& s = out.summary;
  s.scheduled_intervals = out.prompt_schedule.entries.size();
  double post_acc = 0.0;
  std::size_t post_rows = 0;
  for (const auto& sr : out.reports)
    for (const auto& r : sr.reports) {
      s.eliminated_mass += r.report.total_eliminated();
      s.added_mass += r.report.total_added();
      s.eliminated_count += r.report.total_eliminated_count();
      for (const auto& row : r.report.rows) {
        post_acc += row.post_row_sum;
        ++post_rows;
        s.degenerate_rows += row.degenerate ? 1 : 0;
      }
    }
  s.mean_post_row_sum = post_rows ? post_acc / static_cast<double>(post_rows) : 0.0;
  double l2_acc = 0.0;
  for (std::size_t t = 0; t < out.baseline.size(); ++t) {
    const double d = l2_distance(out.baseline[t].logits, out.transition[t].logits);
    if (t == 0) s.first_logit_l2 = d;
    l2_acc += d;
    s.tokens_changed += out.baseline[t].token != out.transition[t].token ? 1 : 0;
  }
  s.mean_logit_l2 = out.baseline.empty() ? 0.0 : l2_acc / static_cast<double>(out.baseline.size());
  return out;
}

inline const std::vector<std::string>& summary_header() {
  static const std::vector<std::string> h{"alpha", "beta", "lay", "interval", "scheduled_intervals",
                                          "eliminated_mass", "added_mass", "mean_post_row_sum",
                                          "eliminated_count", "degenerate_rows", "first_logit_l2",
                                          "mean_logit_l2", "tokens_changed"};
  return h;
}

inline std::vector<std::string> summary_row(const RunSummary& s) {
  return {fmt_num(s.params.alpha),         fmt_num(s.params.beta),
          fmt_num(s.params.lay),           fmt_num(s.params.interval),
          fmt_num(s.scheduled_intervals),  fmt_num(s.eliminated_mass),
          fmt_num(s.added_mass),           fmt_num(s.mean_post_row_sum),
          fmt_num(s.eliminated_count),     fmt_num(s.degenerate_rows),
          fmt_num(s.first_logit_l2),       fmt_num(s.mean_logit_l2),
          fmt_num(s.tokens_changed)};
}

inline std::vector<GreedyStep> baseline_decode(const ModelWeights& w, const std::vector<TokenId>& prompt,
                                               std::size_t new_tokens) {
  return greedy_decode(prompt, new_tokens, [&](std::span<const TokenId> t) { return forward(w, t); });
}

/// Writes run.json, run_steps.csv, run_reports.json and run_summary.csv.
inline RunOutcome cmd_run(const ExperimentConfig& c, const std::string& out_dir) {
  const ModelWeights w = resolve_model(c);
  const auto prompt = resolve_prompt(c, w.config.vocab_size);
  if (prompt.size() + c.new_tokens > w.config.max_seq_len) {
    throw ConfigError("run: prompt length + new_tokens exceeds max_seq_len");
  }
  if (c.transition_enabled && c.transition.lay > 0) {
    // Surface schedule errors before any decoding.
    (void)plan_schedule(prompt.size(), w.config.n_layers, c.transition, c.start_interval);
  }
  const auto baseline = baseline_decode(w, prompt, c.new_tokens);
  RunOutcome r = run_comparison(w, prompt, baseline, c.transition, c.transition_enabled, c.start_interval,
                                c.new_tokens);

  const fs::path out = prepare_out(out_dir);
  nlohmann::json run;
  run["prompt"] = prompt;
  std::vector<TokenId> bt, tt;
  for (const auto& s : r.baseline) bt.push_back(s.token);
  for (const auto& s : r.transition) tt.push_back(s.token);
  run["baseline_tokens"] = bt;
  run["transition_tokens"] = tt;
  run["transition_enabled"] = c.transition_enabled;
  run["params"] = c.transition;
  run["start_interval"] = c.start_interval;
  nlohmann::json sched = nlohmann::json::array();
  for (const auto& e : r.prompt_schedule.entries) {
    sched.push_back({{"layer", e.layer}, {"interval", e.index}, {"start", e.start}, {"end", e.end}});
  }
  run["prompt_schedule"] = sched;
  write_text(out / "run.json", run.dump(2) + "\n");

  {
    CsvWriter csv(out / "run_steps.csv", {"step", "baseline_token", "transition_token", "logit_l2"});
    for (std::size_t t = 0; t < r.baseline.size(); ++t) {
      csv.row({fmt_num(t), fmt_num(std::size_t{r.baseline[t].token}), fmt_num(std::size_t{r.transition[t].token}),
               fmt_num(l2_distance(r.baseline[t].logits, r.transition[t].logits))});
    }
  }

  nlohmann::json reps = nlohmann::json::array();
  for (const auto& sr : r.reports)
    for (const auto& x : sr.reports) {
      std::size_t degenerate = 0;
      for (const auto& row : x.report.rows) degenerate += row.degenerate ? 1 : 0;
      reps.push_back({{"step", sr.step},
                      {"layer", x.where.layer},
                      {"interval", x.where.index},
                      {"start", x.where.start},
                      {"end", x.where.end},
                      {"bound", x.report.bound},
                      {"eliminated_mass", x.report.total_eliminated()},
                      {"added_mass", x.report.total_added()},
                      {"mean_mask_sum", x.report.mean_mask_sum()},
                      {"mean_post_row_sum", x.report.mean_post_row_sum()},
                      {"eliminated_count", x.report.total_eliminated_count()},
                      {"degenerate_rows", degenerate}});
    }
  write_text(out / "run_reports.json", reps.dump(2) + "\n");

  CsvWriter summary(out / "run_summary.csv", summary_header());
  summary.row(summary_row(r.summary));
  return r;
}

/// Cartesian (alpha, beta, lay) grid in ascending lexicographic order; one
/// summary row per cell in sweep.csv. Cells may run on `threads` workers.
inline std::vector<RunSummary> cmd_sweep(const ExperimentConfig& c, const std::string& out_dir, unsigned threads = 1) {
  auto alphas = c.grid.alpha;
  auto betas = c.grid.beta;
  auto lays = c.grid.lay;
  std::sort(alphas.begin(), alphas.end());
  std::sort(betas.begin(), betas.end());
  std::sort(lays.begin(), lays.end());
  const std::size_t cells = alphas.size() * betas.size() * lays.size();
  if (cells == 0) throw ConfigError("sweep: empty parameter grid");
  if (cells > c.max_cells) {
    throw ConfigError("sweep: grid has " + std::to_string(cells) + " cells, above max_cells " +
                      std::to_string(c.max_cells));
  }

  const ModelWeights w = resolve_model(c);
  const auto prompt = resolve_prompt(c, w.config.vocab_size);
  if (prompt.size() + c.new_tokens > w.config.max_seq_len) {
    throw ConfigError("sweep: prompt length + new_tokens exceeds max_seq_len");
  }
  std::vector<TransitionParams> grid;
  for (double a : alphas)
    for (double b : betas)
      for (std::size_t l : lays) {
        TransitionParams p = c.transition;
        p.alpha = a;
        p.beta = b;
        p.lay = l;
        p.validate();
        if (c.transition_enabled && l > 0) (void)plan_schedule(prompt.size(), w.config.n_layers, p, c.start_interval);
        grid.push_back(p);
      }

  const auto baseline = baseline_decode(w, prompt, c.new_tokens);
  std::vector<RunSummary> results(grid.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  const auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < grid.size();) {
      try {
        results[k] = run_comparison(w, prompt, baseline, grid[k], c.transition_enabled, c.start_interval,
                                    c.new_tokens)
                         .summary;
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(grid.size())));
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
  }
  if (failure) std::rethrow_exception(failure);

  CsvWriter csv(prepare_out(out_dir) / "sweep.csv", summary_header());
  for (const auto& r : results) csv.row(summary_row(r));
  return results;
}

// --- analysis commands ---------------------------------------------------------

inline DistributionStats cmd_analyze_dist(const ExperimentConfig& c, const std::string& out_dir) {
  const ModelWeights w = resolve_model(c);
  const LayerTrace trace = forward(w, resolve_prompt(c, w.config.vocab_size));
  const DistributionStats st = distribution_stats(trace);
  const fs::path out = prepare_out(out_dir);
  {
    CsvWriter csv(out / "distribution.csv", {"layer", "head", "frac_below_inv_len", "max_weight", "max_pos",
                                             "first_token_weight", "count_above_half"});
    for (std::size_t l = 0; l < st.layers.size(); ++l)
      for (std::size_t h = 0; h < st.layers[l].heads.size(); ++h) {
        const HeadStats& s = st.layers[l].heads[h];
        csv.row({fmt_num(l), fmt_num(h), fmt_num(s.frac_below_inv_len), fmt_num(s.max_weight), fmt_num(s.max_pos),
                 fmt_num(s.first_token_weight), fmt_num(s.count_above_half)});
      }
  }
  CsvWriter sim(out / "head_similarity.csv", {"layer", "head_a", "head_b", "cosine"});
  for (std::size_t l = 0; l < st.layers.size(); ++l) {
    const auto& m = st.layers[l].head_similarity;
    for (std::size_t a = 0; a < m.extent(0); ++a)
      for (std::size_t b = 0; b < m.extent(1); ++b) sim.row({fmt_num(l), fmt_num(a), fmt_num(b), fmt_num(m(a, b))});
  }
  return st;
}

/// disturb.csv: one row per (rescale flag, level, layer).
inline std::vector<DisturbanceReport> cmd_disturb(const ExperimentConfig& c, const std::string& out_dir) {
  const ModelWeights w = resolve_model(c);
  const auto prompt = resolve_prompt(c, w.config.vocab_size);
  std::vector<double> levels = c.levels;
  if (!c.mass_targets.empty()) {
    if (!c.levels.empty()) throw ConfigError("disturb: give either levels or mass_targets, not both");
    levels = calibrate_levels(forward(w, prompt), c.mass_targets, c.skip_first_layer);
  }
  std::vector<DisturbanceReport> reports;
  for (bool rescale : c.rescale) reports.push_back(disturbance_experiment(w, prompt, levels, rescale, c.skip_first_layer));

  const fs::path out = prepare_out(out_dir);
  CsvWriter csv(out / "disturb.csv",
                {"level", "realized_mass_fraction", "layer", "abs_diff", "sq_diff", "argmax_match", "rescaled"});
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& rep : reports)
    for (const auto& lv : rep.levels) {
      for (std::size_t l = 0; l < lv.abs_diff.size(); ++l) {
        csv.row({fmt_num(lv.level), fmt_num(lv.realized_mass_fraction), fmt_num(l), fmt_num(lv.abs_diff[l]),
                 fmt_num(lv.sq_diff[l]), fmt_bool(lv.argmax_match), fmt_bool(lv.rescaled)});
      }
      summary.push_back({{"level", lv.level},
                         {"realized_mass_fraction", lv.realized_mass_fraction},
                         {"rescaled", lv.rescaled},
                         {"argmax_match", lv.argmax_match},
                         {"final_abs_diff", lv.abs_diff.back()},
                         {"mean_row_sum", lv.mean_row_sum},
                         {"min_row_sum", lv.min_row_sum}});
    }
  write_text(out / "disturb_summary.json", summary.dump(2) + "\n");
  return reports;
}

inline std::vector<LayerOverlap> cmd_overlap(const ExperimentConfig& c, const std::string& out_dir) {
  const ModelWeights w = resolve_model(c);
  const LayerTrace trace = forward(w, resolve_prompt(c, w.config.vocab_size));
  auto pairs = layer_token_overlap(trace, w, c.top_k);
  if (trace.n_layers() > 1) pairs.push_back(layer_pair_overlap(trace, w, 0, trace.n_layers() - 1, c.top_k));

  const fs::path out = prepare_out(out_dir);
  CsvWriter csv(out / "overlap.csv", {"layer_a", "layer_b", "jaccard"});
  CsvWriter hist(out / "overlap_shift.csv", {"layer_a", "layer_b", "shift", "count"});
  for (const auto& p : pairs) {
    csv.row({fmt_num(p.layer_a), fmt_num(p.layer_b), fmt_num(p.jaccard)});
    for (const auto& [shift, count] : p.shift_histogram) {
      hist.row({fmt_num(p.layer_a), fmt_num(p.layer_b), std::to_string(shift), fmt_num(count)});
    }
  }
  return pairs;
}

inline std::vector<double> cmd_decay_bound(std::size_t head_dim, double theta_base, std::size_t max_dist,
                                           const std::string& out_dir) {
  RopeConfig rope{head_dim, theta_base, max_dist + 1};
  try {
    rope.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("decay-bound: ") + e.what());
  }
  std::vector<double> curve;
  CsvWriter csv(prepare_out(out_dir) / "decay_bound.csv", {"rel_dist", "bound"});
  for (std::size_t r = 0; r <= max_dist; ++r) {
    curve.push_back(decay_upper_bound(r, rope));
    csv.row({fmt_num(r), fmt_num(curve.back())});
  }
  return curve;
}

}  // namespace atnt
