// Command-line front end for the experiment runner.
// Exit codes: 0 success, 2 config error, 3 runtime or contract error.
#pragma once

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "atnt/experiment.hpp"

namespace atnt {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Attention transition experiment runner"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  std::size_t head_dim = 128;
  double theta_base = 10000.0;
  std::size_t max_dist = 2048;

  const auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", config_path, "experiment config (JSON)");
    if (needs_config) opt->required();
    sub->add_option("--out", out_dir, "output directory (overrides output_dir)");
    sub->add_option("--seed", seed, "model rng seed (overrides the config)");
    sub->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  };

  std::vector<CLI::App*> subs;
  for (const char* name : {"gen-model", "run", "sweep", "analyze-dist", "disturb", "overlap"}) {
    subs.push_back(app.add_subcommand(name));
    add_common(subs.back(), true);
  }
  subs[0]->description("write a deterministic ATNT weight file");
  subs[1]->description("greedy decoding with and without attention transition");
  subs[2]->description("alpha x beta x lay grid of run summaries");
  subs[3]->description("last-row attention distribution statistics");
  subs[4]->description("threshold-elimination disturbance sweep");
  subs[5]->description("logit-lens token overlap between layers");
  auto* decay = app.add_subcommand("decay-bound", "rotary long-term decay upper bound curve");
  add_common(decay, false);
  decay->add_option("--head-dim", head_dim, "rotary head dimension (even)");
  decay->add_option("--base", theta_base, "rotary frequency base");
  decay->add_option("--max-dist", max_dist, "largest relative distance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitConfig;
  }

  try {
    const CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();

    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    if (!cfg.kind.empty() && cfg.kind != name) {
      throw ConfigError("config kind '" + cfg.kind + "' does not match subcommand '" + name + "'");
    }
    if (seed) {
      if (!cfg.model) throw ConfigError("--seed needs a model config, not a weight file");
      cfg.model->rng_seed = *seed;
    }
    const std::string dir = out_dir.empty() ? cfg.output_dir : out_dir;

    if (name == "gen-model") {
      const std::uint64_t sum = cmd_gen_model(cfg, dir);
      char buf[17];
      std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(sum));
      out << "checksum " << buf << "\n";
    } else if (name == "run") {
      const RunOutcome r = cmd_run(cfg, dir);
      out << "tokens_changed " << r.summary.tokens_changed << " first_logit_l2 " << fmt_num(r.summary.first_logit_l2)
          << "\n";
    } else if (name == "sweep") {
      out << "cells " << cmd_sweep(cfg, dir, threads).size() << "\n";
    } else if (name == "analyze-dist") {
      out << "layers " << cmd_analyze_dist(cfg, dir).layers.size() << "\n";
    } else if (name == "disturb") {
      out << "reports " << cmd_disturb(cfg, dir).size() << "\n";
    } else if (name == "overlap") {
      out << "pairs " << cmd_overlap(cfg, dir).size() << "\n";
    } else if (name == "decay-bound") {
      if (!config_path.empty()) {
        if (sub->count("--head-dim") == 0) head_dim = cfg.head_dim;
        if (sub->count("--base") == 0) theta_base = cfg.theta_base;
        if (sub->count("--max-dist") == 0) max_dist = cfg.max_dist;
      }
      out << "points " << cmd_decay_bound(head_dim, theta_base, max_dist, dir).size() << "\n";
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ScheduleError& e) {
    err << "schedule error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace atnt
