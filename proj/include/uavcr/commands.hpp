#pragma once

// File-producing drivers behind the command-line subcommands.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "uavcr/checkpoint.hpp"
#include "uavcr/errors.hpp"
#include "uavcr/harness.hpp"
#include "uavcr/scenario.hpp"

namespace uavcr {

namespace detail {

inline std::filesystem::path prepare_out_dir(const RunConfig& cfg) {
  std::filesystem::path dir(cfg.run.out_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

}  // namespace detail

struct GenerateSummary {
  std::vector<std::string> files;
  int passed = 0;
  int failed = 0;
};

// Writes run.count scenario files and validates each against the
// no-action oracle.
inline GenerateSummary cmd_generate(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  if (cfg.run.agents < 2) throw UsageError("generate: agents must be >= 2 (training needs at least two UAVs)");
  const auto dir = detail::prepare_out_dir(cfg);
  GenerateSummary summary;
  for (int k = 0; k < cfg.run.count; ++k) {
    const std::uint64_t seed = stream_seed(cfg.run.seed, SeedStream::GenerateScenarios, k);
    const Scenario sc = generate(cfg.scenario_for(seed), cfg.separation);
    char name[64];
    std::snprintf(name, sizeof name, "scenario_%05d.json", k);
    const auto path = dir / name;
    detail::write_text(path, scenario_to_json(sc).dump(2) + "\n");
    summary.files.push_back(path.string());

    const ValidationReport rep = validate(sc, cfg.separation, cfg.run.episode_duration);
    const bool ok = rep.ok();
    (ok ? summary.passed : summary.failed)++;
    log << name << " seed=" << seed << (ok ? " ok" : " FAILED");
    for (const auto& p : rep.designed) {
      log << " [" << p.a << "-" << p.b << " first_loss=" << p.first_loss_time << "s min=" << p.min_distance
          << "m designed=" << p.designed_d_cpa << "m]";
    }
    if (!rep.early_breaches.empty()) log << " early_breaches=" << rep.early_breaches.size();
    log << '\n';
  }
  log << "generated " << cfg.run.count << " scenarios, " << summary.passed << " passed validation, " << summary.failed
      << " failed\n";
  return summary;
}

struct TrainSummary {
  std::vector<EpisodeMetrics> metrics;
  std::string checkpoint;
  std::string metrics_csv;
};

// Trains for run.episodes, appending one metrics row per episode and writing
// the checkpoint every run.eval_every episodes and at the end. A non-finite
// loss saves the last good parameters before the error propagates.
inline TrainSummary cmd_train(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  if (cfg.run.agents < 2) throw UsageError("train: agents must be >= 2");
  const auto dir = detail::prepare_out_dir(cfg);
  std::optional<DgnParams> initial;
  if (!cfg.run.checkpoint_in.empty()) {
    initial = load_params(cfg.run.checkpoint_in, cfg.dgn);
    log << "loaded " << cfg.run.checkpoint_in << '\n';
  }
  detail::write_text(dir / "config.json", config_to_json(cfg).dump(2) + "\n");

  Trainer trainer(cfg, std::move(initial));
  TrainSummary summary;
  summary.checkpoint = cfg.checkpoint_path();
  summary.metrics_csv = (dir / "metrics.csv").string();
  std::ofstream csv(summary.metrics_csv, std::ios::binary | std::ios::trunc);
  csv << metrics_csv_header();
  const int report_every = std::max(1, cfg.run.episodes / 20);
  for (int e = 0; e < cfg.run.episodes; ++e) {
    EpisodeMetrics m;
    try {
      m = trainer.run_episode(e);
    } catch (const TrainingError&) {
      save_params(summary.checkpoint, cfg.dgn, trainer.params());
      log << "training aborted in episode " << e << "; last good parameters written to " << summary.checkpoint
          << '\n';
      throw;
    }
    write_metrics_row(csv, m);
    csv.flush();
    summary.metrics.push_back(m);
    if (cfg.run.eval_every > 0 && (e + 1) % cfg.run.eval_every == 0) {
      save_params(summary.checkpoint, cfg.dgn, trainer.params());
    }
    if ((e + 1) % report_every == 0 || e + 1 == cfg.run.episodes) {
      const std::size_t from = summary.metrics.size() - std::min<std::size_t>(summary.metrics.size(), report_every);
      const std::vector<EpisodeMetrics> recent(summary.metrics.begin() + static_cast<long>(from), summary.metrics.end());
      const Report w = summarize("train", recent, cfg.run.agents, report_every);
      log << "episode " << (e + 1) << "/" << cfg.run.episodes << " eps=" << m.epsilon
          << " reward=" << w.mean_cumulative_reward << " loss_count=" << w.mean_loss_count
          << " solved=" << w.solved_fraction << " nmac=" << w.nmac_total << " td_loss=" << m.mean_td_loss << '\n';
    }
  }
  save_params(summary.checkpoint, cfg.dgn, trainer.params());
  log << "checkpoint written to " << summary.checkpoint << '\n';
  return summary;
}

struct EvalSummary {
  std::vector<EpisodeMetrics> metrics;
  Report report;
};

namespace detail {

inline EvalSummary finish_eval(const RunConfig& cfg, const std::string& mode, std::vector<EpisodeMetrics> metrics,
                               const std::filesystem::path& dir, std::ostream& log) {
  EvalSummary s;
  s.metrics = std::move(metrics);
  s.report = summarize(mode, s.metrics, cfg.run.agents, cfg.run.histogram_window);
  std::ofstream csv(dir / (mode + "_episodes.csv"), std::ios::binary | std::ios::trunc);
  csv << metrics_csv_header();
  for (const auto& m : s.metrics) write_metrics_row(csv, m);
  write_text(dir / (mode + "_report.json"), report_to_json(s.report, cfg).dump(2) + "\n");
  log << mode << ": episodes=" << s.report.episodes << " mean_reward=" << s.report.mean_cumulative_reward
      << " mean_loss_count=" << s.report.mean_loss_count << " mean_seconds_in_loss=" << s.report.mean_seconds_in_loss
      << " nmac_total=" << s.report.nmac_total << " solved=" << s.report.solved_count << "/" << s.report.episodes
      << '\n';
  return s;
}

}  // namespace detail

// Greedy (epsilon = 0) rollouts of a checkpoint on the evaluation seed stream.
inline EvalSummary cmd_evaluate(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  if (cfg.run.checkpoint_in.empty()) throw UsageError("evaluate: --checkpoint is required");
  const DgnParams params = load_params(cfg.run.checkpoint_in, cfg.dgn);
  const auto dir = detail::prepare_out_dir(cfg);
  auto metrics = run_rollouts(cfg, greedy_policy(cfg.dgn, params), "evaluate", dir.string());
  return detail::finish_eval(cfg, "evaluate", std::move(metrics), dir, log);
}

// Unmitigated rollouts: every agent holds heading for the whole episode.
inline EvalSummary cmd_baseline(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  const auto dir = detail::prepare_out_dir(cfg);
  auto metrics = run_rollouts(cfg, do_nothing_policy(), "baseline", dir.string());
  return detail::finish_eval(cfg, "baseline", std::move(metrics), dir, log);
}

}  // namespace uavcr
