#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "uavcr/checkpoint.hpp"
#include "uavcr/conflict.hpp"
#include "uavcr/dgn.hpp"
#include "uavcr/environment.hpp"
#include "uavcr/errors.hpp"
#include "uavcr/learner.hpp"
#include "uavcr/rng.hpp"
#include "uavcr/scenario.hpp"

#ifndef UAVCR_GIT_REV
#define UAVCR_GIT_REV "unknown"
#endif

namespace uavcr {

inline constexpr const char* kVersion = "0.1.0";

inline std::string version_string() { return std::string(kVersion) + "-g" + UAVCR_GIT_REV; }

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SeparationConfig, r_nmac, v_max, yaw_rate_max, t_maneuver,
                                                r_separation, t_lookahead)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(KinematicsConfig, v_max, yaw_rate_max, sub_step)

struct RunSettings {
  int episodes = 1500;
  int agents = 3;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::string checkpoint_in;
  std::string checkpoint_out;     // defaults to <out_dir>/checkpoint.dgn
  int eval_every = 0;             // periodic checkpoint interval in episodes, 0 = end only
  int eval_episodes = 200;        // episodes for evaluate / baseline
  int count = 10;                 // scenario files written by generate
  int histogram_window = 200;     // trailing episodes in the action histogram
  int trajectory_episodes = 0;    // evaluate/baseline: dump trajectories of the first k episodes
  double obs_box_deg = 0.05;      // half-width of the lat/lon normalisation box
  double decision_dt = 2.0;       // s
  double episode_duration = 60.0; // s
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunSettings, episodes, agents, seed, out_dir, checkpoint_in,
                                                checkpoint_out, eval_every, eval_episodes, count, histogram_window,
                                                trajectory_episodes, obs_box_deg, decision_dt, episode_duration)

struct RunConfig {
  ScenarioConfig scenario;   // target and seed are set per episode
  SeparationConfig separation;
  KinematicsConfig kinematics;
  RewardConfig reward;
  DgnConfig dgn;
  RunSettings run;

  EnvConfig env() const {
    EnvConfig e;
    e.separation = separation;
    e.kinematics = kinematics;
    e.reward = reward;
    e.box.ref = kDefaultReference;
    e.box.half_width_deg = run.obs_box_deg;
    e.box.v_max = kinematics.v_max;
    e.decision_dt = run.decision_dt;
    e.episode_duration = run.episode_duration;
    return e;
  }

  ScenarioConfig scenario_for(std::uint64_t seed) const {
    ScenarioConfig s = scenario;
    s.target = run.agents;
    s.seed = seed;
    return s;
  }

  std::string checkpoint_path() const {
    return run.checkpoint_out.empty() ? (std::filesystem::path(run.out_dir) / "checkpoint.dgn").string()
                                      : run.checkpoint_out;
  }

  void validate() const {
    separation.validate();
    kinematics.validate();
    reward.validate();
    dgn.validate();
    scenario_for(0).validate(separation.v_max);
    if (run.episodes < 1) throw UsageError("run.episodes must be >= 1");
    if (run.agents < 1) throw UsageError("run.agents must be >= 1");
    if (run.eval_episodes < 1 || run.count < 1 || run.eval_every < 0 || run.histogram_window < 1 ||
        run.trajectory_episodes < 0) {
      throw UsageError("run: eval_episodes/count/histogram_window must be >= 1, eval_every/trajectory_episodes >= 0");
    }
    if (!(run.obs_box_deg > 0.0 && run.obs_box_deg < 1.0)) throw UsageError("run.obs_box_deg must lie in (0, 1)");
    if (!(run.decision_dt > 0.0 && run.episode_duration >= run.decision_dt)) {
      throw UsageError("run.decision_dt must be positive and no longer than run.episode_duration");
    }
  }
};

inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["scenario"] = c.scenario;
  j["scenario"].erase("target");
  j["scenario"].erase("seed");
  j["separation"] = c.separation;
  j["kinematics"] = c.kinematics;
  j["reward"] = c.reward;
  j["dgn"] = c.dgn;
  j["run"] = c.run;
  return j;
}

namespace detail {

inline void merge_strict(nlohmann::json& base, const nlohmann::json& overlay, const std::string& path) {
  if (!overlay.is_object()) throw UsageError("config: expected an object at '" + (path.empty() ? "<root>" : path) + "'");
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw UsageError("config: unknown key '" + key + "'");
    auto& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), key);
    } else {
      const bool num_ok = slot.is_number() && it.value().is_number();
      if (!num_ok && slot.type() != it.value().type()) throw UsageError("config: wrong type for '" + key + "'");
      slot = it.value();
    }
  }
}

}  // namespace detail

// Applies "a.b.c" = value to a config document; the key must already exist.
// The value is parsed as JSON when possible, otherwise taken as a string.
inline void apply_override(nlohmann::json& doc, const std::string& dotted, const std::string& value) {
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
  } catch (const nlohmann::json::exception&) {
    parsed = value;
  }
  nlohmann::json overlay = parsed;
  std::string rest = dotted;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
    parts.push_back(rest.substr(0, pos));
  }
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) overlay = nlohmann::json{{*it, overlay}};
  detail::merge_strict(doc, overlay, "");
}

inline RunConfig config_from_json(const nlohmann::json& doc) {
  nlohmann::json full = config_to_json(RunConfig{});
  detail::merge_strict(full, doc, "");
  RunConfig c;
  try {
    c.scenario = full.at("scenario").get<ScenarioConfig>();
    c.separation = full.at("separation").get<SeparationConfig>();
    c.kinematics = full.at("kinematics").get<KinematicsConfig>();
    c.reward = full.at("reward").get<RewardConfig>();
    c.dgn = full.at("dgn").get<DgnConfig>();
    c.run = full.at("run").get<RunSettings>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  return c;
}

// Seed sub-streams derived from the master seed.
enum class SeedStream : std::uint64_t { TrainScenarios = 1, EvalScenarios = 2, GenerateScenarios = 3, Init = 4, Acting = 5 };

inline std::uint64_t stream_seed(std::uint64_t master, SeedStream s, std::uint64_t index) {
  return derive_seed(master, static_cast<std::uint64_t>(s), index);
}

struct EpisodeMetrics {
  int episode = 0;
  std::uint64_t scenario_seed = 0;
  double cumulative_reward = 0.0;
  int loss_count = 0;              // distinct pair entries into LOSS
  int steps_in_loss = 0;           // decision steps with any pair in LOSS
  double seconds_in_loss = 0.0;    // sub-step resolution
  int nmac_count = 0;
  bool solved = false;             // loss_count == 0
  double max_agent_reward = -std::numeric_limits<double>::infinity();
  double epsilon = 0.0;
  int train_steps = 0;
  double mean_td_loss = 0.0;       // 0 when no training step ran
  std::vector<std::array<int, kNumActions>> action_histogram;  // per agent: left, right, none
};

inline const char* metrics_csv_header() {
  return "episode,scenario_seed,cumulative_reward,loss_count,steps_in_loss,seconds_in_loss,nmac_count,solved,"
         "max_agent_reward,epsilon,train_steps,mean_td_loss,actions_left,actions_right,actions_none\n";
}

inline void write_metrics_row(std::ostream& out, const EpisodeMetrics& m) {
  std::array<int, kNumActions> total{};
  for (const auto& h : m.action_histogram)
    for (int a = 0; a < kNumActions; ++a) total[a] += h[a];
  std::ostringstream row;
  row << std::setprecision(17) << m.episode << ',' << m.scenario_seed << ',' << m.cumulative_reward << ','
      << m.loss_count << ',' << m.steps_in_loss << ',' << m.seconds_in_loss << ',' << m.nmac_count << ','
      << (m.solved ? 1 : 0) << ',' << m.max_agent_reward << ',' << m.epsilon << ',' << m.train_steps << ','
      << m.mean_td_loss << ',' << total[0] << ',' << total[1] << ',' << total[2] << '\n';
  out << row.str();
}

// Accumulates EpisodeMetrics from the step results of one episode.
class EpisodeRecorder {
 public:
  EpisodeRecorder(int episode, std::uint64_t seed, int agents, double sub_step) : sub_step_(sub_step) {
    m_.episode = episode;
    m_.scenario_seed = seed;
    m_.action_histogram.assign(agents, {0, 0, 0});
  }

  void on_reset(const StepResult& r) {
    m_.loss_count += r.events.new_loss_events;
    m_.nmac_count += r.events.new_nmac_events;
  }

  void on_step(const std::vector<Action>& actions, const StepResult& r) {
    for (std::size_t i = 0; i < actions.size(); ++i) ++m_.action_histogram[i][static_cast<int>(actions[i])];
    m_.cumulative_reward += r.total_reward;
    for (double x : r.rewards) m_.max_agent_reward = std::max(m_.max_agent_reward, x);
    m_.loss_count += r.events.new_loss_events;
    m_.nmac_count += r.events.new_nmac_events;
    if (r.events.loss_substeps > 0) ++m_.steps_in_loss;
    loss_substeps_ += r.events.loss_substeps;
  }

  void on_train(double loss) {
    ++m_.train_steps;
    loss_sum_ += loss;
  }

  EpisodeMetrics finish(double epsilon) {
    m_.epsilon = epsilon;
    m_.seconds_in_loss = loss_substeps_ * sub_step_;
    m_.solved = m_.loss_count == 0;
    m_.mean_td_loss = m_.train_steps > 0 ? loss_sum_ / m_.train_steps : 0.0;
    return m_;
  }

 private:
  EpisodeMetrics m_;
  double sub_step_;
  long loss_substeps_ = 0;
  double loss_sum_ = 0.0;
};

inline double epsilon_at(const DgnConfig& cfg, int episode, int total_episodes) {
  const double span = cfg.epsilon_decay_fraction * total_episodes;
  if (span <= 0.0) return cfg.epsilon_end;
  const double frac = std::min(1.0, episode / span);
  return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac;
}

// Single-environment, single-learner DGN training loop: one fresh scenario
// per episode, one gradient step and one soft target update per environment
// step once the buffer holds max(batch, warmup) transitions.
class Trainer {
 public:
  explicit Trainer(const RunConfig& cfg, std::optional<DgnParams> initial = std::nullopt)
      : cfg_(cfg),
        env_(cfg.env()),
        params_(initial ? std::move(*initial) : init_params(cfg.dgn, stream_seed(cfg.run.seed, SeedStream::Init, 0))),
        target_(params_),
        opt_(cfg.dgn, params_),
        buffer_(static_cast<std::size_t>(cfg.dgn.buffer_capacity)),
        rng_(stream_seed(cfg.run.seed, SeedStream::Acting, 0)) {
    cfg_.validate();
    if (cfg_.run.agents < 2) throw UsageError("training needs at least 2 agents");
    if (!params_.same_shape(make_params(cfg_.dgn))) throw LoadError("initial parameters do not match dgn config");
  }

  EpisodeMetrics run_episode(int episode) {
    const double eps = epsilon_at(cfg_.dgn, episode, cfg_.run.episodes);
    const std::uint64_t seed = stream_seed(cfg_.run.seed, SeedStream::TrainScenarios, episode);
    const Scenario sc = generate(cfg_.scenario_for(seed), cfg_.separation);
    EpisodeRecorder rec(episode, seed, cfg_.run.agents, cfg_.kinematics.sub_step);
    StepResult cur = env_.reset(sc);
    rec.on_reset(cur);
    const auto need = static_cast<std::size_t>(std::max(cfg_.dgn.batch_size, cfg_.dgn.warmup_transitions));
    while (!cur.done) {
      const Matrix q = q_values(cur.observations, cur.adjacency, cfg_.dgn, params_);
      const std::vector<Action> actions = select_actions(q, eps, rng_);
      StepResult next = env_.step(actions);
      rec.on_step(actions, next);

      Transition t;
      t.obs = cur.observations;
      t.next_obs = next.observations;
      t.rewards = next.rewards;
      t.adjacency = cur.adjacency;
      t.terminal = next.done;
      t.actions.reserve(actions.size());
      for (Action a : actions) t.actions.push_back(static_cast<int>(a));
      buffer_.store(std::move(t));

      if (buffer_.size() >= need) {
        rec.on_train(train_step(buffer_, params_, target_, cfg_.dgn, opt_, rng_));
        soft_update(params_, target_, cfg_.dgn.beta);
      }
      cur = std::move(next);
    }
    return rec.finish(eps);
  }

  const DgnParams& params() const { return params_; }
  const DgnParams& target() const { return target_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  const RunConfig& config() const { return cfg_; }

 private:
  RunConfig cfg_;
  Environment env_;
  DgnParams params_;
  DgnParams target_;
  Optimizer opt_;
  ReplayBuffer buffer_;
  Rng rng_;
};

using Policy = std::function<std::vector<Action>(const StepResult&)>;

inline Policy greedy_policy(const DgnConfig& cfg, const DgnParams& params) {
  return [&cfg, &params](const StepResult& r) {
    Rng unused(0);
    return select_actions(q_values(r.observations, r.adjacency, cfg, params), 0.0, unused);
  };
}

inline Policy do_nothing_policy() {
  return [](const StepResult& r) { return std::vector<Action>(r.observations.size(), Action::DoNothing); };
}

// Rolls out one episode on the k-th evaluation scenario of the master seed.
// Evaluation and baseline share this seed stream, so their episodes are
// paired on identical initial conditions.
inline EpisodeMetrics rollout(const RunConfig& cfg, int k, const Policy& policy, std::ostream* trajectory = nullptr) {
  const std::uint64_t seed = stream_seed(cfg.run.seed, SeedStream::EvalScenarios, k);
  const Scenario sc = generate(cfg.scenario_for(seed), cfg.separation);
  Environment env(cfg.env());
  EpisodeRecorder rec(k, seed, cfg.run.agents, cfg.kinematics.sub_step);
  std::optional<TrajectoryWriter> writer;
  if (trajectory) writer.emplace(*trajectory, cfg.env().box.ref);
  StepResult cur = env.reset(sc);
  rec.on_reset(cur);
  while (!cur.done) {
    const std::vector<Action> actions = policy(cur);
    StepResult next = env.step(actions);
    rec.on_step(actions, next);
    if (writer) writer->write(next, env.states(), actions);
    cur = std::move(next);
  }
  return rec.finish(0.0);
}

struct Report {
  std::string mode;
  int episodes = 0;
  int agents = 0;
  double mean_cumulative_reward = 0.0;
  double mean_loss_count = 0.0;
  double mean_steps_in_loss = 0.0;
  double mean_seconds_in_loss = 0.0;
  int nmac_total = 0;
  int solved_count = 0;
  double solved_fraction = 0.0;
  int histogram_episodes = 0;
  std::vector<std::array<int, kNumActions>> action_histogram;  // per agent over the trailing window
};

inline Report summarize(const std::string& mode, const std::vector<EpisodeMetrics>& eps, int agents, int window) {
  Report r;
  r.mode = mode;
  r.episodes = static_cast<int>(eps.size());
  r.agents = agents;
  r.action_histogram.assign(agents, {0, 0, 0});
  if (eps.empty()) return r;
  for (const auto& m : eps) {
    r.mean_cumulative_reward += m.cumulative_reward;
    r.mean_loss_count += m.loss_count;
    r.mean_steps_in_loss += m.steps_in_loss;
    r.mean_seconds_in_loss += m.seconds_in_loss;
    r.nmac_total += m.nmac_count;
    r.solved_count += m.solved ? 1 : 0;
  }
  const double n = static_cast<double>(eps.size());
  r.mean_cumulative_reward /= n;
  r.mean_loss_count /= n;
  r.mean_steps_in_loss /= n;
  r.mean_seconds_in_loss /= n;
  r.solved_fraction = r.solved_count / n;
  const std::size_t first = eps.size() > static_cast<std::size_t>(window) ? eps.size() - window : 0;
  r.histogram_episodes = static_cast<int>(eps.size() - first);
  for (std::size_t e = first; e < eps.size(); ++e)
    for (std::size_t i = 0; i < eps[e].action_histogram.size() && i < r.action_histogram.size(); ++i)
      for (int a = 0; a < kNumActions; ++a) r.action_histogram[i][a] += eps[e].action_histogram[i][a];
  return r;
}

inline nlohmann::json report_to_json(const Report& r, const RunConfig& cfg) {
  nlohmann::json j;
  j["version"] = version_string();
  j["mode"] = r.mode;
  j["episodes"] = r.episodes;
  j["agents"] = r.agents;
  j["mean_cumulative_reward"] = r.mean_cumulative_reward;
  j["mean_loss_count"] = r.mean_loss_count;
  j["mean_steps_in_loss"] = r.mean_steps_in_loss;
  j["mean_seconds_in_loss"] = r.mean_seconds_in_loss;
  j["nmac_total"] = r.nmac_total;
  j["solved_count"] = r.solved_count;
  j["solved_fraction"] = r.solved_fraction;
  nlohmann::json hist;
  hist["episodes_counted"] = r.histogram_episodes;
  auto& per_agent = hist["per_agent"] = nlohmann::json::array();
  std::array<int, kNumActions> total{};
  for (const auto& h : r.action_histogram) {
    per_agent.push_back({{"left", h[0]}, {"right", h[1]}, {"none", h[2]}});
    for (int a = 0; a < kNumActions; ++a) total[a] += h[a];
  }
  hist["total"] = {{"left", total[0]}, {"right", total[1]}, {"none", total[2]}};
  j["action_histogram"] = hist;
  j["config"] = config_to_json(cfg);
  return j;
}

// Runs eval_episodes rollouts of `policy` and returns the per-episode metrics.
// Trajectories of the first run.trajectory_episodes episodes go to
// <out_dir>/<mode>_trajectory_<k>.csv when out_dir is non-empty.
inline std::vector<EpisodeMetrics> run_rollouts(const RunConfig& cfg, const Policy& policy, const std::string& mode,
                                                const std::string& out_dir = "") {
  std::vector<EpisodeMetrics> out;
  out.reserve(cfg.run.eval_episodes);
  for (int k = 0; k < cfg.run.eval_episodes; ++k) {
    if (!out_dir.empty() && k < cfg.run.trajectory_episodes) {
      std::ofstream traj(std::filesystem::path(out_dir) / (mode + "_trajectory_" + std::to_string(k) + ".csv"));
      out.push_back(rollout(cfg, k, policy, &traj));
    } else {
      out.push_back(rollout(cfg, k, policy));
    }
  }
  return out;
}

}  // namespace uavcr
