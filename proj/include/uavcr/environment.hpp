#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <utility>
#include <vector>

#include "uavcr/conflict.hpp"
#include "uavcr/errors.hpp"
#include "uavcr/geo.hpp"
#include "uavcr/scenario.hpp"

namespace uavcr {

enum class Action : int { TurnLeft = 0, TurnRight = 1, DoNothing = 2 };
inline constexpr int kNumActions = 3;
inline constexpr double kTurnStep = 15.0;  // deg per decision

inline const char* to_string(Action a) {
  switch (a) {
    case Action::TurnLeft: return "left";
    case Action::TurnRight: return "right";
    case Action::DoNothing: return "none";
  }
  return "?";
}

// [lat_n, lon_n, hdg_n, spd_n], each in [0, 1].
using Observation = std::array<double, 4>;

struct ObservationBox {
  GeoPoint ref = kDefaultReference;
  double half_width_deg = 0.05;
  double v_max = 15.0;
};

inline Observation observe(const UavState& s, const ObservationBox& box) {
  const GeoPoint g = unproject(s.x, s.y, box.ref);
  const double span = 2.0 * box.half_width_deg;
  auto unit = [](double v) { return std::clamp(v, 0.0, 1.0); };
  return {unit((g.lat - (box.ref.lat - box.half_width_deg)) / span),
          unit((g.lon - (box.ref.lon - box.half_width_deg)) / span),
          unit(s.hdg / 360.0),
          unit(s.spd / box.v_max)};
}

// Binary N x N matrix. Row i marks agent i itself plus every agent with a
// detected conflict with i.
class Adjacency {
 public:
  Adjacency() = default;
  explicit Adjacency(int n) : n_(n), bits_(static_cast<std::size_t>(n) * n, 0) {}

  static Adjacency identity(int n) {
    Adjacency c(n);
    for (int i = 0; i < n; ++i) c.set(i, i, true);
    return c;
  }

  int size() const { return n_; }
  bool operator()(int i, int j) const { return bits_[static_cast<std::size_t>(i) * n_ + j] != 0; }
  void set(int i, int j, bool v) { bits_[static_cast<std::size_t>(i) * n_ + j] = v ? 1 : 0; }

  // Off-diagonal neighbours of i.
  int degree(int i) const {
    int d = 0;
    for (int j = 0; j < n_; ++j) d += (j != i && (*this)(i, j)) ? 1 : 0;
    return d;
  }

  bool is_symmetric() const {
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < n_; ++j)
        if ((*this)(i, j) != (*this)(j, i)) return false;
    return true;
  }

  bool has_unit_diagonal() const {
    for (int i = 0; i < n_; ++i)
      if (!(*this)(i, i)) return false;
    return true;
  }

  friend bool operator==(const Adjacency&, const Adjacency&) = default;

 private:
  int n_ = 0;
  std::vector<std::uint8_t> bits_;
};

inline Adjacency build_adjacency(const std::vector<UavState>& states, const SeparationConfig& sep) {
  const int n = static_cast<int>(states.size());
  Adjacency c = Adjacency::identity(n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (assess_pair(states[i], states[j], sep).predicted_conflict) {
        c.set(i, j, true);
        c.set(j, i, true);
      }
    }
  }
  return c;
}

struct RewardConfig {
  double w1 = 1.0;
  double w2 = 1.0;
  double w3 = 1.0;
  double max_deviation = 90.0;        // deg
  double deviation_penalty = -10.0;
  double d_thresh = 240.0;            // m

  void validate() const {
    if (!(w1 >= 0.0 && w2 >= 0.0 && w3 >= 0.0)) throw DomainError("RewardConfig: weights must be >= 0");
    if (!(max_deviation > 0.0 && d_thresh > 0.0 && deviation_penalty <= 0.0)) {
      throw DomainError("RewardConfig: invalid deviation bound, penalty or d_thresh");
    }
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RewardConfig, w1, w2, w3, max_deviation, deviation_penalty, d_thresh)

struct RewardTerms {
  double conflicts = 0.0;
  double deviation = 0.0;
  double severity = 0.0;
  double total() const { return conflicts + deviation + severity; }
};

// Severity penalty at the most severe CPA distance among an agent's conflicts:
// zero at d_thresh, approaching -w3 as the distance goes to zero.
inline double severity_penalty(double d_star, const RewardConfig& cfg) {
  const double d = std::max(d_star, 1.0);
  const double factor = 1.0 - std::exp(1.0 - 1.0 / std::sqrt(d / cfg.d_thresh));
  return std::clamp(-cfg.w3 * factor, -cfg.w3, 0.0);
}

inline RewardTerms reward_terms(int i, const std::vector<UavState>& states, const Adjacency& c,
                                const SeparationConfig& sep, const RewardConfig& cfg) {
  RewardTerms r;
  const int degree = c.degree(i);
  r.conflicts = -cfg.w1 * degree;

  const double dev = angular_distance(states[i].hdg, states[i].hdg0());
  r.deviation = dev < cfg.max_deviation ? -cfg.w2 * dev / cfg.max_deviation : cfg.w2 * cfg.deviation_penalty;

  if (degree > 0) {
    double d_star = std::numeric_limits<double>::infinity();
    for (int j = 0; j < c.size(); ++j) {
      if (j == i || !c(i, j)) continue;
      d_star = std::min(d_star, assess_pair(states[i], states[j], sep).d_cpa);
    }
    r.severity = severity_penalty(d_star, cfg);
  }
  return r;
}

inline double reward(int i, const std::vector<UavState>& states, const Adjacency& c, const SeparationConfig& sep,
                     const RewardConfig& cfg) {
  return reward_terms(i, states, c, sep, cfg).total();
}

struct EnvConfig {
  SeparationConfig separation;
  KinematicsConfig kinematics;
  RewardConfig reward;
  ObservationBox box;
  double decision_dt = 2.0;       // s
  double episode_duration = 60.0; // s
};

struct StepEvents {
  std::vector<std::pair<int, int>> loss_pairs;   // pairs in LOSS at any sub-step of the move
  std::vector<std::pair<int, int>> nmac_pairs;
  int active_conflicts = 0;                      // edges of the post-move graph
  int new_loss_events = 0;                       // pairs entering LOSS during the move
  int new_nmac_events = 0;
  int loss_substeps = 0;                         // sub-steps with any pair in LOSS
};

struct StepResult {
  std::vector<Observation> observations;
  std::vector<double> rewards;
  double total_reward = 0.0;
  Adjacency adjacency;
  bool done = false;
  double time = 0.0;
  StepEvents events;
};

// Cooperative heading-control game over one scenario. Single-threaded state
// machine: reset(), then step() until done.
class Environment {
 public:
  explicit Environment(EnvConfig cfg = {}) : cfg_(std::move(cfg)) {
    cfg_.separation.validate();
    cfg_.kinematics.validate();
    cfg_.reward.validate();
    if (!(cfg_.decision_dt > 0.0 && cfg_.episode_duration > 0.0)) {
      throw DomainError("EnvConfig: decision_dt and episode_duration must be positive");
    }
  }

  const EnvConfig& config() const { return cfg_; }
  const std::vector<UavState>& states() const { return states_; }
  int num_agents() const { return static_cast<int>(states_.size()); }
  double time() const { return time_; }
  bool done() const { return done_; }
  int steps_per_episode() const {
    return static_cast<int>(std::ceil(cfg_.episode_duration / cfg_.decision_dt - 1e-9));
  }

  StepResult reset(const Scenario& scenario) {
    if (scenario.states.empty()) throw DomainError("reset: scenario has no UAVs");
    states_ = scenario.states;
    time_ = 0.0;
    step_count_ = 0;
    done_ = false;
    const int n = num_agents();
    in_loss_.assign(static_cast<std::size_t>(n) * n, 0);
    in_nmac_.assign(static_cast<std::size_t>(n) * n, 0);
    StepResult r;
    r.adjacency = build_adjacency(states_, cfg_.separation);
    r.rewards.assign(n, 0.0);
    r.observations = observations();
    r.events.active_conflicts = count_edges(r.adjacency);
    // Pairs already inside a threshold at t=0 count as entering it now.
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        const double d = distance(states_[i], states_[j]);
        if (d < cfg_.separation.r_separation) {
          in_loss_[i * n + j] = 1;
          r.events.loss_pairs.emplace_back(i, j);
          ++r.events.new_loss_events;
        }
        if (d < cfg_.separation.r_nmac) {
          in_nmac_[i * n + j] = 1;
          r.events.nmac_pairs.emplace_back(i, j);
          ++r.events.new_nmac_events;
        }
      }
    }
    return r;
  }

  StepResult step(const std::vector<Action>& actions) {
    if (states_.empty()) throw StateError("step: environment has not been reset");
    if (done_) throw StateError("step: episode is finished");
    const int n = num_agents();
    if (static_cast<int>(actions.size()) != n) throw DomainError("step: one action per agent is required");

    std::vector<double> commanded(n);
    for (int i = 0; i < n; ++i) {
      double delta = 0.0;
      switch (actions[i]) {
        case Action::TurnLeft: delta = -kTurnStep; break;
        case Action::TurnRight: delta = kTurnStep; break;
        case Action::DoNothing: delta = 0.0; break;
        default: throw DomainError("step: invalid action code");
      }
      commanded[i] = normalize_heading(states_[i].hdg + delta);
    }

    StepResult r;
    std::vector<char> loss_seen(static_cast<std::size_t>(n) * n, 0), nmac_seen(loss_seen);
    const double h = cfg_.kinematics.sub_step;
    const int substeps = std::max(1, static_cast<int>(std::ceil(cfg_.decision_dt / h - 1e-9)));
    const double dt = cfg_.decision_dt / substeps;
    for (int k = 0; k < substeps; ++k) {
      for (int i = 0; i < n; ++i) states_[i] = advance(states_[i], commanded[i], dt, cfg_.kinematics);
      bool any_loss = false;
      for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * n + j;
          const double d = distance(states_[i], states_[j]);
          const bool loss = d < cfg_.separation.r_separation;
          const bool nmac = d < cfg_.separation.r_nmac;
          if (loss) {
            any_loss = true;
            loss_seen[idx] = 1;
            if (!in_loss_[idx]) ++r.events.new_loss_events;
          }
          if (nmac) {
            nmac_seen[idx] = 1;
            if (!in_nmac_[idx]) ++r.events.new_nmac_events;
          }
          in_loss_[idx] = loss;
          in_nmac_[idx] = nmac;
        }
      }
      if (any_loss) ++r.events.loss_substeps;
    }
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        if (loss_seen[i * n + j]) r.events.loss_pairs.emplace_back(i, j);
        if (nmac_seen[i * n + j]) r.events.nmac_pairs.emplace_back(i, j);
      }
    }

    ++step_count_;
    time_ = step_count_ * cfg_.decision_dt;
    done_ = step_count_ >= steps_per_episode();

    r.adjacency = build_adjacency(states_, cfg_.separation);
    r.events.active_conflicts = count_edges(r.adjacency);
    r.rewards.resize(n);
    for (int i = 0; i < n; ++i) {
      r.rewards[i] = reward(i, states_, r.adjacency, cfg_.separation, cfg_.reward);
      r.total_reward += r.rewards[i];
    }
    r.observations = observations();
    r.done = done_;
    r.time = time_;
    return r;
  }

 private:
  std::vector<Observation> observations() const {
    std::vector<Observation> out;
    out.reserve(states_.size());
    for (const auto& s : states_) out.push_back(observe(s, cfg_.box));
    return out;
  }

  static int count_edges(const Adjacency& c) {
    int e = 0;
    for (int i = 0; i < c.size(); ++i)
      for (int j = i + 1; j < c.size(); ++j) e += c(i, j) ? 1 : 0;
    return e;
  }

  EnvConfig cfg_;
  std::vector<UavState> states_;
  std::vector<char> in_loss_, in_nmac_;
  double time_ = 0.0;
  int step_count_ = 0;
  bool done_ = false;
};

// One row per agent per decision step:
// t, agent_id, lat, lon, hdg, spd, action, reward, in_loss, in_nmac.
// in_loss / in_nmac flag an agent involved in such a pair at any sub-step of
// the move that ended at t.
class TrajectoryWriter {
 public:
  TrajectoryWriter(std::ostream& out, GeoPoint ref) : out_(out), ref_(ref) {
    out_ << "t,agent_id,lat,lon,hdg,spd,action,reward,in_loss,in_nmac\n";
    out_.precision(17);
  }

  void write(const StepResult& r, const std::vector<UavState>& states, const std::vector<Action>& actions) {
    const int n = static_cast<int>(states.size());
    std::vector<char> loss(n, 0), nmac(n, 0);
    for (auto [a, b] : r.events.loss_pairs) loss[a] = loss[b] = 1;
    for (auto [a, b] : r.events.nmac_pairs) nmac[a] = nmac[b] = 1;
    for (int i = 0; i < n; ++i) {
      const GeoPoint g = unproject(states[i].x, states[i].y, ref_);
      out_ << r.time << ',' << i << ',' << g.lat << ',' << g.lon << ',' << states[i].hdg << ',' << states[i].spd
           << ',' << static_cast<int>(actions[i]) << ',' << r.rewards[i] << ',' << int(loss[i]) << ','
           << int(nmac[i]) << '\n';
    }
  }

 private:
  std::ostream& out_;
  GeoPoint ref_;
};

}  // namespace uavcr
