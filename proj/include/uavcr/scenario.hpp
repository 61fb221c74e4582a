#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "uavcr/conflict.hpp"
#include "uavcr/errors.hpp"
#include "uavcr/geo.hpp"
#include "uavcr/rng.hpp"

namespace uavcr {

struct ScenarioConfig {
  int target = 3;                 // number of UAVs
  double spd_min = 8.0;           // m/s
  double spd_max = 15.0;          // m/s
  double t_loss = 15.0;           // s, designed time of first loss of separation
  double t_la = 8.0;              // s, look-ahead used by the acceptance check
  double hdg_variance = 10.0;     // deg, half-width of the uniform jitter
  double severity_min = 0.1;
  double severity_max = 1.0;
  std::vector<double> conflict_angles{0, 45, 90, 135, 180, -45, -135, -90};
  double min_relative_speed = 0.5;  // m/s
  double horizon = 60.0;          // s, designed CPA must occur before this
  int max_rejections = 1000;      // consecutive
  std::uint64_t seed = 0;

  void validate(double v_max) const {
    if (target < 1) throw DomainError("ScenarioConfig: target must be >= 1");
    if (!(spd_min > 0.0 && spd_min <= spd_max && spd_max <= v_max)) {
      throw DomainError("ScenarioConfig: require 0 < spd_min <= spd_max <= v_max");
    }
    if (!(t_la > 0.0 && t_loss > t_la)) throw DomainError("ScenarioConfig: require t_loss > t_la > 0");
    if (!(severity_min > 0.0 && severity_min <= severity_max && severity_max <= 1.0)) {
      throw DomainError("ScenarioConfig: severity range must lie within (0, 1]");
    }
    if (conflict_angles.empty()) throw DomainError("ScenarioConfig: conflict_angles is empty");
    if (!(hdg_variance >= 0.0 && min_relative_speed > 0.0 && horizon > t_loss && max_rejections > 0)) {
      throw DomainError("ScenarioConfig: invalid variance/relative-speed/horizon/rejection limit");
    }
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScenarioConfig, target, spd_min, spd_max, t_loss, t_la,
                                                hdg_variance, severity_min, severity_max, conflict_angles,
                                                min_relative_speed, horizon, max_rejections, seed)

struct DesignedPair {
  int a = 0;  // existing UAV
  int b = 0;  // UAV created to conflict with `a`
  double dpsi = 0.0;      // deg, b.hdg - a.hdg
  double d_cpa = 0.0;     // m
  double t_loss = 0.0;    // s
  friend bool operator==(const DesignedPair&, const DesignedPair&) = default;
};

struct Scenario {
  std::vector<UavState> states;
  std::vector<DesignedPair> designed_pairs;
  std::uint64_t seed = 0;
  ScenarioConfig config;
  friend bool operator==(const Scenario& l, const Scenario& r) {
    return l.states == r.states && l.designed_pairs == r.designed_pairs && l.seed == r.seed;
  }
};

struct IntruderDesign {
  UavState state;
  double t_cpa = 0.0;
  double rel_speed = 0.0;
};

// Places an intruder so that, with both vehicles flying straight, its distance
// to `target` first drops below r_separation at exactly `t_loss` and reaches
// its minimum `d_cpa` at t_loss + sqrt(R^2 - d_cpa^2) / |v_rel|. `side` picks
// which side of the relative track the CPA lies on.
inline IntruderDesign design_intruder(const UavState& target, double dpsi, double d_cpa, double t_loss,
                                      double spd, const SeparationConfig& cfg, int side,
                                      double min_relative_speed = 0.5) {
  const double r = cfg.r_separation;
  if (!(d_cpa >= 0.0 && d_cpa < r)) throw DomainError("create_conflicting_uav: need 0 <= d_cpa < r_separation");
  if (side != 1 && side != -1) throw DomainError("create_conflicting_uav: side must be +1 or -1");

  const double hdg = normalize_heading(target.hdg + dpsi);
  const double rad = hdg * kDegToRad;
  const Vec2 v_i{spd * std::sin(rad), spd * std::cos(rad)};
  const Vec2 v_rel = v_i - target.velocity();
  const double speed = v_rel.norm();
  if (speed < min_relative_speed) {
    throw RejectedGeometry("create_conflicting_uav: relative speed below minimum");
  }
  const Vec2 u = v_rel / speed;
  const Vec2 n = Vec2{-u.y(), u.x()} * static_cast<double>(side);
  const double along = std::sqrt(r * r - d_cpa * d_cpa);
  const double t_cpa = t_loss + along / speed;
  const Vec2 r0 = -u * (speed * t_cpa) + n * d_cpa;
  return {UavState(target.x + r0.x(), target.y + r0.y(), hdg, spd), t_cpa, speed};
}

inline UavState create_conflicting_uav(const UavState& target, double dpsi, double d_cpa, double t_loss,
                                       double spd, const SeparationConfig& cfg, int side) {
  return design_intruder(target, dpsi, d_cpa, t_loss, spd, cfg, side).state;
}

// Builds a compound conflict: a reference UAV at the origin, then repeatedly
// an intruder in a designed conflict with a randomly chosen existing UAV,
// accepted only if it is predicted conflict-free against every existing UAV
// within the look-ahead window.
inline Scenario generate(const ScenarioConfig& cfg, const SeparationConfig& sep) {
  cfg.validate(sep.v_max);
  sep.validate();
  Rng rng(cfg.seed);
  SeparationConfig check = sep;
  check.t_lookahead = cfg.t_la;

  Scenario sc;
  sc.seed = cfg.seed;
  sc.config = cfg;
  const double spd_ref = rng.uniform(cfg.spd_min, cfg.spd_max);
  const double hdg_ref = rng.uniform(1.0, 360.0);
  sc.states.emplace_back(0.0, 0.0, hdg_ref, spd_ref);

  while (static_cast<int>(sc.states.size()) < cfg.target) {
    int rejected = 0;
    int slow = 0, late = 0, accidental = 0;
    for (;;) {
      if (rejected >= cfg.max_rejections) {
        std::ostringstream msg;
        msg << "scenario generation failed: seed=" << cfg.seed << " created=" << sc.states.size()
            << " target=" << cfg.target << " consecutive_rejections=" << rejected
            << " (slow_relative=" << slow << " cpa_beyond_horizon=" << late
            << " accidental_conflict=" << accidental << ")";
        throw GenerationError(msg.str());
      }
      const double angle = cfg.conflict_angles[rng.below(cfg.conflict_angles.size())];
      const double dpsi = angle + rng.uniform(-cfg.hdg_variance, cfg.hdg_variance);
      const double severity = rng.uniform(cfg.severity_min, cfg.severity_max);
      const double d_cpa = sep.r_separation - sep.r_separation * severity;
      const int chosen = static_cast<int>(rng.below(sc.states.size()));
      const double spd = rng.uniform(cfg.spd_min, cfg.spd_max);
      const int side = rng.below(2) == 0 ? -1 : 1;

      IntruderDesign proposed;
      try {
        proposed = design_intruder(sc.states[chosen], dpsi, d_cpa, cfg.t_loss, spd, sep, side,
                                   cfg.min_relative_speed);
      } catch (const RejectedGeometry&) {
        ++rejected;
        ++slow;
        continue;
      }
      if (proposed.t_cpa > cfg.horizon) {
        ++rejected;
        ++late;
        continue;
      }
      bool in_conflict = false;
      for (const auto& other : sc.states) {
        if (assess_pair(other, proposed.state, check).predicted_conflict) {
          in_conflict = true;
          break;
        }
      }
      if (in_conflict) {
        ++rejected;
        ++accidental;
        continue;
      }
      sc.designed_pairs.push_back({chosen, static_cast<int>(sc.states.size()), dpsi, d_cpa, cfg.t_loss});
      sc.states.push_back(proposed.state);
      break;
    }
  }
  return sc;
}

struct PairReport {
  int a = 0;
  int b = 0;
  double designed_t_loss = 0.0;
  double designed_d_cpa = 0.0;
  double first_loss_time = std::numeric_limits<double>::quiet_NaN();  // NaN: never
  double min_distance = std::numeric_limits<double>::infinity();
  double t_min = 0.0;
};

struct EarlyBreach {
  int a = 0;
  int b = 0;
  double t = 0.0;
  double distance = 0.0;
};

struct ValidationReport {
  std::vector<PairReport> designed;
  std::vector<EarlyBreach> early_breaches;

  bool ok(double t_tol = 0.05, double d_tol = 0.5) const {
    if (!early_breaches.empty()) return false;
    for (const auto& p : designed) {
      if (!(std::abs(p.first_loss_time - p.designed_t_loss) <= t_tol)) return false;
      if (!(std::abs(p.min_distance - p.designed_d_cpa) <= d_tol)) return false;
    }
    return true;
  }
};

// Straight-line, no-action replay of a scenario on a fine time grid. Serves as
// the oracle for the generator's contract.
inline ValidationReport validate(const Scenario& s, const SeparationConfig& sep, double duration = 60.0,
                                 double dt = 1e-3) {
  const int n = static_cast<int>(s.states.size());
  std::vector<Vec2> p0(n), v(n);
  for (int i = 0; i < n; ++i) {
    p0[i] = s.states[i].position();
    v[i] = s.states[i].velocity();
  }
  ValidationReport report;
  for (const auto& dp : s.designed_pairs) {
    PairReport pr;
    pr.a = dp.a;
    pr.b = dp.b;
    pr.designed_t_loss = dp.t_loss;
    pr.designed_d_cpa = dp.d_cpa;
    report.designed.push_back(pr);
  }
  std::vector<char> early_seen(static_cast<std::size_t>(n) * n, 0);
  const long steps = std::lround(duration / dt);
  for (long k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    for (auto& pr : report.designed) {
      const double d = ((p0[pr.b] + v[pr.b] * t) - (p0[pr.a] + v[pr.a] * t)).norm();
      if (d < pr.min_distance) {
        pr.min_distance = d;
        pr.t_min = t;
      }
      if (std::isnan(pr.first_loss_time) && d < sep.r_separation) pr.first_loss_time = t;
    }
    if (t <= sep.t_lookahead) {
      for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
          if (early_seen[i * n + j]) continue;
          const double d = ((p0[j] + v[j] * t) - (p0[i] + v[i] * t)).norm();
          if (d < sep.r_separation) {
            early_seen[i * n + j] = 1;
            report.early_breaches.push_back({i, j, t, d});
          }
        }
      }
    }
  }
  return report;
}

// JSON form. Positions are exported as lat/lon about `ref`; the exact local
// coordinates are carried alongside as x/y so a read-back is bit-identical.
// Doubles are written in shortest round-trip decimal form.
inline nlohmann::json scenario_to_json(const Scenario& s, GeoPoint ref = kDefaultReference) {
  nlohmann::json j;
  j["seed"] = s.seed;
  j["config"] = s.config;
  j["reference"] = {{"lat", ref.lat}, {"lon", ref.lon}};
  auto& states = j["states"] = nlohmann::json::array();
  for (const auto& st : s.states) {
    const GeoPoint g = unproject(st.x, st.y, ref);
    states.push_back({{"lat", g.lat}, {"lon", g.lon}, {"hdg", st.hdg}, {"spd", st.spd}, {"x", st.x}, {"y", st.y}});
  }
  auto& pairs = j["designed_pairs"] = nlohmann::json::array();
  for (const auto& p : s.designed_pairs) {
    pairs.push_back({{"a", p.a}, {"b", p.b}, {"dpsi", p.dpsi}, {"d_cpa", p.d_cpa}, {"t_loss", p.t_loss}});
  }
  return j;
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
  try {
    Scenario s;
    s.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("config")) s.config = j.at("config").get<ScenarioConfig>();
    GeoPoint ref = kDefaultReference;
    if (j.contains("reference")) ref = {j["reference"].at("lat").get<double>(), j["reference"].at("lon").get<double>()};
    for (const auto& st : j.at("states")) {
      double x, y;
      if (st.contains("x") && st.contains("y")) {
        x = st["x"].get<double>();
        y = st["y"].get<double>();
      } else {
        const auto p = project({st.at("lat").get<double>(), st.at("lon").get<double>()}, ref);
        x = p.x;
        y = p.y;
      }
      s.states.emplace_back(x, y, st.at("hdg").get<double>(), st.at("spd").get<double>());
    }
    for (const auto& p : j.at("designed_pairs")) {
      s.designed_pairs.push_back({p.at("a").get<int>(), p.at("b").get<int>(), p.at("dpsi").get<double>(),
                                  p.at("d_cpa").get<double>(), p.at("t_loss").get<double>()});
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("malformed scenario document: ") + e.what());
  }
}

}  // namespace uavcr
