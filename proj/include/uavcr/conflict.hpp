#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "uavcr/errors.hpp"
#include "uavcr/geo.hpp"

namespace uavcr {

struct SeparationConfig {
  double r_nmac = 4.0;                            // m
  double v_max = 15.0;                            // m/s
  double yaw_rate_max = std::numbers::pi / 2.0;   // rad/s
  double t_maneuver = 15.0;                       // s
  double r_separation = 240.0;                    // m, operational threshold
  double t_lookahead = 8.0;                       // s

  void validate() const {
    if (!(r_nmac > 0.0 && v_max > 0.0 && yaw_rate_max > 0.0 && t_maneuver > 0.0 &&
          r_separation > 0.0 && t_lookahead > 0.0)) {
      throw DomainError("SeparationConfig: all fields must be strictly positive");
    }
    if (!(r_nmac < r_separation)) {
      throw DomainError("SeparationConfig: r_nmac must be smaller than r_separation");
    }
  }
};

struct Cpa {
  double t_cpa = 0.0;
  double d_cpa = 0.0;
};

struct CpaResult {
  double t_cpa = 0.0;         // unclamped, may be negative
  double d_cpa = 0.0;
  double d_min_window = 0.0;  // minimum distance over [0, t_lookahead]
  double t_min_window = 0.0;
  bool predicted_conflict = false;
};

// Closest approach of two straight-flying vehicles given relative position
// and velocity (b minus a).
inline Cpa cpa(const Vec2& rel_pos, const Vec2& rel_vel) {
  const double v2 = rel_vel.squaredNorm();
  if (std::sqrt(v2) < 1e-9) return {0.0, rel_pos.norm()};
  const double t = -rel_pos.dot(rel_vel) / v2;
  return {t, (rel_pos + t * rel_vel).norm()};
}

inline CpaResult assess_pair(const UavState& a, const UavState& b, const SeparationConfig& cfg) {
  const Vec2 rel_pos = b.position() - a.position();
  const Vec2 rel_vel = b.velocity() - a.velocity();
  const Cpa c = cpa(rel_pos, rel_vel);
  CpaResult r;
  r.t_cpa = c.t_cpa;
  r.d_cpa = c.d_cpa;
  r.t_min_window = std::clamp(c.t_cpa, 0.0, cfg.t_lookahead);
  r.d_min_window = (rel_pos + r.t_min_window * rel_vel).norm();
  r.predicted_conflict = r.d_min_window < cfg.r_separation;
  return r;
}

inline double distance(const UavState& a, const UavState& b) {
  return (b.position() - a.position()).norm();
}

inline bool is_loss(const UavState& a, const UavState& b, const SeparationConfig& cfg) {
  return distance(a, b) < cfg.r_separation;
}

inline bool is_nmac(const UavState& a, const UavState& b, const SeparationConfig& cfg) {
  return distance(a, b) < cfg.r_nmac;
}

// Self-separation radius: NMAC radius, plus distance flown during the
// avoidance manoeuvre, plus a turn-radius term. yaw_rate_max in rad/s.
//
// With r_nmac=4 m, v_max=15 m/s, yaw rate pi/2 rad/s and t_m=15 s this gives
// 238.55 m; the operational threshold (SeparationConfig::r_separation) is the
// rounded value 240 m and is configured independently.
inline double separation_radius(double r_nmac, double v_max, double yaw_rate_max, double t_m) {
  if (!(v_max > 0.0 && yaw_rate_max > 0.0)) {
    throw DomainError("separation_radius: v_max and yaw_rate_max must be positive");
  }
  if (!(r_nmac >= 0.0 && t_m >= 0.0)) {
    throw DomainError("separation_radius: r_nmac and t_m must be non-negative");
  }
  return r_nmac + v_max * t_m + v_max / yaw_rate_max;
}

}  // namespace uavcr
