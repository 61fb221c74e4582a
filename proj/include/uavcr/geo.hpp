#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Core>

#include "uavcr/errors.hpp"

namespace uavcr {

using Vec2 = Eigen::Vector2d;

inline constexpr double kEarthRadius = 6371000.0;  // meters
inline constexpr double kDegToRad = std::numbers::pi / 180.0;
inline constexpr double kRadToDeg = 180.0 / std::numbers::pi;

struct GeoPoint {
  double lat = 0.0;  // degrees
  double lon = 0.0;  // degrees

  friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

// Reference point of every generated scenario.
inline constexpr GeoPoint kDefaultReference{41.4, 2.15};

// Wraps any angle into [0, 360).
inline double normalize_heading(double deg) {
  double r = std::fmod(deg, 360.0);
  if (r < 0.0) r += 360.0;
  // fmod of a tiny negative value plus 360 rounds to 360 exactly
  if (r >= 360.0) r = 0.0;
  return r;
}

// Signed shortest rotation from `from` to `to`, in (-180, 180]. An exact
// half-turn resolves clockwise (+180).
inline double heading_difference(double from, double to) {
  double d = std::fmod(to - from, 360.0);
  if (d > 180.0) d -= 360.0;
  if (d <= -180.0) d += 360.0;
  return d;
}

// Unsigned angular distance in [0, 180].
inline double angular_distance(double a, double b) {
  return std::abs(heading_difference(a, b));
}

struct Projected {
  double x = 0.0;  // meters east
  double y = 0.0;  // meters north
};

// Equirectangular projection about `ref`. Valid within one degree of it.
inline Projected project(GeoPoint p, GeoPoint ref) {
  if (!(std::abs(p.lat) <= 90.0 && std::abs(p.lon) <= 180.0 &&
        std::abs(ref.lat) <= 90.0 && std::abs(ref.lon) <= 180.0)) {
    throw DomainError("project: latitude/longitude out of range");
  }
  const double dlat = p.lat - ref.lat;
  const double dlon = p.lon - ref.lon;
  if (!(std::abs(dlat) < 1.0 && std::abs(dlon) < 1.0)) {
    throw DomainError("project: point is more than 1 degree from the reference");
  }
  return {dlon * kDegToRad * kEarthRadius * std::cos(ref.lat * kDegToRad),
          dlat * kDegToRad * kEarthRadius};
}

inline GeoPoint unproject(double x, double y, GeoPoint ref) {
  return {ref.lat + y / kEarthRadius * kRadToDeg,
          ref.lon + x / (kEarthRadius * std::cos(ref.lat * kDegToRad)) * kRadToDeg};
}

// State of one vehicle in the local metric frame. The original heading is
// captured at construction and cannot be changed afterwards.
class UavState {
 public:
  double x = 0.0;    // meters east of reference
  double y = 0.0;    // meters north of reference
  double hdg = 0.0;  // degrees clockwise from north, [0, 360)
  double spd = 0.0;  // m/s

  UavState() = default;
  UavState(double x_m, double y_m, double heading_deg, double speed)
      : x(x_m), y(y_m), hdg(normalize_heading(heading_deg)), spd(speed), hdg0_(hdg) {}

  double hdg0() const { return hdg0_; }
  Vec2 position() const { return {x, y}; }
  Vec2 velocity() const {
    const double h = hdg * kDegToRad;
    return {spd * std::sin(h), spd * std::cos(h)};
  }

  friend bool operator==(const UavState&, const UavState&) = default;

 private:
  double hdg0_ = 0.0;
};

struct KinematicsConfig {
  double v_max = 15.0;          // m/s
  double yaw_rate_max = 90.0;   // deg/s
  double sub_step = 0.1;        // s

  void validate() const {
    if (!(v_max > 0.0 && yaw_rate_max > 0.0 && sub_step > 0.0)) {
      throw DomainError("KinematicsConfig: all fields must be strictly positive");
    }
  }
};

// Heading-hold flight: turn toward `commanded_hdg` along the shorter arc at no
// more than the yaw-rate limit, integrating position in sub-steps along the
// instantaneous heading. Speed and original heading are untouched.
inline UavState advance(UavState s, double commanded_hdg, double dt, const KinematicsConfig& cfg) {
  if (!(dt > 0.0)) throw DomainError("advance: dt must be positive");
  const double target = normalize_heading(commanded_hdg);
  const int n = std::max(1, static_cast<int>(std::ceil(dt / cfg.sub_step - 1e-9)));
  const double h = dt / n;
  const double max_turn = cfg.yaw_rate_max * h;
  for (int k = 0; k < n; ++k) {
    const double diff = heading_difference(s.hdg, target);
    if (std::abs(diff) <= max_turn) {
      s.hdg = target;
    } else {
      s.hdg = normalize_heading(s.hdg + std::copysign(max_turn, diff));
    }
    const double rad = s.hdg * kDegToRad;
    s.x += s.spd * std::sin(rad) * h;
    s.y += s.spd * std::cos(rad) * h;
  }
  return s;
}

}  // namespace uavcr
