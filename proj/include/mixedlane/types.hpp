// Copyright 2026 The mixedlane Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mixedlane {

/// Four-component quantity laid out as (x, y, theta, v). The tag keeps states,
/// state rates, errors and adaptive corrections from being mixed by accident;
/// conversions between them are spelled out at the call site.
template <class Tag>
struct Quad {
  double x{0.0};
  double y{0.0};
  double theta{0.0};
  double v{0.0};

  static constexpr std::size_t size() { return 4; }

  constexpr double operator[](std::size_t i) const {
    switch (i) {
      case 0: return x;
      case 1: return y;
      case 2: return theta;
      default: return v;
    }
  }
  constexpr double& operator[](std::size_t i) {
    switch (i) {
      case 0: return x;
      case 1: return y;
      case 2: return theta;
      default: return v;
    }
  }

  constexpr Quad& operator+=(const Quad& o) {
    x += o.x;
    y += o.y;
    theta += o.theta;
    v += o.v;
    return *this;
  }
  constexpr Quad& operator-=(const Quad& o) {
    x -= o.x;
    y -= o.y;
    theta -= o.theta;
    v -= o.v;
    return *this;
  }
  friend constexpr Quad operator+(Quad a, const Quad& b) { return a += b; }
  friend constexpr Quad operator-(Quad a, const Quad& b) { return a -= b; }
  friend constexpr Quad operator*(double s, Quad a) {
    a.x *= s;
    a.y *= s;
    a.theta *= s;
    a.v *= s;
    return a;
  }
  friend constexpr bool operator==(const Quad&, const Quad&) = default;

  template <class OtherTag>
  constexpr Quad<OtherTag> as() const {
    return {x, y, theta, v};
  }
};

struct StateTag {};
struct RateTag {};
struct ErrorTag {};
struct ErrorRateTag {};
struct AdaptiveTag {};
struct BoundTag {};

/// Pose and speed of a vehicle: x [m], y [m], theta [rad], v [m/s].
using VehicleState = Quad<StateTag>;
/// Time derivative of a VehicleState.
using StateRate = Quad<RateTag>;
/// Measured HDV state error e = x_H - x̄_H.
using ErrorVector = Quad<ErrorTag>;
/// Measured HDV error rate ė.
using ErrorRate = Quad<ErrorRateTag>;
/// Additive corrections (h_x, h_y, h_theta, h_v) of the adaptive HDV model.
using AdaptiveTerms = Quad<AdaptiveTag>;
/// Non-negative per-component bound (w, nu or s vectors).
using BoundVector = Quad<BoundTag>;

/// Acceleration [m/s^2] and steering angle [rad].
struct ControlInput {
  double u{0.0};
  double phi{0.0};
  friend constexpr bool operator==(const ControlInput&, const ControlInput&) = default;
};

enum class Vehicle : std::size_t { kOne = 0, kC = 1, kH = 2, kU = 3 };
inline constexpr std::size_t kVehicleCount = 4;

constexpr std::size_t index(Vehicle v) { return static_cast<std::size_t>(v); }

constexpr std::string_view vehicle_name(Vehicle v) {
  switch (v) {
    case Vehicle::kOne: return "1";
    case Vehicle::kC: return "C";
    case Vehicle::kH: return "H";
    default: return "U";
  }
}

/// Closed interval [lo, hi].
struct Interval {
  double lo{0.0};
  double hi{0.0};

  static Interval around(double center, double radius) {
    return {center - radius, center + radius};
  }
  constexpr bool contains(double value) const { return lo <= value && value <= hi; }
  constexpr double width() const { return hi - lo; }
  constexpr double mid() const { return 0.5 * (lo + hi); }
  constexpr bool degenerate() const { return lo == hi; }
  friend constexpr bool operator==(const Interval&, const Interval&) = default;
};

inline Interval operator+(Interval a, Interval b) { return {a.lo + b.lo, a.hi + b.hi}; }
inline Interval operator-(Interval a, Interval b) { return {a.lo - b.hi, a.hi - b.lo}; }

/// Thrown for invalid configuration or construction inputs.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mixedlane
