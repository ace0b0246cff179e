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

#include <cmath>
#include <span>

#include "mixedlane/random.hpp"
#include "mixedlane/types.hpp"

namespace mixedlane {

inline constexpr double kDefaultWheelbase = 2.7;
inline constexpr double kDefaultMicroStep = 1e-3;

/// Kinematic model of a connected automated vehicle, split as f(x) + g(x) u:
///   ẋ = v cosθ - v sinθ φ,  ẏ = v sinθ + v cosθ φ,  θ̇ = (v / L) φ,  v̇ = u.
inline StateRate cav_derivative(const VehicleState& s, const ControlInput& c, double wheelbase) {
  const double ct = std::cos(s.theta);
  const double st = std::sin(s.theta);
  return {s.v * ct - s.v * st * c.phi, s.v * st + s.v * ct * c.phi, (s.v / wheelbase) * c.phi, c.u};
}

struct DisturbanceConfig {
  Interval sigma{0.9, 1.1};
  std::array<Interval, 4> eps{{{-0.7, 0.7}, {-0.5, 0.5}, {-0.5, 0.5}, {-0.7, 0.7}}};
  std::uint64_t seed{1};
  /// When false every sample is neutral (sigma = 1, eps = 0).
  bool enabled{true};

  void validate() const {
    if (!(sigma.lo <= sigma.hi)) throw ConfigError("disturbance.sigma: lo > hi");
    for (const auto& e : eps) {
      if (!(e.lo <= e.hi)) throw ConfigError("disturbance.eps: lo > hi");
    }
  }
};

/// One draw of the multiplicative (sigma1, sigma2) and additive (eps1..eps4) HDV disturbances.
struct DisturbanceSample {
  double sigma1{1.0};
  double sigma2{1.0};
  std::array<double, 4> eps{0.0, 0.0, 0.0, 0.0};

  static constexpr DisturbanceSample neutral() { return {}; }
};

/// Draws disturbance samples. Six values are consumed per draw whether or not
/// disturbances are enabled, so the stream stays aligned across configurations.
class DisturbanceSampler {
 public:
  explicit DisturbanceSampler(const DisturbanceConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {}

  DisturbanceSample sample() {
    DisturbanceSample d;
    d.sigma1 = rng_.uniform(cfg_.sigma.lo, cfg_.sigma.hi);
    d.sigma2 = rng_.uniform(cfg_.sigma.lo, cfg_.sigma.hi);
    for (std::size_t i = 0; i < 4; ++i) d.eps[i] = rng_.uniform(cfg_.eps[i].lo, cfg_.eps[i].hi);
    if (!cfg_.enabled) return DisturbanceSample::neutral();
    return d;
  }

 private:
  DisturbanceConfig cfg_;
  Rng rng_;
};

/// The disturbed HDV model used as ground truth by the simulator, evaluated for a
/// fixed disturbance draw.
inline StateRate hdv_true_derivative(const VehicleState& s, const ControlInput& c, double wheelbase,
                                     const DisturbanceSample& d) {
  const double ct = std::cos(s.theta);
  const double st = std::sin(s.theta);
  return {s.v * ct * d.sigma1 - s.v * st * c.phi + d.eps[0],
          s.v * st * d.sigma2 + s.v * ct * c.phi + d.eps[1],
          (s.v / wheelbase) * c.phi + d.eps[2], c.u + d.eps[3]};
}

/// Same as above with a fresh draw from the sampler.
inline StateRate hdv_true_derivative(const VehicleState& s, const ControlInput& c, double wheelbase,
                                     DisturbanceSampler& sampler) {
  return hdv_true_derivative(s, c, wheelbase, sampler.sample());
}

/// Controller-side HDV model: drift plus adaptive corrections, no explicit control.
/// The heading rate is v̄ / L + h_θ with no steering factor; h_θ absorbs the mismatch.
inline StateRate hdv_adaptive_derivative(const VehicleState& est, const AdaptiveTerms& h, double wheelbase) {
  return {est.v * std::cos(est.theta) + h.x, est.v * std::sin(est.theta) + h.y, est.v / wheelbase + h.theta,
          h.v};
}

/// Classical fourth-order Runge-Kutta step. `rate` is any callable VehicleState -> StateRate;
/// whatever it samples (disturbances, held controls) stays fixed for the whole step.
template <class RateFn>
VehicleState integrate_step(const VehicleState& s, RateFn&& rate, double dt) {
  const auto advance = [&s](const StateRate& k, double h) {
    return VehicleState{s.x + h * k.x, s.y + h * k.y, s.theta + h * k.theta, s.v + h * k.v};
  };
  const StateRate k1 = rate(s);
  const StateRate k2 = rate(advance(k1, 0.5 * dt));
  const StateRate k3 = rate(advance(k2, 0.5 * dt));
  const StateRate k4 = rate(advance(k3, dt));
  const double w = dt / 6.0;
  return {s.x + w * (k1.x + 2.0 * k2.x + 2.0 * k3.x + k4.x), s.y + w * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y),
          s.theta + w * (k1.theta + 2.0 * k2.theta + 2.0 * k3.theta + k4.theta),
          s.v + w * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v)};
}

inline ErrorVector measure_error(const VehicleState& truth, const VehicleState& est) {
  return (truth - est).as<ErrorTag>();
}

/// ė from the sensed true derivative and the adaptive model's derivative.
inline ErrorRate measure_error_rate(const StateRate& sensed, const StateRate& model) {
  return (sensed - model).as<ErrorRateTag>();
}

struct SyncResult {
  AdaptiveTerms terms;
  VehicleState estimate;
};

/// Event-time synchronization: h(t+) = h(t-) + Σ ė(t_i) over the supplied
/// samples, and the estimate snaps to the measured state so e(t_k) = 0.
inline SyncResult synchronize_adaptive_model(const AdaptiveTerms& terms, std::span<const ErrorRate> error_rates,
                                             const VehicleState& measured) {
  AdaptiveTerms out = terms;
  for (const ErrorRate& r : error_rates) out += r.as<AdaptiveTag>();
  return {out, measured};
}

/// Running form of the synchronization sum, for controllers that fold the
/// whole history into each update without storing it.
class ErrorRateAccumulator {
 public:
  void add(const ErrorRate& r) { sum_ += r; }
  const ErrorRate& sum() const { return sum_; }
  void reset() { sum_ = {}; }

 private:
  ErrorRate sum_{};
};

}  // namespace mixedlane
