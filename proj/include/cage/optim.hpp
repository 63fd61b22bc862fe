// Copyright 2026 The CAGE-QAT Authors. All Rights Reserved.
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
// =============================================================================

#pragma once

#include "cage/numerics.hpp"

#include <cmath>
#include <concepts>
#include <numbers>
#include <span>
#include <string>

namespace cage {

/// When the decoupled/coupled step reads the quantization error:
/// after weight decay (the default, matching the reference algorithm) or
/// from the parameters as they were handed to the step.
enum class ErrorTiming { PostDecay, PreDecay };

inline ErrorTiming parse_error_timing(const std::string& s) {
  if (s == "post-decay") return ErrorTiming::PostDecay;
  if (s == "pre-decay") return ErrorTiming::PreDecay;
  throw ContractViolation("unknown error_timing '" + s + "'");
}

inline std::string to_string(ErrorTiming t) { return t == ErrorTiming::PostDecay ? "post-decay" : "pre-decay"; }

struct OptimConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.1;
  double lambda = 0.0;
  double silence_ratio = 0.0;
  std::size_t total_steps = 1;
  ErrorTiming error_timing = ErrorTiming::PostDecay;

  void validate() const {
    require(lr > 0.0, "OptimConfig: lr must be positive");
    require(beta1 >= 0.0 && beta1 < 1.0, "OptimConfig: beta1 must be in [0, 1)");
    require(beta2 >= 0.0 && beta2 < 1.0, "OptimConfig: beta2 must be in [0, 1)");
    require(eps > 0.0, "OptimConfig: eps must be positive");
    require(weight_decay >= 0.0, "OptimConfig: weight_decay must be non-negative");
    require(lambda >= 0.0, "OptimConfig: lambda must be non-negative");
    require(silence_ratio >= 0.0 && silence_ratio < 1.0, "OptimConfig: silence_ratio must be in [0, 1)");
    require(total_steps >= 1, "OptimConfig: total_steps must be positive");
  }
};

/// Silence-then-ramp schedule for the CAGE coefficient.
class LambdaSchedule {
 public:
  LambdaSchedule(double lambda, double silence_ratio, std::size_t total_steps)
      : lambda_(lambda), silence_(silence_ratio), total_(total_steps) {
    require(lambda >= 0.0, "LambdaSchedule: lambda must be non-negative");
    require(silence_ratio >= 0.0 && silence_ratio < 1.0, "LambdaSchedule: silence_ratio must be in [0, 1)");
    require(total_steps >= 1, "LambdaSchedule: total_steps must be positive");
  }
  explicit LambdaSchedule(const OptimConfig& cfg) : LambdaSchedule(cfg.lambda, cfg.silence_ratio, cfg.total_steps) {}

  double lambda() const noexcept { return lambda_; }
  double silence_ratio() const noexcept { return silence_; }
  std::size_t total_steps() const noexcept { return total_; }

  /// λ_t for step t ∈ [1, T].
  double at(std::size_t t) const {
    const double r = static_cast<double>(t) / static_cast<double>(total_);
    if (r <= silence_) return 0.0;
    return lambda_ * (r - silence_) / (1.0 - silence_);
  }

 private:
  double lambda_;
  double silence_;
  std::size_t total_;
};

inline double lambda_at(const LambdaSchedule& sched, std::size_t t) { return sched.at(t); }

/// Linear warmup over `warmup_frac·T` steps, then cosine decay to zero.
inline double cosine_lr(double base, std::size_t t, std::size_t total, double warmup_frac = 0.1) {
  const auto warmup = static_cast<std::size_t>(warmup_frac * static_cast<double>(total));
  if (warmup > 0 && t <= warmup) return base * static_cast<double>(t) / static_cast<double>(warmup);
  if (total <= warmup) return base;
  const double progress = static_cast<double>(t - warmup) / static_cast<double>(total - warmup);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// -----------------------------------------------------------------------------
// SGD family

inline Vector sgd_step(std::span<const double> x, std::span<const double> g, double lr) {
  require(x.size() == g.size(), "sgd_step: dimension mismatch");
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lr * g[i];
  return out;
}

/// x' = x − α(g + λ_t·e).
inline Vector cage_sgd_step(std::span<const double> x, std::span<const double> g, std::span<const double> e,
                            double lr, double lambda_t) {
  require(x.size() == g.size() && x.size() == e.size(), "cage_sgd_step: dimension mismatch");
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - lr * (g[i] + lambda_t * e[i]);
  return out;
}

/// Coupled form: SGD applied to the augmented gradient g + λ_t·e.
inline Vector cage_sgd_coupled_step(std::span<const double> x, std::span<const double> g,
                                    std::span<const double> e, double lr, double lambda_t) {
  require(g.size() == e.size(), "cage_sgd_coupled_step: dimension mismatch");
  Vector augmented(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) augmented[i] = g[i] + lambda_t * e[i];
  return sgd_step(x, augmented, lr);
}

/// Decoupled form: SGD's update direction Δ = g, corrected to Δ + λ_t·e
/// before the model update x − α·Δ.
inline Vector cage_sgd_decoupled_step(std::span<const double> x, std::span<const double> g,
                                      std::span<const double> e, double lr, double lambda_t) {
  require(x.size() == g.size() && x.size() == e.size(), "cage_sgd_decoupled_step: dimension mismatch");
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double direction = g[i];
    out[i] = x[i] - lr * (direction + lambda_t * e[i]);
  }
  return out;
}

/// g·min(1, max_norm/‖g‖₂).
inline Vector grad_clip(std::span<const double> g, double max_norm) {
  require(max_norm > 0.0, "grad_clip: max_norm must be positive");
  Vector out(g.begin(), g.end());
  const double n = norm2(g);
  if (n > max_norm) {
    const double f = max_norm / n;
    for (auto& v : out) v *= f;
  }
  return out;
}

// -----------------------------------------------------------------------------
// AdamW family

struct AdamState {
  Vector m;
  Vector v;
  std::size_t t = 0;

  AdamState() = default;
  explicit AdamState(std::size_t dim) : m(dim, 0.0), v(dim, 0.0) {}
};

namespace detail {

/// In place: moments update and x ← x − α·m̂/(√v̂+ε). Increments t.
inline void adam_moments_and_update(AdamState& state, Vector& x, std::span<const double> g, const OptimConfig& cfg) {
  require(state.m.size() == x.size() && state.v.size() == x.size() && g.size() == x.size(),
          "adamw_step: state, parameter and gradient dims differ");
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < x.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    x[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
  }
}

inline void apply_weight_decay(Vector& x, const OptimConfig& cfg) {
  if (cfg.weight_decay == 0.0) return;
  const double f = 1.0 - cfg.lr * cfg.weight_decay;
  for (auto& v : x) v *= f;
}

}  // namespace detail

/// Decoupled weight decay, then the bias-corrected Adam update.
inline Vector adamw_step(AdamState& state, std::span<const double> x, std::span<const double> g,
                         const OptimConfig& cfg) {
  Vector out(x.begin(), x.end());
  detail::apply_weight_decay(out, cfg);
  detail::adam_moments_and_update(state, out, g, cfg);
  return out;
}

template <class F>
concept ErrorFunction = requires(F f, std::span<const double> x) {
  { f(x) } -> std::convertible_to<Vector>;
};

/// CAGE-AdamW, decoupled: x̃ = AdamW(x, g), then x' = x̃ − α·λ_t·e with e the
/// quantization error of the decayed (or, with pre-decay timing, the
/// incoming) parameters. `t` is the 1-based step index used by the schedule.
template <ErrorFunction ErrorFn>
Vector cage_adamw_decoupled_step(AdamState& state, std::span<const double> x, std::span<const double> g,
                                 ErrorFn&& error_of, const OptimConfig& cfg, std::size_t t) {
  const double lambda_t = LambdaSchedule(cfg).at(t);
  Vector out(x.begin(), x.end());
  Vector e;
  if (lambda_t != 0.0 && cfg.error_timing == ErrorTiming::PreDecay) e = error_of(x);
  detail::apply_weight_decay(out, cfg);
  if (lambda_t != 0.0 && cfg.error_timing == ErrorTiming::PostDecay) e = error_of(std::span<const double>(out));
  detail::adam_moments_and_update(state, out, g, cfg);
  if (lambda_t != 0.0) {
    require(e.size() == out.size(), "cage_adamw_decoupled_step: error dim mismatch");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= cfg.lr * lambda_t * e[i];
  }
  return out;
}

/// Same, with a precomputed error vector (timing is then the caller's choice).
inline Vector cage_adamw_decoupled_step(AdamState& state, std::span<const double> x, std::span<const double> g,
                                        std::span<const double> e, const OptimConfig& cfg, std::size_t t) {
  return cage_adamw_decoupled_step(
      state, x, g, [e](std::span<const double>) { return Vector(e.begin(), e.end()); }, cfg, t);
}

/// CAGE-AdamW, coupled: AdamW on g + λ_t·e; no post-step correction.
template <ErrorFunction ErrorFn>
Vector cage_adamw_coupled_step(AdamState& state, std::span<const double> x, std::span<const double> g,
                               ErrorFn&& error_of, const OptimConfig& cfg, std::size_t t) {
  const double lambda_t = LambdaSchedule(cfg).at(t);
  Vector out(x.begin(), x.end());
  Vector e;
  if (lambda_t != 0.0 && cfg.error_timing == ErrorTiming::PreDecay) e = error_of(x);
  detail::apply_weight_decay(out, cfg);
  if (lambda_t != 0.0 && cfg.error_timing == ErrorTiming::PostDecay) e = error_of(std::span<const double>(out));
  if (lambda_t == 0.0) {
    detail::adam_moments_and_update(state, out, g, cfg);
    return out;
  }
  require(e.size() == g.size(), "cage_adamw_coupled_step: error dim mismatch");
  Vector augmented(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) augmented[i] = g[i] + lambda_t * e[i];
  detail::adam_moments_and_update(state, out, augmented, cfg);
  return out;
}

inline Vector cage_adamw_coupled_step(AdamState& state, std::span<const double> x, std::span<const double> g,
                                      std::span<const double> e, const OptimConfig& cfg, std::size_t t) {
  return cage_adamw_coupled_step(
      state, x, g, [e](std::span<const double>) { return Vector(e.begin(), e.end()); }, cfg, t);
}

// -----------------------------------------------------------------------------

enum class OptimizerKind { Sgd, AdamW, CageSgd, CageAdamWDecoupled, CageAdamWCoupled };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adamw" || s == "adam") return OptimizerKind::AdamW;
  if (s == "cage-sgd") return OptimizerKind::CageSgd;
  if (s == "cage-adamw-dec" || s == "cage-adam") return OptimizerKind::CageAdamWDecoupled;
  if (s == "cage-adamw-cpl") return OptimizerKind::CageAdamWCoupled;
  throw ContractViolation("unknown optimizer '" + s + "'");
}

inline std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::Sgd: return "sgd";
    case OptimizerKind::AdamW: return "adamw";
    case OptimizerKind::CageSgd: return "cage-sgd";
    case OptimizerKind::CageAdamWDecoupled: return "cage-adamw-dec";
    case OptimizerKind::CageAdamWCoupled: return "cage-adamw-cpl";
  }
  return "unknown";
}

}  // namespace cage
