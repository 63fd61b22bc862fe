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
#include "cage/objectives.hpp"
#include "cage/quantize.hpp"

#include <cmath>
#include <ostream>
#include <span>
#include <vector>

namespace cage {

/// ∇f(x) + λ(x − Q(x)) with the true gradient at x. Zero exactly at
/// λ-Pareto optimal points.
inline Vector pareto_gradient(const Objective& obj, const QuantSpec& spec, std::span<const double> x, double lambda) {
  require(lambda >= 0.0, "pareto_gradient: lambda must be non-negative");
  Vector g = obj.grad(x);
  if (lambda == 0.0) return g;
  const Vector e = quant_error(spec, x);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += lambda * e[i];
  return g;
}

// -----------------------------------------------------------------------------
// Error-feedback view of STE-SGD.

/// Quantized weights w and the carried error e.
struct EfState {
  Vector w;
  Vector e;

  /// w₀ = Q(x₀), e₀ = x₀ − Q(x₀).
  static EfState from_iterate(const QuantSpec& spec, std::span<const double> x) {
    QuantResult r = quantize(spec, x);
    return {std::move(r.quantized), std::move(r.error)};
  }
};

/// g = α·g̃ − e;  w' = Q(w − g);  e' = (w − g) − w'.
inline EfState ef_step(const EfState& ef, double lr, std::span<const double> noisy_grad, const QuantSpec& spec) {
  require(ef.w.size() == ef.e.size() && ef.w.size() == noisy_grad.size(), "ef_step: dimension mismatch");
  Vector pre(ef.w.size());
  for (std::size_t i = 0; i < pre.size(); ++i) {
    const double g = lr * noisy_grad[i] - ef.e[i];
    pre[i] = ef.w[i] - g;
  }
  QuantResult r = quantize(spec, pre);
  return {std::move(r.quantized), std::move(r.error)};
}

// -----------------------------------------------------------------------------
// Measurement

struct ParetoRecord {
  std::size_t step = 0;
  double loss = 0.0;
  double pareto_sq_norm = 0.0;
  double grad_sq_norm = 0.0;
  double err_sq_norm = 0.0;
  double lambda_t = 0.0;
};

class ParetoMeasure {
 public:
  explicit ParetoMeasure(double lambda = 0.0) : lambda_(lambda) {}

  double lambda() const noexcept { return lambda_; }
  const std::vector<ParetoRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  void reserve(std::size_t n) { records_.reserve(n); }

  /// Records ‖∇f + λe‖², ‖∇f‖², ‖e‖² at x using the true gradient.
  void record(std::size_t step, const Objective& obj, const QuantSpec& spec, std::span<const double> x,
              double lambda_t) {
    const Evaluation ev = obj(x);
    const Vector e = quant_error(spec, x);
    ParetoRecord r;
    r.step = step;
    r.loss = ev.loss;
    r.lambda_t = lambda_t;
    r.grad_sq_norm = squared_norm(ev.grad);
    r.err_sq_norm = squared_norm(e);
    double p = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) {
      const double v = ev.grad[i] + lambda_ * e[i];
      p += v * v;
    }
    r.pareto_sq_norm = p;
    records_.push_back(r);
  }

  void push(const ParetoRecord& r) { records_.push_back(r); }

 private:
  double lambda_;
  std::vector<ParetoRecord> records_;
};

/// Prefix means of a series.
inline std::vector<double> ergodic_series(std::span<const double> values) {
  require(!values.empty(), "ergodic_series: need at least one record");
  std::vector<double> out(values.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    sum += values[i];
    out[i] = sum / static_cast<double>(i + 1);
  }
  return out;
}

/// Prefix means of ‖∇_{λP}‖². The last entry is the expectation over a
/// uniformly drawn iterate.
inline std::vector<double> ergodic_series(const ParetoMeasure& measure) {
  std::vector<double> v;
  v.reserve(measure.size());
  for (const auto& r : measure.records()) v.push_back(r.pareto_sq_norm);
  return ergodic_series(v);
}

struct RateFit {
  double exponent = 0.0;   // slope p of log value vs log T
  double intercept = 0.0;  // log C
  double r_squared = 0.0;
};

/// Least-squares slope of log(value) against log(T).
inline RateFit rate_fit(std::span<const double> horizons, std::span<const double> values) {
  require(horizons.size() == values.size(), "rate_fit: horizons and values differ in length");
  require(horizons.size() >= 4, "rate_fit: need at least 4 horizons");
  double tmin = horizons[0], tmax = horizons[0];
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    require(horizons[i] > 0.0 && values[i] > 0.0, "rate_fit: horizons and values must be positive");
    tmin = std::min(tmin, horizons[i]);
    tmax = std::max(tmax, horizons[i]);
  }
  require(tmax / tmin >= 100.0 * (1.0 - 1e-12), "rate_fit: horizons must span at least two decades");

  const auto n = static_cast<double>(horizons.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    mx += std::log(horizons[i]);
    my += std::log(values[i]);
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    const double dx = std::log(horizons[i]) - mx;
    const double dy = std::log(values[i]) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  RateFit fit;
  fit.exponent = sxy / sxx;
  fit.intercept = my - fit.exponent * mx;
  fit.r_squared = syy == 0.0 ? 1.0 : (sxy * sxy) / (sxx * syy);
  return fit;
}

/// CSV with header step,loss,pareto_sq_norm,grad_sq_norm,err_sq_norm,lambda_t.
inline void write_trace_csv(std::ostream& os, const ParetoMeasure& measure) {
  os << "step,loss,pareto_sq_norm,grad_sq_norm,err_sq_norm,lambda_t\n";
  for (const auto& r : measure.records()) {
    os << r.step << ',' << format_double(r.loss) << ',' << format_double(r.pareto_sq_norm) << ','
       << format_double(r.grad_sq_norm) << ',' << format_double(r.err_sq_norm) << ',' << format_double(r.lambda_t)
       << '\n';
  }
}

}  // namespace cage
