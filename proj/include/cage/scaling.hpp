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

// Separable scaling law L(N, D, P) = A/(N·eff(P))^α + B/D^β + E, fitted by
// Levenberg–Marquardt on log-space residuals. Positive parameters are fitted
// through their logarithms and each eff through a logistic, so α, β > 0 and
// eff ∈ (0, 1) hold by construction; eff(FP) is pinned to 1.

#pragma once

#include "cage/numerics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace cage {

inline constexpr const char* kFullPrecision = "FP";

struct ScalingDatum {
  std::string method;
  std::string precision;  // bit-width label, or "FP"
  double N = 0.0;
  double D = 0.0;
  double loss = 0.0;

  bool is_full_precision() const { return precision == kFullPrecision; }
  auto key() const { return std::make_pair(method, precision); }
  auto sort_key() const { return std::tie(method, precision, N, D, loss); }
};

using EffKey = std::pair<std::string, std::string>;

struct ScalingFit {
  double A = 0.0, alpha = 0.0, B = 0.0, beta = 0.0, E = 0.0;
  std::map<EffKey, double> eff;
  double residual_rms = 0.0;
  std::vector<double> residuals;  // log(pred) − log(obs), in input order
  double objective = 0.0;         // residual sum of squares incl. priors
  std::size_t best_start = 0;
  std::size_t iterations = 0;
};

struct ScalingFitOptions {
  double prior_weight = 1e-3;
  std::size_t starts = 8;
  std::size_t max_iterations = 500;
  double step_tolerance = 1e-10;
  std::uint64_t seed = 20260101;
};

inline double predict_loss(double A, double alpha, double B, double beta, double E, double N, double D, double eff) {
  return A / std::pow(N * eff, alpha) + B / std::pow(D, beta) + E;
}

inline double predict_loss(const ScalingFit& fit, double N, double D, const std::string& method,
                           const std::string& precision) {
  double eff = 1.0;
  if (precision != kFullPrecision) {
    auto it = fit.eff.find({method, precision});
    if (it == fit.eff.end())
      throw std::out_of_range("predict_loss: no eff entry for (" + method + ", " + precision + ")");
    eff = it->second;
  }
  return predict_loss(fit.A, fit.alpha, fit.B, fit.beta, fit.E, N, D, eff);
}

namespace detail {

inline double logistic(double u) { return 1.0 / (1.0 + std::exp(-u)); }

/// Residuals and Jacobian of the log-space least-squares problem.
/// θ = (log A, log α, log B, log β, log E, u_1..u_G); rows = data, then the
/// two prior rows √w·log α and √w·log β.
class ScalingProblem {
 public:
  ScalingProblem(const std::vector<ScalingDatum>& data, const std::vector<int>& group, std::size_t n_groups,
                 double prior_weight)
      : data_(data), group_(group), n_groups_(n_groups), prior_sqrt_(std::sqrt(prior_weight)) {}

  Eigen::Index n_params() const { return static_cast<Eigen::Index>(5 + n_groups_); }
  Eigen::Index n_residuals() const { return static_cast<Eigen::Index>(data_.size() + 2); }

  void evaluate(const Eigen::VectorXd& th, Eigen::VectorXd& r, Eigen::MatrixXd* jac) const {
    const double A = std::exp(th(0)), alpha = std::exp(th(1)), B = std::exp(th(2)), beta = std::exp(th(3)),
                 E = std::exp(th(4));
    r.resize(n_residuals());
    if (jac) jac->setZero(n_residuals(), n_params());
    for (std::size_t i = 0; i < data_.size(); ++i) {
      const auto& d = data_[i];
      const int g = group_[i];
      const double eff = g < 0 ? 1.0 : logistic(th(5 + g));
      const double log_neff = std::log(d.N) + std::log(eff);
      const double t1 = A * std::exp(-alpha * log_neff);
      const double t2 = B * std::exp(-beta * std::log(d.D));
      const double pred = t1 + t2 + E;
      const auto row = static_cast<Eigen::Index>(i);
      r(row) = std::log(pred) - std::log(d.loss);
      if (jac) {
        auto& J = *jac;
        J(row, 0) = t1 / pred;
        J(row, 1) = -t1 * alpha * log_neff / pred;
        J(row, 2) = t2 / pred;
        J(row, 3) = -t2 * beta * std::log(d.D) / pred;
        J(row, 4) = E / pred;
        if (g >= 0) J(row, 5 + g) = -t1 * alpha * (1.0 - eff) / pred;
      }
    }
    const auto p = static_cast<Eigen::Index>(data_.size());
    r(p) = prior_sqrt_ * th(1);
    r(p + 1) = prior_sqrt_ * th(3);
    if (jac) {
      (*jac)(p, 1) = prior_sqrt_;
      (*jac)(p + 1, 3) = prior_sqrt_;
    }
  }

 private:
  const std::vector<ScalingDatum>& data_;
  const std::vector<int>& group_;
  std::size_t n_groups_;
  double prior_sqrt_;
};

struct LmOutcome {
  Eigen::VectorXd theta;
  double cost = 0.0;
  std::size_t iterations = 0;
};

inline LmOutcome levenberg_marquardt(const ScalingProblem& prob, Eigen::VectorXd theta, std::size_t max_iterations,
                                     double step_tolerance) {
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  prob.evaluate(theta, r, &J);
  double cost = r.squaredNorm();
  double mu = 1e-3;
  std::size_t it = 0;
  Eigen::VectorXd r_new;
  for (; it < max_iterations; ++it) {
    const Eigen::MatrixXd jtj = J.transpose() * J;
    const Eigen::VectorXd jtr = J.transpose() * r;
    Eigen::MatrixXd lhs = jtj;
    for (Eigen::Index k = 0; k < lhs.rows(); ++k) lhs(k, k) += mu * std::max(jtj(k, k), 1e-12);
    const Eigen::VectorXd step = lhs.ldlt().solve(-jtr);
    if (!step.allFinite()) {
      mu *= 10.0;
      if (mu > 1e16) break;
      continue;
    }
    const Eigen::VectorXd candidate = theta + step;
    prob.evaluate(candidate, r_new, nullptr);
    const double new_cost = r_new.allFinite() ? r_new.squaredNorm() : std::numeric_limits<double>::infinity();
    if (new_cost < cost) {
      theta = candidate;
      cost = new_cost;
      prob.evaluate(theta, r, &J);
      mu = std::max(mu / 3.0, 1e-12);
      if (step.norm() < step_tolerance) {
        ++it;
        break;
      }
    } else {
      mu *= 4.0;
      if (step.norm() < step_tolerance || mu > 1e16) {
        ++it;
        break;
      }
    }
  }
  return {std::move(theta), cost, it};
}

}  // namespace detail

/// Fits the shared law and per-(method, precision) eff. Input order does not
/// affect the result: data is put in canonical order before fitting.
inline ScalingFit fit_scaling(const std::vector<ScalingDatum>& input, const ScalingFitOptions& opts = {}) {
  require(opts.starts >= 1, "fit_scaling: need at least one start");
  require(opts.prior_weight >= 0.0, "fit_scaling: prior_weight must be non-negative");
  for (const auto& d : input) {
    require(d.N > 0.0 && d.D > 0.0, "fit_scaling: N and D must be positive");
    require(d.loss > 0.0, "fit_scaling: loss must be positive");
  }

  std::set<double> ns, ds;
  std::map<EffKey, std::size_t> counts;
  bool has_fp = false;
  for (const auto& d : input) {
    ns.insert(d.N);
    ds.insert(d.D);
    counts[d.key()] += 1;
    has_fp = has_fp || d.is_full_precision();
  }
  require(ns.size() >= 2, "fit_scaling: need at least 2 distinct N (parameter count)");
  require(ds.size() >= 2, "fit_scaling: need at least 2 distinct D (token count)");
  require(has_fp, "fit_scaling: need a full-precision (P=FP) group");
  for (const auto& [key, n] : counts)
    require(n >= 2, ("fit_scaling: group (" + key.first + ", " + key.second + ") needs at least 2 points").c_str());

  std::vector<ScalingDatum> data = input;
  std::sort(data.begin(), data.end(), [](const auto& a, const auto& b) { return a.sort_key() < b.sort_key(); });

  std::map<EffKey, int> group_index;
  for (const auto& [key, n] : counts)
    if (key.second != kFullPrecision) group_index.emplace(key, static_cast<int>(group_index.size()));
  std::vector<int> group(data.size());
  for (std::size_t i = 0; i < data.size(); ++i)
    group[i] = data[i].is_full_precision() ? -1 : group_index.at(data[i].key());

  double min_loss = data.front().loss;
  for (const auto& d : data) min_loss = std::min(min_loss, d.loss);

  const detail::ScalingProblem prob(data, group, group_index.size(), opts.prior_weight);
  const Rng base(opts.seed);
  detail::LmOutcome best;
  std::size_t best_start = 0;
  bool have_best = false;
  for (std::size_t s = 0; s < opts.starts; ++s) {
    Rng rng = base.split(s);
    Eigen::VectorXd th(prob.n_params());
    th(0) = std::log(rng.uniform(0.1, 10.0));
    th(1) = std::log(rng.uniform(0.1, 0.8));
    th(2) = std::log(rng.uniform(0.1, 10.0));
    th(3) = std::log(rng.uniform(0.1, 0.8));
    th(4) = std::log(min_loss * rng.uniform(0.3, 0.95));
    for (Eigen::Index g = 5; g < th.size(); ++g) th(g) = rng.uniform(-1.0, 3.0);
    detail::LmOutcome out = detail::levenberg_marquardt(prob, th, opts.max_iterations, opts.step_tolerance);
    if (!std::isfinite(out.cost)) continue;
    if (!have_best || out.cost < best.cost) {
      best = std::move(out);
      best_start = s;
      have_best = true;
    }
  }
  if (!have_best) throw NumericalFailure("fit_scaling: every start diverged");

  ScalingFit fit;
  fit.A = std::exp(best.theta(0));
  fit.alpha = std::exp(best.theta(1));
  fit.B = std::exp(best.theta(2));
  fit.beta = std::exp(best.theta(3));
  fit.E = std::exp(best.theta(4));
  fit.objective = best.cost;
  fit.best_start = best_start;
  fit.iterations = best.iterations;
  for (const auto& [key, n] : counts)
    fit.eff[key] = key.second == kFullPrecision ? 1.0 : detail::logistic(best.theta(5 + group_index.at(key)));

  double ss = 0.0;
  fit.residuals.reserve(input.size());
  for (const auto& d : input) {
    const double res = std::log(predict_loss(fit, d.N, d.D, d.method, d.precision)) - std::log(d.loss);
    fit.residuals.push_back(res);
    ss += res * res;
  }
  fit.residual_rms = std::sqrt(ss / static_cast<double>(input.size()));
  return fit;
}

// -----------------------------------------------------------------------------
// I/O

/// Parses `method,P,N,D,loss` CSV (header required). Errors carry the line number.
inline std::vector<ScalingDatum> read_scaling_csv(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<ScalingDatum> out;
  bool header = false;
  auto fail = [&](const std::string& why) {
    throw ContractViolation("scaling csv line " + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!header) {
      if (cells != std::vector<std::string>{"method", "P", "N", "D", "loss"})
        fail("expected header 'method,P,N,D,loss'");
      header = true;
      continue;
    }
    if (cells.size() != 5) fail("expected 5 columns, got " + std::to_string(cells.size()));
    ScalingDatum d;
    d.method = cells[0];
    d.precision = cells[1];
    try {
      std::size_t pos = 0;
      d.N = std::stod(cells[2], &pos);
      if (pos != cells[2].size()) fail("bad N '" + cells[2] + "'");
      d.D = std::stod(cells[3], &pos);
      if (pos != cells[3].size()) fail("bad D '" + cells[3] + "'");
      d.loss = std::stod(cells[4], &pos);
      if (pos != cells[4].size()) fail("bad loss '" + cells[4] + "'");
    } catch (const std::logic_error&) {
      fail("non-numeric field");
    }
    if (d.method.empty() || d.precision.empty()) fail("empty method or P");
    if (!(d.N > 0 && d.D > 0 && d.loss > 0)) fail("N, D and loss must be positive");
    out.push_back(std::move(d));
  }
  if (!header) throw ContractViolation("scaling csv: missing header");
  return out;
}

inline nlohmann::json to_json(const ScalingFit& fit, const std::vector<ScalingDatum>& data) {
  nlohmann::json j;
  j["A"] = fit.A;
  j["alpha"] = fit.alpha;
  j["B"] = fit.B;
  j["beta"] = fit.beta;
  j["E"] = fit.E;
  j["residual_rms"] = fit.residual_rms;
  j["objective"] = fit.objective;
  j["best_start"] = fit.best_start;
  nlohmann::json eff = nlohmann::json::array();
  for (const auto& [key, v] : fit.eff) eff.push_back({{"method", key.first}, {"P", key.second}, {"eff", v}});
  j["eff"] = eff;
  nlohmann::json pts = nlohmann::json::array();
  for (std::size_t i = 0; i < data.size() && i < fit.residuals.size(); ++i)
    pts.push_back({{"method", data[i].method},
                   {"P", data[i].precision},
                   {"N", data[i].N},
                   {"D", data[i].D},
                   {"loss", data[i].loss},
                   {"residual", fit.residuals[i]}});
  j["points"] = pts;
  return j;
}

}  // namespace cage
