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

// Experiment drivers shared by the command-line tool and the acceptance suite.

#pragma once

#include "cage/config.hpp"
#include "cage/numerics.hpp"
#include "cage/objectives.hpp"
#include "cage/optim.hpp"
#include "cage/pareto.hpp"
#include "cage/qat_grad.hpp"
#include "cage/quantize.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace cage {

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
/// written by index so the output does not depend on scheduling. The
/// exception from the lowest failing index is rethrown.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_index = n;
  std::exception_ptr failure;
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard<std::mutex> lock(mu);
            if (i < failed_index) {
              failed_index = i;
              failure = std::current_exception();
            }
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

inline std::size_t default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Parses "scheme[:arg]": int-hadamard:4, int-plain:8, mxfp4[:block], floor[:step], none.
inline QuantSpec parse_quant(const std::string& text, std::size_t row_length) {
  const auto colon = text.find(':');
  const std::string name = text.substr(0, colon);
  const std::string arg = colon == std::string::npos ? "" : text.substr(colon + 1);
  QuantSpec spec;
  try {
    spec.scheme = parse_scheme(name);
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
  auto number = [&](double fallback) {
    if (arg.empty()) return fallback;
    try {
      std::size_t pos = 0;
      const double v = std::stod(arg, &pos);
      if (pos == arg.size()) return v;
    } catch (const std::logic_error&) {
    }
    throw ConfigError("bad quantizer argument in '" + text + "'");
  };
  switch (spec.scheme) {
    case Scheme::IntHadamard:
    case Scheme::IntPlain: {
      const double bits = number(4);
      if (bits != std::floor(bits) || bits < 2 || bits > 8) throw ConfigError("quantizer bits must be in [2, 8]");
      return make_int_spec(spec.scheme, static_cast<int>(bits), row_length);
    }
    case Scheme::Mxfp4: {
      const double block = number(32);
      if (block < 1 || block != std::floor(block)) throw ConfigError("mxfp4 block size must be a positive integer");
      spec.block_size = static_cast<std::size_t>(block);
      break;
    }
    case Scheme::FloorToy: spec.grid_step = number(1.0); break;
    case Scheme::Identity: break;
  }
  spec.validate();
  return spec;
}

inline nlohmann::json to_json(const QuantSpec& s) {
  nlohmann::json j{{"scheme", to_string(s.scheme)}};
  if (s.is_int()) {
    j["bits"] = s.bits;
    j["clip_factor"] = s.clip_factor;
    j["row_length"] = s.row_length;
  } else if (s.scheme == Scheme::Mxfp4) {
    j["block_size"] = s.block_size;
  } else if (s.scheme == Scheme::FloorToy) {
    j["grid_step"] = s.grid_step;
  }
  return j;
}

inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

/// Sample standard deviation (n − 1); zero for fewer than two values.
inline double stddev_of(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline void check_finite(std::span<const double> x, const char* where) {
  if (!all_finite(x)) throw NumericalFailure(std::string(where) + ": non-finite iterate");
}

// =============================================================================
// Clip calibration

inline std::vector<ClipCalibration> run_calibrate_clip(const std::vector<int>& bits, std::size_t n_grid = 221,
                                                       std::size_t quadrature = 20000, std::size_t threads = 1) {
  for (int b : bits)
    if (b < 2 || b > 8) throw ConfigError("calibrate-clip: bits must be in [2, 8], got " + std::to_string(b));
  std::vector<ClipCalibration> rows(bits.size());
  parallel_for(bits.size(), threads, [&](std::size_t i) { rows[i] = calibrate_clip(bits[i], n_grid, quadrature); });
  return rows;
}

// =============================================================================
// Toy Pareto problem: f(x) = ½(x − ½)², Q = ⌊·⌋, CAGE-SGD from x₀.

struct ToyParetoConfig {
  std::vector<double> lambdas{0.5, 1.0, 2.0, 3.0};
  double lr = 0.05;
  std::size_t steps = 5000;
  double x0 = 0.9;
  bool keep_trace = true;
};

struct ToyParetoRun {
  double lambda = 0.0;
  double final_x = 0.0;
  double expected_x = 0.0;   // 1/(2(1+λ))
  double pareto_grad = 0.0;  // ∇f(x) + λ(x − ⌊x⌋) at the final iterate
  double ste_grad = 0.0;     // ∇f(⌊x⌋)
  ParetoMeasure trace;
};

inline std::vector<ToyParetoRun> run_toy_pareto(const ToyParetoConfig& cfg) {
  require(cfg.lr > 0.0, "toy-pareto: lr must be positive");
  const Objective f = toy_scalar();
  QuantSpec floor_spec;
  floor_spec.scheme = Scheme::FloorToy;
  std::vector<ToyParetoRun> runs;
  for (double lambda : cfg.lambdas) {
    require(lambda >= 0.0, "toy-pareto: lambda must be non-negative");
    ToyParetoRun run;
    run.lambda = lambda;
    run.expected_x = 1.0 / (2.0 * (1.0 + lambda));
    run.trace = ParetoMeasure(lambda);
    Vector x{cfg.x0};
    if (cfg.keep_trace) run.trace.reserve(cfg.steps);
    for (std::size_t t = 0; t < cfg.steps; ++t) {
      if (cfg.keep_trace) run.trace.record(t, f, floor_spec, x, lambda);
      const Vector e = quant_error(floor_spec, x);
      x = cage_sgd_step(x, f.grad(x), e, cfg.lr, lambda);
      check_finite(x, "toy-pareto");
    }
    run.final_x = x[0];
    run.pareto_grad = pareto_gradient(f, floor_spec, x, lambda)[0];
    run.ste_grad = f.grad(apply_quantizer(floor_spec, x))[0];
    runs.push_back(std::move(run));
  }
  return runs;
}

inline nlohmann::json to_json(const std::vector<ToyParetoRun>& runs, const ToyParetoConfig& cfg) {
  nlohmann::json j;
  j["lr"] = cfg.lr;
  j["steps"] = cfg.steps;
  j["x0"] = cfg.x0;
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : runs)
    arr.push_back({{"lambda", r.lambda},
                   {"final_x", r.final_x},
                   {"expected_x", r.expected_x},
                   {"abs_pareto_grad", std::abs(r.pareto_grad)},
                   {"ste_grad", r.ste_grad}});
  j["runs"] = arr;
  return j;
}

// =============================================================================
// Quadratic landscapes under a quantized forward pass.

struct QuadraticConfig {
  std::vector<double> kappas{1.0, 10.0, 100.0};
  std::size_t dim = 64;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<OptimizerKind> optimizers{OptimizerKind::Sgd, OptimizerKind::AdamW,
                                        OptimizerKind::CageAdamWDecoupled};
  std::size_t steps = 2000;
  std::string quant = "int-hadamard:4";
  std::size_t row_length = 0;  // 0: one row spanning the whole vector
  SteKind ste = SteKind::TrustMasked;
  double lr = 1e-2;
  double sgd_lr = 0.0;  // 0: 2/(μ+L) from the spectrum of A
  double lambda = 2.0;
  double silence_ratio = 0.9;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double grad_clip = 0.0;  // 0: off
  bool cosine = false;
  double warmup_frac = 0.1;
  double init_std = 1.0;
  ErrorTiming error_timing = ErrorTiming::PostDecay;
  bool keep_trajectories = true;
  std::size_t threads = 1;
};

struct QuadraticRun {
  double kappa = 0.0;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  std::uint64_t seed = 0;
  double final_gap = 0.0;        // f(Q(x_T)) − f★
  double final_gap_float = 0.0;  // f(x_T) − f★
  std::vector<Vector> trajectory;  // x_1..x_T, representative seed only
};

struct QuadraticCell {
  double kappa = 0.0;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  std::vector<double> gaps;  // seed order
  double mean = 0.0;
  double std = 0.0;
};

struct QuadraticTrajectories {
  double kappa = 0.0;
  std::uint64_t seed = 0;
  Vector pc_minimizer;  // x★ in PC coordinates
  std::map<OptimizerKind, std::vector<Vector>> projected;
};

struct QuadraticResult {
  QuantSpec quant;
  std::vector<QuadraticRun> runs;
  std::vector<QuadraticCell> cells;
  std::vector<QuadraticTrajectories> trajectories;

  const QuadraticCell& cell(double kappa, OptimizerKind opt) const {
    for (const auto& c : cells)
      if (c.kappa == kappa && c.optimizer == opt) return c;
    throw std::out_of_range("QuadraticResult: no such cell");
  }
};

struct QuadraticProblem {
  Objective base;
  Vector x0;
  double mu = 1.0;
  double L = 1.0;
};

/// Problem instance for (κ, seed); shared by every optimizer so runs pair up.
inline QuadraticProblem make_quadratic_problem(std::size_t dim, double kappa, std::uint64_t seed, double init_std) {
  Rng rng = Rng(seed).split(std::bit_cast<std::uint64_t>(kappa));
  Matrix a = make_spd(dim, kappa, rng);
  Vector b = gaussian_vector(dim, 0.0, 1.0, rng);
  Vector x0 = gaussian_vector(dim, 0.0, init_std, rng);
  const auto evals = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(a.to_eigen(), Eigen::EigenvaluesOnly).eigenvalues();
  QuadraticProblem p{quadratic(std::move(a), std::move(b)), std::move(x0), evals.minCoeff(), evals.maxCoeff()};
  return p;
}

inline QuadraticRun run_quadratic_single(const QuadraticConfig& cfg, const QuantSpec& spec, double kappa,
                                         OptimizerKind opt, std::uint64_t seed, bool keep_trajectory) {
  const QuadraticProblem prob = make_quadratic_problem(cfg.dim, kappa, seed, cfg.init_std);
  StePolicy policy;
  policy.spec = spec;
  policy.kind = spec.is_int() ? cfg.ste : SteKind::Identity;
  const Objective qobj = quantized_objective(prob.base, spec, policy);
  const double sgd_lr = cfg.sgd_lr > 0.0 ? cfg.sgd_lr : 2.0 / (prob.mu + prob.L);

  OptimConfig oc;
  oc.beta1 = cfg.beta1;
  oc.beta2 = cfg.beta2;
  oc.eps = cfg.eps;
  oc.weight_decay = cfg.weight_decay;
  oc.lambda = cfg.lambda;
  oc.silence_ratio = cfg.silence_ratio;
  oc.total_steps = cfg.steps;
  oc.error_timing = cfg.error_timing;
  const LambdaSchedule sched(oc);
  auto error_of = [&spec](std::span<const double> x) { return quant_error(spec, x); };

  QuadraticRun run;
  run.kappa = kappa;
  run.optimizer = opt;
  run.seed = seed;
  if (keep_trajectory) run.trajectory.reserve(cfg.steps);
  AdamState state(cfg.dim);
  Vector x = prob.x0;
  for (std::size_t t = 1; t <= cfg.steps; ++t) {
    const double scale = cfg.cosine ? cosine_lr(1.0, t, cfg.steps, cfg.warmup_frac) : 1.0;
    oc.lr = cfg.lr * scale;
    Vector g = qobj.grad(x);
    if (cfg.grad_clip > 0.0) g = grad_clip(g, cfg.grad_clip);
    switch (opt) {
      case OptimizerKind::Sgd: x = sgd_step(x, g, sgd_lr * scale); break;
      case OptimizerKind::CageSgd: x = cage_sgd_step(x, g, error_of(x), sgd_lr * scale, sched.at(t)); break;
      case OptimizerKind::AdamW: x = adamw_step(state, x, g, oc); break;
      case OptimizerKind::CageAdamWDecoupled: x = cage_adamw_decoupled_step(state, x, g, error_of, oc, t); break;
      case OptimizerKind::CageAdamWCoupled: x = cage_adamw_coupled_step(state, x, g, error_of, oc, t); break;
    }
    check_finite(x, "quadratic");
    if (keep_trajectory) run.trajectory.push_back(x);
  }
  const double fstar = *prob.base.minimum();
  run.final_gap = prob.base.loss(apply_quantizer(spec, x)) - fstar;
  run.final_gap_float = prob.base.loss(x) - fstar;
  return run;
}

inline QuadraticResult run_quadratic(const QuadraticConfig& cfg) {
  require(!cfg.seeds.empty(), "quadratic: need at least one seed");
  require(cfg.steps >= 1, "quadratic: steps must be positive");
  QuadraticResult result;
  result.quant = parse_quant(cfg.quant, cfg.row_length == 0 ? cfg.dim : cfg.row_length);

  struct Job {
    double kappa;
    OptimizerKind opt;
    std::uint64_t seed;
    bool representative;
  };
  std::vector<Job> jobs;
  for (double kappa : cfg.kappas)
    for (auto opt : cfg.optimizers)
      for (std::size_t s = 0; s < cfg.seeds.size(); ++s)
        jobs.push_back({kappa, opt, cfg.seeds[s], cfg.keep_trajectories && s == 0});

  result.runs.resize(jobs.size());
  parallel_for(jobs.size(), cfg.threads, [&](std::size_t i) {
    const Job& j = jobs[i];
    result.runs[i] = run_quadratic_single(cfg, result.quant, j.kappa, j.opt, j.seed, j.representative);
  });

  std::size_t idx = 0;
  for (double kappa : cfg.kappas) {
    QuadraticTrajectories traj;
    traj.kappa = kappa;
    traj.seed = cfg.seeds.front();
    std::vector<Vector> cloud;
    for (auto opt : cfg.optimizers) {
      QuadraticCell cell;
      cell.kappa = kappa;
      cell.optimizer = opt;
      for (std::size_t s = 0; s < cfg.seeds.size(); ++s, ++idx) {
        cell.gaps.push_back(result.runs[idx].final_gap);
        if (!result.runs[idx].trajectory.empty())
          cloud.insert(cloud.end(), result.runs[idx].trajectory.begin(), result.runs[idx].trajectory.end());
      }
      cell.mean = mean_of(cell.gaps);
      cell.std = stddev_of(cell.gaps);
      result.cells.push_back(std::move(cell));
    }
    if (cfg.keep_trajectories && cloud.size() >= 2) {
      const QuadraticProblem prob = make_quadratic_problem(cfg.dim, kappa, traj.seed, cfg.init_std);
      const PcaResult pca = pca_project(cloud, std::min<std::size_t>(2, cfg.dim));
      auto project = [&](const Vector& x) {
        const Vector c = subtract(x, pca.mean);
        Vector p;
        for (const auto& comp : pca.components) p.push_back(dot(c, comp));
        return p;
      };
      traj.pc_minimizer = project(*prob.base.minimizer());
      for (const auto& run : result.runs) {
        if (run.kappa != kappa || run.trajectory.empty()) continue;
        std::vector<Vector> pts;
        pts.reserve(run.trajectory.size());
        for (const auto& x : run.trajectory) pts.push_back(project(x));
        traj.projected[run.optimizer] = std::move(pts);
      }
      result.trajectories.push_back(std::move(traj));
    }
  }
  return result;
}

inline nlohmann::json to_json(const QuadraticResult& r) {
  nlohmann::json j;
  j["quant"] = to_json(r.quant);
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"kappa", c.kappa},
                     {"optimizer", to_string(c.optimizer)},
                     {"mean_gap", c.mean},
                     {"std_gap", c.std},
                     {"gaps", c.gaps}});
  }
  j["cells"] = cells;
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : r.runs)
    runs.push_back({{"kappa", run.kappa},
                    {"optimizer", to_string(run.optimizer)},
                    {"seed", run.seed},
                    {"final_gap", run.final_gap},
                    {"final_gap_unquantized", run.final_gap_float}});
  j["runs"] = runs;
  return j;
}

// =============================================================================
// Ergodic convergence of CAGE-SGD to a λ-Pareto point.

struct ConvergenceConfig {
  std::string objective = "rosenbrock";  // rosenbrock | quadratic
  std::size_t dim = 10;
  double kappa = 10.0;                   // quadratic only
  std::uint64_t problem_seed = 12345;    // quadratic only
  std::string quant = "floor:0.25";
  double lambda = 1.0;
  double noise_std = 0.1;
  std::vector<std::size_t> horizons{100, 1000, 10000, 100000};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  double lipschitz = 0.0;  // 0: estimate (quadratic) or the Rosenbrock default
  double init_mean = 0.0;
  double init_std = 0.5;
  bool keep_traces = false;
  std::size_t threads = 1;
};

/// L̂ used for Rosenbrock: the Hessian's largest eigenvalue near the
/// minimizer is about 1002 for the chained form.
inline constexpr double kRosenbrockLipschitz = 1000.0;

struct ConvergenceRun {
  std::size_t horizon = 0;
  std::uint64_t seed = 0;
  double step_size = 0.0;
  double ergodic_mean = 0.0;  // (1/T) Σ_{t<T} ‖∇_{λP} f(Q(x_t))‖²
  ParetoMeasure trace;
};

struct ConvergenceResult {
  QuantSpec quant;
  double lipschitz = 0.0;
  std::vector<std::size_t> horizons;
  std::vector<double> mean_ergodic;  // seed-averaged, per horizon
  std::vector<ConvergenceRun> runs;  // horizon-major
  RateFit fit;
};

inline Objective make_convergence_objective(const ConvergenceConfig& cfg) {
  if (cfg.objective == "rosenbrock") return rosenbrock(cfg.dim);
  if (cfg.objective == "quadratic") {
    Rng rng(cfg.problem_seed);
    Matrix a = make_spd(cfg.dim, cfg.kappa, rng);
    Vector b = gaussian_vector(cfg.dim, 0.0, 1.0, rng);
    return quadratic(std::move(a), std::move(b));
  }
  throw ConfigError("convergence: unknown objective '" + cfg.objective + "'");
}

/// L̂ = L_f + λ·L_φ with L_φ taken as 1 (slope of x − Q(x) between jumps).
inline double estimate_lipschitz(const ConvergenceConfig& cfg, const Objective& obj) {
  if (cfg.lipschitz > 0.0) return cfg.lipschitz;
  if (cfg.objective == "quadratic") {
    Rng rng(cfg.problem_seed);
    const Matrix a = make_spd(cfg.dim, cfg.kappa, rng);
    return power_iteration_max_eig(a) + cfg.lambda;
  }
  (void)obj;
  return kRosenbrockLipschitz;
}

inline ConvergenceRun run_convergence_single(const Objective& obj, const QuantSpec& spec, const ConvergenceConfig& cfg,
                                             double lipschitz, std::size_t horizon, std::uint64_t seed) {
  ConvergenceRun run;
  run.horizon = horizon;
  run.seed = seed;
  run.step_size = std::min(1.0 / lipschitz, 1.0 / std::sqrt(static_cast<double>(horizon)));
  run.trace = ParetoMeasure(cfg.lambda);
  const Rng base(seed);
  Rng init = base.split(0);
  Rng noise = base.split(1);
  Vector x = gaussian_vector(obj.dim(), cfg.init_mean, cfg.init_std, init);
  if (cfg.keep_traces) run.trace.reserve(horizon);
  double sum = 0.0;
  Vector gt(obj.dim());
  for (std::size_t t = 0; t < horizon; ++t) {
    const Evaluation ev = obj(x);
    const Vector e = quant_error(spec, x);
    double p = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double v = ev.grad[i] + cfg.lambda * e[i];
      p += v * v;
    }
    sum += p;
    if (cfg.keep_traces)
      run.trace.push({t, ev.loss, p, squared_norm(ev.grad), squared_norm(e), cfg.lambda});
    for (std::size_t i = 0; i < x.size(); ++i) gt[i] = ev.grad[i] + cfg.noise_std * noise.normal();
    x = cage_sgd_step(x, gt, e, run.step_size, cfg.lambda);
    check_finite(x, "convergence");
  }
  run.ergodic_mean = sum / static_cast<double>(horizon);
  return run;
}

inline ConvergenceResult run_convergence(const ConvergenceConfig& cfg) {
  require(!cfg.seeds.empty(), "convergence: need at least one seed");
  require(cfg.lambda >= 0.0 && cfg.noise_std >= 0.0, "convergence: lambda and noise_std must be non-negative");
  const Objective obj = make_convergence_objective(cfg);
  ConvergenceResult result;
  result.quant = parse_quant(cfg.quant, cfg.dim);
  result.lipschitz = estimate_lipschitz(cfg, obj);
  result.horizons = cfg.horizons;

  const std::size_t n_seeds = cfg.seeds.size();
  result.runs.resize(cfg.horizons.size() * n_seeds);
  parallel_for(result.runs.size(), cfg.threads, [&](std::size_t i) {
    result.runs[i] = run_convergence_single(obj, result.quant, cfg, result.lipschitz, cfg.horizons[i / n_seeds],
                                            cfg.seeds[i % n_seeds]);
  });
  for (std::size_t h = 0; h < cfg.horizons.size(); ++h) {
    double s = 0.0;
    for (std::size_t k = 0; k < n_seeds; ++k) s += result.runs[h * n_seeds + k].ergodic_mean;
    result.mean_ergodic.push_back(s / static_cast<double>(n_seeds));
  }
  std::vector<double> ts(cfg.horizons.begin(), cfg.horizons.end());
  result.fit = rate_fit(ts, result.mean_ergodic);
  return result;
}

inline nlohmann::json to_json(const ConvergenceResult& r) {
  nlohmann::json j;
  j["quant"] = to_json(r.quant);
  j["lipschitz"] = r.lipschitz;
  j["horizons"] = r.horizons;
  j["mean_ergodic_pareto_sq_norm"] = r.mean_ergodic;
  j["rate_exponent"] = r.fit.exponent;
  j["rate_intercept"] = r.fit.intercept;
  j["rate_r_squared"] = r.fit.r_squared;
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : r.runs)
    runs.push_back({{"horizon", run.horizon},
                    {"seed", run.seed},
                    {"step_size", run.step_size},
                    {"ergodic_mean", run.ergodic_mean}});
  j["runs"] = runs;
  return j;
}

// =============================================================================
// Config defaults and conversion, one set per subcommand.

inline std::map<std::string, std::string> default_settings(const std::string& subcommand) {
  std::map<std::string, std::string> common{{"out", "."}, {"threads", "0"}};
  std::map<std::string, std::string> s;
  if (subcommand == "calibrate-clip") {
    s = {{"bits", "2,3,4"}, {"n_grid", "221"}, {"quadrature", "20000"}, {"seed", "0"}};
  } else if (subcommand == "toy-pareto") {
    s = {{"lambda", "0.5,1,2,3"}, {"lr", "0.05"}, {"steps", "5000"}, {"x0", "0.9"}, {"traces", "true"}, {"seed", "0"}};
  } else if (subcommand == "quadratic") {
    s = {{"kappa", "1,10,100"},      {"dim", "64"},           {"seed", "0-9"},
         {"opt", "sgd,adamw,cage-adamw-dec"},                 {"steps", "2000"},
         {"quant", "int-hadamard:4"}, {"row_length", "0"},    {"ste", "trust-masked"},
         {"lr", "0.01"},             {"sgd_lr", "auto"},      {"lambda", "2"},
         {"silence_ratio", "0.9"},   {"weight_decay", "0"},   {"beta1", "0.9"},
         {"beta2", "0.95"},          {"eps", "1e-8"},         {"grad_clip", "0"},
         {"lr_schedule", "constant"}, {"warmup_frac", "0.1"}, {"init_std", "1"},
         {"error_timing", "post-decay"}, {"traces", "true"}};
  } else if (subcommand == "convergence") {
    s = {{"objective", "rosenbrock"}, {"dim", "10"},          {"kappa", "10"},
         {"problem_seed", "12345"},   {"quant", "floor:0.25"}, {"lambda", "1"},
         {"noise_std", "0.1"},        {"horizons", "100,1000,10000,100000"},
         {"seed", "0-9"},             {"lipschitz", "auto"},   {"init_mean", "0"},
         {"init_std", "0.5"},         {"traces", "false"}};
  } else if (subcommand == "fit-scaling") {
    s = {{"input", ""}, {"prior_weight", "1e-3"}, {"starts", "8"}, {"max_iterations", "500"}, {"seed", "20260101"}};
  } else {
    throw ConfigError("unknown subcommand '" + subcommand + "'");
  }
  s.insert(common.begin(), common.end());
  return s;
}

inline std::size_t config_threads(const ExperimentConfig& c) {
  const std::size_t t = c.get_size("threads");
  return t == 0 ? default_threads() : t;
}

inline ToyParetoConfig toy_pareto_config(const ExperimentConfig& c) {
  ToyParetoConfig cfg;
  cfg.lambdas = c.get_double_list("lambda");
  for (double l : cfg.lambdas)
    if (!(l >= 0.0)) throw ConfigError("toy-pareto: lambda entries must be non-negative");
  cfg.lr = c.get_double("lr");
  cfg.steps = c.get_size("steps");
  cfg.x0 = c.get_double("x0");
  cfg.keep_trace = c.get_bool("traces");
  if (!(cfg.lr > 0.0)) throw ConfigError("toy-pareto: lr must be positive");
  return cfg;
}

inline QuadraticConfig quadratic_config(const ExperimentConfig& c) {
  QuadraticConfig cfg;
  cfg.kappas = c.get_double_list("kappa");
  for (double k : cfg.kappas)
    if (!(k >= 1.0)) throw ConfigError("quadratic: kappa must be >= 1");
  cfg.dim = c.get_size("dim");
  if (cfg.dim < 2) throw ConfigError("quadratic: dim must be at least 2");
  cfg.seeds = c.get_seed_list("seed");
  cfg.optimizers.clear();
  for (const auto& o : c.get_list("opt")) {
    try {
      cfg.optimizers.push_back(parse_optimizer(o));
    } catch (const ContractViolation& e) {
      throw ConfigError(e.what());
    }
  }
  if (cfg.optimizers.empty()) throw ConfigError("quadratic: need at least one optimizer");
  cfg.steps = c.get_size("steps");
  if (cfg.steps == 0) throw ConfigError("quadratic: steps must be positive");
  cfg.quant = c.get("quant");
  cfg.row_length = c.get_size("row_length");
  try {
    cfg.ste = parse_ste_kind(c.get("ste"));
    cfg.error_timing = parse_error_timing(c.get("error_timing"));
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
  cfg.lr = c.get_double("lr");
  cfg.sgd_lr = c.get("sgd_lr") == "auto" ? 0.0 : c.get_double("sgd_lr");
  cfg.lambda = c.get_double("lambda");
  cfg.silence_ratio = c.get_double("silence_ratio");
  cfg.weight_decay = c.get_double("weight_decay");
  cfg.beta1 = c.get_double("beta1");
  cfg.beta2 = c.get_double("beta2");
  cfg.eps = c.get_double("eps");
  cfg.grad_clip = c.get_double("grad_clip");
  const auto& sched = c.get("lr_schedule");
  if (sched != "constant" && sched != "cosine") throw ConfigError("quadratic: lr_schedule must be constant or cosine");
  cfg.cosine = sched == "cosine";
  cfg.warmup_frac = c.get_double("warmup_frac");
  cfg.init_std = c.get_double("init_std");
  cfg.keep_trajectories = c.get_bool("traces");
  cfg.threads = config_threads(c);
  OptimConfig probe;
  probe.lr = cfg.lr;
  probe.beta1 = cfg.beta1;
  probe.beta2 = cfg.beta2;
  probe.eps = cfg.eps;
  probe.weight_decay = cfg.weight_decay;
  probe.lambda = cfg.lambda;
  probe.silence_ratio = cfg.silence_ratio;
  try {
    probe.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

inline ConvergenceConfig convergence_config(const ExperimentConfig& c) {
  ConvergenceConfig cfg;
  cfg.objective = c.get("objective");
  cfg.dim = c.get_size("dim");
  cfg.kappa = c.get_double("kappa");
  cfg.problem_seed = c.get_size("problem_seed");
  cfg.quant = c.get("quant");
  cfg.lambda = c.get_double("lambda");
  cfg.noise_std = c.get_double("noise_std");
  cfg.horizons = c.get_size_list("horizons");
  cfg.seeds = c.get_seed_list("seed");
  cfg.lipschitz = c.get("lipschitz") == "auto" ? 0.0 : c.get_double("lipschitz");
  cfg.init_mean = c.get_double("init_mean");
  cfg.init_std = c.get_double("init_std");
  cfg.keep_traces = c.get_bool("traces");
  cfg.threads = config_threads(c);
  if (cfg.horizons.size() < 4) throw ConfigError("convergence: need at least four horizons");
  const auto [lo, hi] = std::minmax_element(cfg.horizons.begin(), cfg.horizons.end());
  if (*lo == 0 || *hi < 100 * *lo) throw ConfigError("convergence: horizons must span at least two decades");
  if (cfg.lambda < 0.0 || cfg.noise_std < 0.0) throw ConfigError("convergence: lambda and noise_std must be >= 0");
  return cfg;
}

}  // namespace cage
