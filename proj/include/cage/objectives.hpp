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
#include "cage/qat_grad.hpp"
#include "cage/quantize.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>

namespace cage {

struct Evaluation {
  double loss = 0.0;
  Vector grad;
};

/// A smooth objective with analytic gradient. Immutable once built.
class Objective {
 public:
  using EvalFn = std::function<Evaluation(std::span<const double>)>;

  Objective(std::string name, std::size_t dim, EvalFn eval) : name_(std::move(name)), dim_(dim), eval_(std::move(eval)) {
    require(dim > 0, "Objective: dim must be positive");
  }

  const std::string& name() const noexcept { return name_; }
  std::size_t dim() const noexcept { return dim_; }

  Evaluation operator()(std::span<const double> x) const {
    require(x.size() == dim_, "Objective: dimension mismatch");
    return eval_(x);
  }
  double loss(std::span<const double> x) const { return (*this)(x).loss; }
  Vector grad(std::span<const double> x) const { return (*this)(x).grad; }

  const std::optional<Vector>& minimizer() const noexcept { return minimizer_; }
  const std::optional<double>& minimum() const noexcept { return minimum_; }
  /// Gradient Lipschitz constant when known (largest Hessian eigenvalue).
  const std::optional<double>& lipschitz() const noexcept { return lipschitz_; }

  Objective& with_minimizer(Vector x, double f) {
    minimizer_ = std::move(x);
    minimum_ = f;
    return *this;
  }
  Objective& with_lipschitz(double l) {
    lipschitz_ = l;
    return *this;
  }

 private:
  std::string name_;
  std::size_t dim_;
  EvalFn eval_;
  std::optional<Vector> minimizer_;
  std::optional<double> minimum_;
  std::optional<double> lipschitz_;
};

/// ½xᵀAx − bᵀx. A must be SPD; the minimizer is solved once by Cholesky.
inline Objective quadratic(Matrix a, Vector b) {
  require(a.rows() == a.cols(), "quadratic: A must be square");
  require(b.size() == a.rows(), "quadratic: b dim must match A");
  require(a.is_symmetric(1e-12), "quadratic: A must be symmetric");
  const Eigen::MatrixXd ae = a.to_eigen();
  Eigen::LLT<Eigen::MatrixXd> llt(ae);
  require(llt.info() == Eigen::Success, "quadratic: A must be positive definite");
  const Eigen::VectorXd be = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
  const Eigen::VectorXd xs = llt.solve(be);
  Vector xstar(xs.data(), xs.data() + xs.size());
  const double fstar = -0.5 * dot(b, xstar);
  const double lmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(ae, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();

  auto shared_a = std::make_shared<const Matrix>(std::move(a));
  auto shared_b = std::make_shared<const Vector>(std::move(b));
  const std::size_t dim = shared_b->size();
  Objective obj("quadratic", dim, [shared_a, shared_b](std::span<const double> x) {
    Evaluation ev;
    Vector ax = matvec(*shared_a, x);
    ev.loss = 0.5 * dot(x, ax) - dot(*shared_b, x);
    ev.grad = subtract(ax, *shared_b);
    return ev;
  });
  obj.with_minimizer(std::move(xstar), fstar).with_lipschitz(lmax);
  return obj;
}

/// f(x) = ½(x − ½)², the scalar toy problem.
inline Objective toy_scalar() {
  Objective obj("toy-scalar", 1, [](std::span<const double> x) {
    const double d = x[0] - 0.5;
    return Evaluation{0.5 * d * d, Vector{d}};
  });
  obj.with_minimizer(Vector{0.5}, 0.0).with_lipschitz(1.0);
  return obj;
}

/// Chained Rosenbrock Σ 100(x_{i+1} − x_i²)² + (1 − x_i)², minimum 0 at 1.
inline Objective rosenbrock(std::size_t dim) {
  require(dim >= 2, "rosenbrock: dim must be at least 2");
  Objective obj("rosenbrock", dim, [](std::span<const double> x) {
    Evaluation ev;
    ev.grad.assign(x.size(), 0.0);
    for (std::size_t i = 0; i + 1 < x.size(); ++i) {
      const double d = x[i + 1] - x[i] * x[i];
      const double o = 1.0 - x[i];
      ev.loss += 100.0 * d * d + o * o;
      ev.grad[i] += -400.0 * x[i] * d - 2.0 * o;
      ev.grad[i + 1] += 200.0 * d;
    }
    return ev;
  });
  obj.with_minimizer(Vector(dim, 1.0), 0.0);
  return obj;
}

/// f(Q(x)) with the STE gradient: loss = f(Q(x)), grad = ste_backward(∇f(Q(x))).
inline Objective quantized_objective(const Objective& base, const QuantSpec& spec, const StePolicy& policy) {
  spec.validate();
  policy.validate();
  if (spec.is_int()) require(base.dim() % spec.row_length == 0, "quantized_objective: rows must cover dim");
  Objective obj(base.name() + "+quantized", base.dim(), [base, spec, policy](std::span<const double> x) {
    const Vector q = apply_quantizer(spec, x);
    Evaluation ev = base(q);
    ev.grad = ste_backward(policy, ev.grad, x);
    return ev;
  });
  if (base.minimum()) obj.with_minimizer(*base.minimizer(), *base.minimum());
  return obj;
}

/// ∇f(x) + σ·ξ with ξ ∼ N(0, I). Each run owns its generator.
class NoisyGradient {
 public:
  NoisyGradient(Objective base, double noise_std, Rng rng) : base_(std::move(base)), noise_std_(noise_std), rng_(rng) {
    require(noise_std >= 0.0, "NoisyGradient: noise_std must be non-negative");
  }

  const Objective& base() const noexcept { return base_; }
  double noise_std() const noexcept { return noise_std_; }

  Vector operator()(std::span<const double> x) { return perturb(base_.grad(x)); }

  /// Adds this generator's noise to an externally computed gradient.
  Vector perturb(Vector g) {
    if (noise_std_ == 0.0) return g;
    for (auto& v : g) v += noise_std_ * rng_.normal();
    return g;
  }

 private:
  Objective base_;
  double noise_std_;
  Rng rng_;
};

inline Vector noisy_grad(NoisyGradient& ng, std::span<const double> x) { return ng(x); }

}  // namespace cage
