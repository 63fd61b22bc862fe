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

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cage {

using Vector = std::vector<double>;

/// Raised when a caller breaks an operation's precondition (shape, range).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an objective returns a non-finite value.
class EvaluationError : public std::runtime_error {
 public:
  EvaluationError(const std::string& what, std::size_t index)
      : std::runtime_error(what + " (index " + std::to_string(index) + ")"), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// Raised when an experiment produces NaN/Inf iterates.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const char* msg) {
  if (!cond) throw ContractViolation(msg);
}

// -----------------------------------------------------------------------------
// Matrix

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    require(rows > 0 && cols > 0, "Matrix: rows and cols must be positive");
  }
  Matrix(std::size_t rows, std::size_t cols, Vector data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(rows > 0 && cols > 0, "Matrix: rows and cols must be positive");
    require(data_.size() == rows * cols, "Matrix: data length must equal rows*cols");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  double max_abs() const {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  /// ‖M − Mᵀ‖∞ ≤ tol·‖M‖∞ (entrywise max norms).
  bool is_symmetric(double rel_tol = 1e-12) const {
    if (rows_ != cols_) return false;
    double asym = 0.0;
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = i + 1; j < cols_; ++j)
        asym = std::max(asym, std::abs((*this)(i, j) - (*this)(j, i)));
    return asym <= rel_tol * max_abs();
  }

  Eigen::MatrixXd to_eigen() const {
    Eigen::MatrixXd m(rows_, cols_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) m(i, j) = (*this)(i, j);
    return m;
  }

  static Matrix from_eigen(const Eigen::MatrixXd& m) {
    Matrix out(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        out(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = m(i, j);
    return out;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

// -----------------------------------------------------------------------------
// Vector helpers

inline double dot(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }
inline double norm2(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

inline double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

inline bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

inline Vector subtract(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "subtract: dimension mismatch");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline Vector add(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), "add: dimension mismatch");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

/// result_i = Σ_j A_ij x_j, accumulated left to right.
inline Vector matvec(const Matrix& a, std::span<const double> x) {
  require(a.cols() == x.size(), "matvec: A.cols must equal x.dim");
  Vector out(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    const auto row = a.row(i);
    for (std::size_t j = 0; j < x.size(); ++j) s += row[j] * x[j];
    out[i] = s;
  }
  return out;
}

// -----------------------------------------------------------------------------
// Random numbers

/// xoshiro256** (Blackman & Vigna) seeded through splitmix64. Normals come
/// from the Box–Muller transform so the stream does not depend on the
/// standard library's distribution implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& s : state_) s = splitmix64(sm);
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t position() const noexcept { return position_; }

  std::uint64_t next_u64() noexcept {
    ++position_;
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Independent child stream; used to give each replicate its own generator.
  Rng split(std::uint64_t stream) const {
    std::uint64_t sm = seed_ ^ (0x9E3779B97F4A7C15ULL * (stream + 1));
    return Rng(splitmix64(sm));
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }
  static std::uint64_t splitmix64(std::uint64_t& x) noexcept {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t state_[4]{};
  std::uint64_t position_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Vector gaussian_vector(std::size_t dim, double mean, double stddev, Rng& rng) {
  require(stddev >= 0.0, "gaussian_vector: std must be non-negative");
  Vector out(dim);
  for (auto& v : out) v = mean + stddev * rng.normal();
  return out;
}

// -----------------------------------------------------------------------------
// Numerical oracles

/// Central differences: (f(x+h·e_i) − f(x−h·e_i)) / 2h.
template <class F>
Vector finite_diff_grad(F&& f, std::span<const double> x, double h) {
  require(h > 0.0, "finite_diff_grad: h must be positive");
  Vector probe(x.begin(), x.end());
  Vector grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = probe[i];
    probe[i] = xi + h;
    const double fp = f(std::span<const double>(probe));
    probe[i] = xi - h;
    const double fm = f(std::span<const double>(probe));
    probe[i] = xi;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw EvaluationError("finite_diff_grad: non-finite objective value", i);
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

/// Random orthogonal matrix: Q from the QR of a Gaussian matrix with the sign
/// of diag(R) folded into Q (Haar-distributed).
inline Eigen::MatrixXd random_orthogonal(std::size_t dim, Rng& rng) {
  const auto n = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd r = qr.matrixQR();
  for (Eigen::Index j = 0; j < n; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  return q;
}

/// Symmetric positive definite matrix with eigenvalues log-spaced in
/// [1, kappa] and a random orthogonal eigenbasis.
inline Matrix make_spd(std::size_t dim, double kappa, Rng& rng) {
  require(dim > 0, "make_spd: dim must be positive");
  require(kappa >= 1.0 && std::isfinite(kappa), "make_spd: kappa must be >= 1");
  require(dim >= 2 || kappa == 1.0, "make_spd: kappa > 1 needs dim >= 2");
  const auto n = static_cast<Eigen::Index>(dim);
  Eigen::VectorXd eig(n);
  for (Eigen::Index i = 0; i < n; ++i)
    eig(i) = dim == 1 ? 1.0 : std::pow(kappa, static_cast<double>(i) / static_cast<double>(n - 1));
  if (kappa == 1.0) return Matrix::identity(dim);
  const Eigen::MatrixXd q = random_orthogonal(dim, rng);
  Eigen::MatrixXd m = q * eig.asDiagonal() * q.transpose();
  m = 0.5 * (m + m.transpose());
  return Matrix::from_eigen(m);
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
inline double power_iteration_max_eig(const Matrix& a, std::size_t iterations = 1000,
                                      std::uint64_t seed = 0x5eed) {
  require(a.rows() == a.cols(), "power_iteration_max_eig: matrix must be square");
  Rng rng(seed);
  Vector v = gaussian_vector(a.rows(), 0.0, 1.0, rng);
  double lambda = 0.0;
  for (std::size_t it = 0; it < iterations; ++it) {
    const double n = norm2(v);
    if (n == 0.0) return 0.0;
    for (auto& x : v) x /= n;
    Vector w = matvec(a, v);
    const double next = dot(v, w);
    v = std::move(w);
    if (it > 10 && std::abs(next - lambda) <= 1e-15 * std::abs(next)) {
      lambda = next;
      break;
    }
    lambda = next;
  }
  return lambda;
}

struct PcaResult {
  std::vector<Vector> projected;   // one k-dim vector per input point
  std::vector<Vector> components;  // k orthonormal directions
  Vector eigenvalues;              // descending
  Vector mean;
  bool degenerate = false;         // zero total variance
};

/// Principal components of the centered point cloud. Components are ordered
/// by descending variance and signed so their first nonzero entry is positive.
inline PcaResult pca_project(const std::vector<Vector>& points, std::size_t k) {
  require(points.size() >= 2, "pca_project: need at least two points");
  const std::size_t dim = points.front().size();
  require(dim > 0, "pca_project: points must be non-empty");
  require(k >= 1 && k <= dim, "pca_project: k must be in [1, dim]");
  for (const auto& p : points) require(p.size() == dim, "pca_project: points differ in dimension");

  PcaResult out;
  out.mean.assign(dim, 0.0);
  for (const auto& p : points)
    for (std::size_t j = 0; j < dim; ++j) out.mean[j] += p[j];
  for (auto& m : out.mean) m /= static_cast<double>(points.size());

  const auto n = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(n, n);
  Eigen::VectorXd c(n);
  for (const auto& p : points) {
    for (Eigen::Index j = 0; j < n; ++j) c(j) = p[static_cast<std::size_t>(j)] - out.mean[static_cast<std::size_t>(j)];
    cov.noalias() += c * c.transpose();
  }
  cov /= static_cast<double>(points.size() - 1);

  out.projected.assign(points.size(), Vector(k, 0.0));
  if (cov.cwiseAbs().maxCoeff() == 0.0) {
    out.degenerate = true;
    out.eigenvalues.assign(k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      Vector e(dim, 0.0);
      e[i] = 1.0;
      out.components.push_back(std::move(e));
    }
    return out;
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  const Eigen::VectorXd& evals = solver.eigenvalues();  // ascending
  const Eigen::MatrixXd& evecs = solver.eigenvectors();
  for (std::size_t i = 0; i < k; ++i) {
    const Eigen::Index col = n - 1 - static_cast<Eigen::Index>(i);
    Vector comp(dim);
    for (Eigen::Index j = 0; j < n; ++j) comp[static_cast<std::size_t>(j)] = evecs(j, col);
    // Eigen leaves round-off where exact zeros belong; ignore it when picking the sign.
    const double tiny = 1e-12 * max_abs(comp);
    const auto first = std::find_if(comp.begin(), comp.end(), [tiny](double v) { return std::abs(v) > tiny; });
    if (first != comp.end() && *first < 0.0)
      for (auto& v : comp) v = -v;
    out.components.push_back(std::move(comp));
    out.eigenvalues.push_back(std::max(0.0, evals(col)));
  }
  for (std::size_t p = 0; p < points.size(); ++p) {
    const Vector centered = subtract(points[p], out.mean);
    for (std::size_t i = 0; i < k; ++i) out.projected[p][i] = dot(centered, out.components[i]);
  }
  return out;
}

}  // namespace cage
