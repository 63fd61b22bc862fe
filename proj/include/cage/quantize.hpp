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
#include "cage/transform.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <mutex>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace cage {

enum class Scheme { IntHadamard, IntPlain, Mxfp4, FloorToy, Identity };

inline std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::IntHadamard: return "int-hadamard";
    case Scheme::IntPlain: return "int-plain";
    case Scheme::Mxfp4: return "mxfp4";
    case Scheme::FloorToy: return "floor";
    case Scheme::Identity: return "none";
  }
  return "unknown";
}

inline Scheme parse_scheme(const std::string& name) {
  if (name == "int-hadamard") return Scheme::IntHadamard;
  if (name == "int-plain") return Scheme::IntPlain;
  if (name == "mxfp4") return Scheme::Mxfp4;
  if (name == "floor" || name == "floor-toy") return Scheme::FloorToy;
  if (name == "none" || name == "identity") return Scheme::Identity;
  throw ContractViolation("unknown quantization scheme '" + name + "'");
}

/// Smallest scale used for an all-zero row.
inline constexpr double kScaleFloor = 1e-12;

struct QuantSpec {
  Scheme scheme = Scheme::IntHadamard;
  int bits = 4;                 // int schemes
  double clip_factor = 0.0;     // k_b, int schemes
  std::size_t block_size = 32;  // mxfp4
  std::size_t row_length = 1;   // int schemes: rows are quantized independently
  double grid_step = 1.0;       // floor: Q(x) = step·⌊x/step⌋

  bool is_int() const noexcept { return scheme == Scheme::IntHadamard || scheme == Scheme::IntPlain; }
  /// Schemes whose grid does not depend on the input (Q is idempotent).
  bool fixed_grid() const noexcept {
    return scheme == Scheme::Mxfp4 || scheme == Scheme::FloorToy || scheme == Scheme::Identity;
  }
  int q_max() const noexcept { return (1 << (bits - 1)) - 1; }
  int q_min() const noexcept { return -(1 << (bits - 1)); }

  void validate() const {
    if (is_int()) {
      require(bits >= 2 && bits <= 16, "QuantSpec: bits must be in [2, 16]");
      require(clip_factor > 0.0 && std::isfinite(clip_factor), "QuantSpec: clip factor must be positive");
      require(row_length > 0, "QuantSpec: row_length must be positive");
    } else if (scheme == Scheme::Mxfp4) {
      require(block_size > 0, "QuantSpec: block_size must be positive");
    } else if (scheme == Scheme::FloorToy) {
      require(grid_step > 0.0 && std::isfinite(grid_step), "QuantSpec: grid_step must be positive");
    }
  }
};

struct QuantResult {
  Vector quantized;
  Vector error;              // x − quantized
  std::vector<int> codes;    // integer codes (int: q, mxfp4: sign|E2M1 index, floor: ⌊x/step⌋)
  std::vector<double> scales;  // one per row (int) or block (mxfp4)
};

// -----------------------------------------------------------------------------
// Symmetric integer quantizer, optionally in the Hadamard domain.

/// Everything the forward pass of one int row computes. The trust-masked STE
/// reads the mask from here so forward and backward share σ and s.
struct IntRowForward {
  std::size_t padded_dim = 0;
  Vector z;               // transform-domain input (padded)
  double sigma = 0.0;     // RMS of z over padded entries
  double scale = 0.0;     // s = k_b σ / q_max
  std::vector<int> codes;
  Vector z_hat;           // s·q
  Vector quantized;       // back in the parameter domain, logical length
};

inline IntRowForward int_row_forward(const QuantSpec& spec, std::span<const double> x) {
  require(spec.is_int(), "int_row_forward: scheme must be int-hadamard or int-plain");
  spec.validate();
  require(x.size() == spec.row_length, "int_row_forward: row length mismatch");

  IntRowForward f;
  const bool rotate = spec.scheme == Scheme::IntHadamard;
  const HadamardPlan plan(x.size());
  f.z = rotate ? hadamard_forward(plan, x) : Vector(x.begin(), x.end());
  f.padded_dim = f.z.size();

  f.sigma = std::sqrt(squared_norm(f.z) / static_cast<double>(f.padded_dim));
  f.scale = spec.clip_factor * f.sigma / spec.q_max();
  if (!(f.scale > 0.0)) f.scale = kScaleFloor;

  const double qmin = spec.q_min();
  const double qmax = spec.q_max();
  f.codes.resize(f.padded_dim);
  f.z_hat.resize(f.padded_dim);
  for (std::size_t i = 0; i < f.padded_dim; ++i) {
    // nearbyint rounds half to even under the default rounding mode.
    const double q = std::clamp(std::nearbyint(f.z[i] / f.scale), qmin, qmax);
    f.codes[i] = static_cast<int>(q);
    f.z_hat[i] = f.scale * q;
  }
  f.quantized = rotate ? hadamard_inverse(plan, f.z_hat) : f.z_hat;
  return f;
}

inline QuantResult quantize_int_row(const QuantSpec& spec, std::span<const double> x) {
  IntRowForward f = int_row_forward(spec, x);
  QuantResult r;
  r.error = subtract(x, f.quantized);
  r.quantized = std::move(f.quantized);
  r.codes = std::move(f.codes);
  r.scales = {f.scale};
  return r;
}

// -----------------------------------------------------------------------------
// MXFP4: E2M1 elements with a shared power-of-two scale per block.

inline constexpr std::array<double, 8> kE2M1Magnitudes{0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0};
inline constexpr double kE2M1Max = 6.0;

/// Index into kE2M1Magnitudes nearest to v ≥ 0; ties go to the even index
/// (even mantissa bit).
inline int nearest_e2m1(double v) {
  int best = 0;
  double best_dist = std::abs(v - kE2M1Magnitudes[0]);
  for (int i = 1; i < static_cast<int>(kE2M1Magnitudes.size()); ++i) {
    const double d = std::abs(v - kE2M1Magnitudes[static_cast<std::size_t>(i)]);
    if (d < best_dist || (d == best_dist && i % 2 == 0 && best % 2 != 0)) {
      best = i;
      best_dist = d;
    }
  }
  return best;
}

/// 2^⌈log₂(amax/6)⌉, corrected for rounding in the division.
inline double mxfp4_block_scale(double amax) {
  if (amax == 0.0) return 1.0;
  int exp = 0;
  const double mant = std::frexp(amax / kE2M1Max, &exp);  // amax/6 = mant·2^exp, mant ∈ [0.5, 1)
  double scale = std::ldexp(1.0, mant == 0.5 ? exp - 1 : exp);
  if (amax > kE2M1Max * scale) scale *= 2.0;
  return scale;
}

inline QuantResult quantize_mxfp4(const QuantSpec& spec, std::span<const double> x) {
  require(spec.scheme == Scheme::Mxfp4, "quantize_mxfp4: scheme must be mxfp4");
  spec.validate();
  QuantResult r;
  r.quantized.resize(x.size());
  r.codes.resize(x.size());
  for (std::size_t start = 0; start < x.size(); start += spec.block_size) {
    // A trailing partial block behaves as if zero-padded: padding never raises amax.
    const std::size_t end = std::min(x.size(), start + spec.block_size);
    double amax = 0.0;
    for (std::size_t i = start; i < end; ++i) amax = std::max(amax, std::abs(x[i]));
    const double scale = mxfp4_block_scale(amax);
    r.scales.push_back(scale);
    for (std::size_t i = start; i < end; ++i) {
      const int idx = nearest_e2m1(std::abs(x[i]) / scale);
      const bool negative = std::signbit(x[i]) && idx != 0;
      const double mag = scale * kE2M1Magnitudes[static_cast<std::size_t>(idx)];
      r.quantized[i] = negative ? -mag : mag;
      r.codes[i] = (negative ? 8 : 0) | idx;
    }
  }
  r.error = subtract(x, r.quantized);
  return r;
}

// -----------------------------------------------------------------------------
// Floor grid (toy operator) and identity.

inline QuantResult quantize_floor(const QuantSpec& spec, std::span<const double> x) {
  require(spec.scheme == Scheme::FloorToy, "quantize_floor: scheme must be floor");
  spec.validate();
  QuantResult r;
  r.quantized.resize(x.size());
  r.codes.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    // x/step rounds, so the cell can be off by one either way for steps that
    // are not powers of two. Pick the largest grid point that is ≤ x as
    // actually computed; that keeps Q idempotent and Q(x) ≤ x.
    double cell = std::floor(x[i] / spec.grid_step);
    if (spec.grid_step * cell > x[i]) cell -= 1.0;
    else if (spec.grid_step * (cell + 1.0) <= x[i]) cell += 1.0;
    r.quantized[i] = spec.grid_step * cell;
    r.codes[i] = static_cast<int>(std::clamp(cell, -2147483648.0, 2147483647.0));
  }
  r.scales = {spec.grid_step};
  r.error = subtract(x, r.quantized);
  return r;
}

/// Q(x) = ⌊x⌋.
inline QuantResult quantize_floor(std::span<const double> x) {
  QuantSpec spec;
  spec.scheme = Scheme::FloorToy;
  return quantize_floor(spec, x);
}

/// Quantize a whole parameter vector. Int schemes split it into rows of
/// `row_length`; mxfp4 into blocks.
inline QuantResult quantize(const QuantSpec& spec, std::span<const double> x) {
  spec.validate();
  switch (spec.scheme) {
    case Scheme::Mxfp4: return quantize_mxfp4(spec, x);
    case Scheme::FloorToy: return quantize_floor(spec, x);
    case Scheme::Identity: {
      QuantResult r;
      r.quantized.assign(x.begin(), x.end());
      r.error.assign(x.size(), 0.0);
      return r;
    }
    case Scheme::IntHadamard:
    case Scheme::IntPlain: break;
  }
  require(x.size() % spec.row_length == 0, "quantize: dim must be a multiple of row_length");
  if (x.size() == spec.row_length) return quantize_int_row(spec, x);
  QuantResult r;
  r.quantized.reserve(x.size());
  r.error.reserve(x.size());
  for (std::size_t start = 0; start < x.size(); start += spec.row_length) {
    QuantResult row = quantize_int_row(spec, x.subspan(start, spec.row_length));
    r.quantized.insert(r.quantized.end(), row.quantized.begin(), row.quantized.end());
    r.error.insert(r.error.end(), row.error.begin(), row.error.end());
    r.codes.insert(r.codes.end(), row.codes.begin(), row.codes.end());
    r.scales.push_back(row.scales.front());
  }
  return r;
}

inline Vector apply_quantizer(const QuantSpec& spec, std::span<const double> x) {
  return quantize(spec, x).quantized;
}

/// e = x − Q(x). Pure value; carries no gradient.
inline Vector quant_error(const QuantSpec& spec, std::span<const double> x) {
  return quantize(spec, x).error;
}

// -----------------------------------------------------------------------------
// MSE-optimal clipping for a standard normal input.

namespace detail {

struct GaussLegendre {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Nodes/weights on [−1, 1] by Newton iteration on P_n.
inline GaussLegendre gauss_legendre(int n) {
  GaussLegendre gl;
  gl.nodes.resize(static_cast<std::size_t>(n));
  gl.weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0;
      double p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    gl.nodes[static_cast<std::size_t>(i)] = x;
    gl.weights[static_cast<std::size_t>(i)] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return gl;
}

inline const GaussLegendre& gl8() {
  static const GaussLegendre gl = gauss_legendre(8);
  return gl;
}

inline double std_normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace detail

/// E_{z∼N(0,1)}[(z − Q_k(z))²] for the b-bit symmetric grid with clip factor k
/// (σ = 1, s = k/q_max). Each quantization cell is integrated separately by
/// composite 8-point Gauss–Legendre so the integrand is smooth on every
/// panel; the tails are truncated at ±12.
inline double gaussian_quant_mse(int bits, double clip_factor, std::size_t nodes = 20000) {
  require(bits >= 2 && bits <= 16, "gaussian_quant_mse: bits out of range");
  require(clip_factor > 0.0, "gaussian_quant_mse: clip factor must be positive");
  const int qmax = (1 << (bits - 1)) - 1;
  const int qmin = -(1 << (bits - 1));
  const double s = clip_factor / qmax;
  constexpr double kTail = 12.0;

  // Cells [lo, hi] → level q·s. Boundaries at (q + ½)s between levels.
  struct Cell {
    double lo, hi, level;
  };
  std::vector<Cell> cells;
  for (int q = qmin; q <= qmax; ++q) {
    double lo = q == qmin ? -kTail : (q - 0.5) * s;
    double hi = q == qmax ? kTail : (q + 0.5) * s;
    lo = std::max(lo, -kTail);
    hi = std::min(hi, kTail);
    if (hi > lo) cells.push_back({lo, hi, q * s});
  }

  const auto& gl = detail::gl8();
  const std::size_t per_panel = gl.nodes.size();
  const std::size_t total_panels = std::max<std::size_t>(cells.size(), (nodes + per_panel - 1) / per_panel);
  double mse = 0.0;
  for (const Cell& c : cells) {
    // Panels proportional to cell width, at least one per cell.
    const double frac = (c.hi - c.lo) / (2.0 * kTail);
    const auto panels = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(frac * total_panels)));
    const double h = (c.hi - c.lo) / static_cast<double>(panels);
    for (std::size_t p = 0; p < panels; ++p) {
      const double a = c.lo + h * static_cast<double>(p);
      const double mid = a + 0.5 * h;
      double acc = 0.0;
      for (std::size_t k = 0; k < per_panel; ++k) {
        const double z = mid + 0.5 * h * gl.nodes[k];
        const double d = z - c.level;
        acc += gl.weights[k] * d * d * detail::std_normal_pdf(z);
      }
      mse += 0.5 * h * acc;
    }
  }
  return mse;
}

struct ClipCalibration {
  int bits = 0;
  double clip_factor = 0.0;
  double mse = 0.0;
};

inline constexpr double kClipSearchLo = 0.5;
inline constexpr double kClipSearchHi = 6.0;

/// argmin_k MSE(k) over [0.5, 6]: a coarse scan with `n_grid` points brackets
/// the minimum, golden-section search refines it.
inline ClipCalibration calibrate_clip(int bits, std::size_t n_grid = 221, std::size_t quadrature = 20000) {
  require(bits >= 2 && bits <= 8, "calibrate_clip: bits must be in [2, 8]");
  require(n_grid >= 3, "calibrate_clip: n_grid must be at least 3");
  require(quadrature >= 10000, "calibrate_clip: quadrature needs at least 10^4 nodes");
  auto mse = [&](double k) { return gaussian_quant_mse(bits, k, quadrature); };

  const double step = (kClipSearchHi - kClipSearchLo) / static_cast<double>(n_grid - 1);
  std::size_t best = 0;
  double best_mse = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n_grid; ++i) {
    const double m = mse(kClipSearchLo + step * static_cast<double>(i));
    if (m < best_mse) {
      best_mse = m;
      best = i;
    }
  }
  double a = kClipSearchLo + step * static_cast<double>(best == 0 ? 0 : best - 1);
  double b = kClipSearchLo + step * static_cast<double>(std::min(n_grid - 1, best + 1));

  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = mse(c);
  double fd = mse(d);
  while (b - a > 1e-10) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = mse(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = mse(d);
    }
  }
  const double k = 0.5 * (a + b);
  return {bits, k, mse(k)};
}

namespace detail {
struct ClipCache {
  std::mutex mu;
  std::map<int, double> factors;
};
inline ClipCache& clip_cache() {
  static ClipCache cache;
  return cache;
}
}  // namespace detail

/// Calibrated k_b, computed on first use and cached for the process.
inline double calibrated_clip_factor(int bits) {
  auto& cache = detail::clip_cache();
  std::lock_guard<std::mutex> lock(cache.mu);
  auto it = cache.factors.find(bits);
  if (it != cache.factors.end()) return it->second;
  const double k = calibrate_clip(bits).clip_factor;
  cache.factors.emplace(bits, k);
  return k;
}

/// Preload the cache from a clip table (e.g. one read from clip_factors.tsv).
inline void preload_clip_factors(std::span<const ClipCalibration> rows) {
  auto& cache = detail::clip_cache();
  std::lock_guard<std::mutex> lock(cache.mu);
  for (const auto& r : rows) cache.factors[r.bits] = r.clip_factor;
}

inline QuantSpec make_int_spec(Scheme scheme, int bits, std::size_t row_length, double clip_factor = 0.0) {
  QuantSpec spec;
  spec.scheme = scheme;
  spec.bits = bits;
  spec.row_length = row_length;
  spec.clip_factor = clip_factor > 0.0 ? clip_factor : calibrated_clip_factor(bits);
  spec.validate();
  return spec;
}

// -----------------------------------------------------------------------------
// clip_factors.tsv

inline constexpr const char* kClipTableHeader = "# clip_factors v1";

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_clip_table(std::ostream& os, std::span<const ClipCalibration> rows) {
  os << kClipTableHeader << '\n' << "bits\tk_b\tmse\n";
  for (const auto& r : rows) os << r.bits << '\t' << format_double(r.clip_factor) << '\t' << format_double(r.mse) << '\n';
}

inline std::vector<ClipCalibration> read_clip_table(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<ClipCalibration> rows;
  bool saw_version = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line == kClipTableHeader) saw_version = true;
      continue;
    }
    if (line.rfind("bits", 0) == 0) continue;
    std::istringstream ls(line);
    ClipCalibration r;
    if (!(ls >> r.bits >> r.clip_factor >> r.mse))
      throw ContractViolation("clip table: malformed row at line " + std::to_string(lineno));
    rows.push_back(r);
  }
  if (!saw_version) throw ContractViolation("clip table: missing version header");
  return rows;
}

}  // namespace cage
