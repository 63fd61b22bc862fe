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

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace cage {
namespace {

using testing::kPropertyCases;

QuantSpec floor_spec(double step = 1.0) {
  QuantSpec s;
  s.scheme = Scheme::FloorToy;
  s.grid_step = step;
  return s;
}

QuantSpec mx_spec(std::size_t block = 32) {
  QuantSpec s;
  s.scheme = Scheme::Mxfp4;
  s.block_size = block;
  return s;
}

/// Scale-free Monte Carlo estimate of E[(z − Q_k(z))²], z ∼ N(0, 1).
double monte_carlo_mse(int bits, double k, std::size_t samples, std::uint64_t seed) {
  const double qmax = (1 << (bits - 1)) - 1;
  const double qmin = -(1 << (bits - 1));
  const double s = k / qmax;
  Rng rng(seed);
  double acc = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double z = rng.normal();
    const double q = std::clamp(std::nearbyint(z / s), qmin, qmax);
    acc += (z - s * q) * (z - s * q);
  }
  return acc / static_cast<double>(samples);
}

// ---------------------------------------------------------------------------
// Integer grid

TEST(QuantSpec, GridBoundsFourBits) {
  const QuantSpec s = make_int_spec(Scheme::IntPlain, 4, 4, 2.0);
  EXPECT_EQ(s.q_max(), 7);
  EXPECT_EQ(s.q_min(), -8);
}

TEST(QuantSpec, ValidationRejectsBadFields) {
  QuantSpec s = make_int_spec(Scheme::IntPlain, 4, 4, 2.0);
  s.clip_factor = 0.0;
  EXPECT_THROW(s.validate(), ContractViolation);
  EXPECT_THROW(parse_scheme("int7"), ContractViolation);
  EXPECT_EQ(parse_scheme("floor"), Scheme::FloorToy);
}

TEST(QuantizeIntRow, ZeroRow) {
  for (Scheme sc : {Scheme::IntPlain, Scheme::IntHadamard}) {
    const QuantResult r = quantize(make_int_spec(sc, 4, 6, 2.0), Vector(6, 0.0));
    for (double v : r.quantized) EXPECT_EQ(v, 0.0);
    for (double v : r.error) EXPECT_EQ(v, 0.0);
    EXPECT_EQ(r.scales.front(), kScaleFloor);
  }
}

TEST(QuantizeIntRow, PlainAlternatingRow) {
  const double k4 = calibrated_clip_factor(4);
  const QuantSpec spec = make_int_spec(Scheme::IntPlain, 4, 4);
  EXPECT_EQ(spec.clip_factor, k4);
  const Vector x{1, -1, 1, -1};
  const IntRowForward f = int_row_forward(spec, x);
  EXPECT_DOUBLE_EQ(f.sigma, 1.0);
  EXPECT_DOUBLE_EQ(f.scale, k4 / 7.0);
  for (std::size_t i = 0; i < 4; ++i) {
    const double expected = std::clamp(std::nearbyint(x[i] * 7.0 / k4), -8.0, 7.0);
    EXPECT_EQ(f.codes[i], static_cast<int>(expected));
    EXPECT_LE(std::abs(x[i] - f.z_hat[i]), f.scale / 2);
  }
}

TEST(QuantizeIntRow, RoundHalfToEven) {
  // Squares sum to 8, so σ = 1 and k = 127 gives s = 1: every ±0.5 and
  // ±1.5 entry is an exact tie.
  const QuantSpec spec = make_int_spec(Scheme::IntPlain, 8, 8, 127.0);
  const IntRowForward f = int_row_forward(spec, Vector{0.5, 1.5, -0.5, -1.5, 1, 1, 1, 0});
  EXPECT_EQ(f.scale, 1.0);
  EXPECT_EQ(f.codes, (std::vector<int>{0, 2, 0, -2, 1, 1, 1, 0}));
}

TEST(QuantizeIntRow, RowsAreIndependent) {
  Rng rng(1);
  const QuantSpec spec = make_int_spec(Scheme::IntHadamard, 4, 8, 2.0);
  const Vector x = gaussian_vector(24, 0, 1, rng);
  const QuantResult whole = quantize(spec, x);
  for (std::size_t r = 0; r < 3; ++r) {
    const QuantResult row = quantize(spec, std::span<const double>(x).subspan(r * 8, 8));
    for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(whole.quantized[r * 8 + i], row.quantized[i]);
  }
  EXPECT_EQ(whole.scales.size(), 3u);
  EXPECT_THROW(quantize(spec, Vector(10, 1.0)), ContractViolation);
}

TEST(QuantErrorInt, PlainUnclippedBoundedByHalfStep) {
  Rng rng(2);
  const QuantSpec spec = make_int_spec(Scheme::IntPlain, 4, 16);
  int checked = 0;
  for (int c = 0; c < kPropertyCases; ++c) {
    const Vector x = gaussian_vector(16, 0, 1, rng);
    const IntRowForward f = int_row_forward(spec, x);
    const auto mask = trust_mask(f, spec.clip_factor);
    if (std::find(mask.begin(), mask.end(), 0.0) != mask.end()) continue;
    ++checked;
    EXPECT_LE(max_abs(quant_error(spec, x)), f.scale / 2 * (1 + 1e-12));
  }
  EXPECT_GT(checked, 10);
}

TEST(QuantIntProperty, GridMembershipAndCodeRange) {
  Rng rng(3);
  for (int c = 0; c < kPropertyCases; ++c) {
    const int bits = 2 + c % 7;
    const std::size_t len = 1 + static_cast<std::size_t>(rng.uniform() * 70);
    const Scheme sc = c % 2 ? Scheme::IntHadamard : Scheme::IntPlain;
    const QuantSpec spec = make_int_spec(sc, bits, len);
    const Vector x = gaussian_vector(len, rng.uniform(-1, 1), rng.uniform(0.1, 3), rng);
    const IntRowForward f = int_row_forward(spec, x);
    for (std::size_t i = 0; i < f.padded_dim; ++i) {
      ASSERT_GE(f.codes[i], spec.q_min());
      ASSERT_LE(f.codes[i], spec.q_max());
      ASSERT_EQ(f.z_hat[i], f.scale * f.codes[i]);
    }
    // The parameter-domain output maps back onto the grid (transform round-off only).
    if (sc == Scheme::IntHadamard && len == f.padded_dim) {
      const Vector back = hadamard_forward(HadamardPlan(len), f.quantized);
      for (std::size_t i = 0; i < len; ++i) ASSERT_NEAR(back[i], f.z_hat[i], 1e-12 * (1 + std::abs(f.z_hat[i])));
    }
  }
}

TEST(QuantIntProperty, UnclippedRoundingWithinHalfStep) {
  Rng rng(4);
  for (int c = 0; c < kPropertyCases; ++c) {
    const int bits = 2 + c % 7;
    const std::size_t len = 1 + static_cast<std::size_t>(rng.uniform() * 64);
    const QuantSpec spec = make_int_spec(c % 2 ? Scheme::IntHadamard : Scheme::IntPlain, bits, len);
    const IntRowForward f = int_row_forward(spec, gaussian_vector(len, 0, 1, rng));
    const auto mask = trust_mask(f, spec.clip_factor);
    for (std::size_t i = 0; i < f.padded_dim; ++i)
      if (mask[i] == 1.0) ASSERT_LE(std::abs(f.z[i] - f.z_hat[i]), f.scale / 2 * (1 + 1e-12));
  }
}

// ---------------------------------------------------------------------------
// Exact decomposition. error is always fl(x − quantized). Whether
// quantized + error gives x back bit for bit depends on Sterbenz' lemma:
// it does whenever Q(x) is within a factor two of x or Q(x) = 0.

TEST(QuantDecompositionProperty, ErrorIsExactDifferenceForEveryScheme) {
  Rng rng(5);
  for (int c = 0; c < kPropertyCases; ++c) {
    const Vector x = gaussian_vector(64, 0, rng.uniform(0.01, 10), rng);
    for (const QuantSpec& spec : {make_int_spec(Scheme::IntHadamard, 4, 64), make_int_spec(Scheme::IntPlain, 3, 16),
                                  mx_spec(), floor_spec(0.25)}) {
      const QuantResult r = quantize(spec, x);
      for (std::size_t i = 0; i < x.size(); ++i) ASSERT_EQ(r.error[i], x[i] - r.quantized[i]);
    }
  }
}

TEST(QuantDecompositionProperty, BitwiseReconstructionMxfp4) {
  Rng rng(6);
  for (int c = 0; c < kPropertyCases; ++c) {
    const Vector x = gaussian_vector(96, 0, std::exp(rng.uniform(-10, 10)), rng);
    const QuantResult r = quantize(mx_spec(), x);
    ASSERT_TRUE(testing::bitwise_equal(add(r.quantized, r.error), x));
  }
}

TEST(QuantDecompositionProperty, BitwiseReconstructionFloorNonNegative) {
  Rng rng(7);
  for (int c = 0; c < kPropertyCases; ++c) {
    Vector x = gaussian_vector(50, 0, 5, rng);
    for (auto& v : x) v = std::abs(v);
    const QuantResult r = quantize(floor_spec(c % 2 ? 1.0 : 0.25), x);
    ASSERT_TRUE(testing::bitwise_equal(add(r.quantized, r.error), x));
  }
}

TEST(QuantDecompositionProperty, BitwiseReconstructionIntPlainUnclipped) {
  Rng rng(8);
  int checked = 0;
  for (int c = 0; c < 4 * kPropertyCases && checked < kPropertyCases; ++c) {
    // k = 6 clips almost nothing.
    const QuantSpec spec = make_int_spec(Scheme::IntPlain, 2 + c % 7, 16, 6.0);
    const Vector x = gaussian_vector(16, 0, 1, rng);
    const IntRowForward f = int_row_forward(spec, x);
    const auto mask = trust_mask(f, spec.clip_factor);
    if (std::find(mask.begin(), mask.end(), 0.0) != mask.end()) continue;
    ++checked;
    const QuantResult r = quantize(spec, x);
    ASSERT_TRUE(testing::bitwise_equal(add(r.quantized, r.error), x));
  }
  EXPECT_EQ(checked, kPropertyCases);
}

TEST(QuantDecomposition, CounterexamplesOutsideSterbenzRange) {
  // Floor of a tiny negative number: Q(x) = −1, e = fl(x + 1) = 1, and
  // Q(x) + e = 0 ≠ x. No double-precision (Q, e) pair with Q on the grid
  // can represent this x exactly.
  const Vector x{-1e-20};
  const QuantResult r = quantize_floor(x);
  EXPECT_EQ(r.quantized[0], -1.0);
  EXPECT_EQ(r.error[0], 1.0);
  EXPECT_NE(r.quantized[0] + r.error[0], x[0]);
  // The reconstruction error is bounded by half an ulp of |e|.
  EXPECT_LE(std::abs(r.quantized[0] + r.error[0] - x[0]), 0.5 * std::nextafter(1.0, 2.0) - 0.5 + 1e-300);
}

TEST(QuantDecompositionProperty, ReconstructionWithinHalfUlpOfError) {
  Rng rng(9);
  for (int c = 0; c < kPropertyCases; ++c) {
    const Vector x = gaussian_vector(64, 0, rng.uniform(0.01, 10), rng);
    for (const QuantSpec& spec : {make_int_spec(Scheme::IntHadamard, 4, 64), floor_spec()}) {
      const QuantResult r = quantize(spec, x);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double ulp_e = std::nextafter(std::abs(r.error[i]), INFINITY) - std::abs(r.error[i]);
        const double ulp_q = std::nextafter(std::abs(r.quantized[i]), INFINITY) - std::abs(r.quantized[i]);
        ASSERT_LE(std::abs(r.quantized[i] + r.error[i] - x[i]), std::max(ulp_e, ulp_q));
      }
    }
  }
}

// ---------------------------------------------------------------------------
// MXFP4

TEST(Mxfp4, SixteenCodePointsAreFixed) {
  for (double scale : {0.25, 1.0, 8.0}) {
    Vector x;
    for (double m : kE2M1Magnitudes) {
      x.push_back(scale * m);
      x.push_back(-scale * m);
    }
    x[0] = scale * 6.0;  // pin the block max so the shared scale is `scale`
    const QuantResult r = quantize(mx_spec(), x);
    EXPECT_EQ(r.scales.front(), scale);
    for (double e : r.error) EXPECT_EQ(e, 0.0);
  }
}

TEST(Mxfp4, OneHotBlock) {
  Vector x(32, 0.0);
  x[0] = 6.0;
  const QuantResult r = quantize(mx_spec(), x);
  EXPECT_EQ(r.scales.front(), 1.0);
  EXPECT_EQ(r.quantized[0], 6.0);
}

TEST(Mxfp4, NearestGridPoint) {
  Vector x(32, 0.0);
  x[0] = 6.0;
  x[1] = 2.4;
  x[2] = -2.6;
  const QuantResult r = quantize(mx_spec(), x);
  EXPECT_EQ(r.quantized[1], 2.0);
  EXPECT_EQ(r.quantized[2], -3.0);
}

TEST(Mxfp4, TiesGoToEvenMantissa) {
  Vector x(8, 0.0);
  x[0] = 6.0;
  x[1] = 2.5;   // 2 | 3   → 2
  x[2] = 0.25;  // 0 | 0.5 → 0
  x[3] = 5.0;   // 4 | 6   → 4
  x[4] = 1.25;  // 1 | 1.5 → 1
  x[5] = 1.75;  // 1.5 | 2 → 2
  x[6] = 3.5;   // 3 | 4   → 4
  const QuantResult r = quantize(mx_spec(8), x);
  EXPECT_EQ(r.quantized[1], 2.0);
  EXPECT_EQ(r.quantized[2], 0.0);
  EXPECT_EQ(r.quantized[3], 4.0);
  EXPECT_EQ(r.quantized[4], 1.0);
  EXPECT_EQ(r.quantized[5], 2.0);
  EXPECT_EQ(r.quantized[6], 4.0);
}

TEST(Mxfp4, AllZeroBlock) {
  const QuantResult r = quantize(mx_spec(), Vector(32, 0.0));
  EXPECT_EQ(r.scales.front(), 1.0);
  for (int c : r.codes) EXPECT_EQ(c, 0);
}

TEST(Mxfp4, ScaleIsSmallestPowerOfTwoCoveringMax) {
  EXPECT_EQ(mxfp4_block_scale(6.0), 1.0);
  EXPECT_EQ(mxfp4_block_scale(6.0000001), 2.0);
  EXPECT_EQ(mxfp4_block_scale(3.0), 0.5);
  EXPECT_EQ(mxfp4_block_scale(0.1), 1.0 / 32.0);
}

TEST(Mxfp4Property, BlockMaxAndIdempotence) {
  Rng rng(10);
  for (int c = 0; c < kPropertyCases; ++c) {
    const std::size_t block = c % 3 == 0 ? 32 : 1 + static_cast<std::size_t>(rng.uniform() * 40);
    const Vector x = gaussian_vector(100, 0, std::exp(rng.uniform(-8, 8)), rng);
    const QuantResult r = quantize(mx_spec(block), x);
    for (std::size_t b = 0; b < r.scales.size(); ++b) {
      const std::size_t lo = b * block, hi = std::min(x.size(), lo + block);
      for (std::size_t i = lo; i < hi; ++i) ASSERT_LE(std::abs(r.quantized[i]), 6.0 * r.scales[b]);
    }
    ASSERT_EQ(apply_quantizer(mx_spec(block), r.quantized), r.quantized);
  }
}

// ---------------------------------------------------------------------------
// Floor

TEST(Floor, Examples) {
  QuantResult r = quantize_floor(Vector{0.9, -0.25, 3.0});
  EXPECT_EQ(r.quantized, (Vector{0.0, -1.0, 3.0}));
  EXPECT_EQ(r.error, (Vector{0.9, 0.75, 0.0}));
  EXPECT_EQ(quant_error(floor_spec(), Vector{0.9})[0], 0.9);
  EXPECT_EQ(quant_error(floor_spec(), Vector{-4.0})[0], 0.0);
}

TEST(FloorProperty, GridMembershipAndIdempotence) {
  Rng rng(11);
  for (int c = 0; c < kPropertyCases; ++c) {
    const double step = c % 2 ? 1.0 : 0.25;
    const Vector x = gaussian_vector(20, 0, 10, rng);
    const Vector q = apply_quantizer(floor_spec(step), x);
    for (std::size_t i = 0; i < q.size(); ++i) {
      ASSERT_EQ(q[i] / step, std::floor(q[i] / step));
      ASSERT_LE(q[i], x[i]);
      ASSERT_GT(q[i] + step, x[i]);
    }
    ASSERT_EQ(apply_quantizer(floor_spec(step), q), q);
  }
}

TEST(FloorProperty, IdempotentForArbitrarySteps) {
  // step·⌊x/step⌋ alone is not: (k·step)/step can round just below k.
  Rng rng(12);
  for (int c = 0; c < kPropertyCases; ++c) {
    const QuantSpec spec = floor_spec(rng.uniform(0.01, 2.0));
    const Vector x = gaussian_vector(64, 0, std::exp(rng.uniform(-3, 8)), rng);
    const Vector q = apply_quantizer(spec, x);
    ASSERT_EQ(apply_quantizer(spec, q), q) << "step " << spec.grid_step;
    for (std::size_t i = 0; i < x.size(); ++i) ASSERT_LE(q[i], x[i]);
  }
}

// ---------------------------------------------------------------------------
// Clip calibration

TEST(CalibrateClip, MonotoneInBits) {
  const double k2 = calibrate_clip(2).clip_factor;
  const double k3 = calibrate_clip(3).clip_factor;
  const double k4 = calibrate_clip(4).clip_factor;
  EXPECT_LT(k2, k3);
  EXPECT_LT(k3, k4);
}

TEST(CalibrateClip, LocallyOptimal) {
  const ClipCalibration c = calibrate_clip(4);
  EXPECT_LE(c.mse, gaussian_quant_mse(4, c.clip_factor - 0.1));
  EXPECT_LE(c.mse, gaussian_quant_mse(4, c.clip_factor + 0.1));
}

TEST(CalibrateClip, StableAcrossResolutions) {
  for (int b : {2, 4, 6}) {
    const double coarse = calibrate_clip(b, 111, 10000).clip_factor;
    const double fine = calibrate_clip(b, 441, 40000).clip_factor;
    EXPECT_NEAR(coarse, fine, 1e-4) << "bits=" << b;
  }
}

TEST(CalibrateClip, QuadratureAgreesWithMonteCarlo) {
  const ClipCalibration c = calibrate_clip(4);
  const double mc = monte_carlo_mse(4, c.clip_factor, 1000000, 77);
  EXPECT_LE(testing::rel_err(mc, c.mse), 0.02);
}

TEST(CalibrateClip, RejectsOutOfRangeBits) {
  EXPECT_THROW(calibrate_clip(1), ContractViolation);
  EXPECT_THROW(calibrate_clip(9), ContractViolation);
  EXPECT_THROW(calibrate_clip(4, 221, 100), ContractViolation);
}

TEST(CalibrateClip, GaussLegendreIntegratesPolynomials) {
  // An 8-point rule is exact through degree 15.
  const auto& gl = detail::gl8();
  double w = 0.0, x14 = 0.0;
  for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
    w += gl.weights[i];
    x14 += gl.weights[i] * std::pow(gl.nodes[i], 14);
  }
  EXPECT_NEAR(w, 2.0, 1e-14);
  EXPECT_NEAR(x14, 2.0 / 15.0, 1e-14);
}

TEST(ClipTable, RoundTrip) {
  const std::vector<ClipCalibration> rows{{2, 1.25, 0.1}, {4, 2.5, 0.01}};
  std::stringstream ss;
  write_clip_table(ss, rows);
  const auto back = read_clip_table(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].bits, 4);
  EXPECT_EQ(back[1].clip_factor, 2.5);
  EXPECT_EQ(back[0].mse, 0.1);
  std::stringstream bad("bits\tk_b\tmse\n2\t1\t1\n");
  EXPECT_THROW(read_clip_table(bad), ContractViolation);
}

TEST(ClipTable, PreloadFeedsTheCache) {
  const ClipCalibration row{7, calibrate_clip(7).clip_factor, 0.0};
  preload_clip_factors(std::span<const ClipCalibration>(&row, 1));
  EXPECT_EQ(calibrated_clip_factor(7), row.clip_factor);
}

}  // namespace
}  // namespace cage
