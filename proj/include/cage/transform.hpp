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

#include <bit>
#include <cmath>
#include <span>

namespace cage {

/// Normalized Walsh–Hadamard rotation for rows of length `logical_dim`.
/// Rows are zero-padded to the next power of two; the inverse truncates.
class HadamardPlan {
 public:
  explicit HadamardPlan(std::size_t logical_dim)
      : logical_dim_(logical_dim), padded_dim_(std::bit_ceil(logical_dim)) {
    require(logical_dim > 0, "HadamardPlan: dimension must be positive");
    scale_ = 1.0 / std::sqrt(static_cast<double>(padded_dim_));
  }

  std::size_t logical_dim() const noexcept { return logical_dim_; }
  std::size_t padded_dim() const noexcept { return padded_dim_; }
  double scale() const noexcept { return scale_; }

 private:
  std::size_t logical_dim_;
  std::size_t padded_dim_;
  double scale_;
};

/// Unnormalized in-place butterfly; applying it twice multiplies by size.
inline void fwht_inplace(std::span<double> data) {
  const std::size_t n = data.size();
  require(std::has_single_bit(n), "fwht_inplace: length must be a power of two");
  for (std::size_t h = 1; h < n; h <<= 1) {
    for (std::size_t i = 0; i < n; i += h << 1) {
      for (std::size_t j = i; j < i + h; ++j) {
        const double a = data[j];
        const double b = data[j + h];
        data[j] = a + b;
        data[j + h] = a - b;
      }
    }
  }
}

inline Vector hadamard_forward(const HadamardPlan& plan, std::span<const double> x) {
  require(x.size() == plan.logical_dim(), "hadamard_forward: input length must equal logical_dim");
  Vector z(plan.padded_dim(), 0.0);
  std::copy(x.begin(), x.end(), z.begin());
  fwht_inplace(z);
  for (auto& v : z) v *= plan.scale();
  return z;
}

/// Hᵀz truncated to the logical length. H is symmetric, so this is the same
/// butterfly as the forward pass.
inline Vector hadamard_inverse(const HadamardPlan& plan, std::span<const double> z) {
  require(z.size() == plan.padded_dim(), "hadamard_inverse: input length must equal padded_dim");
  Vector x(z.begin(), z.end());
  fwht_inplace(x);
  for (auto& v : x) v *= plan.scale();
  x.resize(plan.logical_dim());
  return x;
}

}  // namespace cage
