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

#include "cage/quantize.hpp"
#include "cage/transform.hpp"

#include <string>

namespace cage {

enum class SteKind { Identity, TrustMasked };

inline SteKind parse_ste_kind(const std::string& name) {
  if (name == "identity") return SteKind::Identity;
  if (name == "trust-masked") return SteKind::TrustMasked;
  throw ContractViolation("unknown STE policy '" + name + "'");
}

inline std::string to_string(SteKind k) { return k == SteKind::Identity ? "identity" : "trust-masked"; }

/// Gradient rule for the quantized forward pass. The trust mask here is the
/// not-clipped indicator |z_i| ≤ k_b·σ in the transform domain.
struct StePolicy {
  SteKind kind = SteKind::Identity;
  QuantSpec spec;

  void validate() const {
    if (kind == SteKind::TrustMasked)
      require(spec.is_int(), "StePolicy: trust-masked STE requires an int scheme");
  }
};

/// Transform-domain mask of one int row: 1 where the entry was not clipped.
inline std::vector<double> trust_mask(const IntRowForward& f, double clip_factor) {
  std::vector<double> mask(f.padded_dim);
  const double limit = clip_factor * f.sigma;
  for (std::size_t i = 0; i < f.padded_dim; ++i) mask[i] = std::abs(f.z[i]) <= limit ? 1.0 : 0.0;
  return mask;
}

inline Vector ste_backward(const StePolicy& policy, std::span<const double> upstream, std::span<const double> x) {
  policy.validate();
  require(upstream.size() == x.size(), "ste_backward: gradient and input dims differ");
  if (policy.kind == SteKind::Identity) return Vector(upstream.begin(), upstream.end());

  const QuantSpec& spec = policy.spec;
  require(x.size() % spec.row_length == 0, "ste_backward: dim must be a multiple of row_length");
  const bool rotate = spec.scheme == Scheme::IntHadamard;
  const HadamardPlan plan(spec.row_length);
  Vector out;
  out.reserve(x.size());
  for (std::size_t start = 0; start < x.size(); start += spec.row_length) {
    const auto xr = x.subspan(start, spec.row_length);
    const auto gr = upstream.subspan(start, spec.row_length);
    const IntRowForward f = int_row_forward(spec, xr);
    const auto mask = trust_mask(f, spec.clip_factor);
    Vector gz = rotate ? hadamard_forward(plan, gr) : Vector(gr.begin(), gr.end());
    for (std::size_t i = 0; i < gz.size(); ++i) gz[i] *= mask[i];
    const Vector g = rotate ? hadamard_inverse(plan, gz) : gz;
    out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

}  // namespace cage
