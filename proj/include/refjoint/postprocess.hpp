// Copyright 2026 The refjoint Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

// Box-guided refinement of the RES probability map: soft non-located
// suppression (fixed or confidence-adaptive factors), the hard RoI-crop
// baseline, and thresholding.

#include <string>

#include "refjoint/box.hpp"
#include "refjoint/errors.hpp"
#include "refjoint/mask.hpp"
#include "refjoint/tensor.hpp"

namespace refjoint {

enum class Refinement { kNone, kRoiCrop, kSoftNls, kAsnls };

inline std::string to_string(Refinement r) {
  switch (r) {
    case Refinement::kNone: return "none";
    case Refinement::kRoiCrop: return "roi_crop";
    case Refinement::kSoftNls: return "soft_nls";
    case Refinement::kAsnls: return "asnls";
  }
  return "?";
}

inline Refinement parse_refinement(const std::string& s) {
  if (s == "none") return Refinement::kNone;
  if (s == "roi_crop") return Refinement::kRoiCrop;
  if (s == "soft_nls") return Refinement::kSoftNls;
  if (s == "asnls") return Refinement::kAsnls;
  throw ConfigError("unknown post-processing mode '" + s + "'");
}

struct RefinementConfig {
  Refinement mode = Refinement::kAsnls;
  double alpha_up = 1.5;   // fixed factors for soft_nls
  double alpha_dec = 0.5;
  double lambda_au = -1.0;  // adaptive: alpha_up = lambda_au * p + lambda_bu
  double lambda_ad = 1.0;   //           alpha_dec = lambda_ad * p + lambda_bd
  double lambda_bu = 2.0;
  double lambda_bd = 0.0;
  double bin_threshold = 0.35;

  void validate() const {
    if (!(bin_threshold > 0.0 && bin_threshold < 1.0)) {
      throw ConfigError("bin_threshold must lie in (0, 1)");
    }
    if (mode == Refinement::kSoftNls && !(alpha_up > 1.0 && alpha_dec > 0.0 && alpha_dec < 1.0)) {
      throw ConfigError("soft_nls needs alpha_up > 1 and 0 < alpha_dec < 1");
    }
  }
};

struct NlsFactors {
  double up = 1.0;
  double dec = 1.0;
};

struct RefinedMask {
  Tensor values;           // [h x w], not clamped
  bool empty_box = false;  // box had zero area; every cell was decayed
};

inline NlsFactors asnls_factors(double confidence, const RefinementConfig& cfg) {
  if (!(confidence >= 0.0 && confidence <= 1.0)) {
    throw ContractError("confidence " + std::to_string(confidence) + " outside [0, 1]");
  }
  return {cfg.lambda_au * confidence + cfg.lambda_bu, cfg.lambda_ad * confidence + cfg.lambda_bd};
}

/// Scales cells whose centers fall inside `box` by factors.up and all others
/// by factors.dec. Cell (r, c) has center ((c + 0.5) * stride, (r + 0.5) * stride).
inline RefinedMask apply_nls(const Tensor& prob, const Box& box, NlsFactors factors,
                             std::size_t mask_stride) {
  if (prob.rank() != 2) throw DimensionError("mask must be [h x w], got " + shape_str(prob.shape()));
  const std::size_t h = prob.dim(0), w = prob.dim(1);
  RefinedMask out{Tensor::zeros({h, w}), box.area() <= 0.0};
  auto src = prob.data();
  auto dst = out.values.data();
  const double s = static_cast<double>(mask_stride);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const bool inside = !out.empty_box &&
                          box.contains((static_cast<double>(c) + 0.5) * s,
                                       (static_cast<double>(r) + 0.5) * s);
      dst[r * w + c] = (inside ? factors.up : factors.dec) * src[r * w + c];
    }
  }
  return out;
}

/// Hard baseline: keeps cells inside the box, zeroes the rest.
inline RefinedMask roi_crop(const Tensor& prob, const Box& box, std::size_t mask_stride) {
  return apply_nls(prob, box, {1.0, 0.0}, mask_stride);
}

/// 1 where refined > threshold.
inline BinaryMask binarize(const Tensor& refined, double threshold) {
  if (refined.rank() != 2) throw DimensionError("binarize needs [h x w]");
  BinaryMask m(refined.dim(0), refined.dim(1));
  auto v = refined.data();
  for (std::size_t i = 0; i < v.size(); ++i) m.bits[i] = v[i] > threshold ? 1 : 0;
  return m;
}

/// Applies the configured refinement given the REC box and its confidence.
inline RefinedMask refine(const Tensor& prob, const Box& box, double confidence,
                          const RefinementConfig& cfg, std::size_t mask_stride) {
  switch (cfg.mode) {
    case Refinement::kNone: return {prob.clone(), false};
    case Refinement::kRoiCrop: return roi_crop(prob, box, mask_stride);
    case Refinement::kSoftNls: return apply_nls(prob, box, {cfg.alpha_up, cfg.alpha_dec}, mask_stride);
    case Refinement::kAsnls:
      return apply_nls(prob, box, asnls_factors(confidence, cfg), mask_stride);
  }
  return {prob.clone(), false};
}

}  // namespace refjoint
