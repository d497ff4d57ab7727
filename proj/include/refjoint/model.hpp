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

// Assembly of the full network for each experimental structure.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "refjoint/encoders.hpp"
#include "refjoint/fusion.hpp"
#include "refjoint/heads.hpp"

namespace refjoint {

enum class Structure {
  kMcn,                 // shared trunk with top-down and bottom-up links, two branches
  kSingleRec,           // REC branch only, coarse scale
  kSingleRes,           // RES branch only, fine scale
  kOnlyHeadDifferent,   // one shared fine-scale branch feeding both heads
  kOnlyBackboneShared,  // encoders shared, fusion and branches fully separate
};

inline std::string to_string(Structure s) {
  switch (s) {
    case Structure::kMcn: return "mcn";
    case Structure::kSingleRec: return "single_rec";
    case Structure::kSingleRes: return "single_res";
    case Structure::kOnlyHeadDifferent: return "only_head_different";
    case Structure::kOnlyBackboneShared: return "only_backbone_shared";
  }
  return "?";
}

inline Structure parse_structure(const std::string& s) {
  if (s == "mcn") return Structure::kMcn;
  if (s == "single_rec") return Structure::kSingleRec;
  if (s == "single_res") return Structure::kSingleRes;
  if (s == "only_head_different") return Structure::kOnlyHeadDifferent;
  if (s == "only_backbone_shared") return Structure::kOnlyBackboneShared;
  throw ConfigError("unknown structure '" + s + "'");
}

struct ModelConfig {
  ModelDims dims;
  Structure structure = Structure::kMcn;
  bool use_cem = true;
  AnchorSet anchors = AnchorSet::defaults();
  CemSettings cem;

  bool has_rec() const { return structure != Structure::kSingleRes; }
  bool has_res() const { return structure != Structure::kSingleRec; }
  // CEM needs two distinct attended branches.
  bool cem_active() const {
    return use_cem && (structure == Structure::kMcn ||
                       structure == Structure::kOnlyBackboneShared);
  }
};

inline ParamStore build_params(const ModelConfig& cfg, std::uint64_t seed) {
  const ModelDims& d = cfg.dims;
  ParamStore p;
  register_encoder_params(p, d);
  switch (cfg.structure) {
    case Structure::kMcn:
      register_gated_fuse_params(p, "fuse", d);
      register_merge_params(p, "merge2", d.d, d.d2, d.d);
      register_merge_params(p, "merge3", d.d, d.d3, d.d);
      register_merge_params(p, "bottomup.mid", d.d, d.d, d.d);
      register_merge_params(p, "bottomup.top", d.d, d.d, d.d);
      register_attention_params(p, "att_rec", d);
      register_attention_params(p, "att_res", d);
      break;
    case Structure::kSingleRec:
      register_gated_fuse_params(p, "fuse", d);
      register_attention_params(p, "att_rec", d);
      break;
    case Structure::kSingleRes:
    case Structure::kOnlyHeadDifferent:
      register_gated_fuse_params(p, "fuse", d);
      register_merge_params(p, "merge2", d.d, d.d2, d.d);
      register_merge_params(p, "merge3", d.d, d.d3, d.d);
      register_attention_params(p, "att_res", d);
      break;
    case Structure::kOnlyBackboneShared:
      register_gated_fuse_params(p, "fuse_rec", d);
      register_gated_fuse_params(p, "fuse", d);
      register_merge_params(p, "merge2", d.d, d.d2, d.d);
      register_merge_params(p, "merge3", d.d, d.d3, d.d);
      register_attention_params(p, "att_rec", d);
      register_attention_params(p, "att_res", d);
      break;
  }
  if (cfg.has_rec()) register_rec_head_params(p, "rec", d);
  if (cfg.has_res()) register_res_decoder_params(p, "res", d);
  if (cfg.cem_active()) register_cem_params(p, d);
  p.init_uniform(seed);
  return p;
}

struct ModelOutput {
  VisualPyramid visual;
  TextFeature text;
  MultimodalPyramid multimodal;
  std::optional<AttendedBranch> rec_branch;
  std::optional<AttendedBranch> res_branch;
  std::optional<RecOutput> rec;
  std::optional<ResOutput> res;
};

inline ModelOutput forward(Graph& g, const ParamStore& p, const ModelConfig& cfg,
                           const Tensor& image, const std::vector<std::int64_t>& tokens) {
  const ModelDims& d = cfg.dims;
  ModelOutput out;
  out.visual = encode_image(g, image, p, d);
  out.text = encode_expression(g, tokens, p, d);
  const Tensor& f_t = out.text.f_t;
  MultimodalPyramid& mm = out.multimodal;
  const VisualPyramid& v = out.visual;

  switch (cfg.structure) {
    case Structure::kMcn:
      mm.f_m1 = gated_fuse(g, v.f_v1, f_t, p, "fuse");
      mm.f_m2 = scale_merge(g, mm.f_m1, v.f_v2, p, "merge2");
      mm.f_m3 = scale_merge(g, mm.f_m2, v.f_v3, p, "merge3");
      mm.f_m1_prime = bottom_up_merge(g, mm.f_m3, mm.f_m2, mm.f_m1, p, "bottomup");
      mm.f_m3_prime = mm.f_m3;
      out.rec_branch = guided_attention(g, mm.f_m1_prime, f_t, p, "att_rec");
      out.res_branch = guided_attention(g, mm.f_m3_prime, f_t, p, "att_res");
      break;
    case Structure::kSingleRec:
      mm.f_m1 = gated_fuse(g, v.f_v1, f_t, p, "fuse");
      mm.f_m1_prime = mm.f_m1;
      out.rec_branch = guided_attention(g, mm.f_m1_prime, f_t, p, "att_rec");
      break;
    case Structure::kSingleRes:
    case Structure::kOnlyHeadDifferent:
      mm.f_m1 = gated_fuse(g, v.f_v1, f_t, p, "fuse");
      mm.f_m2 = scale_merge(g, mm.f_m1, v.f_v2, p, "merge2");
      mm.f_m3 = scale_merge(g, mm.f_m2, v.f_v3, p, "merge3");
      mm.f_m3_prime = mm.f_m3;
      out.res_branch = guided_attention(g, mm.f_m3_prime, f_t, p, "att_res");
      break;
    case Structure::kOnlyBackboneShared:
      mm.f_m1_prime = gated_fuse(g, v.f_v1, f_t, p, "fuse_rec");
      mm.f_m1 = gated_fuse(g, v.f_v1, f_t, p, "fuse");
      mm.f_m2 = scale_merge(g, mm.f_m1, v.f_v2, p, "merge2");
      mm.f_m3 = scale_merge(g, mm.f_m2, v.f_v3, p, "merge3");
      mm.f_m3_prime = mm.f_m3;
      out.rec_branch = guided_attention(g, mm.f_m1_prime, f_t, p, "att_rec");
      out.res_branch = guided_attention(g, mm.f_m3_prime, f_t, p, "att_res");
      break;
  }

  if (cfg.has_rec()) {
    Tensor rec_map;
    if (cfg.structure == Structure::kOnlyHeadDifferent) {
      // The shared fine-scale branch is pooled down to the anchor grid.
      rec_map = resample(g, resample(g, branch_map(g, *out.res_branch), ResampleMode::kDown2Avg),
                         ResampleMode::kDown2Avg);
    } else {
      rec_map = branch_map(g, *out.rec_branch);
    }
    out.rec = rec_head(g, rec_map, p, "rec", d.n_anchors);
  }
  if (cfg.has_res()) out.res = res_decode(g, *out.res_branch, p, "res");
  return out;
}

/// Ground truth a forward pass is scored against.
struct LossTargets {
  CenterBox box;
  std::vector<double> coarse_mask;  // [h3 * w3], values 0/1
};

struct LossTerms {
  Tensor res;  // undefined when the structure has no RES branch
  Tensor rec;
  Tensor cem;
  Tensor total;
};

inline LossTerms compute_losses(Graph& g, const ModelOutput& out, const ParamStore& p,
                                const ModelConfig& cfg, const LossTargets& targets,
                                const LossWeights& weights) {
  LossTerms terms;
  if (out.res) terms.res = res_loss(g, out.res->prob, targets.coarse_mask);
  if (out.rec) {
    const BoxTarget t = build_rec_target(targets.box, cfg.anchors, ModelDims::kStride1,
                                         out.rec->h(), out.rec->w());
    terms.rec = rec_loss(g, *out.rec, t);
  }
  if (cfg.cem_active()) terms.cem = cem_loss(g, *out.res_branch, *out.rec_branch, p, cfg.cem);
  LossWeights w = weights;
  if (!cfg.use_cem) w.cem = 0.0;
  terms.total = total_loss(g, terms.res, terms.rec, terms.cem, w);
  return terms;
}

}  // namespace refjoint
