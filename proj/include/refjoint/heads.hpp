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

// REC regression head, RES decoder, and every training loss: mask BCE,
// anchor-based box/confidence loss, consistency energy, and their weighted
// total.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "refjoint/box.hpp"
#include "refjoint/encoders.hpp"
#include "refjoint/fusion.hpp"
#include "refjoint/ops.hpp"
#include "refjoint/params.hpp"

namespace refjoint {

inline constexpr std::size_t kBoxFields = 5;  // t_x, t_y, t_w, t_h, p_logit
inline constexpr double kResClip = 1e-7;

struct AnchorSet {
  std::vector<std::pair<double, double>> priors;  // (pw, ph) in pixels

  std::size_t count() const { return priors.size(); }
  static AnchorSet defaults() { return {{{8, 8}, {16, 16}, {24, 24}}}; }
};

/// Raw head output [N*5 x h x w]; channel a*5 + k holds field k of anchor a.
struct RecOutput {
  Tensor raw;
  std::size_t n_anchors = 0;

  std::size_t h() const { return raw.dim(1); }
  std::size_t w() const { return raw.dim(2); }
  std::size_t index(std::size_t anchor, std::size_t field, std::size_t row,
                    std::size_t col) const {
    return ((anchor * kBoxFields + field) * h() + row) * w() + col;
  }
};

struct ResOutput {
  Tensor mask_logits;  // [h3 x w3]
  Tensor prob;         // sigmoid(mask_logits)
};

struct BoxTarget {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t anchor_index = 0;
  std::array<double, 4> t_star{};  // tx*, ty*, tw*, th*
  std::vector<double> p_star;      // [N x h x w], one entry set
};

struct ScoredBox {
  CenterBox box;
  double confidence = 0.0;
  std::size_t anchor = 0;
  std::size_t row = 0;
  std::size_t col = 0;
};

struct LossWeights {
  double res = 0.1;
  double rec = 1.0;
  double cem = 1.0;
};

struct CemSettings {
  double s_w = 0.5;
  double s_b = 0.5;
  double norm_eps = 1e-8;
  double t_floor = 1e-6;
};

// ---------------------------------------------------------------- heads

inline void register_rec_head_params(ParamStore& p, const std::string& prefix, const ModelDims& d) {
  detail::add_conv(p, prefix + ".conv", d.rec_width, d.d, 3);
  detail::add_conv(p, prefix + ".out", d.n_anchors * kBoxFields, d.rec_width, 1);
}

inline RecOutput rec_head(Graph& g, const Tensor& map, const ParamStore& p,
                          const std::string& prefix, std::size_t n_anchors) {
  const Tensor hidden =
      leaky_relu(g, conv2d(g, map, p.get(prefix + ".conv.w"), p.get(prefix + ".conv.b"), 1, 1));
  return {conv2d(g, hidden, p.get(prefix + ".out.w"), p.get(prefix + ".out.b"), 1, 0), n_anchors};
}

inline void register_res_decoder_params(ParamStore& p, const std::string& prefix,
                                        const ModelDims& d) {
  detail::add_conv(p, prefix + ".conv1", d.decoder_width, d.d, 3);
  detail::add_conv(p, prefix + ".conv2", d.decoder_width, d.decoder_width, 3);
  detail::add_conv(p, prefix + ".out", 1, d.decoder_width, 1);
}

/// Two 3x3 convolutions and a 1x1 projection to one logit per cell.
inline ResOutput res_decode(Graph& g, const Tensor& map, const ParamStore& p,
                            const std::string& prefix) {
  Tensor x = leaky_relu(
      g, conv2d(g, map, p.get(prefix + ".conv1.w"), p.get(prefix + ".conv1.b"), 1, 1));
  x = leaky_relu(g, conv2d(g, x, p.get(prefix + ".conv2.w"), p.get(prefix + ".conv2.b"), 1, 1));
  x = conv2d(g, x, p.get(prefix + ".out.w"), p.get(prefix + ".out.b"), 1, 0);
  ResOutput out;
  out.mask_logits = reshape(g, x, {map.dim(1), map.dim(2)});
  out.prob = sigmoid(g, out.mask_logits);
  return out;
}

inline ResOutput res_decode(Graph& g, const AttendedBranch& branch, const ParamStore& p,
                            const std::string& prefix) {
  return res_decode(g, branch_map(g, branch), p, prefix);
}

// ---------------------------------------------------------------- RES loss

/// Summed (not averaged) per-cell cross-entropy against the coarse mask.
inline Tensor res_loss(Graph& g, const Tensor& prob, std::span<const double> g_prime) {
  if (prob.size() != g_prime.size()) {
    throw DimensionError("res_loss: prediction " + shape_str(prob.shape()) + " vs " +
                         std::to_string(g_prime.size()) + " ground-truth cells");
  }
  return bce_prob_sum(g, prob, g_prime, kResClip);
}

// ---------------------------------------------------------------- REC targets

inline double shape_iou(double w, double h, double pw, double ph) {
  const double inter = std::min(w, pw) * std::min(h, ph);
  return inter / (w * h + pw * ph - inter);
}

/// Cell containing the box center, best prior by centered shape IoU, and the
/// offsets the head is trained to regress.
inline BoxTarget build_rec_target(const CenterBox& gt, const AnchorSet& anchors,
                                  std::size_t stride, std::size_t grid_h, std::size_t grid_w) {
  if (!(gt.w > 0.0) || !(gt.h > 0.0)) {
    throw ContractError("degenerate ground-truth box (w=" + std::to_string(gt.w) +
                        ", h=" + std::to_string(gt.h) + ")");
  }
  if (anchors.count() == 0) throw ContractError("empty anchor set");
  const double s = static_cast<double>(stride);
  BoxTarget t;
  t.col = std::min(static_cast<std::size_t>(std::max(0.0, std::floor(gt.cx / s))), grid_w - 1);
  t.row = std::min(static_cast<std::size_t>(std::max(0.0, std::floor(gt.cy / s))), grid_h - 1);
  double best = -1.0;
  for (std::size_t a = 0; a < anchors.count(); ++a) {
    const double iou = shape_iou(gt.w, gt.h, anchors.priors[a].first, anchors.priors[a].second);
    if (iou > best) {
      best = iou;
      t.anchor_index = a;
    }
  }
  const auto [pw, ph] = anchors.priors[t.anchor_index];
  t.t_star = {gt.cx / s - static_cast<double>(t.col), gt.cy / s - static_cast<double>(t.row),
              std::log(gt.w / pw), std::log(gt.h / ph)};
  t.p_star.assign(anchors.count() * grid_h * grid_w, 0.0);
  t.p_star[(t.anchor_index * grid_h + t.row) * grid_w + t.col] = 1.0;
  return t;
}

// ---------------------------------------------------------------- REC loss

/// Center BCE and size smooth-L1 at the matched slot, plus confidence BCE over
/// every anchor and cell.
inline Tensor rec_loss(Graph& g, const RecOutput& out, const BoxTarget& target) {
  const std::size_t n = out.n_anchors, h = out.h(), w = out.w();
  if (out.raw.dim(0) != n * kBoxFields || target.p_star.size() != n * h * w) {
    throw DimensionError("rec_loss: head output " + shape_str(out.raw.shape()) +
                         " does not match target grid");
  }
  const std::size_t a = target.anchor_index, r = target.row, c = target.col;
  const Tensor centers = gather(g, out.raw, {out.index(a, 0, r, c), out.index(a, 1, r, c)});
  const Tensor sizes = gather(g, out.raw, {out.index(a, 2, r, c), out.index(a, 3, r, c)});
  std::vector<std::size_t> conf_idx;
  conf_idx.reserve(n * h * w);
  for (std::size_t ai = 0; ai < n; ++ai)
    for (std::size_t ri = 0; ri < h; ++ri)
      for (std::size_t ci = 0; ci < w; ++ci) conf_idx.push_back(out.index(ai, 4, ri, ci));
  const Tensor conf = gather(g, out.raw, std::move(conf_idx));

  const std::array<double, 2> center_t{target.t_star[0], target.t_star[1]};
  const std::array<double, 2> size_targets{target.t_star[2], target.t_star[3]};
  const Tensor box_term =
      add(g, bce_logits_sum(g, centers, center_t), smooth_l1_sum(g, sizes, size_targets));
  return add(g, box_term, bce_logits_sum(g, conf, target.p_star));
}

/// Every anchor slot decoded to a pixel box, sorted by confidence (highest
/// first, ties by slot order). Element 0 is the REC prediction.
inline std::vector<ScoredBox> decode_boxes(const RecOutput& out, const AnchorSet& anchors,
                                           std::size_t stride) {
  const std::size_t h = out.h(), w = out.w();
  const double s = static_cast<double>(stride);
  auto raw = out.raw.data();
  std::vector<ScoredBox> boxes;
  boxes.reserve(out.n_anchors * h * w);
  for (std::size_t a = 0; a < out.n_anchors; ++a) {
    const auto [pw, ph] = anchors.priors.at(a);
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        ScoredBox b;
        b.box.cx = (static_cast<double>(c) + sigmoid(raw[out.index(a, 0, r, c)])) * s;
        b.box.cy = (static_cast<double>(r) + sigmoid(raw[out.index(a, 1, r, c)])) * s;
        b.box.w = pw * std::exp(raw[out.index(a, 2, r, c)]);
        b.box.h = ph * std::exp(raw[out.index(a, 3, r, c)]);
        b.confidence = sigmoid(raw[out.index(a, 4, r, c)]);
        b.anchor = a;
        b.row = r;
        b.col = c;
        boxes.push_back(b);
      }
    }
  }
  std::stable_sort(boxes.begin(), boxes.end(), [](const ScoredBox& x, const ScoredBox& y) {
    return x.confidence > y.confidence;
  });
  return boxes;
}

// ---------------------------------------------------------------- CEM

inline void register_cem_params(ParamStore& p, const ModelDims& d) {
  p.weight("cem.ws", {d.d, 1}, d.d);
  p.weight("cem.wc", {d.d, 1}, d.d);
}

/// Consistency energy between attended RES rows fs [ns x d] and REC rows
/// fc [nc x d]:
///   E_s = fs W_s, E_c = fc W_c,
///   T(i,j) = s_w cos(fs_i, fc_j) + s_b  (floored at t_floor),
///   C(i,j) = E_s(i) + E_c(j) + log T(i,j) - log sum exp E_s - log sum exp E_c,
///   loss = -sum_ij C(i,j).
inline Tensor cem_loss(Graph& g, const Tensor& fs, const Tensor& fc, const Tensor& w_s,
                       const Tensor& w_c, const CemSettings& cfg = {}) {
  if (fs.rank() != 2 || fc.rank() != 2 || fs.dim(1) != fc.dim(1) || w_s.dim(0) != fs.dim(1) ||
      w_c.dim(0) != fc.dim(1)) {
    throw DimensionError("cem_loss: features " + shape_str(fs.shape()) + " / " +
                         shape_str(fc.shape()) + ", projections " + shape_str(w_s.shape()) +
                         " / " + shape_str(w_c.shape()));
  }
  const double ns = static_cast<double>(fs.dim(0));
  const double nc = static_cast<double>(fc.dim(0));
  const Tensor e_s = reshape(g, matmul(g, fs, w_s), {fs.dim(0)});
  const Tensor e_c = reshape(g, matmul(g, fc, w_c), {fc.dim(0)});
  const Tensor cosine = matmul(g, normalize_rows(g, fs, cfg.norm_eps),
                               transpose(g, normalize_rows(g, fc, cfg.norm_eps)));
  const Tensor corr = clamp_min(g, add_scalar(g, scale(g, cosine, cfg.s_w), cfg.s_b), cfg.t_floor);

  // sum_ij C(i,j) = nc sum E_s + ns sum E_c + sum log T - ns nc (lse E_s + lse E_c)
  Tensor energy = add(g, scale(g, sum(g, e_s), nc), scale(g, sum(g, e_c), ns));
  energy = add(g, energy, sum(g, log(g, corr)));
  energy = sub(g, energy, scale(g, add(g, logsumexp(g, e_s), logsumexp(g, e_c)), ns * nc));
  return scale(g, energy, -1.0);
}

inline Tensor cem_loss(Graph& g, const AttendedBranch& res_branch,
                       const AttendedBranch& rec_branch, const ParamStore& p,
                       const CemSettings& cfg = {}) {
  return cem_loss(g, res_branch.features, rec_branch.features, p.get("cem.ws"),
                  p.get("cem.wc"), cfg);
}

// ---------------------------------------------------------------- total

/// lambda_s * res + lambda_c * rec + lambda_e * cem. Undefined terms are
/// absent (single-task structures, CEM disabled).
inline Tensor total_loss(Graph& g, const Tensor& res, const Tensor& rec, const Tensor& cem,
                         const LossWeights& weights = {}) {
  Tensor total;
  const auto accumulate = [&](const Tensor& term, double weight, const char* name) {
    if (!term.defined()) return;
    if (!std::isfinite(term.item())) {
      throw TrainingFault(std::string("non-finite ") + name + " loss");
    }
    const Tensor scaled = scale(g, term, weight);
    total = total.defined() ? add(g, total, scaled) : scaled;
  };
  accumulate(res, weights.res, "res");
  accumulate(rec, weights.rec, "rec");
  accumulate(cem, weights.cem, "cem");
  if (!total.defined()) total = Tensor::scalar(0.0);
  return total;
}

}  // namespace refjoint
