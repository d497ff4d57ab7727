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

// Language-vision fusion: gated first-scale fusion, upward scale merges, the
// bottom-up path from the fine scale back to the coarse one, and the
// query-guided spatial attention that produces each branch's attended tensor.

#include <cmath>
#include <string>

#include "refjoint/encoders.hpp"
#include "refjoint/ops.hpp"
#include "refjoint/params.hpp"

namespace refjoint {

struct MultimodalPyramid {
  Tensor f_m1;        // [d x h1 x w1]
  Tensor f_m2;        // [d x h2 x w2]
  Tensor f_m3;        // [d x h3 x w3]
  Tensor f_m1_prime;  // REC input after the bottom-up path
  Tensor f_m3_prime;  // RES input
};

struct AttendedBranch {
  Tensor features;      // [(h*w) x d]
  Tensor spatial_attn;  // [h x w], sums to 1
  std::size_t h = 0;
  std::size_t w = 0;
};

namespace detail {

inline Tensor pointwise(Graph& g, const Tensor& x, const Tensor& kernel, const Tensor& bias = {}) {
  return conv2d(g, x, kernel, bias, 1, 0);
}

}  // namespace detail

inline void register_gated_fuse_params(ParamStore& p, const std::string& prefix,
                                       const ModelDims& d) {
  p.weight(prefix + ".wv", {d.d, d.d1, 1, 1}, d.d1);
  p.weight(prefix + ".wt", {d.d_t, d.d}, d.d_t);
}

// Two inputs projected through leaky(. W), concatenated, then mapped back to d
// channels by a 1x1 convolution.
inline void register_merge_params(ParamStore& p, const std::string& prefix, std::size_t d_a,
                                  std::size_t d_b, std::size_t d) {
  p.weight(prefix + ".wa", {d, d_a, 1, 1}, d_a);
  p.weight(prefix + ".wb", {d, d_b, 1, 1}, d_b);
  p.weight(prefix + ".wp", {d, 2 * d, 1, 1}, 2 * d);
  p.bias(prefix + ".bp", {d});
}

inline void register_attention_params(ParamStore& p, const std::string& prefix,
                                      const ModelDims& d) {
  p.weight(prefix + ".wq", {d.d_t, d.d}, d.d_t);
  p.weight(prefix + ".wk", {d.d, d.d}, d.d);
  p.weight(prefix + ".wv", {d.d, d.d}, d.d);
}

/// f_m1^l = leaky(f_v1^l W_v) * leaky(f_t W_t) at every location l.
inline Tensor gated_fuse(Graph& g, const Tensor& f_v1, const Tensor& f_t, const Tensor& w_v,
                         const Tensor& w_t) {
  if (f_v1.rank() != 3) throw DimensionError("gated_fuse needs a [c x h x w] map");
  if (f_t.size() != w_t.dim(0)) {
    throw DimensionError("gated_fuse: text feature " + shape_str(f_t.shape()) +
                         " vs projection " + shape_str(w_t.shape()));
  }
  const Tensor vis = leaky_relu(g, detail::pointwise(g, f_v1, w_v));
  const Tensor gate =
      leaky_relu(g, reshape(g, matmul(g, reshape(g, f_t, {1, f_t.size()}), w_t), {w_t.dim(1)}));
  return scale_rows(g, vis, gate);
}

inline Tensor gated_fuse(Graph& g, const Tensor& f_v1, const Tensor& f_t, const ParamStore& p,
                         const std::string& prefix) {
  return gated_fuse(g, f_v1, f_t, p.get(prefix + ".wv"), p.get(prefix + ".wt"));
}

/// Merge of two maps with equal spatial extents.
inline Tensor merge_block(Graph& g, const Tensor& a, const Tensor& b, const ParamStore& p,
                          const std::string& prefix) {
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw DimensionError("merge extents differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const Tensor pa = leaky_relu(g, detail::pointwise(g, a, p.get(prefix + ".wa")));
  const Tensor pb = leaky_relu(g, detail::pointwise(g, b, p.get(prefix + ".wb")));
  return detail::pointwise(g, concat(g, {pa, pb}), p.get(prefix + ".wp"), p.get(prefix + ".bp"));
}

/// Upsamples prev by 2 and merges it with the next finer visual map.
inline Tensor scale_merge(Graph& g, const Tensor& prev, const Tensor& f_vi, const ParamStore& p,
                          const std::string& prefix) {
  if (prev.rank() != 3 || f_vi.rank() != 3 || f_vi.dim(1) != 2 * prev.dim(1) ||
      f_vi.dim(2) != 2 * prev.dim(2)) {
    throw DimensionError("scale_merge: " + shape_str(f_vi.shape()) +
                         " is not twice the extent of " + shape_str(prev.shape()));
  }
  return merge_block(g, resample(g, prev, ResampleMode::kUp2Nearest), f_vi, p, prefix);
}

/// Fine-to-coarse path: down2(f_m3) merged with f_m2, then down2 again and
/// merged with f_m1.
inline Tensor bottom_up_merge(Graph& g, const Tensor& f_m3, const Tensor& f_m2,
                              const Tensor& f_m1, const ParamStore& p, const std::string& prefix) {
  if (f_m3.dim(1) != 2 * f_m2.dim(1) || f_m2.dim(1) != 2 * f_m1.dim(1) ||
      f_m3.dim(2) != 2 * f_m2.dim(2) || f_m2.dim(2) != 2 * f_m1.dim(2)) {
    throw DimensionError("bottom_up_merge: inconsistent pyramid " + shape_str(f_m3.shape()) +
                         ", " + shape_str(f_m2.shape()) + ", " + shape_str(f_m1.shape()));
  }
  const Tensor mid =
      merge_block(g, resample(g, f_m3, ResampleMode::kDown2Avg), f_m2, p, prefix + ".mid");
  return merge_block(g, resample(g, mid, ResampleMode::kDown2Avg), f_m1, p, prefix + ".top");
}

/// Query-guided spatial attention. The text query scores every location
/// against a key projection; the value projection at each location is
/// amplified by (1 + attn_l * h * w), so uniform attention scales by 2 and the
/// per-location identity of the features is kept.
inline AttendedBranch guided_attention(Graph& g, const Tensor& f_m, const Tensor& f_t,
                                       const Tensor& w_q, const Tensor& w_k, const Tensor& w_v) {
  if (f_m.rank() != 3 || f_m.dim(0) != w_k.dim(0) || f_t.size() != w_q.dim(0)) {
    throw DimensionError("guided_attention: map " + shape_str(f_m.shape()) + ", text " +
                         shape_str(f_t.shape()) + ", key " + shape_str(w_k.shape()));
  }
  const std::size_t d = f_m.dim(0), h = f_m.dim(1), w = f_m.dim(2), n = h * w;
  const Tensor rows = transpose(g, reshape(g, f_m, {d, n}));  // [n x d]
  const Tensor query = matmul(g, reshape(g, f_t, {1, f_t.size()}), w_q);
  const Tensor keys = matmul(g, rows, w_k);
  const Tensor scores =
      scale(g, reshape(g, matmul(g, keys, transpose(g, query)), {n}),
            1.0 / std::sqrt(static_cast<double>(w_k.dim(1))));
  const Tensor attn = softmax(g, scores);
  const Tensor values = matmul(g, rows, w_v);
  AttendedBranch out;
  out.features = scale_rows(g, values, add_scalar(g, scale(g, attn, static_cast<double>(n)), 1.0));
  out.spatial_attn = reshape(g, attn, {h, w});
  out.h = h;
  out.w = w;
  return out;
}

inline AttendedBranch guided_attention(Graph& g, const Tensor& f_m, const Tensor& f_t,
                                       const ParamStore& p, const std::string& prefix) {
  return guided_attention(g, f_m, f_t, p.get(prefix + ".wq"), p.get(prefix + ".wk"),
                          p.get(prefix + ".wv"));
}

/// Attended rows back to a [d x h x w] map.
inline Tensor branch_map(Graph& g, const AttendedBranch& b) {
  const std::size_t d = b.features.dim(1);
  return reshape(g, transpose(g, b.features), {d, b.h, b.w});
}

}  // namespace refjoint
