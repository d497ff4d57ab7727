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

// Visual backbone (three-scale feature pyramid) and the bi-GRU expression
// encoder with self-guided attention pooling.

#include <cstdint>
#include <string>
#include <vector>

#include "refjoint/errors.hpp"
#include "refjoint/model_dims.hpp"
#include "refjoint/ops.hpp"
#include "refjoint/params.hpp"
#include "refjoint/vocab.hpp"

namespace refjoint {

/// Feature maps at strides 16 (f_v1), 8 (f_v2) and 4 (f_v3).
struct VisualPyramid {
  Tensor f_v1;
  Tensor f_v2;
  Tensor f_v3;
};

struct TextFeature {
  Tensor f_t;            // [d_t]
  Tensor token_hiddens;  // [L x d_t], forward half then backward half
  Tensor attn_weights;   // [L]
};

struct GruWeights {
  Tensor wz, uz, bz;
  Tensor wr, ur, br;
  Tensor wh, uh, bh;
};

namespace detail {

struct ConvSpec {
  const char* name;
  std::size_t stride;
};

// stem, then three [stride-2, stride-1] stages tapping at strides 4, 8, 16.
inline constexpr ConvSpec kBackbone[] = {{"stem", 2}, {"s1a", 2}, {"s1b", 1}, {"s2a", 2},
                                         {"s2b", 1},  {"s3a", 2}, {"s3b", 1}};

inline std::size_t backbone_out_channels(const ModelDims& d, std::size_t layer) {
  switch (layer) {
    case 0: return d.stem_channels;
    case 1:
    case 2: return d.d3;
    case 3:
    case 4: return d.d2;
    default: return d.d1;
  }
}

inline void add_conv(ParamStore& p, const std::string& name, std::size_t c_out,
                     std::size_t c_in, std::size_t k, bool with_bias = true) {
  p.weight(name + ".w", {c_out, c_in, k, k}, c_in * k * k);
  if (with_bias) p.bias(name + ".b", {c_out});
}

inline void add_gru(ParamStore& p, const std::string& prefix, std::size_t d_in,
                    std::size_t d_h) {
  for (const char* gate : {"z", "r", "h"}) {
    p.weight(prefix + ".w" + gate, {d_in, d_h}, d_in);
    p.weight(prefix + ".u" + gate, {d_h, d_h}, d_h);
    p.bias(prefix + ".b" + gate, {d_h});
  }
}

}  // namespace detail

inline void register_encoder_params(ParamStore& p, const ModelDims& d) {
  std::size_t c_in = 3;
  for (std::size_t i = 0; i < std::size(detail::kBackbone); ++i) {
    const std::size_t c_out = detail::backbone_out_channels(d, i);
    detail::add_conv(p, std::string("vis.") + detail::kBackbone[i].name, c_out, c_in, 3);
    c_in = c_out;
  }
  if (d.d_t % 2 != 0) throw ConfigError("d_t must be even (two GRU directions)");
  p.weight("txt.embed", {d.vocab_size, d.embed_dim}, 1);
  detail::add_gru(p, "txt.fwd", d.embed_dim, d.d_t / 2);
  detail::add_gru(p, "txt.bwd", d.embed_dim, d.d_t / 2);
  p.weight("txt.att.w", {d.d_t, d.text_attn_dim}, d.d_t);
  p.bias("txt.att.b", {d.text_attn_dim});
  p.weight("txt.att.u", {d.text_attn_dim, 1}, d.text_attn_dim);
}

// Widths come from the registered kernels; the dims argument keeps the
// signature parallel with encode_expression.
inline VisualPyramid encode_image(Graph& g, const Tensor& image, const ParamStore& p,
                                  const ModelDims& /*dims*/) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw DimensionError("image must be [3 x H x W], got " + shape_str(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  if (h % ModelDims::kStride1 != 0 || w % ModelDims::kStride1 != 0) {
    throw DimensionError("image extents " + shape_str(image.shape()) +
                         " are not divisible by the coarsest stride 16");
  }
  Tensor x = image;
  VisualPyramid out;
  for (std::size_t i = 0; i < std::size(detail::kBackbone); ++i) {
    const std::string name = std::string("vis.") + detail::kBackbone[i].name;
    x = leaky_relu(g, conv2d(g, x, p.get(name + ".w"), p.get(name + ".b"),
                             detail::kBackbone[i].stride, 1));
    if (i == 2) out.f_v3 = x;
    if (i == 4) out.f_v2 = x;
    if (i == 6) out.f_v1 = x;
  }
  return out;
}

inline GruWeights gru_weights(const ParamStore& p, const std::string& prefix) {
  return GruWeights{p.get(prefix + ".wz"), p.get(prefix + ".uz"), p.get(prefix + ".bz"),
                    p.get(prefix + ".wr"), p.get(prefix + ".ur"), p.get(prefix + ".br"),
                    p.get(prefix + ".wh"), p.get(prefix + ".uh"), p.get(prefix + ".bh")};
}

/// One GRU step on row vectors x [1 x d_in], h [1 x d_h]:
///   z = sig(x Wz + h Uz + bz), r = sig(x Wr + h Ur + br),
///   h~ = tanh(x Wh + (r*h) Uh + bh), h' = (1 - z) * h + z * h~.
inline Tensor gru_cell(Graph& g, const Tensor& x, const Tensor& h, const GruWeights& w) {
  const Tensor xr = x.rank() == 1 ? reshape(g, x, {1, x.size()}) : x;
  const Tensor hr = h.rank() == 1 ? reshape(g, h, {1, h.size()}) : h;
  const Tensor z = sigmoid(g, add(g, add(g, matmul(g, xr, w.wz), matmul(g, hr, w.uz)), w.bz));
  const Tensor r = sigmoid(g, add(g, add(g, matmul(g, xr, w.wr), matmul(g, hr, w.ur)), w.br));
  const Tensor cand =
      tanh(g, add(g, add(g, matmul(g, xr, w.wh), matmul(g, mul(g, r, hr), w.uh)), w.bh));
  // (1 - z) h + z h~  ==  h + z (h~ - h)
  return add(g, hr, mul(g, z, sub(g, cand, hr)));
}

/// Runs both GRU directions over the token embeddings; row t of the result is
/// [forward state after token t, backward state after token t].
inline Tensor bidirectional_hiddens(Graph& g, const Tensor& embedded, const GruWeights& fwd,
                                    const GruWeights& bwd, std::size_t d_h) {
  const std::size_t len = embedded.dim(0);
  std::vector<Tensor> steps(len);
  for (std::size_t t = 0; t < len; ++t) {
    steps[t] = gather(g, embedded, [&] {
      std::vector<std::size_t> idx(embedded.dim(1));
      for (std::size_t c = 0; c < idx.size(); ++c) idx[c] = t * embedded.dim(1) + c;
      return idx;
    }());
  }
  std::vector<Tensor> fwd_states(len), bwd_states(len);
  Tensor h = Tensor::zeros({1, d_h});
  for (std::size_t t = 0; t < len; ++t) {
    h = gru_cell(g, steps[t], h, fwd);
    fwd_states[t] = h;
  }
  h = Tensor::zeros({1, d_h});
  for (std::size_t t = len; t-- > 0;) {
    h = gru_cell(g, steps[t], h, bwd);
    bwd_states[t] = h;
  }
  std::vector<Tensor> rows(len);
  for (std::size_t t = 0; t < len; ++t) {
    rows[t] = reshape(g, concat(g, {reshape(g, fwd_states[t], {d_h}),
                                    reshape(g, bwd_states[t], {d_h})}),
                      {1, 2 * d_h});
  }
  return concat(g, rows);
}

inline TextFeature encode_expression(Graph& g, const std::vector<std::int64_t>& tokens,
                                     const ParamStore& p, const ModelDims& d) {
  if (tokens.empty()) throw ContractError("expression has no tokens");
  if (tokens.size() > d.max_len) {
    throw ContractError("expression has " + std::to_string(tokens.size()) +
                        " tokens, limit is " + std::to_string(d.max_len));
  }
  const Tensor& table = p.get("txt.embed");
  std::vector<std::size_t> ids(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const bool known = tokens[i] >= 0 && static_cast<std::size_t>(tokens[i]) < table.dim(0);
    ids[i] = static_cast<std::size_t>(known ? tokens[i] : kUnkId);
  }
  const Tensor embedded = embedding(g, table, ids);
  TextFeature out;
  out.token_hiddens = bidirectional_hiddens(g, embedded, gru_weights(p, "txt.fwd"),
                                            gru_weights(p, "txt.bwd"), d.d_t / 2);
  const Tensor u = tanh(g, add(g, matmul(g, out.token_hiddens, p.get("txt.att.w")),
                               p.get("txt.att.b")));
  const Tensor scores = reshape(g, matmul(g, u, p.get("txt.att.u")), {tokens.size()});
  out.attn_weights = softmax(g, scores);
  out.f_t = reshape(g,
                    matmul(g, reshape(g, out.attn_weights, {1, tokens.size()}),
                           out.token_hiddens),
                    {d.d_t});
  return out;
}

}  // namespace refjoint
