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

#include <cstddef>

namespace refjoint {

/// Layer widths and input geometry. Defaults are the desk-scale setting.
struct ModelDims {
  std::size_t image_size = 64;
  std::size_t stem_channels = 16;
  // Visual pyramid channels, coarsest (stride 16) to finest (stride 4).
  std::size_t d1 = 64;
  std::size_t d2 = 64;
  std::size_t d3 = 64;
  std::size_t vocab_size = 23;
  std::size_t embed_dim = 32;
  std::size_t d_t = 64;  // concatenated bi-GRU width; each direction has d_t / 2
  std::size_t text_attn_dim = 32;
  std::size_t d = 64;  // multimodal projection width
  std::size_t rec_width = 64;
  std::size_t decoder_width = 32;
  std::size_t max_len = 15;
  std::size_t n_anchors = 3;

  static constexpr std::size_t kStride1 = 16;
  static constexpr std::size_t kStride2 = 8;
  static constexpr std::size_t kStride3 = 4;

  std::size_t grid1() const { return image_size / kStride1; }
  std::size_t grid3() const { return image_size / kStride3; }
};

}  // namespace refjoint
