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

// Synthetic referring-expression scenes: rasterized shapes, templated
// expressions and the sample/manifest files the harness trains on.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "refjoint/box.hpp"
#include "refjoint/container.hpp"
#include "refjoint/errors.hpp"
#include "refjoint/mask.hpp"
#include "refjoint/rng.hpp"
#include "refjoint/vocab.hpp"

namespace refjoint {

enum class ShapeKind : int { kCircle = 0, kSquare = 1, kTriangle = 2 };
enum class ColorKind : int { kRed = 0, kGreen = 1, kBlue = 2, kYellow = 3 };

inline constexpr std::array<const char*, 3> kShapeNames{"circle", "square", "triangle"};
inline constexpr std::array<const char*, 4> kColorNames{"red", "green", "blue", "yellow"};
inline constexpr std::array<std::array<double, 3>, 4> kColorRgb{{
    {0.90, 0.15, 0.15}, {0.15, 0.80, 0.20}, {0.20, 0.30, 0.95}, {0.95, 0.85, 0.15}}};
inline constexpr std::array<const char*, 5> kOrdinals{"first", "second", "third", "fourth",
                                                      "fifth"};

struct SynthConfig {
  std::size_t image_size = 64;
  std::size_t min_objects = 2;
  std::size_t max_objects = 4;
  double min_size = 10.0;
  double max_size = 24.0;
  std::size_t coarse_stride = 4;
  double max_overlap = 0.2;         // of the smaller object's area
  double size_margin = 4.0;         // px between the referent and the next size
  double location_margin = 6.0;     // px between the referent and the next position
  double noise = 0.04;              // background jitter amplitude
  std::size_t max_placements = 1000;
  std::size_t max_scene_attempts = 200;

  void validate() const {
    if (image_size == 0 || image_size % coarse_stride != 0) {
      throw ConfigError("image_size must be a positive multiple of coarse_stride");
    }
    if (min_objects < 2 || max_objects > 5 || min_objects > max_objects) {
      throw ConfigError("object count range must lie within [2, 5]");
    }
    if (!(min_size > 0.0) || min_size > max_size || max_size >= static_cast<double>(image_size)) {
      throw ConfigError("object size range invalid for image size");
    }
    if (!(max_overlap >= 0.0 && max_overlap < 1.0)) throw ConfigError("max_overlap out of [0,1)");
  }

  nlohmann::ordered_json to_json() const {
    return {{"image_size", image_size},         {"min_objects", min_objects},
            {"max_objects", max_objects},       {"min_size", min_size},
            {"max_size", max_size},             {"coarse_stride", coarse_stride},
            {"max_overlap", max_overlap},       {"size_margin", size_margin},
            {"location_margin", location_margin}, {"noise", noise},
            {"max_placements", max_placements}, {"max_scene_attempts", max_scene_attempts}};
  }

  static SynthConfig from_json(const nlohmann::json& j) {
    SynthConfig c;
    c.image_size = j.value("image_size", c.image_size);
    c.min_objects = j.value("min_objects", c.min_objects);
    c.max_objects = j.value("max_objects", c.max_objects);
    c.min_size = j.value("min_size", c.min_size);
    c.max_size = j.value("max_size", c.max_size);
    c.coarse_stride = j.value("coarse_stride", c.coarse_stride);
    c.max_overlap = j.value("max_overlap", c.max_overlap);
    c.size_margin = j.value("size_margin", c.size_margin);
    c.location_margin = j.value("location_margin", c.location_margin);
    c.noise = j.value("noise", c.noise);
    c.max_placements = j.value("max_placements", c.max_placements);
    c.max_scene_attempts = j.value("max_scene_attempts", c.max_scene_attempts);
    return c;
  }
};

struct Object {
  ShapeKind shape = ShapeKind::kCircle;
  ColorKind color = ColorKind::kRed;
  double cx = 0.0;
  double cy = 0.0;
  double size = 0.0;
  BinaryMask mask;
  Box box;
};

struct Scene {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> image;  // [3 x H x W], row-major
  std::vector<Object> objects;
  std::size_t referent_index = 0;
  std::vector<std::string> expression;

  const Object& referent() const { return objects.at(referent_index); }
};

/// Analytic membership test for a point in image coordinates.
inline bool shape_contains(ShapeKind shape, double cx, double cy, double size, double x,
                           double y) {
  const double h = size / 2;
  switch (shape) {
    case ShapeKind::kCircle:
      return (x - cx) * (x - cx) + (y - cy) * (y - cy) <= h * h;
    case ShapeKind::kSquare:
      return std::abs(x - cx) <= h && std::abs(y - cy) <= h;
    case ShapeKind::kTriangle: {
      // Apex up, base and height both equal to size.
      const double top = cy - h;
      if (y < top || y > cy + h) return false;
      return std::abs(x - cx) <= (y - top) / 2;
    }
  }
  return false;
}

inline double shape_area(ShapeKind shape, double size) {
  switch (shape) {
    case ShapeKind::kCircle:
      return std::numbers::pi * size * size / 4;
    case ShapeKind::kSquare:
      return size * size;
    case ShapeKind::kTriangle:
      return size * size / 2;
  }
  return 0.0;
}

inline double shape_perimeter(ShapeKind shape, double size) {
  switch (shape) {
    case ShapeKind::kCircle:
      return std::numbers::pi * size;
    case ShapeKind::kSquare:
      return 4 * size;
    case ShapeKind::kTriangle:
      return size + 2 * std::hypot(size / 2, size);
  }
  return 0.0;
}

/// Pixel (r, c) is set iff its center (c + 0.5, r + 0.5) is inside.
inline BinaryMask rasterize(ShapeKind shape, double cx, double cy, double size, std::size_t rows,
                            std::size_t cols) {
  BinaryMask m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      m.at(r, c) = shape_contains(shape, cx, cy, size, c + 0.5, r + 0.5) ? 1 : 0;
    }
  }
  return m;
}

/// Tight box over set pixels, using pixel edges. Empty mask yields an empty box.
inline Box tight_box(const BinaryMask& m) {
  std::size_t r0 = m.rows, r1 = 0, c0 = m.cols, c1 = 0;
  bool any = false;
  for (std::size_t r = 0; r < m.rows; ++r) {
    for (std::size_t c = 0; c < m.cols; ++c) {
      if (!m.at(r, c)) continue;
      any = true;
      r0 = std::min(r0, r);
      r1 = std::max(r1, r);
      c0 = std::min(c0, c);
      c1 = std::max(c1, c);
    }
  }
  if (!any) return {};
  return {static_cast<double>(c0), static_cast<double>(r0), static_cast<double>(c1 + 1),
          static_cast<double>(r1 + 1)};
}

/// Block (r, c) is set iff at least half of its stride x stride pixels are set.
inline BinaryMask coarse_mask(const BinaryMask& full, std::size_t stride) {
  if (stride == 0 || full.rows % stride != 0 || full.cols % stride != 0) {
    throw DimensionError("coarse_mask: " + std::to_string(full.rows) + "x" +
                         std::to_string(full.cols) + " not divisible by stride " +
                         std::to_string(stride));
  }
  BinaryMask out(full.rows / stride, full.cols / stride);
  for (std::size_t r = 0; r < out.rows; ++r) {
    for (std::size_t c = 0; c < out.cols; ++c) {
      std::size_t n = 0;
      for (std::size_t dr = 0; dr < stride; ++dr)
        for (std::size_t dc = 0; dc < stride; ++dc) n += full.at(r * stride + dr, c * stride + dc);
      out.at(r, c) = 2 * n >= stride * stride ? 1 : 0;
    }
  }
  return out;
}

inline std::size_t overlap_pixels(const BinaryMask& a, const BinaryMask& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) n += a.bits[i] & b.bits[i];
  return n;
}

namespace detail {

inline std::vector<std::size_t> same_kind(const std::vector<Object>& objs, const Object& ref,
                                          bool match_color) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < objs.size(); ++i) {
    if (objs[i].shape == ref.shape && (!match_color || objs[i].color == ref.color)) {
      out.push_back(i);
    }
  }
  return out;
}

inline std::string color_word(const Object& o) { return kColorNames[static_cast<int>(o.color)]; }
inline std::string shape_word(const Object& o) { return kShapeNames[static_cast<int>(o.shape)]; }

// Coordinate of object i along a direction; larger means "more left/right/...".
inline double extremity(const Object& o, const std::string& dir) {
  if (dir == "left") return -o.cx;
  if (dir == "right") return o.cx;
  if (dir == "top") return -o.cy;
  return o.cy;
}

}  // namespace detail

/// Shortest uniquely-identifying expression for objects[ref], or nullopt.
/// Candidates are tried by token count; equal lengths keep listing order.
inline std::optional<std::vector<std::string>> describe(const std::vector<Object>& objs,
                                                        std::size_t ref,
                                                        const SynthConfig& cfg) {
  const Object& o = objs.at(ref);
  const auto cs = detail::same_kind(objs, o, true);
  const std::string color = detail::color_word(o), shape = detail::shape_word(o);

  if (cs.size() == 1) return std::vector<std::string>{color, shape};

  // Size rank among same color and shape.
  {
    bool smallest = true, largest = true;
    for (std::size_t i : cs) {
      if (i == ref) continue;
      if (objs[i].size - o.size < cfg.size_margin) smallest = false;
      if (o.size - objs[i].size < cfg.size_margin) largest = false;
    }
    if (smallest) return std::vector<std::string>{"small", color, shape};
    if (largest) return std::vector<std::string>{"large", color, shape};
  }

  for (const char* dir : {"left", "right", "top", "bottom"}) {
    bool extreme = true;
    for (std::size_t i : cs) {
      if (i == ref) continue;
      if (detail::extremity(o, dir) - detail::extremity(objs[i], dir) < cfg.location_margin) {
        extreme = false;
      }
    }
    if (extreme) return std::vector<std::string>{color, shape, "on", "the", dir};
  }

  // Ordinal among same shape, counted from the left.
  {
    const auto ss = detail::same_kind(objs, o, false);
    std::vector<std::size_t> order = ss;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return objs[a].cx < objs[b].cx; });
    bool separated = true;
    for (std::size_t k = 1; k < order.size(); ++k) {
      if (objs[order[k]].cx - objs[order[k - 1]].cx < cfg.location_margin) separated = false;
    }
    const auto pos = std::find(order.begin(), order.end(), ref) - order.begin();
    if (separated && static_cast<std::size_t>(pos) < kOrdinals.size()) {
      return std::vector<std::string>{kOrdinals[pos], shape, "from", "the", "left"};
    }
  }
  return std::nullopt;
}

/// Objects consistent with an expression under the same template semantics.
inline std::vector<std::size_t> resolve_expression(const std::vector<Object>& objs,
                                                   const std::vector<std::string>& words,
                                                   const SynthConfig& cfg) {
  const auto color_of = [](const std::string& w) -> std::optional<ColorKind> {
    for (std::size_t i = 0; i < kColorNames.size(); ++i)
      if (w == kColorNames[i]) return static_cast<ColorKind>(i);
    return std::nullopt;
  };
  const auto shape_of = [](const std::string& w) -> std::optional<ShapeKind> {
    for (std::size_t i = 0; i < kShapeNames.size(); ++i)
      if (w == kShapeNames[i]) return static_cast<ShapeKind>(i);
    return std::nullopt;
  };
  const auto with = [&](std::optional<ColorKind> c, ShapeKind s) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < objs.size(); ++i)
      if (objs[i].shape == s && (!c || objs[i].color == *c)) out.push_back(i);
    return out;
  };
  const auto bad = [&] {
    std::string s;
    for (const auto& w : words) s += (s.empty() ? "" : " ") + w;
    return GenerationError("unparseable expression: \"" + s + "\"");
  };

  if (words.size() == 2) {
    auto c = color_of(words[0]);
    auto s = shape_of(words[1]);
    if (!c || !s) throw bad();
    return with(c, *s);
  }
  if (words.size() == 3) {
    auto c = color_of(words[1]);
    auto s = shape_of(words[2]);
    if (!c || !s || (words[0] != "small" && words[0] != "large")) throw bad();
    const auto cand = with(c, *s);
    std::vector<std::size_t> out;
    for (std::size_t i : cand) {
      bool ok = true;
      for (std::size_t j : cand) {
        if (j == i) continue;
        const double gap = words[0] == "small" ? objs[j].size - objs[i].size
                                               : objs[i].size - objs[j].size;
        if (gap < cfg.size_margin) ok = false;
      }
      if (ok) out.push_back(i);
    }
    return out;
  }
  if (words.size() == 5 && words[2] == "on" && words[3] == "the") {
    auto c = color_of(words[0]);
    auto s = shape_of(words[1]);
    const std::string& dir = words[4];
    if (!c || !s || (dir != "left" && dir != "right" && dir != "top" && dir != "bottom")) {
      throw bad();
    }
    const auto cand = with(c, *s);
    std::vector<std::size_t> out;
    for (std::size_t i : cand) {
      bool ok = true;
      for (std::size_t j : cand) {
        if (j != i &&
            detail::extremity(objs[i], dir) - detail::extremity(objs[j], dir) < cfg.location_margin)
          ok = false;
      }
      if (ok) out.push_back(i);
    }
    return out;
  }
  if (words.size() == 5 && words[2] == "from" && words[3] == "the" && words[4] == "left") {
    auto s = shape_of(words[1]);
    const auto ord = std::find(kOrdinals.begin(), kOrdinals.end(), words[0]);
    if (!s || ord == kOrdinals.end()) throw bad();
    auto cand = with(std::nullopt, *s);
    std::stable_sort(cand.begin(), cand.end(),
                     [&](std::size_t a, std::size_t b) { return objs[a].cx < objs[b].cx; });
    const auto k = static_cast<std::size_t>(ord - kOrdinals.begin());
    if (k >= cand.size()) return {};
    return {cand[k]};
  }
  throw bad();
}

/// True when some other object shares the referent's shape or color.
inline bool is_ambiguous(const std::vector<Object>& objs, std::size_t ref) {
  for (std::size_t i = 0; i < objs.size(); ++i) {
    if (i != ref && (objs[i].shape == objs[ref].shape || objs[i].color == objs[ref].color)) {
      return true;
    }
  }
  return false;
}

namespace detail {

inline std::vector<Object> place_objects(Rng& rng, const SynthConfig& cfg) {
  const std::size_t n = static_cast<std::size_t>(
      rng.integer(static_cast<std::int64_t>(cfg.min_objects),
                  static_cast<std::int64_t>(cfg.max_objects)));
  const double side = static_cast<double>(cfg.image_size);
  std::vector<Object> objs;
  std::size_t rejected = 0;
  while (objs.size() < n) {
    Object o;
    o.shape = static_cast<ShapeKind>(rng.index(kShapeNames.size()));
    o.color = static_cast<ColorKind>(rng.index(kColorNames.size()));
    o.size = rng.uniform(cfg.min_size, cfg.max_size);
    o.cx = rng.uniform(o.size / 2, side - o.size / 2);
    o.cy = rng.uniform(o.size / 2, side - o.size / 2);
    o.mask = rasterize(o.shape, o.cx, o.cy, o.size, cfg.image_size, cfg.image_size);
    const std::size_t area = o.mask.count();
    bool ok = area > 0;
    for (const auto& other : objs) {
      if (!ok) break;
      const double smaller = static_cast<double>(std::min(area, other.mask.count()));
      if (static_cast<double>(overlap_pixels(o.mask, other.mask)) >= cfg.max_overlap * smaller) {
        ok = false;
      }
    }
    if (!ok) {
      if (++rejected >= cfg.max_placements) {
        throw GenerationError("placement rejected " + std::to_string(rejected) +
                              " times; configuration too dense");
      }
      continue;
    }
    o.box = tight_box(o.mask);
    objs.push_back(std::move(o));
  }
  return objs;
}

inline std::vector<double> paint(Rng& rng, const std::vector<Object>& objs,
                                 const SynthConfig& cfg) {
  const std::size_t hw = cfg.image_size * cfg.image_size;
  std::vector<double> img(3 * hw);
  for (std::size_t i = 0; i < hw; ++i) {
    const double base = 0.1 + cfg.noise * rng.uniform();
    for (std::size_t ch = 0; ch < 3; ++ch) img[ch * hw + i] = base;
  }
  // Later objects paint over earlier ones where they touch.
  for (const auto& o : objs) {
    const auto& rgb = kColorRgb[static_cast<int>(o.color)];
    for (std::size_t i = 0; i < hw; ++i) {
      if (!o.mask.bits[i]) continue;
      for (std::size_t ch = 0; ch < 3; ++ch) img[ch * hw + i] = rgb[ch];
    }
  }
  return img;
}

}  // namespace detail

/// Deterministic scene for a seed. Scenes without an ambiguous, describable
/// referent are redrawn from the next sub-stream.
inline Scene generate_scene(std::uint64_t seed, const SynthConfig& cfg) {
  cfg.validate();
  for (std::size_t attempt = 0; attempt < cfg.max_scene_attempts; ++attempt) {
    Rng rng(mix_seed(seed, attempt));
    auto objs = detail::place_objects(rng, cfg);
    std::vector<std::size_t> eligible;
    std::vector<std::vector<std::string>> exprs;
    for (std::size_t i = 0; i < objs.size(); ++i) {
      if (!is_ambiguous(objs, i)) continue;
      if (coarse_mask(objs[i].mask, cfg.coarse_stride).count() == 0) continue;
      auto e = describe(objs, i, cfg);
      if (!e) continue;
      eligible.push_back(i);
      exprs.push_back(std::move(*e));
    }
    if (eligible.empty()) continue;
    const std::size_t pick = rng.index(eligible.size());
    Scene s;
    s.height = s.width = cfg.image_size;
    s.image = detail::paint(rng, objs, cfg);
    s.objects = std::move(objs);
    s.referent_index = eligible[pick];
    s.expression = std::move(exprs[pick]);
    return s;
  }
  throw GenerationError("no scene with a describable ambiguous referent after " +
                        std::to_string(cfg.max_scene_attempts) + " attempts (seed " +
                        std::to_string(seed) + ")");
}

/// Token ids for the scene's referent expression.
inline std::vector<std::int64_t> generate_expression(const Scene& scene, const SynthConfig& cfg,
                                                     const Vocabulary& vocab) {
  auto words = describe(scene.objects, scene.referent_index, cfg);
  if (!words) throw GenerationError("referent admits no unique expression");
  return vocab.encode(*words);
}

struct Sample {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> image;  // [3 x H x W]
  std::vector<std::int64_t> tokens;
  Box gt_box;
  BinaryMask gt_mask_full;
  BinaryMask gt_mask_coarse;
};

inline Sample make_sample(const Scene& scene, const SynthConfig& cfg, const Vocabulary& vocab) {
  Sample s;
  s.height = scene.height;
  s.width = scene.width;
  s.image = scene.image;
  s.tokens = vocab.encode(scene.expression);
  s.gt_mask_full = scene.referent().mask;
  s.gt_box = tight_box(s.gt_mask_full);
  s.gt_mask_coarse = coarse_mask(s.gt_mask_full, cfg.coarse_stride);
  return s;
}

inline void save_sample(const Sample& s, const std::filesystem::path& path) {
  Container c("sample");
  c.put_f64("image", {3, s.height, s.width}, s.image);
  c.put_i64("tokens", {s.tokens.size()}, s.tokens);
  const std::array<double, 4> box{s.gt_box.x_min, s.gt_box.y_min, s.gt_box.x_max, s.gt_box.y_max};
  c.put_f64("box", {4}, box);
  c.put_bits("mask_full", {s.gt_mask_full.rows, s.gt_mask_full.cols}, s.gt_mask_full.bits);
  c.put_bits("mask_coarse", {s.gt_mask_coarse.rows, s.gt_mask_coarse.cols},
             s.gt_mask_coarse.bits);
  c.save(path);
}

inline Sample load_sample(const std::filesystem::path& path) {
  const Container c = Container::load(path, "sample");
  Sample s;
  Shape shape;
  s.image = c.get_f64("image", &shape);
  if (shape.size() != 3 || shape[0] != 3) {
    throw IoError(path.string() + ": image must be 3 x H x W, got " + shape_str(shape));
  }
  s.height = shape[1];
  s.width = shape[2];
  s.tokens = c.get_i64("tokens");
  const auto box = c.get_f64("box");
  if (box.size() != 4) throw IoError(path.string() + ": box must hold 4 values");
  s.gt_box = {box[0], box[1], box[2], box[3]};
  Shape ms;
  s.gt_mask_full.bits = c.get_bits("mask_full", &ms);
  s.gt_mask_full.rows = ms.at(0);
  s.gt_mask_full.cols = ms.at(1);
  s.gt_mask_coarse.bits = c.get_bits("mask_coarse", &ms);
  s.gt_mask_coarse.rows = ms.at(0);
  s.gt_mask_coarse.cols = ms.at(1);
  return s;
}

// Scene ids: train uses [0, n_train), val starts at kValSceneBase. Seeds are a
// bijection of the id for a fixed dataset seed, so the splits never share one.
inline constexpr std::uint64_t kValSceneBase = std::uint64_t{1} << 32;

inline std::uint64_t scene_seed(std::uint64_t dataset_seed, std::uint64_t scene_id) {
  return mix_seed(dataset_seed, scene_id);
}

inline std::string sample_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu.rjs", index);
  return buf;
}

inline std::uint64_t dataset_config_hash(std::size_t n_train, std::size_t n_val,
                                         std::uint64_t seed, const SynthConfig& cfg) {
  nlohmann::ordered_json j{{"n_train", n_train}, {"n_val", n_val}, {"seed", seed},
                           {"synth", cfg.to_json()}};
  const std::string s = j.dump();
  return fnv1a(s.data(), s.size());
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Writes <out>/train/*.rjs, <out>/val/*.rjs, vocab.txt and manifest.json.
inline nlohmann::ordered_json emit_dataset(std::size_t n_train, std::size_t n_val,
                                           std::uint64_t seed, const SynthConfig& cfg,
                                           const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  cfg.validate();
  const Vocabulary vocab = Vocabulary::standard();
  std::error_code ec;
  for (const char* split : {"train", "val"}) {
    fs::create_directories(out_dir / split, ec);
    if (ec) throw IoError((out_dir / split).string() + ": " + ec.message());
  }
  const auto write_split = [&](const char* split, std::size_t n, std::uint64_t base) {
    for (std::size_t i = 0; i < n; ++i) {
      const Scene scene = generate_scene(scene_seed(seed, base + i), cfg);
      save_sample(make_sample(scene, cfg, vocab), out_dir / split / sample_file_name(i));
    }
  };
  write_split("train", n_train, 0);
  write_split("val", n_val, kValSceneBase);
  vocab.save(out_dir / "vocab.txt");

  nlohmann::ordered_json m;
  m["format"] = "refjoint-dataset";
  m["version"] = 1;
  m["n_train"] = n_train;
  m["n_val"] = n_val;
  m["seed"] = seed;
  m["config_hash"] = hex64(dataset_config_hash(n_train, n_val, seed, cfg));
  m["synth"] = cfg.to_json();
  m["train_scene_ids"] = {0, n_train};
  m["val_scene_ids"] = {kValSceneBase, kValSceneBase + n_val};
  m["vocabulary"] = vocab.tokens();
  const fs::path mp = out_dir / "manifest.json";
  std::ofstream os(mp);
  if (!os) throw IoError(mp.string() + ": cannot open for writing");
  os << m.dump(2) << '\n';
  if (!os) throw IoError(mp.string() + ": write failed");
  return m;
}

struct Dataset {
  nlohmann::json manifest;
  Vocabulary vocab;
  std::vector<Sample> train;
  std::vector<Sample> val;

  const std::vector<Sample>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    throw ConfigError("unknown split '" + name + "' (expected train or val)");
  }
};

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
  const auto mp = dir / "manifest.json";
  std::ifstream is(mp);
  if (!is) throw ConfigError(mp.string() + ": dataset manifest not found");
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(mp.string() + ": " + e.what());
  }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.manifest = read_manifest(dir);
  d.vocab = Vocabulary::load(dir / "vocab.txt");
  const auto n_train = d.manifest.at("n_train").get<std::size_t>();
  const auto n_val = d.manifest.at("n_val").get<std::size_t>();
  for (std::size_t i = 0; i < n_train; ++i)
    d.train.push_back(load_sample(dir / "train" / sample_file_name(i)));
  for (std::size_t i = 0; i < n_val; ++i)
    d.val.push_back(load_sample(dir / "val" / sample_file_name(i)));
  return d;
}

}  // namespace refjoint
