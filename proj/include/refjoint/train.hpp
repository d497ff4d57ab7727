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

// Training loop (Adam, step decay, norm clipping, per-epoch checkpoints),
// evaluation into a MetricsReport, and single-sample prediction.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "refjoint/config.hpp"
#include "refjoint/container.hpp"
#include "refjoint/metrics.hpp"
#include "refjoint/model.hpp"
#include "refjoint/postprocess.hpp"
#include "refjoint/rng.hpp"
#include "refjoint/synth.hpp"

namespace refjoint {

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double total = 0.0;  // mean over samples
  double res = 0.0;
  double rec = 0.0;
  double cem = 0.0;
};

struct AdamState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  std::uint64_t step = 0;

  void init(const ParamStore& p) {
    m.clear();
    v.clear();
    step = 0;
    for (const auto& [name, t] : p) {
      m[name].assign(t.size(), 0.0);
      v[name].assign(t.size(), 0.0);
    }
  }
};

struct Checkpoint {
  ParamStore params;
  AdamState adam;
  std::size_t epoch = 0;  // epochs completed
  std::uint64_t config_hash = 0;
  std::string config_json;
  std::vector<EpochLog> log;
};

inline constexpr const char* kCheckpointFile = "checkpoint.rjc";

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  Container c("checkpoint");
  for (const auto& [name, t] : ck.params) {
    c.put_f64("param/" + name, t.shape(), t.data());
    c.put_f64("adam_m/" + name, t.shape(), ck.adam.m.at(name));
    c.put_f64("adam_v/" + name, t.shape(), ck.adam.v.at(name));
  }
  const std::array<std::int64_t, 2> counters{static_cast<std::int64_t>(ck.epoch),
                                             static_cast<std::int64_t>(ck.adam.step)};
  c.put_i64("counters", {2}, counters);
  c.put_text("config_hash", hex64(ck.config_hash));
  c.put_text("config", ck.config_json);
  std::vector<double> log;
  for (const auto& e : ck.log) {
    log.insert(log.end(), {static_cast<double>(e.epoch), e.lr, e.total, e.res, e.rec, e.cem});
  }
  if (!log.empty()) c.put_f64("loss_log", {ck.log.size(), 6}, log);
  // Write then rename, so an interrupted save never clobbers the last good file.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  c.save(tmp);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError(path.string() + ": " + ec.message());
}

/// Loads a checkpoint; the parameter layout comes from the stored config.
inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const Container c = Container::load(path, "checkpoint");
  Checkpoint ck;
  ck.config_json = c.get_text("config");
  ck.config_hash = std::stoull(c.get_text("config_hash"), nullptr, 16);
  const auto counters = c.get_i64("counters");
  ck.epoch = static_cast<std::size_t>(counters.at(0));
  ck.adam.step = static_cast<std::uint64_t>(counters.at(1));
  for (const auto& [key, entry] : c.entries()) {
    if (key.rfind("param/", 0) != 0) continue;
    const std::string name = key.substr(6);
    Shape shape;
    auto values = c.get_f64(key, &shape);
    auto dst = ck.params.add(name, shape, 0).data();
    std::copy(values.begin(), values.end(), dst.begin());
    ck.adam.m[name] = c.get_f64("adam_m/" + name);
    ck.adam.v[name] = c.get_f64("adam_v/" + name);
  }
  if (c.contains("loss_log")) {
    const auto log = c.get_f64("loss_log");
    for (std::size_t i = 0; i + 6 <= log.size(); i += 6) {
      ck.log.push_back({static_cast<std::size_t>(log[i]), log[i + 1], log[i + 2], log[i + 3],
                        log[i + 4], log[i + 5]});
    }
  }
  return ck;
}

/// Learning rate for a 0-based epoch: multiplied by decay_factor once for
/// every configured decay epoch already reached.
inline double learning_rate(const OptimizerConfig& o, std::size_t epoch0) {
  double lr = o.lr;
  for (std::size_t e : o.decay_epochs)
    if (epoch0 >= e) lr *= o.decay_factor;
  return lr;
}

inline Tensor image_tensor(const Sample& s) {
  return Tensor({3, s.height, s.width}, s.image);
}

inline LossTargets loss_targets(const Sample& s) {
  return {CenterBox::from(s.gt_box), s.gt_mask_coarse.as_doubles()};
}

/// Sample visit order for an epoch; depends only on (seed, epoch, n).
inline std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch0, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed ^ 0x5eedda7a0f5eedULL, epoch0));
  rng.shuffle(order);
  return order;
}

/// Scales all gradients so their joint L2 norm is at most max_norm. Returns
/// the norm before clipping.
inline double clip_grad_norm(ParamStore& p, double max_norm) {
  double sq = 0.0;
  for (auto& [name, t] : p)
    for (double gv : t.grad()) sq += gv * gv;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw TrainingFault("non-finite gradient norm");
  if (max_norm > 0.0 && norm > max_norm) {
    const double k = max_norm / norm;
    for (auto& [name, t] : p)
      for (double& gv : t.grad()) gv *= k;
  }
  return norm;
}

inline void adam_step(ParamStore& p, AdamState& st, const OptimizerConfig& o, double lr) {
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double c1 = 1.0 - std::pow(o.beta1, t);
  const double c2 = 1.0 - std::pow(o.beta2, t);
  for (auto& [name, tensor] : p) {
    auto w = tensor.data();
    auto gr = tensor.grad();
    auto& m = st.m.at(name);
    auto& v = st.v.at(name);
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = o.beta1 * m[i] + (1 - o.beta1) * gr[i];
      v[i] = o.beta2 * v[i] + (1 - o.beta2) * gr[i] * gr[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + o.eps);
    }
  }
}

/// Forward plus losses for one sample on a fresh tape.
inline LossTerms sample_losses(Graph& g, const ParamStore& p, const RunConfig& cfg,
                               const Sample& s) {
  const ModelOutput out = forward(g, p, cfg.model, image_tensor(s), s.tokens);
  return compute_losses(g, out, p, cfg.model, loss_targets(s), cfg.weights);
}

/// Label-preserving transform of a training sample. A mirror swaps the words
/// left and right; ordinal expressions count from the left and are never
/// mirrored. `palette[k]` is the color that replaces color k in both the
/// pixels and the expression.
struct Augmentation {
  bool mirror = false;
  std::array<std::size_t, kColorNames.size()> palette{0, 1, 2, 3};
};

inline const Vocabulary& standard_vocab() {
  static const Vocabulary vocab = Vocabulary::standard();
  return vocab;
}

inline Augmentation draw_augmentation(const Sample& s, Rng& rng) {
  const Vocabulary& vocab = standard_vocab();
  Augmentation a;
  const bool ordinal = std::any_of(s.tokens.begin(), s.tokens.end(),
                                   [&](std::int64_t t) { return t == vocab.id("from"); });
  a.mirror = rng.index(2) == 1 && !ordinal;
  for (std::size_t i = a.palette.size(); i > 1; --i) std::swap(a.palette[i - 1], a.palette[rng.index(i)]);
  return a;
}

inline Sample apply_augmentation(const Sample& s, const Augmentation& a) {
  const Vocabulary& vocab = standard_vocab();
  Sample out = s;
  const std::size_t h = s.height, w = s.width, hw = h * w;
  if (a.mirror) {
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
          out.image[ch * hw + r * w + c] = s.image[ch * hw + r * w + (w - 1 - c)];
    const auto mirror = [](const BinaryMask& m) {
      BinaryMask f(m.rows, m.cols);
      for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c) f.at(r, c) = m.at(r, m.cols - 1 - c);
      return f;
    };
    out.gt_mask_full = mirror(s.gt_mask_full);
    out.gt_mask_coarse = mirror(s.gt_mask_coarse);
    const double wd = static_cast<double>(w);
    out.gt_box = {wd - s.gt_box.x_max, s.gt_box.y_min, wd - s.gt_box.x_min, s.gt_box.y_max};
    for (auto& t : out.tokens) {
      if (t == vocab.id("left")) {
        t = vocab.id("right");
      } else if (t == vocab.id("right")) {
        t = vocab.id("left");
      }
    }
  }
  // Objects are painted with exact palette values; the background never is.
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t k = 0; k < kColorRgb.size(); ++k) {
      const auto& rgb = kColorRgb[k];
      if (out.image[i] != rgb[0] || out.image[hw + i] != rgb[1] ||
          out.image[2 * hw + i] != rgb[2]) {
        continue;
      }
      for (std::size_t ch = 0; ch < 3; ++ch) out.image[ch * hw + i] = kColorRgb[a.palette[k]][ch];
      break;
    }
  }
  for (auto& t : out.tokens) {
    for (std::size_t k = 0; k < kColorNames.size(); ++k) {
      if (t == vocab.id(kColorNames[k])) {
        t = vocab.id(kColorNames[a.palette[k]]);
        break;
      }
    }
  }
  return out;
}

/// Per-sample augmentation stream; depends only on (seed, epoch, sample index).
inline Rng augment_rng(std::uint64_t seed, std::size_t epoch0, std::size_t index) {
  return Rng(mix_seed(mix_seed(seed ^ 0xa06e7a11ULL, epoch0), index));
}

struct TrainOptions {
  bool resume = false;        // continue from <out_dir>/checkpoint.rjc when present
  bool write_checkpoints = true;
  std::size_t stop_after = 0;  // when nonzero, return once this many epochs are complete
  std::function<void(const EpochLog&, const Checkpoint&)> on_epoch;  // progress hook
};

/// Trains on `train` and returns the final checkpoint. A non-finite loss or
/// gradient stops the run; the checkpoint on disk is then the last good epoch.
inline Checkpoint train(const RunConfig& cfg, const std::vector<Sample>& train_set,
                        const TrainOptions& opts = {}) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (train_set.empty()) throw ConfigError("training split is empty");
  const fs::path ckpt_path = fs::path(cfg.out_dir) / kCheckpointFile;
  if (opts.write_checkpoints) {
    std::error_code ec;
    fs::create_directories(cfg.out_dir, ec);
    if (ec) throw IoError(cfg.out_dir + ": " + ec.message());
  }

  Checkpoint ck;
  ck.config_hash = cfg.hash();
  ck.config_json = cfg.to_json().dump();
  if (opts.resume && fs::exists(ckpt_path)) {
    Checkpoint prev = load_checkpoint(ckpt_path);
    if (prev.config_hash != ck.config_hash) {
      throw ConfigError(ckpt_path.string() + ": checkpoint was trained with a different config");
    }
    ck = std::move(prev);
  } else {
    ck.params = build_params(cfg.model, cfg.seed);
    ck.adam.init(ck.params);
  }

  const std::size_t n = train_set.size();
  const std::size_t last =
      opts.stop_after ? std::min(opts.stop_after, cfg.optim.epochs) : cfg.optim.epochs;
  for (std::size_t epoch0 = ck.epoch; epoch0 < last; ++epoch0) {
    const double lr = learning_rate(cfg.optim, epoch0);
    const auto order = epoch_order(cfg.seed, epoch0, n);
    EpochLog log{epoch0 + 1, lr};
    try {
      for (std::size_t start = 0; start < n; start += cfg.optim.batch) {
        const std::size_t stop = std::min(n, start + cfg.optim.batch);
        ck.params.zero_grad();
        for (std::size_t k = start; k < stop; ++k) {
          Graph g;
          LossTerms terms;
          try {
            if (cfg.optim.augment) {
              Rng arng = augment_rng(cfg.seed, epoch0, order[k]);
              const Sample& src = train_set[order[k]];
              terms = sample_losses(g, ck.params, cfg,
                                    apply_augmentation(src, draw_augmentation(src, arng)));
            } else {
              terms = sample_losses(g, ck.params, cfg, train_set[order[k]]);
            }
          } catch (const DomainError& e) {
            throw TrainingFault(std::string("non-finite forward pass: ") + e.what());
          }
          if (!std::isfinite(terms.total.item())) throw TrainingFault("non-finite loss");
          g.backward(terms.total);
          log.total += terms.total.item();
          if (terms.res.defined()) log.res += terms.res.item();
          if (terms.rec.defined()) log.rec += terms.rec.item();
          if (terms.cem.defined()) log.cem += terms.cem.item();
        }
        const double inv = 1.0 / static_cast<double>(stop - start);
        for (auto& [name, t] : ck.params)
          for (double& gv : t.grad()) gv *= inv;
        clip_grad_norm(ck.params, cfg.optim.clip_norm);
        adam_step(ck.params, ck.adam, cfg.optim, lr);
      }
    } catch (const TrainingFault& e) {
      throw TrainingFault(std::string(e.what()) + " in epoch " + std::to_string(epoch0 + 1) +
                          (opts.write_checkpoints && ck.epoch > 0
                               ? "; last good checkpoint: " + ckpt_path.string()
                               : std::string("; no checkpoint written")));
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    log.total *= inv_n;
    log.res *= inv_n;
    log.rec *= inv_n;
    log.cem *= inv_n;
    ck.epoch = epoch0 + 1;
    ck.log.push_back(log);
    if (opts.write_checkpoints) save_checkpoint(ck, ckpt_path);
    if (opts.on_epoch) opts.on_epoch(log, ck);
  }
  return ck;
}

/// Copy of the parameters with gradient tracking off, for inference.
inline ParamStore frozen(const ParamStore& p) {
  ParamStore out;
  for (const auto& [name, t] : p) {
    Tensor& dst = out.add(name, t.shape(), 0);
    dst = t.clone(false);
  }
  return out;
}

struct Prediction {
  std::optional<Box> box;          // clipped to the image
  std::optional<double> confidence;
  std::optional<Tensor> prob;      // [h3 x w3]
  std::optional<BinaryMask> mask;  // refined and thresholded
  std::optional<Tensor> rec_attention;
  std::optional<Tensor> res_attention;
};

inline Prediction predict(const ParamStore& inference_params, const RunConfig& cfg,
                          const Sample& s) {
  Graph g;
  const ModelOutput out = forward(g, inference_params, cfg.model, image_tensor(s), s.tokens);
  Prediction pr;
  if (out.rec) {
    const auto boxes = decode_boxes(*out.rec, cfg.model.anchors, ModelDims::kStride1);
    pr.box = clip_box(boxes.front().box.corners(), static_cast<double>(s.width),
                      static_cast<double>(s.height));
    pr.confidence = boxes.front().confidence;
  }
  if (out.res) {
    pr.prob = out.res->prob;
    // Without a REC branch there is no box to guide refinement.
    RefinementConfig rc = cfg.postproc;
    if (!pr.box) rc.mode = Refinement::kNone;
    const RefinedMask refined = refine(out.res->prob, pr.box.value_or(Box{}),
                                       pr.confidence.value_or(0.0), rc, ModelDims::kStride3);
    pr.mask = binarize(refined.values, rc.bin_threshold);
  }
  if (out.rec_branch) pr.rec_attention = out.rec_branch->spatial_attn;
  if (out.res_branch) pr.res_attention = out.res_branch->spatial_attn;
  return pr;
}

inline SampleOutcome score(const Prediction& pr, const Sample& s) {
  SampleOutcome o;
  if (pr.box) o.box_iou = box_iou(*pr.box, s.gt_box);
  if (pr.mask) o.mask_iou = mask_iou(*pr.mask, s.gt_mask_coarse);
  return o;
}

/// Metrics over a split. A config whose hash differs from the checkpoint's
/// only triggers a warning.
inline MetricsReport evaluate(const Checkpoint& ck, const RunConfig& cfg,
                              const std::vector<Sample>& split,
                              std::ostream* warn = &std::cerr) {
  if (ck.config_hash != cfg.hash() && warn) {
    *warn << "warning: config hash " << hex64(cfg.hash()) << " differs from checkpoint hash "
          << hex64(ck.config_hash) << "; evaluating anyway\n";
  }
  const ParamStore p = frozen(ck.params);
  std::vector<SampleOutcome> outcomes;
  outcomes.reserve(split.size());
  for (const Sample& s : split) outcomes.push_back(score(predict(p, cfg, s), s));
  return summarize(outcomes);
}

inline nlohmann::ordered_json tensor_grid(const Tensor& t) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  const std::size_t h = t.dim(0), w = t.dim(1);
  for (std::size_t r = 0; r < h; ++r) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (std::size_t c = 0; c < w; ++c) row.push_back(t[r * w + c]);
    rows.push_back(row);
  }
  return rows;
}

inline nlohmann::ordered_json prediction_json(const Prediction& pr) {
  nlohmann::ordered_json j;
  if (pr.box) j["box"] = {pr.box->x_min, pr.box->y_min, pr.box->x_max, pr.box->y_max};
  if (pr.confidence) j["confidence"] = *pr.confidence;
  if (pr.prob) j["prob"] = tensor_grid(*pr.prob);
  if (pr.mask) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < pr.mask->rows; ++r) {
      std::string line;
      for (std::size_t c = 0; c < pr.mask->cols; ++c) line += pr.mask->at(r, c) ? '1' : '0';
      rows.push_back(line);
    }
    j["mask"] = rows;
  }
  if (pr.rec_attention) j["rec_attention"] = tensor_grid(*pr.rec_attention);
  if (pr.res_attention) j["res_attention"] = tensor_grid(*pr.res_attention);
  return j;
}

}  // namespace refjoint
