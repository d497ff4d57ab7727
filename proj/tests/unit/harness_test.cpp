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
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <sstream>

#include "refjoint/config.hpp"
#include "refjoint/synth.hpp"
#include "refjoint/train.hpp"

namespace refjoint {
namespace {

namespace fs = std::filesystem;

std::vector<Sample> tiny_set(std::size_t n, std::uint64_t base = 0) {
  const SynthConfig cfg;
  const Vocabulary vocab = Vocabulary::standard();
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(make_sample(generate_scene(scene_seed(3, base + i), cfg), cfg, vocab));
  return out;
}

RunConfig quick_config(const std::string& dir_name, std::size_t epochs = 1) {
  RunConfig cfg;
  cfg.optim.epochs = epochs;
  cfg.optim.batch = 4;
  cfg.out_dir = (fs::temp_directory_path() / ("refjoint_harness_" + dir_name)).string();
  fs::remove_all(cfg.out_dir);
  return cfg;
}

bool has_prefix(const ParamStore& p, const std::string& prefix) {
  return std::any_of(p.begin(), p.end(),
                     [&](const auto& kv) { return kv.first.rfind(prefix, 0) == 0; });
}

TEST(RunConfig, DefaultsValidateAndRoundTrip) {
  const RunConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.optim.lr, 1e-3);
  EXPECT_EQ(cfg.optim.batch, 8u);
  EXPECT_EQ(cfg.optim.epochs, 45u);
  EXPECT_EQ(cfg.optim.decay_epochs, (std::vector<std::size_t>{30, 35, 40}));
  const RunConfig back = RunConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());
  EXPECT_EQ(back.hash(), cfg.hash());
}

TEST(RunConfig, ApplyOverlaysKnownKeys) {
  RunConfig cfg;
  cfg.apply({{"structure", "single_res"}, {"use_cem", false}, {"postproc", "soft_nls"},
             {"decay_epochs", "5,9"}, {"lr", 0.01}});
  EXPECT_EQ(cfg.model.structure, Structure::kSingleRes);
  EXPECT_FALSE(cfg.model.use_cem);
  EXPECT_EQ(cfg.postproc.mode, Refinement::kSoftNls);
  EXPECT_EQ(cfg.optim.decay_epochs, (std::vector<std::size_t>{5, 9}));
  EXPECT_EQ(cfg.optim.lr, 0.01);
}

TEST(RunConfig, RejectsUnknownKeysAndBadValues) {
  RunConfig cfg;
  EXPECT_THROW(cfg.apply({{"learning_rate", 0.1}}), ConfigError);
  EXPECT_THROW(cfg.apply({{"lr", "fast"}}), ConfigError);
  EXPECT_THROW(cfg.apply({{"structure", "dual"}}), ConfigError);
  EXPECT_THROW(cfg.apply({{"decay_epochs", "30,x"}}), ConfigError);
  EXPECT_THROW(cfg.apply({{"batch", nlohmann::json::array({1, 2})}}), ConfigError);
  RunConfig bad;
  bad.optim.decay_factor = 1.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad.optim.decay_factor = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(RunConfig, HashIgnoresPostprocessingAndPaths) {
  RunConfig a, b;
  b.postproc.mode = Refinement::kAsnls;
  b.postproc.bin_threshold = 0.5;
  b.out_dir = "elsewhere";
  EXPECT_EQ(a.hash(), b.hash());
  b.optim.lr = 2e-3;
  EXPECT_NE(a.hash(), b.hash());
  RunConfig c;
  c.model.use_cem = false;
  EXPECT_NE(a.hash(), c.hash());
}

TEST(Schedule, DecaysAtConfiguredEpochs) {
  const OptimizerConfig o;
  EXPECT_DOUBLE_EQ(learning_rate(o, 0), 1e-3);
  EXPECT_DOUBLE_EQ(learning_rate(o, 29), 1e-3);
  EXPECT_DOUBLE_EQ(learning_rate(o, 30), 1e-4);
  EXPECT_DOUBLE_EQ(learning_rate(o, 35), 1e-5);
  EXPECT_DOUBLE_EQ(learning_rate(o, 44), 1e-6);
}

TEST(Schedule, EpochOrderIsASeededPermutation) {
  const auto a = epoch_order(7, 0, 50);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(50);
  std::iota(iota.begin(), iota.end(), std::size_t{0});
  EXPECT_EQ(sorted, iota);
  EXPECT_EQ(a, epoch_order(7, 0, 50));
  EXPECT_NE(a, epoch_order(7, 1, 50));
  EXPECT_NE(a, epoch_order(8, 0, 50));
}

// Applies an augmentation to the scene's objects and checks that the
// transformed expression still singles out the transformed referent.
TEST(Augmentation, PreservesTheReferent) {
  const SynthConfig cfg;
  const Vocabulary vocab = Vocabulary::standard();
  Rng rng(21);
  std::size_t mirrored = 0;
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const Scene scene = generate_scene(scene_seed(5, seed), cfg);
    const Sample s = make_sample(scene, cfg, vocab);
    const Augmentation a = draw_augmentation(s, rng);
    const Sample t = apply_augmentation(s, a);
    mirrored += a.mirror;

    std::vector<Object> objs = scene.objects;
    for (Object& o : objs) {
      o.color = static_cast<ColorKind>(a.palette[static_cast<std::size_t>(o.color)]);
      if (a.mirror) {
        o.cx = 64.0 - o.cx;
        o.mask = rasterize(o.shape, o.cx, o.cy, o.size, 64, 64);
      }
    }
    std::vector<std::string> words;
    for (std::int64_t id : t.tokens) words.push_back(vocab.token(id));
    EXPECT_EQ(resolve_expression(objs, words, cfg),
              (std::vector<std::size_t>{scene.referent_index}))
        << vocab.decode(s.tokens) << " -> " << vocab.decode(t.tokens);
    if (a.mirror) EXPECT_EQ(t.gt_mask_full, objs[scene.referent_index].mask);
    EXPECT_EQ(t.gt_box, tight_box(t.gt_mask_full));
    EXPECT_EQ(t.gt_mask_coarse, coarse_mask(t.gt_mask_full, cfg.coarse_stride));

    // Every visible referent pixel carries the recolored palette entry.
    const auto& rgb = kColorRgb[static_cast<std::size_t>(objs[scene.referent_index].color)];
    const std::size_t hw = 64 * 64;
    std::size_t matching = 0;
    for (std::size_t i = 0; i < hw; ++i)
      if (t.gt_mask_full.bits[i] && t.image[i] == rgb[0] && t.image[hw + i] == rgb[1] &&
          t.image[2 * hw + i] == rgb[2])
        ++matching;
    EXPECT_GT(matching, 0u);
  }
  EXPECT_GT(mirrored, 100u);
  EXPECT_LT(mirrored, 200u);
}

TEST(Augmentation, OrdinalExpressionsAreNeverMirrored) {
  const Vocabulary vocab = Vocabulary::standard();
  Sample s = tiny_set(1).front();
  s.tokens = vocab.encode({"second", "circle", "from", "the", "left"});
  Rng rng(4);
  for (int i = 0; i < 50; ++i) EXPECT_FALSE(draw_augmentation(s, rng).mirror);
}

TEST(Augmentation, IdentityLeavesTheSampleUnchanged) {
  const Sample s = tiny_set(1).front();
  const Sample t = apply_augmentation(s, Augmentation{});
  EXPECT_EQ(t.image, s.image);
  EXPECT_EQ(t.tokens, s.tokens);
  EXPECT_EQ(t.gt_box, s.gt_box);
}

TEST(Structures, ParameterGroupsMatchTheTopology) {
  ModelConfig m;
  const auto params = [&](Structure s, bool cem = true) {
    ModelConfig c = m;
    c.structure = s;
    c.use_cem = cem;
    return build_params(c, 1);
  };
  const ParamStore mcn = params(Structure::kMcn);
  EXPECT_TRUE(has_prefix(mcn, "bottomup."));
  EXPECT_TRUE(has_prefix(mcn, "merge2."));
  EXPECT_TRUE(has_prefix(mcn, "rec."));
  EXPECT_TRUE(has_prefix(mcn, "res."));
  EXPECT_TRUE(mcn.contains("cem.ws"));

  const ParamStore rec = params(Structure::kSingleRec);
  EXPECT_FALSE(has_prefix(rec, "res."));
  EXPECT_FALSE(has_prefix(rec, "merge"));
  EXPECT_FALSE(has_prefix(rec, "cem."));

  const ParamStore res = params(Structure::kSingleRes);
  EXPECT_FALSE(has_prefix(res, "rec."));
  EXPECT_FALSE(has_prefix(res, "att_rec."));
  EXPECT_FALSE(has_prefix(res, "cem."));

  const ParamStore ohd = params(Structure::kOnlyHeadDifferent);
  EXPECT_FALSE(has_prefix(ohd, "bottomup."));
  EXPECT_FALSE(has_prefix(ohd, "att_rec."));
  EXPECT_TRUE(has_prefix(ohd, "rec."));
  EXPECT_EQ(ohd.scalar_count(), res.scalar_count() + (ohd.scalar_count() - res.scalar_count()));
  EXPECT_GT(ohd.scalar_count(), res.scalar_count());

  const ParamStore obs = params(Structure::kOnlyBackboneShared);
  EXPECT_FALSE(has_prefix(obs, "bottomup."));
  EXPECT_TRUE(has_prefix(obs, "fuse_rec."));
  EXPECT_TRUE(obs.contains("cem.ws"));

  // mcn = only_backbone_shared - second fusion + bottom-up path.
  const auto group = [](const ParamStore& p, const std::string& prefix) {
    std::size_t n = 0;
    for (const auto& [name, t] : p)
      if (name.rfind(prefix, 0) == 0) n += t.size();
    return n;
  };
  EXPECT_EQ(mcn.scalar_count(),
            obs.scalar_count() - group(obs, "fuse_rec.") + group(mcn, "bottomup."));
  // Shared encoders and heads keep their sizes across structures.
  EXPECT_EQ(group(mcn, "vis."), group(rec, "vis."));
  EXPECT_EQ(group(mcn, "rec."), group(rec, "rec."));
  EXPECT_EQ(group(mcn, "res."), group(res, "res."));
}

TEST(Structures, DisablingCemRemovesItsProjections) {
  ModelConfig on, off;
  off.use_cem = false;
  const ParamStore a = build_params(on, 1), b = build_params(off, 1);
  EXPECT_FALSE(b.contains("cem.ws"));
  EXPECT_FALSE(b.contains("cem.wc"));
  EXPECT_EQ(a.scalar_count() - b.scalar_count(), 2 * on.dims.d);
}

TEST(Train, OneEpochWritesALoadableCheckpoint) {
  const RunConfig cfg = quick_config("smoke");
  const auto data = tiny_set(10);
  const Checkpoint ck = train(cfg, data);
  ASSERT_EQ(ck.log.size(), 1u);
  EXPECT_TRUE(std::isfinite(ck.log[0].total));
  const Checkpoint back = load_checkpoint(fs::path(cfg.out_dir) / kCheckpointFile);
  EXPECT_EQ(back.epoch, 1u);
  EXPECT_EQ(back.config_hash, cfg.hash());
  ASSERT_EQ(back.params.size(), ck.params.size());
  for (const auto& [name, t] : ck.params) {
    const auto a = t.data();
    const auto b = back.params.get(name).data();
    ASSERT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end())) << name;
  }
  EXPECT_EQ(back.log[0].total, ck.log[0].total);
  fs::remove_all(cfg.out_dir);
}

TEST(Train, SameSeedReproducesEpochLoss) {
  RunConfig cfg = quick_config("det");
  const auto data = tiny_set(10);
  TrainOptions o;
  o.write_checkpoints = false;
  const Checkpoint a = train(cfg, data, o);
  const Checkpoint b = train(cfg, data, o);
  EXPECT_NEAR(a.log[0].total, b.log[0].total, 1e-12);
  cfg.seed = 8;
  const Checkpoint c = train(cfg, data, o);
  EXPECT_NE(a.log[0].total, c.log[0].total);
}

TEST(Train, ResumeReproducesTheUninterruptedTrajectory) {
  const auto data = tiny_set(10);
  TrainOptions mem;
  mem.write_checkpoints = false;
  const Checkpoint straight = train(quick_config("straight", 3), data, mem);

  RunConfig first = quick_config("resume", 2);
  train(first, data);
  RunConfig rest = first;
  rest.optim.epochs = 3;
  // The epoch count shapes the run, so resuming needs the same hash.
  EXPECT_THROW(
      {
        TrainOptions o;
        o.resume = true;
        train(rest, data, o);
      },
      ConfigError);

  RunConfig whole = quick_config("resume_whole", 3);
  TrainOptions stop_after_one;
  stop_after_one.on_epoch = [](const EpochLog& e, const Checkpoint&) {
    if (e.epoch == 1) throw std::runtime_error("interrupted");
  };
  EXPECT_THROW(train(whole, data, stop_after_one), std::runtime_error);
  TrainOptions resume;
  resume.resume = true;
  const Checkpoint resumed = train(whole, data, resume);
  ASSERT_EQ(resumed.log.size(), 3u);
  for (std::size_t e = 0; e < 3; ++e) EXPECT_NEAR(resumed.log[e].total, straight.log[e].total, 1e-12);
  for (const auto& [name, t] : straight.params) {
    const auto a = t.data();
    const auto b = resumed.params.get(name).data();
    ASSERT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end())) << name;
  }
  for (const char* n : {"resume", "resume_whole"})
    fs::remove_all(fs::temp_directory_path() / (std::string("refjoint_harness_") + n));
}

TEST(Train, NonFiniteInputAbortsNamingTheLastGoodCheckpoint) {
  RunConfig cfg = quick_config("nan", 2);
  auto data = tiny_set(8);
  TrainOptions o;
  o.on_epoch = [&](const EpochLog& e, const Checkpoint&) {
    if (e.epoch == 1) data[3].image[17] = std::numeric_limits<double>::quiet_NaN();
  };
  try {
    train(cfg, data, o);
    FAIL() << "expected a training fault";
  } catch (const TrainingFault& e) {
    EXPECT_NE(std::string(e.what()).find("last good checkpoint"), std::string::npos) << e.what();
  }
  EXPECT_EQ(load_checkpoint(fs::path(cfg.out_dir) / kCheckpointFile).epoch, 1u);
  fs::remove_all(cfg.out_dir);
}

TEST(Train, EmptySplitIsAConfigError) {
  EXPECT_THROW(train(quick_config("empty"), {}), ConfigError);
}

class Trained : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    cfg_ = new RunConfig(quick_config("trained", 2));
    TrainOptions o;
    o.write_checkpoints = false;
    ck_ = new Checkpoint(train(*cfg_, tiny_set(16), o));
    val_ = new std::vector<Sample>(tiny_set(12, kValSceneBase));
  }
  static void TearDownTestSuite() {
    delete cfg_;
    delete ck_;
    delete val_;
  }
  static RunConfig* cfg_;
  static Checkpoint* ck_;
  static std::vector<Sample>* val_;
};
RunConfig* Trained::cfg_ = nullptr;
Checkpoint* Trained::ck_ = nullptr;
std::vector<Sample>* Trained::val_ = nullptr;

TEST_F(Trained, RefinementLeavesRecMetricsUntouched) {
  RunConfig none = *cfg_, asnls = *cfg_;
  none.postproc.mode = Refinement::kNone;
  asnls.postproc.mode = Refinement::kAsnls;
  const MetricsReport a = evaluate(*ck_, none, *val_, nullptr);
  const MetricsReport b = evaluate(*ck_, asnls, *val_, nullptr);
  EXPECT_EQ(a.rec_prec_at_05, b.rec_prec_at_05);
  EXPECT_EQ(a.n_samples, b.n_samples);
  for (const auto* r : {&a, &b}) {
    for (double v : {*r->rec_prec_at_05, *r->res_mean_iou, *r->ie}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST_F(Trained, EvaluationIsDeterministic) {
  EXPECT_EQ(evaluate(*ck_, *cfg_, *val_, nullptr).to_json(),
            evaluate(*ck_, *cfg_, *val_, nullptr).to_json());
}

TEST_F(Trained, HashMismatchWarnsButEvaluates) {
  RunConfig other = *cfg_;
  other.optim.lr = 0.5;
  std::ostringstream warn;
  const MetricsReport r = evaluate(*ck_, other, *val_, &warn);
  EXPECT_NE(warn.str().find("warning"), std::string::npos);
  EXPECT_EQ(r.n_samples, val_->size());
  std::ostringstream quiet;
  evaluate(*ck_, *cfg_, *val_, &quiet);
  EXPECT_TRUE(quiet.str().empty());
}

TEST_F(Trained, PredictionHonoursItsContract) {
  const ParamStore p = frozen(ck_->params);
  for (const Sample& s : *val_) {
    const Prediction pr = predict(p, *cfg_, s);
    ASSERT_TRUE(pr.box && pr.confidence && pr.prob && pr.mask);
    EXPECT_GE(pr.box->x_min, 0.0);
    EXPECT_GE(pr.box->y_min, 0.0);
    EXPECT_LE(pr.box->x_max, 64.0);
    EXPECT_LE(pr.box->y_max, 64.0);
    EXPECT_GT(*pr.confidence, 0.0);
    EXPECT_LT(*pr.confidence, 1.0);
    for (const auto& att : {pr.rec_attention, pr.res_attention}) {
      ASSERT_TRUE(att.has_value());
      const auto v = att->data();
      EXPECT_NEAR(std::accumulate(v.begin(), v.end(), 0.0), 1.0, 1e-9);
    }
    const auto j = prediction_json(pr);
    EXPECT_TRUE(j.contains("box"));
  }
}

TEST_F(Trained, SingleTaskStructuresReportOneSide) {
  RunConfig rec = quick_config("rec_only", 1);
  rec.model.structure = Structure::kSingleRec;
  TrainOptions o;
  o.write_checkpoints = false;
  const Checkpoint ck = train(rec, tiny_set(4), o);
  const MetricsReport r = evaluate(ck, rec, *val_, nullptr);
  EXPECT_TRUE(r.rec_prec_at_05.has_value());
  EXPECT_FALSE(r.res_mean_iou.has_value());
  EXPECT_FALSE(r.ie.has_value());
  const Prediction pr = predict(frozen(ck.params), rec, val_->front());
  EXPECT_FALSE(pr.mask.has_value());
  EXPECT_FALSE(pr.res_attention.has_value());
}

}  // namespace
}  // namespace refjoint
