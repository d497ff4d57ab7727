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

// Run configuration: one flat JSON object of scalar keys.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "refjoint/errors.hpp"
#include "refjoint/model.hpp"
#include "refjoint/postprocess.hpp"
#include "refjoint/rng.hpp"

namespace refjoint {

struct OptimizerConfig {
  double lr = 1e-3;
  std::vector<std::size_t> decay_epochs{30, 35, 40};
  double decay_factor = 0.1;
  std::size_t batch = 8;
  std::size_t epochs = 45;
  double clip_norm = 5.0;  // global gradient norm; 0 disables
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool augment = true;  // mirror and palette-permutation variants of training samples
};

struct RunConfig {
  ModelConfig model;
  LossWeights weights;
  RefinementConfig postproc;
  OptimizerConfig optim;
  std::uint64_t seed = 7;  // parameter init and data order
  std::string data_dir = "data";
  std::string out_dir = "run";

  void validate() const {
    if (!(optim.decay_factor > 0.0 && optim.decay_factor < 1.0)) {
      throw ConfigError("decay_factor must lie in (0, 1)");
    }
    if (!(optim.lr > 0.0)) throw ConfigError("lr must be positive");
    if (optim.batch == 0) throw ConfigError("batch must be positive");
    if (optim.clip_norm < 0.0) throw ConfigError("clip_norm must be non-negative");
    if (model.dims.d_t % 2 != 0) throw ConfigError("d_t must be even");
    postproc.validate();
  }

  std::string decay_str() const {
    std::string s;
    for (std::size_t e : optim.decay_epochs) s += (s.empty() ? "" : ",") + std::to_string(e);
    return s;
  }

  nlohmann::ordered_json to_json() const {
    const ModelDims& d = model.dims;
    return {
        {"structure", to_string(model.structure)},
        {"use_cem", model.use_cem},
        {"postproc", to_string(postproc.mode)},
        {"alpha_up", postproc.alpha_up},
        {"alpha_dec", postproc.alpha_dec},
        {"lambda_au", postproc.lambda_au},
        {"lambda_ad", postproc.lambda_ad},
        {"lambda_bu", postproc.lambda_bu},
        {"lambda_bd", postproc.lambda_bd},
        {"bin_threshold", postproc.bin_threshold},
        {"lr", optim.lr},
        {"decay_epochs", decay_str()},
        {"decay_factor", optim.decay_factor},
        {"batch", optim.batch},
        {"epochs", optim.epochs},
        {"clip_norm", optim.clip_norm},
        {"augment", optim.augment},
        {"weight_res", weights.res},
        {"weight_rec", weights.rec},
        {"weight_cem", weights.cem},
        {"stem_channels", d.stem_channels},
        {"d1", d.d1},
        {"d2", d.d2},
        {"d3", d.d3},
        {"embed_dim", d.embed_dim},
        {"d_t", d.d_t},
        {"text_attn_dim", d.text_attn_dim},
        {"d", d.d},
        {"rec_width", d.rec_width},
        {"decoder_width", d.decoder_width},
        {"seed", seed},
        {"data_dir", data_dir},
        {"out_dir", out_dir},
    };
  }

  /// Hash over everything that shapes the trained weights; post-processing
  /// and paths are excluded so evaluation variants share a checkpoint.
  std::uint64_t hash() const {
    auto j = to_json();
    for (const char* k : {"postproc", "alpha_up", "alpha_dec", "lambda_au", "lambda_ad",
                          "lambda_bu", "lambda_bd", "bin_threshold", "data_dir", "out_dir"}) {
      j.erase(k);
    }
    const std::string s = j.dump();
    return fnv1a(s.data(), s.size());
  }

  /// Overlays keys present in `j`; unknown keys and non-scalar values are errors.
  void apply(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    static const std::set<std::string> known = [] {
      std::set<std::string> s;
      const auto defaults = RunConfig{}.to_json();
      for (const auto& [k, v] : defaults.items()) s.insert(k);
      return s;
    }();
    for (const auto& [k, v] : j.items()) {
      if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
      if (v.is_structured()) throw ConfigError("config key '" + k + "' must be a scalar");
    }
    try {
      ModelDims& d = model.dims;
      if (j.contains("structure")) model.structure = parse_structure(j["structure"]);
      if (j.contains("use_cem")) model.use_cem = j["use_cem"].get<bool>();
      if (j.contains("postproc")) postproc.mode = parse_refinement(j["postproc"]);
      postproc.alpha_up = j.value("alpha_up", postproc.alpha_up);
      postproc.alpha_dec = j.value("alpha_dec", postproc.alpha_dec);
      postproc.lambda_au = j.value("lambda_au", postproc.lambda_au);
      postproc.lambda_ad = j.value("lambda_ad", postproc.lambda_ad);
      postproc.lambda_bu = j.value("lambda_bu", postproc.lambda_bu);
      postproc.lambda_bd = j.value("lambda_bd", postproc.lambda_bd);
      postproc.bin_threshold = j.value("bin_threshold", postproc.bin_threshold);
      optim.lr = j.value("lr", optim.lr);
      if (j.contains("decay_epochs")) optim.decay_epochs = parse_epochs(j["decay_epochs"]);
      optim.decay_factor = j.value("decay_factor", optim.decay_factor);
      optim.batch = j.value("batch", optim.batch);
      optim.epochs = j.value("epochs", optim.epochs);
      optim.clip_norm = j.value("clip_norm", optim.clip_norm);
      if (j.contains("augment")) optim.augment = j["augment"].get<bool>();
      weights.res = j.value("weight_res", weights.res);
      weights.rec = j.value("weight_rec", weights.rec);
      weights.cem = j.value("weight_cem", weights.cem);
      d.stem_channels = j.value("stem_channels", d.stem_channels);
      d.d1 = j.value("d1", d.d1);
      d.d2 = j.value("d2", d.d2);
      d.d3 = j.value("d3", d.d3);
      d.embed_dim = j.value("embed_dim", d.embed_dim);
      d.d_t = j.value("d_t", d.d_t);
      d.text_attn_dim = j.value("text_attn_dim", d.text_attn_dim);
      d.d = j.value("d", d.d);
      d.rec_width = j.value("rec_width", d.rec_width);
      d.decoder_width = j.value("decoder_width", d.decoder_width);
      seed = j.value("seed", seed);
      data_dir = j.value("data_dir", data_dir);
      out_dir = j.value("out_dir", out_dir);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config value has the wrong type: ") + e.what());
    }
  }

  static std::vector<std::size_t> parse_epochs(const nlohmann::json& v) {
    if (v.is_number_unsigned()) return {v.get<std::size_t>()};
    if (!v.is_string()) throw ConfigError("decay_epochs must be a comma-separated string");
    std::vector<std::size_t> out;
    const std::string s = v.get<std::string>();
    std::size_t pos = 0;
    while (pos < s.size()) {
      const std::size_t next = std::min(s.find(',', pos), s.size());
      const std::string item = s.substr(pos, next - pos);
      try {
        std::size_t used = 0;
        const unsigned long e = std::stoul(item, &used);
        if (used != item.size()) throw std::invalid_argument(item);
        out.push_back(e);
      } catch (const std::exception&) {
        throw ConfigError("decay_epochs entry '" + item + "' is not an epoch number");
      }
      pos = next + 1;
    }
    return out;
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    c.apply(j);
    return c;
  }

  static RunConfig load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError(path.string() + ": cannot open config file");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
    return from_json(j);
  }
};

}  // namespace refjoint
