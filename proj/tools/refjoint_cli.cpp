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
// Command-line entry points: gen-data, train, eval, predict.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "refjoint/config.hpp"
#include "refjoint/synth.hpp"
#include "refjoint/train.hpp"

namespace fs = std::filesystem;
using namespace refjoint;

namespace {

// Flags shared by train/eval/predict; unset flags leave the config alone.
struct Overrides {
  std::string config_file;
  std::optional<std::string> structure;
  std::optional<bool> use_cem;
  std::optional<std::string> postproc;
  std::optional<double> alpha_up;
  std::optional<double> alpha_dec;
  std::optional<double> bin_threshold;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<bool> augment;
  std::optional<std::string> data_dir;
  std::optional<std::string> out_dir;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "flat JSON config file");
    app->add_option("--structure", structure,
                    "mcn|single_rec|single_res|only_head_different|only_backbone_shared");
    app->add_option("--use-cem", use_cem, "enable the consistency energy loss (true/false)");
    app->add_option("--postproc", postproc, "none|roi_crop|soft_nls|asnls");
    app->add_option("--alpha-up", alpha_up, "soft_nls scale inside the box");
    app->add_option("--alpha-dec", alpha_dec, "soft_nls scale outside the box");
    app->add_option("--bin-threshold", bin_threshold, "mask binarization threshold");
    app->add_option("--seed", seed, "parameter init and data order seed");
    app->add_option("--epochs", epochs, "training epochs");
    app->add_option("--augment", augment, "mirror and recolor training samples (true/false)");
    app->add_option("--data-dir", data_dir, "dataset directory");
    app->add_option("--run-dir", out_dir, "directory for checkpoint and logs");
  }

  // Flags only; the --config file is layered separately.
  void apply(RunConfig& cfg) const {
    nlohmann::json j = nlohmann::json::object();
    if (structure) j["structure"] = *structure;
    if (use_cem) j["use_cem"] = *use_cem;
    if (postproc) j["postproc"] = *postproc;
    if (alpha_up) j["alpha_up"] = *alpha_up;
    if (alpha_dec) j["alpha_dec"] = *alpha_dec;
    if (bin_threshold) j["bin_threshold"] = *bin_threshold;
    if (seed) j["seed"] = *seed;
    if (epochs) j["epochs"] = *epochs;
    if (augment) j["augment"] = *augment;
    if (data_dir) j["data_dir"] = *data_dir;
    if (out_dir) j["out_dir"] = *out_dir;
    cfg.apply(j);
  }
};

// A --config file only overrides the keys it names.
RunConfig base_config(const Overrides& o) {
  RunConfig cfg;
  if (!o.config_file.empty()) {
    std::ifstream is(o.config_file);
    if (!is) throw ConfigError(o.config_file + ": cannot open config file");
    cfg.apply(nlohmann::json::parse(is));
  }
  Overrides flags = o;
  flags.config_file.clear();
  flags.apply(cfg);
  return cfg;
}

void print_report(const MetricsReport& r, const std::string& label) {
  const auto show = [](const std::optional<double>& v) {
    char buf[32];
    if (!v) return std::string("n/a");
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return std::string(buf);
  };
  std::cout << label << ": n=" << r.n_samples << "  REC Acc@0.5=" << show(r.rec_prec_at_05)
            << "  RES IoU=" << show(r.res_mean_iou) << "  IE=" << show(r.ie) << '\n';
  for (const auto& [x, v] : r.acc_at) std::cout << "  Acc@" << x << " = " << show(v) << '\n';
}

void write_report(const MetricsReport& r, const std::string& split, const fs::path& out) {
  std::ofstream os(out);
  if (!os) throw IoError(out.string() + ": cannot open for writing");
  if (out.extension() == ".csv") {
    os << MetricsReport::csv_header() << '\n' << r.csv_row(split) << '\n';
  } else {
    auto j = r.to_json();
    j["split"] = split;
    os << j.dump(2) << '\n';
  }
  if (!os) throw IoError(out.string() + ": write failed");
}

// Checkpoint's own config, then --config keys, then flags.
RunConfig eval_config(const Checkpoint& ck, const Overrides& o) {
  RunConfig cfg = RunConfig::from_json(nlohmann::json::parse(ck.config_json));
  if (!o.config_file.empty()) {
    std::ifstream is(o.config_file);
    if (!is) throw ConfigError(o.config_file + ": cannot open config file");
    cfg.apply(nlohmann::json::parse(is));
  }
  Overrides flags = o;
  flags.config_file.clear();
  flags.apply(cfg);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"refjoint: joint referring box and mask prediction on synthetic scenes"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
  std::string gen_out = "data";
  std::size_t n_train = 500, n_val = 100;
  std::uint64_t gen_seed = 7;
  std::string synth_file;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--n-train", n_train, "training samples");
  gen->add_option("--n-val", n_val, "validation samples");
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--synth-config", synth_file, "JSON generator settings");

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  Overrides tr_o;
  tr_o.attach(tr);
  bool resume = false;
  tr->add_flag("--resume", resume, "continue from the run directory's checkpoint");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  Overrides ev_o;
  ev_o.attach(ev);
  std::string ev_ckpt, ev_split = "val", ev_out;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file (default <run-dir>/checkpoint.rjc)");
  ev->add_option("--split", ev_split, "train|val");
  ev->add_option("--out", ev_out, "report file (.json or .csv)");

  // predict
  auto* pr = app.add_subcommand("predict", "predict one sample");
  Overrides pr_o;
  pr_o.attach(pr);
  std::string pr_ckpt, pr_split = "val", pr_out, pr_sample;
  std::size_t pr_index = 0;
  pr->add_option("--checkpoint", pr_ckpt, "checkpoint file (default <run-dir>/checkpoint.rjc)");
  pr->add_option("--split", pr_split, "train|val");
  pr->add_option("--index", pr_index, "sample index within the split");
  pr->add_option("--sample", pr_sample, "sample file (overrides --split/--index)");
  pr->add_option("--out", pr_out, "prediction JSON file (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      SynthConfig sc;
      if (!synth_file.empty()) {
        std::ifstream is(synth_file);
        if (!is) throw ConfigError(synth_file + ": cannot open");
        sc = SynthConfig::from_json(nlohmann::json::parse(is));
      }
      const auto m = emit_dataset(n_train, n_val, gen_seed, sc, gen_out);
      std::cout << "wrote " << n_train << " train + " << n_val << " val samples to " << gen_out
                << " (config hash " << m["config_hash"].get<std::string>() << ")\n";
      return 0;
    }

    if (tr->parsed()) {
      RunConfig cfg = base_config(tr_o);
      cfg.validate();
      const Dataset data = load_dataset(cfg.data_dir);
      std::cout << "training " << to_string(cfg.model.structure)
                << (cfg.model.cem_active() ? " +cem" : "") << " on " << data.train.size()
                << " samples, " << cfg.optim.epochs << " epochs\n";
      TrainOptions opts;
      opts.resume = resume;
      opts.on_epoch = [](const EpochLog& e, const Checkpoint&) {
        std::printf("epoch %3zu  lr %.1e  loss %.6f  res %.6f  rec %.6f  cem %.6f\n", e.epoch,
                    e.lr, e.total, e.res, e.rec, e.cem);
        std::fflush(stdout);
      };
      const Checkpoint ck = train(cfg, data.train, opts);
      std::ofstream log(fs::path(cfg.out_dir) / "loss_log.csv");
      log << "epoch,lr,total,res,rec,cem\n";
      char line[160];
      for (const auto& e : ck.log) {
        std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.lr,
                      e.total, e.res, e.rec, e.cem);
        log << line;
      }
      std::cout << "checkpoint: " << (fs::path(cfg.out_dir) / kCheckpointFile).string() << '\n';
      return 0;
    }

    const auto checkpoint_path = [](const std::string& explicit_path, const Overrides& o) {
      if (!explicit_path.empty()) return fs::path(explicit_path);
      return fs::path(o.out_dir.value_or("run")) / kCheckpointFile;
    };

    if (ev->parsed()) {
      const Checkpoint ck = load_checkpoint(checkpoint_path(ev_ckpt, ev_o));
      const RunConfig cfg = eval_config(ck, ev_o);
      const Dataset data = load_dataset(cfg.data_dir);
      const MetricsReport r = evaluate(ck, cfg, data.split(ev_split));
      print_report(r, ev_split + " [" + to_string(cfg.postproc.mode) + "]");
      if (!ev_out.empty()) write_report(r, ev_split, ev_out);
      return 0;
    }

    if (pr->parsed()) {
      const Checkpoint ck = load_checkpoint(checkpoint_path(pr_ckpt, pr_o));
      const RunConfig cfg = eval_config(ck, pr_o);
      Sample s;
      if (!pr_sample.empty()) {
        s = load_sample(pr_sample);
      } else {
        const auto dir = fs::path(cfg.data_dir) / pr_split;
        if (pr_split != "train" && pr_split != "val") throw ConfigError("unknown split " + pr_split);
        s = load_sample(dir / sample_file_name(pr_index));
      }
      const Prediction p = predict(frozen(ck.params), cfg, s);
      auto j = prediction_json(p);
      j["expression"] = Vocabulary::standard().decode(s.tokens);
      if (pr_out.empty()) {
        std::cout << j.dump(2) << '\n';
      } else {
        std::ofstream os(pr_out);
        if (!os) throw IoError(pr_out + ": cannot open for writing");
        os << j.dump(2) << '\n';
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
