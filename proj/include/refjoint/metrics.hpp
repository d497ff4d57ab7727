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

// REC precision, RES IoU / Acc@X and the inconsistency error between the two.

#include <algorithm>
#include <array>
#include <cstdio>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "refjoint/box.hpp"
#include "refjoint/errors.hpp"
#include "refjoint/mask.hpp"

namespace refjoint {

inline constexpr double kCorrectIou = 0.5;
inline constexpr std::array<double, 5> kAccThresholds{0.5, 0.6, 0.7, 0.8, 0.9};

inline double box_iou(const Box& a, const Box& b) {
  if (a.x_max < a.x_min || a.y_max < a.y_min || b.x_max < b.x_min || b.y_max < b.y_min) {
    throw ContractError("inverted box " + box_str(a.x_max < a.x_min || a.y_max < a.y_min ? a : b));
  }
  const double iw = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double ih = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

/// |a & b| / |a | b|; 1 when both are empty, 0 when exactly one is.
inline double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw DimensionError("mask_iou shapes differ: " + std::to_string(a.rows) + "x" +
                         std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                         std::to_string(b.cols));
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    inter += a.bits[i] & b.bits[i];
    uni += a.bits[i] | b.bits[i];
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

/// Fraction of IoUs strictly above x.
inline double acc_at_x(std::span<const double> ious, double x) {
  if (ious.empty()) throw ContractError("acc_at_x over no samples");
  std::size_t hits = 0;
  for (double v : ious) hits += v > x ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ious.size());
}

/// Fraction of samples where exactly one task is correct.
inline double inconsistency_error(const std::vector<bool>& rec_correct,
                                  const std::vector<bool>& res_correct) {
  if (rec_correct.size() != res_correct.size()) {
    throw DimensionError("inconsistency_error: " + std::to_string(rec_correct.size()) +
                         " REC vs " + std::to_string(res_correct.size()) + " RES outcomes");
  }
  if (rec_correct.empty()) throw ContractError("inconsistency_error over no samples");
  std::size_t bad = 0;
  for (std::size_t i = 0; i < rec_correct.size(); ++i) bad += rec_correct[i] != res_correct[i];
  return static_cast<double>(bad) / static_cast<double>(rec_correct.size());
}

/// Per-sample scores; a task the model does not have is left empty.
struct SampleOutcome {
  std::optional<double> box_iou;
  std::optional<double> mask_iou;
};

struct MetricsReport {
  std::size_t n_samples = 0;
  std::optional<double> rec_prec_at_05;
  std::optional<double> res_mean_iou;
  std::vector<std::pair<double, double>> acc_at;  // (threshold, fraction), empty without RES
  std::optional<double> ie;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["n_samples"] = n_samples;
    j["rec_prec_at_05"] = rec_prec_at_05 ? nlohmann::ordered_json(*rec_prec_at_05) : nullptr;
    j["res_mean_iou"] = res_mean_iou ? nlohmann::ordered_json(*res_mean_iou) : nullptr;
    for (double x : kAccThresholds) j[acc_key(x)] = nullptr;
    for (const auto& [x, v] : acc_at) j[acc_key(x)] = v;
    j["ie"] = ie ? nlohmann::ordered_json(*ie) : nullptr;
    return j;
  }

  static std::string csv_header() {
    std::string h = "split,n_samples,rec_prec_at_05,res_mean_iou";
    for (double x : kAccThresholds) h += "," + acc_key(x);
    return h + ",ie";
  }

  std::string csv_row(const std::string& split) const {
    std::ostringstream os;
    const auto field = [&](const std::optional<double>& v) {
      os << ',';
      if (v) os << fmt(*v);
    };
    os << split << ',' << n_samples;
    field(rec_prec_at_05);
    field(res_mean_iou);
    for (double x : kAccThresholds) {
      std::optional<double> v;
      for (const auto& [t, a] : acc_at)
        if (t == x) v = a;
      field(v);
    }
    field(ie);
    return os.str();
  }

  static std::string acc_key(double x) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "acc_at_%.1f", x);
    return buf;
  }

 private:
  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
  }
};

/// Aggregates per-sample outcomes. Concatenating outcome lists before
/// summarizing is how partial evaluations merge.
inline MetricsReport summarize(const std::vector<SampleOutcome>& outcomes) {
  MetricsReport r;
  r.n_samples = outcomes.size();
  if (outcomes.empty()) return r;
  std::vector<double> box_ious, mask_ious;
  std::vector<bool> rec_ok, res_ok;
  for (const auto& o : outcomes) {
    if (o.box_iou) box_ious.push_back(*o.box_iou);
    if (o.mask_iou) mask_ious.push_back(*o.mask_iou);
    if (o.box_iou && o.mask_iou) {
      rec_ok.push_back(*o.box_iou > kCorrectIou);
      res_ok.push_back(*o.mask_iou > kCorrectIou);
    }
  }
  if (!box_ious.empty()) r.rec_prec_at_05 = acc_at_x(box_ious, kCorrectIou);
  if (!mask_ious.empty()) {
    double total = 0.0;
    for (double v : mask_ious) total += v;
    r.res_mean_iou = total / static_cast<double>(mask_ious.size());
    for (double x : kAccThresholds) r.acc_at.emplace_back(x, acc_at_x(mask_ious, x));
  }
  if (!rec_ok.empty()) r.ie = inconsistency_error(rec_ok, res_ok);
  return r;
}

}  // namespace refjoint
