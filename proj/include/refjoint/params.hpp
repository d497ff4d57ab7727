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

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "refjoint/errors.hpp"
#include "refjoint/rng.hpp"
#include "refjoint/tensor.hpp"

namespace refjoint {

/// Named registry of every learnable tensor of a model.
///
/// Iteration is in name order, which fixes the order of initialization,
/// optimizer updates and checkpoint entries.
class ParamStore {
 public:
  // fan_in == 0 marks a bias (zero-initialized).
  Tensor& add(const std::string& name, Shape shape, std::size_t fan_in) {
    if (tensors_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
    fan_in_[name] = fan_in;
    return tensors_.emplace(name, Tensor::zeros(std::move(shape), true)).first->second;
  }

  Tensor& weight(const std::string& name, Shape shape, std::size_t fan_in) {
    return add(name, std::move(shape), fan_in);
  }
  Tensor& bias(const std::string& name, Shape shape) { return add(name, std::move(shape), 0); }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  const Tensor& get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }
  Tensor& get(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ContractError("unknown parameter '" + name + "'");
    return it->second;
  }

  // Weights uniform in [-a, a] with a = sqrt(1/fan_in); biases zero.
  void init_uniform(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& [name, t] : tensors_) {
      const std::size_t fan_in = fan_in_.at(name);
      auto d = t.data();
      if (fan_in == 0) {
        std::fill(d.begin(), d.end(), 0.0);
        continue;
      }
      const double a = std::sqrt(1.0 / static_cast<double>(fan_in));
      for (double& v : d) v = rng.uniform(-a, a);
    }
  }

  void zero_grad() {
    for (auto& [name, t] : tensors_) t.zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors_) n += t.size();
    return n;
  }

  std::size_t size() const { return tensors_.size(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

 private:
  std::map<std::string, Tensor> tensors_;
  std::map<std::string, std::size_t> fan_in_;
};

}  // namespace refjoint
