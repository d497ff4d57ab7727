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

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "refjoint/errors.hpp"

namespace refjoint {

using Shape = std::vector<std::size_t>;

/// Tensor storage. Vectorized kernels peel differently depending on the base
/// address, so a fixed alignment keeps results bit-identical across runs.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

class Graph;

/// Dense row-major float64 array that can take part in a recorded graph.
///
/// A Tensor is a handle: copies share the same storage, so a gradient written
/// through one handle is visible through all of them. Use clone() for an
/// independent copy.
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::initializer_list<double> data, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer(data), requires_grad) {}

  Tensor(Shape shape, const std::vector<double>& data, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer(data.begin(), data.end()), requires_grad) {}

  Tensor(Shape shape, Buffer data, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    for (std::size_t extent : shape) {
      if (extent == 0) {
        throw DimensionError("tensor extents must be positive, got " +
                             shape_str(shape));
      }
    }
    if (numel(shape) != data.size()) {
      throw DimensionError("shape " + shape_str(shape) + " needs " +
                           std::to_string(numel(shape)) + " values, got " +
                           std::to_string(data.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), Buffer(n, 0.0), requires_grad);
  }

  static Tensor filled(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), Buffer(n, value),
                  requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t size() const { return impl_->data.size(); }

  // Handle semantics: constness of the handle does not extend to the storage.
  std::span<double> data() const { return impl_->data; }
  double operator[](std::size_t i) const { return impl_->data[i]; }

  double item() const {
    if (size() != 1) {
      throw ContractError("item() on tensor of shape " + shape_str(shape()));
    }
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return !impl_->grad.empty(); }

  // Allocates a zero gradient on first access.
  std::span<double> grad() const {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
    return impl_->grad;
  }

  void zero_grad() const {
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  std::optional<std::size_t> node_id() const { return impl_->node; }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  // Independent copy of the values; not attached to any graph.
  Tensor clone(bool requires_grad = false) const {
    return Tensor(impl_->shape, impl_->data, requires_grad);
  }

 private:
  friend class Graph;

  struct Impl {
    Shape shape;
    Buffer data;
    Buffer grad;
    bool requires_grad = false;
    std::optional<std::size_t> node;
    const Graph* graph = nullptr;
  };

  std::shared_ptr<Impl> impl_;
};

/// Tape of recorded operations for one forward pass.
///
/// Nodes are appended in execution order, so every node's inputs precede it.
/// A graph is meant to be built, differentiated and dropped by one thread.
class Graph {
 public:
  using BackwardFn = std::function<void()>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Attaches `out` to the tape when any input needs a gradient. `backward`
  // reads out.grad() and accumulates into the inputs.
  Tensor record(Tensor out, std::vector<Tensor> inputs, BackwardFn backward) {
    bool needs_grad = false;
    for (const Tensor& in : inputs) {
      if (in.impl_->graph != nullptr && in.impl_->graph != this) {
        throw ContractError("tensor belongs to a different graph");
      }
      needs_grad = needs_grad || in.requires_grad();
    }
    if (!needs_grad) return out;
    out.impl_->requires_grad = true;
    out.impl_->node = nodes_.size();
    out.impl_->graph = this;
    nodes_.push_back(Node{std::move(inputs), out, std::move(backward)});
    return out;
  }

  // Fills d(loss)/d(leaf) into every leaf that requires a gradient. Leaf
  // gradients accumulate across calls; intermediate gradients are reset.
  void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw ContractError("backward needs a scalar loss, got " +
                          (loss.defined() ? shape_str(loss.shape())
                                          : std::string("undefined")));
    }
    if (!loss.requires_grad()) return;
    if (!loss.node_id()) {
      // loss is itself a leaf
      Tensor leaf = loss;
      leaf.grad()[0] += 1.0;
      return;
    }
    if (loss.impl_->graph != this) {
      throw ContractError("loss was not recorded on this graph");
    }
    const std::size_t last = *loss.node_id();
    for (std::size_t i = 0; i <= last; ++i) {
      Tensor& out = nodes_[i].output;
      out.impl_->grad.assign(out.size(), 0.0);
    }
    nodes_[last].output.impl_->grad[0] = 1.0;
    for (std::size_t i = last + 1; i-- > 0;) {
      nodes_[i].backward();
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

}  // namespace refjoint
