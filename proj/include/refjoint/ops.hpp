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

// Differentiable operations over Tensor. Every op takes the Graph it records
// on as its first argument; inputs that do not require a gradient are treated
// as constants.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "refjoint/errors.hpp"
#include "refjoint/tensor.hpp"

namespace refjoint {

inline constexpr double kLeakySlope = 0.1;

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

inline ConstMapMat as_mat(std::span<const double> s, std::size_t rows,
                          std::size_t cols) {
  return ConstMapMat(s.data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}
inline MapMat as_mat(std::span<double> s, std::size_t rows, std::size_t cols) {
  return MapMat(s.data(), static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

template <typename Fwd, typename Deriv>
Tensor unary(Graph& g, const Tensor& x, Fwd fwd, Deriv deriv) {
  Buffer out(x.size());
  auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xs[i]);
  Tensor y(x.shape(), std::move(out));
  return g.record(y, {x}, [x, y, deriv]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.grad();
    auto gy = y.grad();
    auto xs = x.data();
    auto ys = y.data();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += gy[i] * deriv(xs[i], ys[i]);
    }
  });
}

// Shapes equal, or the smaller operand matches the trailing axes of the larger.
inline bool broadcastable(const Shape& big, const Shape& small) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

enum class BinaryKind { kAdd, kSub, kMul };

inline Tensor binary(Graph& g, const Tensor& a, const Tensor& b, BinaryKind kind) {
  const bool a_big = a.size() >= b.size();
  const Tensor& big = a_big ? a : b;
  const Tensor& small = a_big ? b : a;
  if (!broadcastable(big.shape(), small.shape())) {
    throw DimensionError("cannot broadcast " + shape_str(a.shape()) + " with " +
                         shape_str(b.shape()));
  }
  const std::size_t n = big.size();
  const std::size_t period = small.size();
  Buffer out(n);
  auto as = a.data();
  auto bs = b.data();
  const bool a_full = a.size() == n;
  for (std::size_t i = 0; i < n; ++i) {
    const double av = a_full ? as[i] : as[i % period];
    const double bv = a_full ? bs[i % period] : bs[i];
    switch (kind) {
      case BinaryKind::kAdd: out[i] = av + bv; break;
      case BinaryKind::kSub: out[i] = av - bv; break;
      case BinaryKind::kMul: out[i] = av * bv; break;
    }
  }
  Tensor y(big.shape(), std::move(out));
  return g.record(y, {a, b}, [a, b, y, kind, a_full, period]() mutable {
    auto gy = y.grad();
    const std::size_t n = gy.size();
    auto as = a.data();
    auto bs = b.data();
    if (a.requires_grad()) {
      auto ga = a.grad();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ia = a_full ? i : i % period;
        const std::size_t ib = a_full ? i % period : i;
        double d = 1.0;
        if (kind == BinaryKind::kMul) d = bs[ib];
        ga[ia] += gy[i] * d;
      }
    }
    if (b.requires_grad()) {
      auto gb = b.grad();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ia = a_full ? i : i % period;
        const std::size_t ib = a_full ? i % period : i;
        double d = 1.0;
        if (kind == BinaryKind::kSub) d = -1.0;
        if (kind == BinaryKind::kMul) d = as[ia];
        gb[ib] += gy[i] * d;
      }
    }
  });
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

inline double binary_entropy(double t) {
  double h = 0.0;
  if (t > 0.0 && t < 1.0) h = -t * std::log(t) - (1.0 - t) * std::log(1.0 - t);
  return h;
}

}  // namespace detail

// ---------------------------------------------------------------- linear algebra

/// [m x k] * [k x n] -> [m x n].
inline Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor y = Tensor::zeros({m, n});
  detail::as_mat(y.data(), m, n).noalias() =
      detail::as_mat(a.data(), m, k) * detail::as_mat(b.data(), k, n);
  return g.record(y, {a, b}, [a, b, y, m, k, n]() mutable {
    auto dy = detail::as_mat(std::span<const double>(y.grad()), m, n);
    if (a.requires_grad()) {
      detail::as_mat(a.grad(), m, k).noalias() +=
          dy * detail::as_mat(b.data(), k, n).transpose();
    }
    if (b.requires_grad()) {
      detail::as_mat(b.grad(), k, n).noalias() +=
          detail::as_mat(a.data(), m, k).transpose() * dy;
    }
  });
}

inline Tensor transpose(Graph& g, const Tensor& x) {
  detail::require(x.rank() == 2, "transpose needs a matrix, got " +
                                     shape_str(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor y = Tensor::zeros({c, r});
  detail::as_mat(y.data(), c, r) = detail::as_mat(x.data(), r, c).transpose();
  return g.record(y, {x}, [x, y, r, c]() mutable {
    if (!x.requires_grad()) return;
    detail::as_mat(x.grad(), r, c) +=
        detail::as_mat(std::span<const double>(y.grad()), c, r).transpose();
  });
}

inline Tensor reshape(Graph& g, const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("cannot reshape " + shape_str(x.shape()) + " to " +
                         shape_str(shape));
  }
  Tensor y(std::move(shape), Buffer(x.data().begin(), x.data().end()));
  return g.record(y, {x}, [x, y]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.grad();
    auto gy = y.grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
  });
}

// ---------------------------------------------------------------- elementwise

inline Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  return detail::binary(g, a, b, detail::BinaryKind::kAdd);
}
inline Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  return detail::binary(g, a, b, detail::BinaryKind::kSub);
}
inline Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  return detail::binary(g, a, b, detail::BinaryKind::kMul);
}

inline Tensor scale(Graph& g, const Tensor& x, double c) {
  return detail::unary(
      g, x, [c](double v) { return c * v; },
      [c](double, double) { return c; });
}

inline Tensor add_scalar(Graph& g, const Tensor& x, double c) {
  return detail::unary(
      g, x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Tensor leaky_relu(Graph& g, const Tensor& x) {
  return detail::unary(
      g, x, [](double v) { return v > 0 ? v : kLeakySlope * v; },
      [](double v, double) { return v > 0 ? 1.0 : kLeakySlope; });
}

inline Tensor sigmoid(Graph& g, const Tensor& x) {
  return detail::unary(
      g, x, [](double v) { return detail::stable_sigmoid(v); },
      [](double, double s) { return s * (1.0 - s); });
}

inline Tensor tanh(Graph& g, const Tensor& x) {
  return detail::unary(
      g, x, [](double v) { return std::tanh(v); },
      [](double, double t) { return 1.0 - t * t; });
}

inline Tensor exp(Graph& g, const Tensor& x) {
  return detail::unary(
      g, x, [](double v) { return std::exp(v); },
      [](double, double e) { return e; });
}

inline Tensor log(Graph& g, const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) {
      throw DomainError("log of non-positive value " + std::to_string(v));
    }
  }
  return detail::unary(
      g, x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

/// max(x, lo); gradient passes where x >= lo.
inline Tensor clamp_min(Graph& g, const Tensor& x, double lo) {
  return detail::unary(
      g, x, [lo](double v) { return v < lo ? lo : v; },
      [lo](double v, double) { return v < lo ? 0.0 : 1.0; });
}

// ---------------------------------------------------------------- reductions

inline Tensor sum(Graph& g, const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor y = Tensor::scalar(s);
  return g.record(y, {x}, [x, y]() mutable {
    if (!x.requires_grad()) return;
    const double gy = y.grad()[0];
    for (double& v : x.grad()) v += gy;
  });
}

/// Softmax over all elements, with max subtraction.
inline Tensor softmax(Graph& g, const Tensor& x) {
  if (!x.defined() || x.size() == 0) throw DimensionError("softmax of empty input");
  auto xs = x.data();
  const double mx = *std::max_element(xs.begin(), xs.end());
  Buffer out(xs.size());
  double z = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out[i] = std::exp(xs[i] - mx);
    z += out[i];
  }
  for (double& v : out) v /= z;
  Tensor y(x.shape(), std::move(out));
  return g.record(y, {x}, [x, y]() mutable {
    if (!x.requires_grad()) return;
    auto gy = y.grad();
    auto ys = y.data();
    double dot = 0.0;
    for (std::size_t i = 0; i < ys.size(); ++i) dot += gy[i] * ys[i];
    auto gx = x.grad();
    for (std::size_t i = 0; i < ys.size(); ++i) gx[i] += ys[i] * (gy[i] - dot);
  });
}

/// log(sum(exp(x))) as a scalar.
inline Tensor logsumexp(Graph& g, const Tensor& x) {
  auto xs = x.data();
  const double mx = *std::max_element(xs.begin(), xs.end());
  double z = 0.0;
  for (double v : xs) z += std::exp(v - mx);
  Tensor y = Tensor::scalar(mx + std::log(z));
  return g.record(y, {x}, [x, y]() mutable {
    if (!x.requires_grad()) return;
    const double gy = y.grad()[0];
    const double lse = y.data()[0];
    auto xs = x.data();
    auto gx = x.grad();
    for (std::size_t i = 0; i < xs.size(); ++i) gx[i] += gy * std::exp(xs[i] - lse);
  });
}

// ---------------------------------------------------------------- indexing

/// Elements of x (flattened) at `indices`, as a [k] vector.
inline Tensor gather(Graph& g, const Tensor& x, std::vector<std::size_t> indices) {
  if (indices.empty()) throw DimensionError("gather with no indices");
  Buffer out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= x.size()) {
      throw DimensionError("gather index " + std::to_string(indices[i]) +
                           " out of range for " + shape_str(x.shape()));
    }
    out[i] = x.data()[indices[i]];
  }
  Tensor y({indices.size()}, std::move(out));
  return g.record(y, {x}, [x, y, indices = std::move(indices)]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.grad();
    auto gy = y.grad();
    for (std::size_t i = 0; i < indices.size(); ++i) gx[indices[i]] += gy[i];
  });
}

/// Rows of table [V x e] selected by ids -> [L x e].
inline Tensor embedding(Graph& g, const Tensor& table, const std::vector<std::size_t>& ids) {
  detail::require(table.rank() == 2, "embedding table must be a matrix");
  detail::require(!ids.empty(), "embedding lookup with no ids");
  const std::size_t e = table.dim(1);
  Buffer out(ids.size() * e);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    detail::require(ids[r] < table.dim(0), "embedding id out of range");
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[r] * e), e,
                out.begin() + static_cast<std::ptrdiff_t>(r * e));
  }
  Tensor y({ids.size(), e}, std::move(out));
  return g.record(y, {table}, [table, y, ids, e]() mutable {
    if (!table.requires_grad()) return;
    auto gt = table.grad();
    auto gy = y.grad();
    for (std::size_t r = 0; r < ids.size(); ++r) {
      for (std::size_t c = 0; c < e; ++c) gt[ids[r] * e + c] += gy[r * e + c];
    }
  });
}

/// Concatenation along axis 0; trailing extents must agree.
inline Tensor concat(Graph& g, const std::vector<Tensor>& parts) {
  detail::require(!parts.empty(), "concat of nothing");
  Shape shape = parts[0].shape();
  std::size_t lead = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != shape.size() ||
        !std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1)) {
      throw DimensionError("concat trailing extents differ: " +
                           shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    lead += p.dim(0);
  }
  shape[0] = lead;
  Buffer out;
  out.reserve(numel(shape));
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor y(shape, std::move(out));
  return g.record(y, parts, [parts, y]() mutable {
    auto gy = y.grad();
    std::size_t offset = 0;
    for (Tensor p : parts) {
      if (p.requires_grad()) {
        auto gp = p.grad();
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += gy[offset + i];
      }
      offset += p.size();
    }
  });
}

/// Multiplies each slice x[i, ...] by s[i]. x is [n x ...], s is [n].
inline Tensor scale_rows(Graph& g, const Tensor& x, const Tensor& s) {
  if (x.rank() < 1 || s.size() != x.dim(0)) {
    throw DimensionError("scale_rows: " + shape_str(x.shape()) + " by " +
                         shape_str(s.shape()));
  }
  const std::size_t n = x.dim(0);
  const std::size_t inner = x.size() / n;
  Buffer out(x.size());
  auto xs = x.data();
  auto ss = s.data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < inner; ++c) out[r * inner + c] = xs[r * inner + c] * ss[r];
  }
  Tensor y(x.shape(), std::move(out));
  return g.record(y, {x, s}, [x, s, y, n, inner]() mutable {
    auto gy = y.grad();
    auto xs = x.data();
    auto ss = s.data();
    if (x.requires_grad()) {
      auto gx = x.grad();
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < inner; ++c) gx[r * inner + c] += gy[r * inner + c] * ss[r];
      }
    }
    if (s.requires_grad()) {
      auto gs = s.grad();
      for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < inner; ++c) acc += gy[r * inner + c] * xs[r * inner + c];
        gs[r] += acc;
      }
    }
  });
}

/// Each row of x [n x d] divided by (||row|| + eps).
inline Tensor normalize_rows(Graph& g, const Tensor& x, double eps) {
  detail::require(x.rank() == 2, "normalize_rows needs a matrix, got " +
                                     shape_str(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<double> norms(n);
  Buffer out(x.size());
  auto xs = x.data();
  for (std::size_t r = 0; r < n; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += xs[r * d + c] * xs[r * d + c];
    norms[r] = std::sqrt(acc);
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = xs[r * d + c] / (norms[r] + eps);
  }
  Tensor y(x.shape(), std::move(out));
  return g.record(y, {x}, [x, y, n, d, eps, norms = std::move(norms)]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.grad();
    auto gy = y.grad();
    auto xs = x.data();
    for (std::size_t r = 0; r < n; ++r) {
      const double s = norms[r] + eps;
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += gy[r * d + c] * xs[r * d + c];
      const double k = norms[r] > 0.0 ? dot / (norms[r] * s * s) : 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        gx[r * d + c] += gy[r * d + c] / s - xs[r * d + c] * k;
      }
    }
  });
}

// ---------------------------------------------------------------- spatial

/// Cross-correlation of x [c_in x h x w] with kernel [c_out x c_in x k x k],
/// optional bias [c_out]. k must be odd.
inline Tensor conv2d(Graph& g, const Tensor& x, const Tensor& kernel,
                     const Tensor& bias, std::size_t stride, std::size_t pad) {
  if (x.rank() != 3 || kernel.rank() != 4 || kernel.dim(1) != x.dim(0) ||
      kernel.dim(2) != kernel.dim(3)) {
    throw DimensionError("conv2d shape mismatch: input " + shape_str(x.shape()) +
                         ", kernel " + shape_str(kernel.shape()));
  }
  const std::size_t k = kernel.dim(2);
  if (k % 2 == 0) throw DimensionError("conv2d kernel size must be odd");
  if (stride == 0) throw DimensionError("conv2d stride must be positive");
  const std::size_t c_in = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t c_out = kernel.dim(0);
  const long oh_l = (static_cast<long>(h + 2 * pad) - static_cast<long>(k)) /
                        static_cast<long>(stride) + 1;
  const long ow_l = (static_cast<long>(w + 2 * pad) - static_cast<long>(k)) /
                        static_cast<long>(stride) + 1;
  if (static_cast<long>(h + 2 * pad) < static_cast<long>(k) ||
      static_cast<long>(w + 2 * pad) < static_cast<long>(k) || oh_l < 1 || ow_l < 1) {
    throw DimensionError("conv2d output extent < 1 for input " + shape_str(x.shape()) +
                         " kernel " + std::to_string(k));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.size() != c_out) {
    throw DimensionError("conv2d bias " + shape_str(bias.shape()) + " for " +
                         std::to_string(c_out) + " output channels");
  }
  const std::size_t oh = static_cast<std::size_t>(oh_l);
  const std::size_t ow = static_cast<std::size_t>(ow_l);
  const std::size_t patch = c_in * k * k;
  const std::size_t npix = oh * ow;
  const bool pointwise = k == 1 && stride == 1 && pad == 0;

  // im2col: cols[(ci*k + ky)*k + kx][oy*ow + ox]
  auto cols = std::make_shared<Buffer>();
  if (!pointwise) {
    cols->assign(patch * npix, 0.0);
    auto xs = x.data();
    for (std::size_t ci = 0; ci < c_in; ++ci) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          double* row = cols->data() + ((ci * k + ky) * k + kx) * npix;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            const double* src = xs.data() + (ci * h + static_cast<std::size_t>(iy)) * w;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
              if (ix < 0 || ix >= static_cast<long>(w)) continue;
              row[oy * ow + ox] = src[ix];
            }
          }
        }
      }
    }
  }
  std::span<const double> col_view =
      pointwise ? x.data() : std::span<const double>(*cols);

  Tensor y = Tensor::zeros({c_out, oh, ow});
  auto ymat = detail::as_mat(y.data(), c_out, npix);
  ymat.noalias() = detail::as_mat(kernel.data(), c_out, patch) *
                   detail::as_mat(col_view, patch, npix);
  if (has_bias) {
    auto bs = bias.data();
    for (std::size_t co = 0; co < c_out; ++co) ymat.row(static_cast<Eigen::Index>(co)).array() += bs[co];
  }

  std::vector<Tensor> inputs{x, kernel};
  if (has_bias) inputs.push_back(bias);
  return g.record(y, std::move(inputs), [=]() mutable {
    auto dy = detail::as_mat(std::span<const double>(y.grad()), c_out, npix);
    std::span<const double> cv = pointwise ? x.data() : std::span<const double>(*cols);
    if (kernel.requires_grad()) {
      detail::as_mat(kernel.grad(), c_out, patch).noalias() +=
          dy * detail::as_mat(cv, patch, npix).transpose();
    }
    if (has_bias && bias.requires_grad()) {
      auto gb = bias.grad();
      for (std::size_t co = 0; co < c_out; ++co) gb[co] += dy.row(static_cast<Eigen::Index>(co)).sum();
    }
    if (x.requires_grad()) {
      if (pointwise) {
        detail::as_mat(x.grad(), patch, npix).noalias() +=
            detail::as_mat(kernel.data(), c_out, patch).transpose() * dy;
        return;
      }
      detail::RowMat dcols = detail::as_mat(kernel.data(), c_out, patch).transpose() * dy;
      auto gx = x.grad();
      for (std::size_t ci = 0; ci < c_in; ++ci) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const double* row = dcols.data() + ((ci * k + ky) * k + kx) * npix;
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
              if (iy < 0 || iy >= static_cast<long>(h)) continue;
              double* dst = gx.data() + (ci * h + static_cast<std::size_t>(iy)) * w;
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                if (ix < 0 || ix >= static_cast<long>(w)) continue;
                dst[ix] += row[oy * ow + ox];
              }
            }
          }
        }
      }
    }
  });
}

enum class ResampleMode { kUp2Nearest, kDown2Avg };

inline Tensor resample(Graph& g, const Tensor& x, ResampleMode mode) {
  detail::require(x.rank() == 3, "resample needs [c x h x w], got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (mode == ResampleMode::kUp2Nearest) {
    const std::size_t oh = 2 * h, ow = 2 * w;
    Tensor y = Tensor::zeros({c, oh, ow});
    auto xs = x.data();
    auto ys = y.data();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t col = 0; col < ow; ++col)
          ys[(ch * oh + r) * ow + col] = xs[(ch * h + r / 2) * w + col / 2];
    return g.record(y, {x}, [x, y, c, h, w, oh, ow]() mutable {
      if (!x.requires_grad()) return;
      auto gx = x.grad();
      auto gy = y.grad();
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t r = 0; r < oh; ++r)
          for (std::size_t col = 0; col < ow; ++col)
            gx[(ch * h + r / 2) * w + col / 2] += gy[(ch * oh + r) * ow + col];
    });
  }
  if (h % 2 != 0 || w % 2 != 0) {
    throw DimensionError("down2_avg needs even extents, got " + shape_str(x.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor y = Tensor::zeros({c, oh, ow});
  auto xs = x.data();
  auto ys = y.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t col = 0; col < w; ++col)
        ys[(ch * oh + r / 2) * ow + col / 2] += 0.25 * xs[(ch * h + r) * w + col];
  return g.record(y, {x}, [x, y, c, h, w, oh, ow]() mutable {
    if (!x.requires_grad()) return;
    auto gx = x.grad();
    auto gy = y.grad();
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t col = 0; col < w; ++col)
          gx[(ch * h + r) * w + col] += 0.25 * gy[(ch * oh + r / 2) * ow + col / 2];
  });
}

// ---------------------------------------------------------------- loss kernels

/// Summed binary cross-entropy on probabilities, clipped to [eps, 1-eps].
/// Clipped entries pass no gradient.
inline Tensor bce_prob_sum(Graph& g, const Tensor& prob, std::span<const double> target,
                           double eps) {
  if (prob.size() != target.size()) {
    throw DimensionError("bce target has " + std::to_string(target.size()) +
                         " entries for prediction " + shape_str(prob.shape()));
  }
  std::vector<double> t(target.begin(), target.end());
  double loss = 0.0;
  auto ps = prob.data();
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double o = std::clamp(ps[i], eps, 1.0 - eps);
    loss -= t[i] * std::log(o) + (1.0 - t[i]) * std::log(1.0 - o);
  }
  Tensor y = Tensor::scalar(loss);
  return g.record(y, {prob}, [prob, y, eps, t = std::move(t)]() mutable {
    if (!prob.requires_grad()) return;
    const double gy = y.grad()[0];
    auto gp = prob.grad();
    auto ps = prob.data();
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double o = ps[i];
      if (o < eps || o > 1.0 - eps) continue;
      gp[i] += gy * (-t[i] / o + (1.0 - t[i]) / (1.0 - o));
    }
  });
}

/// Summed cross-entropy of sigmoid(logits) against targets in [0,1], offset by
/// the target entropy so that a perfect prediction scores zero (gradient is
/// unaffected: sigmoid(x) - t).
inline Tensor bce_logits_sum(Graph& g, const Tensor& logits, std::span<const double> target) {
  if (logits.size() != target.size()) {
    throw DimensionError("bce target has " + std::to_string(target.size()) +
                         " entries for logits " + shape_str(logits.shape()));
  }
  std::vector<double> t(target.begin(), target.end());
  double loss = 0.0;
  auto xs = logits.data();
  for (std::size_t i = 0; i < t.size(); ++i) {
    loss += detail::softplus(xs[i]) - t[i] * xs[i] - detail::binary_entropy(t[i]);
  }
  Tensor y = Tensor::scalar(std::max(loss, 0.0));
  return g.record(y, {logits}, [logits, y, t = std::move(t)]() mutable {
    if (!logits.requires_grad()) return;
    const double gy = y.grad()[0];
    auto gx = logits.grad();
    auto xs = logits.data();
    for (std::size_t i = 0; i < t.size(); ++i) {
      gx[i] += gy * (detail::stable_sigmoid(xs[i]) - t[i]);
    }
  });
}

/// Summed smooth-L1 with transition at 1: d^2/2 below, |d| - 1/2 above.
inline Tensor smooth_l1_sum(Graph& g, const Tensor& x, std::span<const double> target) {
  if (x.size() != target.size()) {
    throw DimensionError("smooth_l1 target has " + std::to_string(target.size()) +
                         " entries for " + shape_str(x.shape()));
  }
  std::vector<double> t(target.begin(), target.end());
  double loss = 0.0;
  auto xs = x.data();
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double d = xs[i] - t[i];
    loss += std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;
  }
  Tensor y = Tensor::scalar(loss);
  return g.record(y, {x}, [x, y, t = std::move(t)]() mutable {
    if (!x.requires_grad()) return;
    const double gy = y.grad()[0];
    auto gx = x.grad();
    auto xs = x.data();
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double d = xs[i] - t[i];
      gx[i] += gy * (std::abs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0));
    }
  });
}

/// Scalar value helpers for code that needs the loss kernels without a graph.
inline double smooth_l1(double x, double target) {
  const double d = x - target;
  return std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5;
}

inline double sigmoid(double x) { return detail::stable_sigmoid(x); }

}  // namespace refjoint
