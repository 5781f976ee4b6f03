/*
 * SPDX-License-Identifier: Apache-2.0
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <array>
#include <random>
#include <vector>

#include "uniformer/tensor.hpp"

namespace uniformer {

enum class Mode { train, eval };
using Rng = std::mt19937_64;

/// Extents along (T, H, W).
struct Extent3 {
  std::size_t t = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  friend bool operator==(const Extent3&, const Extent3&) = default;
  std::size_t volume() const { return t * h * w; }
};

/// Grouped 3D convolution geometry. groups == 1 with a 1x1x1 kernel is a
/// pointwise (channel-mixing) conv; groups == in == out is depthwise.
struct Conv3dSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  Extent3 kernel;
  Extent3 stride;
  Extent3 padding{0, 0, 0};
  std::size_t groups = 1;

  static Conv3dSpec pointwise(std::size_t in_channels, std::size_t out_channels);
  /// Shape-preserving depthwise conv: stride 1, padding kernel/2 per axis.
  static Conv3dSpec depthwise(std::size_t channels, Extent3 kernel);

  void validate() const;
  Shape weight_shape() const;
  /// floor((in + 2 pad - kernel) / stride) + 1 per axis; throws when any
  /// extent would be non-positive.
  Extent3 output_extent(Extent3 input) const;
};

/// Cross-correlation with zero padding. x: [B,C,T,H,W]; weight per
/// Conv3dSpec::weight_shape(); bias optional ([out_channels]).
Tensor conv3d(const Tensor& x, const Conv3dSpec& spec, const Tensor& weight,
              const Tensor& bias = {});

enum class NormKind { batchnorm3d, layernorm };

struct NormSpec {
  NormKind kind = NormKind::layernorm;
  std::size_t extent = 0;
  double eps = 1e-6;
  bool affine = true;

  static NormSpec batchnorm(std::size_t channels) {
    return {NormKind::batchnorm3d, channels, 1e-5, true};
  }
  static NormSpec layernorm(std::size_t channels) {
    return {NormKind::layernorm, channels, 1e-6, true};
  }
};

struct BatchNorm3d {
  NormSpec spec;
  double momentum = 0.1;
  Tensor weight;        // ones
  Tensor bias;          // zeros
  Tensor running_mean;  // zeros, not learnable
  Tensor running_var;   // ones, not learnable

  explicit BatchNorm3d(std::size_t channels = 1, DType dtype = DType::f64);
};

/// x: [B,C,T,H,W]. Train mode normalizes with batch statistics over
/// B*T*H*W and updates the running estimates (unbiased variance); eval mode
/// uses the running estimates.
Tensor batchnorm3d(const Tensor& x, BatchNorm3d& bn, Mode mode);

struct LayerNorm {
  NormSpec spec;
  Tensor weight;  // ones
  Tensor bias;    // zeros

  explicit LayerNorm(std::size_t channels = 1, DType dtype = DType::f64);
};

/// Normalizes every slice along `axis` independently (the channel vector of
/// each token). Use axis 1 for [B,C,T,H,W] and the last axis for [.., C].
Tensor layernorm(const Tensor& x, const LayerNorm& ln, std::size_t axis);

/// 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

/// y = x W^T + b over the last axis of x. weight: [out, in], bias: [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

/// Stochastic depth. Train mode keeps each sample (axis 0) with probability
/// 1 - rate and rescales kept samples by 1 / (1 - rate); eval is identity.
Tensor drop_path(const Tensor& x, double rate, Mode mode, Rng& rng);

/// Zero padding of the last three axes of [B,C,T,H,W].
Tensor zero_pad3d(const Tensor& x, Extent3 pad);

/// Mean over (T,H,W): [B,C,T,H,W] -> [B,C].
Tensor global_avg_pool(const Tensor& x);

/// Mean negative log-likelihood of `labels` under softmax(logits).
/// logits: [B,K].
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels);

/// N(0, std^2) truncated to +-2 std.
Tensor truncated_normal(Shape shape, double std, Rng& rng, DType dtype = DType::f64);

}  // namespace uniformer
