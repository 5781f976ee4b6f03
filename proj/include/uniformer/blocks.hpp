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
#include <functional>
#include <string>
#include <vector>

#include "uniformer/nn.hpp"
#include "uniformer/tensor.hpp"

namespace uniformer {

// ---------------------------------------------------------------------------
// Token grid

struct TokenIndex {
  std::size_t t = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  friend bool operator==(const TokenIndex&, const TokenIndex&) = default;
};

/// Row-major decomposition of k over a T x H x W grid.
TokenIndex flat_to_grid(std::size_t k, Extent3 dims);
std::size_t grid_to_flat(TokenIndex index, Extent3 dims);

using Offset3 = std::array<long, 3>;

struct Neighbor {
  std::size_t j = 0;  // flat index of the neighbor
  Offset3 offset{};   // anchor minus neighbor, per axis
};

/// In-grid tokens within the tube around `anchor`, ordered by flat index.
std::vector<Neighbor> neighborhood(TokenIndex anchor, Extent3 tube, Extent3 dims);

/// Read-only view of a depthwise affinity kernel [C,1,t,h,w] indexed by
/// relative offset. The kernel is stored in cross-correlation layout, so the
/// weight for offset d lives at centre - d.
class LocalAffinity {
 public:
  explicit LocalAffinity(const Tensor& kernel);
  std::size_t heads() const { return heads_; }
  Extent3 tube() const { return tube_; }
  /// Zero when any component of the offset exceeds the tube half-width.
  double at(std::size_t head, Offset3 offset) const;

 private:
  Tensor kernel_;
  std::size_t heads_ = 0;
  Extent3 tube_;
};

// ---------------------------------------------------------------------------
// Block configuration and parameters

enum class BlockKind { local, global };

const char* block_kind_name(BlockKind kind);

struct BlockConfig {
  BlockKind kind = BlockKind::local;
  std::size_t channels = 0;
  Extent3 tube{5, 5, 5};
  std::size_t head_dim = 64;
  Extent3 dpe_kernel{3, 3, 3};
  std::size_t ffn_ratio = 4;
  double drop_path_rate = 0.0;

  /// One head per channel for local blocks, channels / head_dim for global.
  std::size_t heads() const;
  std::size_t hidden() const { return channels * ffn_ratio; }
  void validate() const;
};

struct LocalMhraParams {
  Tensor v_weight;  // [C,C,1,1,1]
  Tensor affinity;  // [C,1,t,h,w]
  Tensor u_weight;  // [C,C,1,1,1]
};

struct GlobalMhraParams {
  Tensor q_weight, q_bias;  // [C,C], [C]
  Tensor k_weight, k_bias;
  Tensor v_weight, v_bias;
  Tensor u_weight, u_bias;
};

struct FfnParams {
  Tensor fc1_weight;  // [hidden, C]
  Tensor fc1_bias;    // [hidden]
  Tensor fc2_weight;  // [C, hidden]
  Tensor fc2_bias;    // [C]
};

/// A named tensor slot. Buffers (BN running statistics) are not trainable.
struct ParamSlot {
  std::string name;
  Tensor* tensor = nullptr;
  bool trainable = true;
};
using ParamList = std::vector<ParamSlot>;

// ---------------------------------------------------------------------------
// Sub-modules

/// Depthwise 3D conv, zero padding, no bias. Shape-preserving.
Tensor dpe(const Tensor& x, const Tensor& weight);

/// Pointwise V, depthwise affinity conv, pointwise U. Shape-preserving.
Tensor local_mhra(const Tensor& x, const LocalMhraParams& p);

/// Joint attention over all T*H*W tokens. When `attention` is non-null it
/// receives the softmax weights as [B, heads, L, L].
Tensor global_mhra(const Tensor& x, const GlobalMhraParams& p, std::size_t head_dim,
                   Tensor* attention = nullptr);

/// Two linears with GELU between, applied over the last axis.
Tensor ffn(const Tensor& tokens, const FfnParams& p);
/// Same map on [B,C,T,H,W] realised with pointwise convs.
Tensor ffn_conv(const Tensor& x, const FfnParams& p);

// ---------------------------------------------------------------------------
// Block

class Block {
 public:
  Block() = default;
  /// Randomly initialised: truncated normal (std 0.02) weights, zero biases,
  /// unit norm scales.
  Block(const BlockConfig& config, Rng& rng, DType dtype = DType::f64);

  const BlockConfig& config() const { return config_; }
  void set_drop_path_rate(double rate);

  Tensor forward(const Tensor& x, Mode mode, Rng& rng);

  /// Branch outputs for inspection; each is computed from `x` as forward()
  /// would, without drop-path.
  Tensor norm1(const Tensor& x, Mode mode);
  Tensor norm2(const Tensor& x, Mode mode);
  Tensor mhra(const Tensor& normed, Tensor* attention = nullptr) const;
  Tensor feed_forward(const Tensor& normed) const;

  void collect(const std::string& prefix, ParamList& out);

  Tensor dpe_weight;
  LocalMhraParams local;
  GlobalMhraParams global;
  FfnParams mlp;
  BatchNorm3d bn1, bn2;  // local blocks
  LayerNorm ln1, ln2;    // global blocks

 private:
  BlockConfig config_;
};

}  // namespace uniformer
