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

#include "uniformer/blocks.hpp"

#include <cmath>
#include <sstream>

#include "uniformer/ops.hpp"

namespace uniformer {

TokenIndex flat_to_grid(std::size_t k, Extent3 dims) {
  const std::size_t plane = dims.h * dims.w;
  if (k >= dims.volume()) {
    std::ostringstream os;
    os << "token index " << k << " out of range for grid " << dims.t << "x" << dims.h << "x"
       << dims.w;
    throw Error(os.str());
  }
  const std::size_t t = k / plane;
  const std::size_t rem = k - t * plane;
  return {t, rem / dims.w, rem % dims.w};
}

std::size_t grid_to_flat(TokenIndex index, Extent3 dims) {
  if (index.t >= dims.t || index.h >= dims.h || index.w >= dims.w) {
    std::ostringstream os;
    os << "grid position (" << index.t << "," << index.h << "," << index.w
       << ") out of range for grid " << dims.t << "x" << dims.h << "x" << dims.w;
    throw Error(os.str());
  }
  return (index.t * dims.h + index.h) * dims.w + index.w;
}

namespace {

void require_odd(Extent3 tube, const char* what) {
  if (tube.t % 2 == 0 || tube.h % 2 == 0 || tube.w % 2 == 0) {
    std::ostringstream os;
    os << what << " extents must be odd, got " << tube.t << "x" << tube.h << "x" << tube.w;
    throw Error(os.str());
  }
}

}  // namespace

std::vector<Neighbor> neighborhood(TokenIndex anchor, Extent3 tube, Extent3 dims) {
  require_odd(tube, "tube");
  const long rt = static_cast<long>(tube.t / 2), rh = static_cast<long>(tube.h / 2),
             rw = static_cast<long>(tube.w / 2);
  const long at = static_cast<long>(anchor.t), ah = static_cast<long>(anchor.h),
             aw = static_cast<long>(anchor.w);
  std::vector<Neighbor> out;
  for (long t = std::max(0L, at - rt); t <= std::min<long>(dims.t - 1, at + rt); ++t)
    for (long h = std::max(0L, ah - rh); h <= std::min<long>(dims.h - 1, ah + rh); ++h)
      for (long w = std::max(0L, aw - rw); w <= std::min<long>(dims.w - 1, aw + rw); ++w) {
        TokenIndex j{static_cast<std::size_t>(t), static_cast<std::size_t>(h),
                     static_cast<std::size_t>(w)};
        out.push_back({grid_to_flat(j, dims), {at - t, ah - h, aw - w}});
      }
  return out;
}

LocalAffinity::LocalAffinity(const Tensor& kernel) : kernel_(kernel) {
  if (kernel.rank() != 5 || kernel.dim(1) != 1) {
    throw Error("affinity kernel must be [C,1,t,h,w], got " + shape_str(kernel.shape()));
  }
  heads_ = kernel.dim(0);
  tube_ = {kernel.dim(2), kernel.dim(3), kernel.dim(4)};
  require_odd(tube_, "tube");
}

double LocalAffinity::at(std::size_t head, Offset3 offset) const {
  const long ct = static_cast<long>(tube_.t / 2), ch = static_cast<long>(tube_.h / 2),
             cw = static_cast<long>(tube_.w / 2);
  if (std::abs(offset[0]) > ct || std::abs(offset[1]) > ch || std::abs(offset[2]) > cw) return 0.0;
  const std::size_t it = static_cast<std::size_t>(ct - offset[0]);
  const std::size_t ih = static_cast<std::size_t>(ch - offset[1]);
  const std::size_t iw = static_cast<std::size_t>(cw - offset[2]);
  return kernel_.values()[((head * tube_.t + it) * tube_.h + ih) * tube_.w + iw];
}

const char* block_kind_name(BlockKind kind) { return kind == BlockKind::local ? "local" : "global"; }

std::size_t BlockConfig::heads() const {
  return kind == BlockKind::local ? channels : channels / head_dim;
}

void BlockConfig::validate() const {
  if (channels == 0) throw Error("block channels must be positive");
  if (ffn_ratio == 0) throw Error("ffn ratio must be positive");
  require_odd(dpe_kernel, "dpe kernel");
  if (kind == BlockKind::local) {
    require_odd(tube, "tube");
  } else if (head_dim == 0 || channels % head_dim != 0) {
    std::ostringstream os;
    os << "global block channels " << channels << " not divisible by head_dim " << head_dim;
    throw Error(os.str());
  }
  if (!(drop_path_rate >= 0.0 && drop_path_rate < 1.0)) {
    throw Error("drop_path_rate must be in [0, 1)");
  }
}

// ---------------------------------------------------------------------------

namespace {

void require_channels(const Tensor& x, std::size_t channels, const char* what) {
  if (x.rank() != 5 || x.dim(1) != channels) {
    std::ostringstream os;
    os << what << " expects [B," << channels << ",T,H,W], got " << shape_str(x.shape());
    throw Error(os.str());
  }
}

Tensor pointwise(const Tensor& x, const Tensor& w, const Tensor& b = {}) {
  return conv3d(x, Conv3dSpec::pointwise(w.dim(1), w.dim(0)), w, b);
}

// [B,C,T,H,W] <-> [B,L,C]
Tensor to_tokens(const Tensor& x) {
  const std::size_t L = x.dim(2) * x.dim(3) * x.dim(4);
  return reshape(permute(x, {0, 2, 3, 4, 1}), {x.dim(0), L, x.dim(1)});
}

Tensor from_tokens(const Tensor& t, const Shape& shape5) {
  return permute(reshape(t, {shape5[0], shape5[2], shape5[3], shape5[4], shape5[1]}),
                 {0, 4, 1, 2, 3});
}

// [B,L,C] -> [B*N, L, d]
Tensor split_heads(const Tensor& t, std::size_t heads) {
  const std::size_t B = t.dim(0), L = t.dim(1), d = t.dim(2) / heads;
  return reshape(permute(reshape(t, {B, L, heads, d}), {0, 2, 1, 3}), {B * heads, L, d});
}

Tensor merge_heads(const Tensor& t, std::size_t batch) {
  const std::size_t heads = t.dim(0) / batch, L = t.dim(1), d = t.dim(2);
  return reshape(permute(reshape(t, {batch, heads, L, d}), {0, 2, 1, 3}), {batch, L, heads * d});
}

}  // namespace

Tensor dpe(const Tensor& x, const Tensor& weight) {
  if (weight.rank() != 5 || weight.dim(1) != 1) {
    throw Error("dpe weight must be [C,1,k,k,k], got " + shape_str(weight.shape()));
  }
  require_channels(x, weight.dim(0), "dpe");
  const Extent3 k{weight.dim(2), weight.dim(3), weight.dim(4)};
  require_odd(k, "dpe kernel");
  return conv3d(x, Conv3dSpec::depthwise(weight.dim(0), k), weight);
}

Tensor local_mhra(const Tensor& x, const LocalMhraParams& p) {
  const LocalAffinity affinity(p.affinity);
  const std::size_t C = affinity.heads();
  require_channels(x, C, "local_mhra");
  Tensor v = pointwise(x, p.v_weight);
  Tensor a = conv3d(v, Conv3dSpec::depthwise(C, affinity.tube()), p.affinity);
  return pointwise(a, p.u_weight);
}

Tensor global_mhra(const Tensor& x, const GlobalMhraParams& p, std::size_t head_dim,
                   Tensor* attention) {
  const std::size_t C = p.q_weight.dim(0);
  require_channels(x, C, "global_mhra");
  if (head_dim == 0 || C % head_dim != 0) {
    std::ostringstream os;
    os << "global_mhra channels " << C << " not divisible by head_dim " << head_dim;
    throw Error(os.str());
  }
  const std::size_t B = x.dim(0), heads = C / head_dim;
  Tensor tokens = to_tokens(x);
  Tensor q = split_heads(linear(tokens, p.q_weight, p.q_bias), heads);
  Tensor k = split_heads(linear(tokens, p.k_weight, p.k_bias), heads);
  Tensor v = split_heads(linear(tokens, p.v_weight, p.v_bias), heads);
  Tensor logits = matmul(q, transpose(k, 1, 2)) * (1.0 / std::sqrt(static_cast<double>(head_dim)));
  Tensor weights = softmax(logits, 2);
  if (attention) {
    const std::size_t L = tokens.dim(1);
    *attention = reshape(weights.detach(), {B, heads, L, L});
  }
  Tensor mixed = linear(merge_heads(matmul(weights, v), B), p.u_weight, p.u_bias);
  return from_tokens(mixed, x.shape());
}

Tensor ffn(const Tensor& tokens, const FfnParams& p) {
  if (p.fc1_weight.rank() != 2 || p.fc2_weight.rank() != 2 ||
      p.fc2_weight.dim(1) != p.fc1_weight.dim(0) || p.fc2_weight.dim(0) != p.fc1_weight.dim(1)) {
    throw Error("ffn weight shapes " + shape_str(p.fc1_weight.shape()) + " and " +
                shape_str(p.fc2_weight.shape()) + " do not compose");
  }
  return linear(gelu(linear(tokens, p.fc1_weight, p.fc1_bias)), p.fc2_weight, p.fc2_bias);
}

Tensor ffn_conv(const Tensor& x, const FfnParams& p) {
  if (p.fc1_weight.rank() != 2 || p.fc2_weight.rank() != 2 ||
      p.fc2_weight.dim(1) != p.fc1_weight.dim(0) || p.fc2_weight.dim(0) != p.fc1_weight.dim(1)) {
    throw Error("ffn weight shapes " + shape_str(p.fc1_weight.shape()) + " and " +
                shape_str(p.fc2_weight.shape()) + " do not compose");
  }
  const std::size_t C = p.fc1_weight.dim(1), hidden = p.fc1_weight.dim(0);
  require_channels(x, C, "ffn");
  Tensor w1 = reshape(p.fc1_weight, {hidden, C, 1, 1, 1});
  Tensor w2 = reshape(p.fc2_weight, {C, hidden, 1, 1, 1});
  return pointwise(gelu(pointwise(x, w1, p.fc1_bias)), w2, p.fc2_bias);
}

// ---------------------------------------------------------------------------

Block::Block(const BlockConfig& config, Rng& rng, DType dtype) : config_(config) {
  config_.validate();
  const std::size_t C = config.channels, hidden = config.hidden();
  const double std = 0.02;
  auto zeros = [dtype](std::size_t n) { return Tensor::zeros({n}, dtype); };

  dpe_weight = truncated_normal({C, 1, config.dpe_kernel.t, config.dpe_kernel.h, config.dpe_kernel.w},
                                std, rng, dtype);
  if (config.kind == BlockKind::local) {
    local.v_weight = truncated_normal({C, C, 1, 1, 1}, std, rng, dtype);
    local.affinity = truncated_normal({C, 1, config.tube.t, config.tube.h, config.tube.w}, std, rng, dtype);
    local.u_weight = truncated_normal({C, C, 1, 1, 1}, std, rng, dtype);
    bn1 = BatchNorm3d(C, dtype);
    bn2 = BatchNorm3d(C, dtype);
  } else {
    global.q_weight = truncated_normal({C, C}, std, rng, dtype);
    global.k_weight = truncated_normal({C, C}, std, rng, dtype);
    global.v_weight = truncated_normal({C, C}, std, rng, dtype);
    global.u_weight = truncated_normal({C, C}, std, rng, dtype);
    global.q_bias = zeros(C);
    global.k_bias = zeros(C);
    global.v_bias = zeros(C);
    global.u_bias = zeros(C);
    ln1 = LayerNorm(C, dtype);
    ln2 = LayerNorm(C, dtype);
  }
  mlp.fc1_weight = truncated_normal({hidden, C}, std, rng, dtype);
  mlp.fc1_bias = zeros(hidden);
  mlp.fc2_weight = truncated_normal({C, hidden}, std, rng, dtype);
  mlp.fc2_bias = zeros(C);
}

void Block::set_drop_path_rate(double rate) {
  BlockConfig c = config_;
  c.drop_path_rate = rate;
  c.validate();
  config_ = c;
}

Tensor Block::norm1(const Tensor& x, Mode mode) {
  return config_.kind == BlockKind::local ? batchnorm3d(x, bn1, mode) : layernorm(x, ln1, 1);
}

Tensor Block::norm2(const Tensor& x, Mode mode) {
  return config_.kind == BlockKind::local ? batchnorm3d(x, bn2, mode) : layernorm(x, ln2, 1);
}

Tensor Block::mhra(const Tensor& normed, Tensor* attention) const {
  if (config_.kind == BlockKind::local) return local_mhra(normed, local);
  return global_mhra(normed, global, config_.head_dim, attention);
}

Tensor Block::feed_forward(const Tensor& normed) const {
  if (config_.kind == BlockKind::local) return ffn_conv(normed, mlp);
  return from_tokens(ffn(to_tokens(normed), mlp), normed.shape());
}

Tensor Block::forward(const Tensor& x, Mode mode, Rng& rng) {
  require_channels(x, config_.channels, "block");
  const double rate = config_.drop_path_rate;
  Tensor X = x + dpe(x, dpe_weight);
  Tensor Y = X + drop_path(mhra(norm1(X, mode)), rate, mode, rng);
  return Y + drop_path(feed_forward(norm2(Y, mode)), rate, mode, rng);
}

void Block::collect(const std::string& prefix, ParamList& out) {
  out.push_back({prefix + "dpe.weight", &dpe_weight, true});
  if (config_.kind == BlockKind::local) {
    out.push_back({prefix + "norm1.weight", &bn1.weight, true});
    out.push_back({prefix + "norm1.bias", &bn1.bias, true});
    out.push_back({prefix + "norm1.running_mean", &bn1.running_mean, false});
    out.push_back({prefix + "norm1.running_var", &bn1.running_var, false});
    out.push_back({prefix + "attn.v.weight", &local.v_weight, true});
    out.push_back({prefix + "attn.affinity", &local.affinity, true});
    out.push_back({prefix + "attn.u.weight", &local.u_weight, true});
    out.push_back({prefix + "norm2.weight", &bn2.weight, true});
    out.push_back({prefix + "norm2.bias", &bn2.bias, true});
    out.push_back({prefix + "norm2.running_mean", &bn2.running_mean, false});
    out.push_back({prefix + "norm2.running_var", &bn2.running_var, false});
  } else {
    out.push_back({prefix + "norm1.weight", &ln1.weight, true});
    out.push_back({prefix + "norm1.bias", &ln1.bias, true});
    out.push_back({prefix + "attn.q.weight", &global.q_weight, true});
    out.push_back({prefix + "attn.q.bias", &global.q_bias, true});
    out.push_back({prefix + "attn.k.weight", &global.k_weight, true});
    out.push_back({prefix + "attn.k.bias", &global.k_bias, true});
    out.push_back({prefix + "attn.v.weight", &global.v_weight, true});
    out.push_back({prefix + "attn.v.bias", &global.v_bias, true});
    out.push_back({prefix + "attn.u.weight", &global.u_weight, true});
    out.push_back({prefix + "attn.u.bias", &global.u_bias, true});
    out.push_back({prefix + "norm2.weight", &ln2.weight, true});
    out.push_back({prefix + "norm2.bias", &ln2.bias, true});
  }
  out.push_back({prefix + "mlp.fc1.weight", &mlp.fc1_weight, true});
  out.push_back({prefix + "mlp.fc1.bias", &mlp.fc1_bias, true});
  out.push_back({prefix + "mlp.fc2.weight", &mlp.fc2_weight, true});
  out.push_back({prefix + "mlp.fc2.bias", &mlp.fc2_bias, true});
}

}  // namespace uniformer
