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
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "uniformer/blocks.hpp"
#include "uniformer/nn.hpp"

namespace uniformer {

enum class InputMode { video, image };
enum class DropPathSchedule { linear, constant };

struct ModelConfig {
  std::array<std::size_t, 4> stage_channels{64, 128, 320, 512};
  std::array<std::size_t, 4> stage_depths{3, 4, 8, 3};
  std::string stage_types = "LLGG";
  Extent3 tube{5, 5, 5};
  std::size_t head_dim = 64;
  std::size_t num_classes = 400;
  double drop_path_max = 0.0;
  InputMode input_mode = InputMode::video;
  DropPathSchedule drop_path_schedule = DropPathSchedule::linear;
  // Two overlapping 3x3 stride-2 convs for the stem and 3x3 stride-2
  // downsamplers. Image mode only.
  bool overlap_patch_embed = false;

  void validate() const;
  BlockKind stage_kind(std::size_t stage) const;
  std::size_t total_blocks() const;
  /// One rate per block in depth order.
  std::vector<double> drop_path_rates() const;
  /// Block configuration for stage `stage` (0-based) before the drop-path
  /// rate is filled in. Image mode flattens the temporal tube and DPE extents.
  BlockConfig block_config(std::size_t stage) const;
  /// Total spatial reduction from input to the last stage.
  std::size_t spatial_stride() const { return 32; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named presets: "S", "S-dagger" (image mode, overlapping patch embedding),
/// "B", "L" and "tiny" (channels 8/16/32/64, one block per stage).
ModelConfig preset(std::string_view name);
std::vector<std::string> preset_names();

/// JSON with exactly the ModelConfig field names. Missing fields keep their
/// defaults; unknown fields are rejected.
ModelConfig parse_config(std::string_view json_text);
std::string config_to_json(const ModelConfig& config);
/// A bare preset name, or a path to a JSON config file.
ModelConfig load_config(const std::string& name_or_path);

/// A strided conv followed by channel LayerNorm, optionally GELU.
struct ConvNorm {
  Conv3dSpec spec;
  Tensor weight;
  Tensor bias;
  LayerNorm norm;
  bool gelu = false;

  Tensor forward(const Tensor& x) const;
};

struct PatchEmbed {
  std::vector<ConvNorm> layers;
  Tensor forward(const Tensor& x) const;
};

/// Convolution geometry of the stem (`stage` 0) or the downsampler in front
/// of `stage` 1..3. Overlapping stems have two layers.
std::vector<Conv3dSpec> patch_embed_specs(const ModelConfig& config, std::size_t stage);

struct Stage {
  PatchEmbed embed;
  std::vector<Block> blocks;
};

/// Receives (layer name, output) for the stem, downsamplers, blocks, pooling
/// and head during forward.
using ForwardObserver = std::function<void(const std::string&, const Tensor&)>;

class UniFormer {
 public:
  explicit UniFormer(const ModelConfig& config, std::uint64_t seed = 0, DType dtype = DType::f64);

  const ModelConfig& config() const { return config_; }
  DType dtype() const { return dtype_; }

  /// x: [B,3,T,H,W]. Drop-path draws from the model's generator in train mode.
  Tensor forward(const Tensor& x, Mode mode, const ForwardObserver& observer = {});
  Tensor forward(const Tensor& x, Mode mode, Rng& rng, const ForwardObserver& observer = {});

  /// Every named tensor, including BN running statistics (trainable = false).
  ParamList parameters();
  void set_requires_grad(bool on);
  /// Re-spreads per-block drop-path rates with a new maximum.
  void set_drop_path_max(double rate);

  std::array<Stage, 4> stages;
  Tensor head_weight;  // [num_classes, C4]
  Tensor head_bias;

  Rng& rng() { return rng_; }

 private:
  void check_input(const Tensor& x) const;

  ModelConfig config_;
  DType dtype_;
  Rng rng_;
};

/// Scalar learnable parameters in the built model.
std::size_t count_params(UniFormer& model);

/// [Co,Ci,kh,kw] -> [Co,Ci,kt,kh,kw] with every temporal slice w / kt.
Tensor inflate_2d(const Tensor& weights_2d, std::size_t kt);

/// Parameters and running statistics, one record per name.
void save_params(UniFormer& model, const std::filesystem::path& path);
/// Requires identical names and shapes; values are converted to the model dtype.
void load_params(UniFormer& model, const std::filesystem::path& path);

}  // namespace uniformer
