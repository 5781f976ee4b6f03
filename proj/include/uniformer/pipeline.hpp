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
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uniformer/model.hpp"

namespace uniformer {

// ---------------------------------------------------------------------------
// Frame sampling

struct ViewSpec {
  std::size_t clip = 0;
  std::size_t crop = 0;
  std::vector<std::size_t> frames;
};

struct SamplingPlan {
  std::string protocol;  // "dense" or "uniform"
  std::size_t video_len = 0;
  std::size_t frames = 0;     // per clip
  std::size_t stride = 0;     // dense only
  std::size_t num_clips = 1;
  std::size_t num_crops = 1;
  std::vector<ViewSpec> views;  // clip-major, crops within clip

  /// Throws unless every index is in range and each clip is non-decreasing
  /// (strictly increasing whenever the video is long enough not to repeat).
  void validate() const;
};

/// n frames at `stride`. One clip is centred; k clips start at
/// round(i * (video_len - span) / (k - 1)). Short videos repeat the last frame.
SamplingPlan dense_sample(std::size_t video_len, std::size_t n, std::size_t stride,
                          std::size_t num_clips = 1, std::size_t num_crops = 1);

enum class UniformMode { center, random };

/// One frame per equal segment: the middle frame, or a seeded uniform pick.
SamplingPlan uniform_sample(std::size_t video_len, std::size_t segments, UniformMode mode,
                            std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Spatial views

struct CropBox {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t size = 0;
  friend bool operator==(const CropBox&, const CropBox&) = default;
};

/// Extent after scaling the shorter side to `short_side` (aspect kept, the
/// longer side rounded to nearest).
std::array<std::size_t, 2> resized_extent(std::size_t height, std::size_t width, std::size_t short_side);

/// Square crops along the longer axis: 1 crop is centred, 3 crops sit at the
/// start, centre and end.
std::vector<CropBox> crop_boxes(std::size_t height, std::size_t width, std::size_t crop,
                                std::size_t num_crops);

/// Bilinear resampling of the last two axes (half-pixel centres, edges clamped).
Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w);

struct ViewGeometry {
  std::size_t short_side = 256;
  std::size_t crop = 224;
};

/// video: [3,T,H,W] -> one model input [1,3,n,crop,crop] per view.
Tensor build_view(const Tensor& video, const ViewSpec& view, std::size_t num_crops,
                  const ViewGeometry& geometry);

// ---------------------------------------------------------------------------
// Scores

/// Softmax of each view's logits ([K] or [1,K]) averaged over views. Returns [K].
Tensor multi_view_average(const std::vector<Tensor>& per_view_logits);
std::size_t argmax(std::span<const double> scores);

// ---------------------------------------------------------------------------
// Optimisation

/// Linear warmup to base_lr over warmup_steps, then half-cosine to zero.
double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double base_lr);

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;
};

/// Decoupled decay (p -= lr * wd * p, skipped when `decay` is false), then a
/// bias-corrected Adam update. Initialises empty state to zeros.
void adamw_step(std::span<double> param, std::span<const double> grad, AdamState& state, double lr,
                const AdamWHyper& hyper, bool decay = true);

/// AdamW over a model's trainable slots. Rank <= 1 tensors (norm scales and
/// shifts, biases) are exempt from weight decay.
class AdamW {
 public:
  AdamW(ParamList params, AdamWHyper hyper);
  /// Updates every slot that has a gradient, then clears the gradients.
  void step(double lr);
  const AdamWHyper& hyper() const { return hyper_; }

 private:
  ParamList params_;
  AdamWHyper hyper_;
  std::vector<AdamState> state_;
};

// ---------------------------------------------------------------------------
// Synthetic data and training

struct SyntheticDataset {
  std::vector<Tensor> clips;  // [3,T,H,W]
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
};

/// A bright square moving along one direction per class pair. Class 2k+1 is
/// the frame-reversed copy of class 2k, clip for clip, so both classes have
/// the same set of frames. num_classes must be even.
SyntheticDataset make_synthetic_dataset(std::size_t num_classes, std::size_t clips_per_class,
                                        const Shape& clip_shape, std::uint64_t seed);

/// clip [3,T,H,W] with frames reordered by `order`.
Tensor reorder_frames(const Tensor& clip, const std::vector<std::size_t>& order);

struct TrainConfig {
  double base_lr = 8e-3;
  std::size_t batch_size = 8;
  std::size_t warmup_epochs = 30;
  std::size_t total_epochs = 300;
  double weight_decay = 0.05;
  double drop_path_max = 0.0;
  std::array<double, 2> betas{0.9, 0.999};
  std::uint64_t seed = 0;
  // Control experiment: every clip gets a fresh random frame order whenever it is used.
  bool shuffle_frames = false;
  // Random frame orders per clip for the final evaluation when shuffling.
  std::size_t eval_shuffles = 16;

  /// base_lr * batch_size / 32.
  double effective_lr() const { return base_lr * static_cast<double>(batch_size) / 32.0; }
  void validate() const;
};

TrainConfig parse_train_config(std::string_view json_text);
std::string train_config_to_json(const TrainConfig& config);
/// JSON file path; "default" returns the defaults.
TrainConfig load_train_config(const std::string& path);

struct StepLog {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double acc = 0.0;  // batch accuracy in train mode
};

struct TrainResult {
  std::vector<StepLog> log;
  double final_accuracy = 0.0;  // eval mode over the whole dataset
  std::size_t steps = 0;
};

std::string format_step(const StepLog& s);  // "step,lr,loss,acc"

/// Cross-entropy training with AdamW and the warmup + cosine schedule. Throws
/// on a non-finite loss, naming the step.
TrainResult train_toy(UniFormer& model, const SyntheticDataset& data, const TrainConfig& config,
                      const std::function<void(const StepLog&)>& on_step = {});

/// Eval-mode accuracy; with shuffle_rounds > 0 every clip is scored under that
/// many random frame orders drawn from `seed`.
double evaluate_accuracy(UniFormer& model, const SyntheticDataset& data, std::size_t shuffle_rounds = 0,
                         std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Multi-view evaluation

struct EvalOptions {
  std::size_t frames = 16;
  std::size_t stride = 4;
  std::size_t clips = 1;
  std::size_t crops = 1;
  ViewGeometry geometry;
};

struct VideoPrediction {
  Tensor scores;  // [K]
  std::size_t label = 0;
  std::size_t views = 0;
};

VideoPrediction predict_video(UniFormer& model, const Tensor& video, const EvalOptions& options);

}  // namespace uniformer
