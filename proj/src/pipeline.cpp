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

#include "uniformer/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "uniformer/ops.hpp"

namespace uniformer {

// ---------------------------------------------------------------------------
// Sampling

void SamplingPlan::validate() const {
  if (video_len == 0) throw Error("sampling plan has an empty video");
  const bool repeats_allowed = protocol == "dense" ? video_len < (frames - 1) * stride + 1 : video_len < frames;
  for (const auto& v : views) {
    if (v.frames.size() != frames) throw Error("sampling plan view has the wrong frame count");
    for (std::size_t i = 0; i < v.frames.size(); ++i) {
      if (v.frames[i] >= video_len) {
        throw Error("frame index " + std::to_string(v.frames[i]) + " out of range for video length " +
                    std::to_string(video_len));
      }
      if (i > 0) {
        const bool ok = repeats_allowed ? v.frames[i] >= v.frames[i - 1] : v.frames[i] > v.frames[i - 1];
        if (!ok) throw Error("frame indices are not increasing in clip " + std::to_string(v.clip));
      }
    }
  }
}

SamplingPlan dense_sample(std::size_t video_len, std::size_t n, std::size_t stride, std::size_t num_clips,
                          std::size_t num_crops) {
  if (video_len == 0) throw Error("video_len must be positive");
  if (n == 0 || stride == 0) throw Error("dense sampling needs frames >= 1 and stride >= 1");
  if (num_clips == 0 || num_crops == 0) throw Error("clips and crops must be positive");
  SamplingPlan plan{"dense", video_len, n, stride, num_clips, num_crops, {}};
  const std::size_t span = (n - 1) * stride + 1;
  const std::size_t room = video_len >= span ? video_len - span : 0;
  for (std::size_t c = 0; c < num_clips; ++c) {
    std::size_t start = 0;
    if (num_clips == 1) {
      start = room / 2;
    } else {
      start = static_cast<std::size_t>(
          std::llround(static_cast<double>(c * room) / static_cast<double>(num_clips - 1)));
    }
    std::vector<std::size_t> frames(n);
    for (std::size_t i = 0; i < n; ++i) frames[i] = std::min(start + i * stride, video_len - 1);
    for (std::size_t k = 0; k < num_crops; ++k) plan.views.push_back({c, k, frames});
  }
  return plan;
}

SamplingPlan uniform_sample(std::size_t video_len, std::size_t segments, UniformMode mode,
                            std::uint64_t seed) {
  if (video_len == 0) throw Error("video_len must be positive");
  if (segments == 0) throw Error("uniform sampling needs segments >= 1");
  SamplingPlan plan{"uniform", video_len, segments, 0, 1, 1, {}};
  Rng rng(seed);
  std::vector<std::size_t> frames(segments);
  for (std::size_t i = 0; i < segments; ++i) {
    if (mode == UniformMode::center) {
      frames[i] = (2 * i + 1) * video_len / (2 * segments);
    } else {
      const std::size_t lo = i * video_len / segments;
      const std::size_t hi = (i + 1) * video_len / segments;
      const std::size_t width = hi > lo ? hi - lo : 1;
      frames[i] = lo + static_cast<std::size_t>(rng() % width);
    }
    frames[i] = std::min(frames[i], video_len - 1);
  }
  plan.views.push_back({0, 0, frames});
  return plan;
}

// ---------------------------------------------------------------------------
// Spatial views

std::array<std::size_t, 2> resized_extent(std::size_t height, std::size_t width, std::size_t short_side) {
  if (height == 0 || width == 0 || short_side == 0) throw Error("resize extents must be positive");
  auto scale = [short_side](std::size_t longer, std::size_t shorter) {
    return static_cast<std::size_t>(
        std::llround(static_cast<double>(longer) * static_cast<double>(short_side) / static_cast<double>(shorter)));
  };
  if (height <= width) return {short_side, scale(width, height)};
  return {scale(height, width), short_side};
}

std::vector<CropBox> crop_boxes(std::size_t height, std::size_t width, std::size_t crop, std::size_t num_crops) {
  if (crop == 0 || crop > height || crop > width) {
    throw Error("crop " + std::to_string(crop) + " does not fit " + std::to_string(height) + "x" +
                std::to_string(width));
  }
  if (num_crops != 1 && num_crops != 3) throw Error("crops must be 1 or 3");
  const bool along_width = width >= height;
  const std::size_t span = (along_width ? width : height) - crop;
  const std::size_t across = ((along_width ? height : width) - crop) / 2;
  std::vector<std::size_t> offsets =
      num_crops == 1 ? std::vector<std::size_t>{span / 2} : std::vector<std::size_t>{0, span / 2, span};
  std::vector<CropBox> out;
  for (std::size_t o : offsets) {
    out.push_back(along_width ? CropBox{across, o, crop} : CropBox{o, across, crop});
  }
  return out;
}

Tensor resize_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() < 2) throw Error("resize_bilinear needs at least 2 axes");
  const std::size_t in_h = x.dim(x.rank() - 2), in_w = x.dim(x.rank() - 1);
  if (out_h == 0 || out_w == 0) throw Error("resize target must be positive");
  const std::size_t planes = x.numel() / (in_h * in_w);
  struct Tap {
    std::size_t i0, i1;
    double f;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    for (std::size_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const std::size_t i0 = static_cast<std::size_t>(std::floor(src));
      t[o] = {i0, std::min(i0 + 1, in - 1), src - static_cast<double>(i0)};
    }
    return t;
  };
  const auto th = taps(in_h, out_h), tw = taps(in_w, out_w);
  auto xv = x.values();
  std::vector<double> out(planes * out_h * out_w);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = xv.data() + p * in_h * in_w;
    double* dst = out.data() + p * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i)
      for (std::size_t j = 0; j < out_w; ++j) {
        const Tap& a = th[i];
        const Tap& b = tw[j];
        const double top = src[a.i0 * in_w + b.i0] * (1 - b.f) + src[a.i0 * in_w + b.i1] * b.f;
        const double bot = src[a.i1 * in_w + b.i0] * (1 - b.f) + src[a.i1 * in_w + b.i1] * b.f;
        dst[i * out_w + j] = top * (1 - a.f) + bot * a.f;
      }
  }
  Shape shape = x.shape();
  shape[shape.size() - 2] = out_h;
  shape[shape.size() - 1] = out_w;
  return Tensor(std::move(shape), std::move(out), x.dtype());
}

Tensor build_view(const Tensor& video, const ViewSpec& view, std::size_t num_crops, const ViewGeometry& geometry) {
  if (video.rank() != 4) throw Error("video must be [C,T,H,W], got " + shape_str(video.shape()));
  const std::size_t C = video.dim(0), T = video.dim(1), H = video.dim(2), W = video.dim(3);
  const std::size_t n = view.frames.size();
  std::vector<double> picked(C * n * H * W);
  auto vv = video.values();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < n; ++i) {
      if (view.frames[i] >= T) throw Error("frame index out of range for video");
      std::copy_n(vv.data() + (c * T + view.frames[i]) * H * W, H * W, picked.data() + (c * n + i) * H * W);
    }
  Tensor frames({C, n, H, W}, std::move(picked), video.dtype());
  const auto [rh, rw] = resized_extent(H, W, geometry.short_side);
  if (rh != H || rw != W) frames = resize_bilinear(frames, rh, rw);
  const auto boxes = crop_boxes(rh, rw, geometry.crop, num_crops);
  if (view.crop >= boxes.size()) throw Error("crop index out of range");
  const CropBox& box = boxes[view.crop];
  Tensor cropped = narrow(narrow(frames, 2, box.top, box.size), 3, box.left, box.size);
  return reshape(cropped, {1, C, n, box.size, box.size});
}

// ---------------------------------------------------------------------------
// Scores

Tensor multi_view_average(const std::vector<Tensor>& per_view_logits) {
  if (per_view_logits.empty()) throw Error("multi_view_average needs at least one view");
  const std::size_t K = per_view_logits.front().numel();
  std::vector<double> mean(K, 0.0);
  for (const Tensor& logits : per_view_logits) {
    if (logits.numel() != K) throw Error("views disagree on the number of classes");
    auto v = logits.values();
    const double mx = *std::max_element(v.begin(), v.end());
    double z = 0.0;
    std::vector<double> e(K);
    for (std::size_t k = 0; k < K; ++k) z += (e[k] = std::exp(v[k] - mx));
    for (std::size_t k = 0; k < K; ++k) mean[k] += e[k] / z;
  }
  for (double& m : mean) m /= static_cast<double>(per_view_logits.size());
  return Tensor({K}, std::move(mean));
}

std::size_t argmax(std::span<const double> scores) {
  if (scores.empty()) throw Error("argmax of an empty score vector");
  return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

// ---------------------------------------------------------------------------
// Optimisation

double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double base_lr) {
  if (warmup_steps >= total_steps && total_steps > 0 && step >= warmup_steps) return 0.0;
  if (step < warmup_steps) {
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_step(std::span<double> param, std::span<const double> grad, AdamState& state, double lr,
                const AdamWHyper& h, bool decay) {
  if (grad.size() != param.size()) throw Error("adamw: gradient size does not match parameter");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(param.size(), 0.0);
    state.v.assign(param.size(), 0.0);
  }
  if (state.m.size() != param.size() || state.v.size() != param.size()) {
    throw Error("adamw: optimizer state size does not match parameter");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    if (decay) param[i] -= lr * h.weight_decay * param[i];
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * grad[i];
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * grad[i] * grad[i];
    param[i] -= lr * (state.m[i] / c1) / (std::sqrt(state.v[i] / c2) + h.eps);
  }
}

AdamW::AdamW(ParamList params, AdamWHyper hyper) : hyper_(hyper) {
  for (auto& p : params) {
    if (p.trainable) params_.push_back(p);
  }
  state_.resize(params_.size());
}

void AdamW::step(double lr) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = *params_[i].tensor;
    if (!t.has_grad()) continue;
    auto values = t.mutable_values();
    adamw_step(values, t.grad(), state_[i], lr, hyper_, t.rank() > 1);
    if (t.dtype() == DType::f32) {
      for (double& v : values) v = static_cast<double>(static_cast<float>(v));
    }
    t.zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Synthetic data

SyntheticDataset make_synthetic_dataset(std::size_t num_classes, std::size_t clips_per_class,
                                        const Shape& clip_shape, std::uint64_t seed) {
  if (num_classes < 2 || num_classes % 2 != 0) throw Error("num_classes must be even and >= 2");
  if (clips_per_class == 0) throw Error("clips_per_class must be positive");
  if (clip_shape.size() != 4 || clip_shape[0] != 3 || clip_shape[1] < 2 || clip_shape[2] < 8 ||
      clip_shape[3] < 8) {
    throw Error("clip shape must be [3,T>=2,H>=8,W>=8], got " + shape_str(clip_shape));
  }
  const std::size_t T = clip_shape[1], H = clip_shape[2], W = clip_shape[3];
  const std::size_t pairs = num_classes / 2;
  const std::size_t patch = std::max<std::size_t>(2, std::min(H, W) / 4);
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.05);

  SyntheticDataset data;
  data.num_classes = num_classes;
  std::vector<std::vector<Tensor>> forward_clips(pairs);
  for (std::size_t k = 0; k < pairs; ++k) {
    const double angle = std::numbers::pi * static_cast<double>(k) / static_cast<double>(pairs);
    const double dy = std::sin(angle), dx = std::cos(angle);
    for (std::size_t c = 0; c < clips_per_class; ++c) {
      const double travel = 0.5 * static_cast<double>(std::min(H, W));
      const double cy = 0.5 * static_cast<double>(H) + (unit(rng) - 0.5) * 0.2 * static_cast<double>(H);
      const double cx = 0.5 * static_cast<double>(W) + (unit(rng) - 0.5) * 0.2 * static_cast<double>(W);
      std::array<double, 3> colour{0.6 + 0.4 * unit(rng), 0.6 + 0.4 * unit(rng), 0.6 + 0.4 * unit(rng)};
      std::vector<double> v(3 * T * H * W);
      for (double& x : v) x = noise(rng);
      for (std::size_t t = 0; t < T; ++t) {
        const double s = static_cast<double>(t) / static_cast<double>(T - 1) - 0.5;
        const double py = cy + s * travel * dy - static_cast<double>(patch) / 2.0;
        const double px = cx + s * travel * dx - static_cast<double>(patch) / 2.0;
        const long top = std::clamp<long>(std::lround(py), 0, static_cast<long>(H - patch));
        const long left = std::clamp<long>(std::lround(px), 0, static_cast<long>(W - patch));
        for (std::size_t ch = 0; ch < 3; ++ch)
          for (std::size_t y = 0; y < patch; ++y)
            for (std::size_t x = 0; x < patch; ++x) {
              v[((ch * T + t) * H + static_cast<std::size_t>(top) + y) * W + static_cast<std::size_t>(left) + x] =
                  colour[ch];
            }
      }
      forward_clips[k].emplace_back(clip_shape, std::move(v));
    }
  }
  std::vector<std::size_t> reversed(T);
  for (std::size_t t = 0; t < T; ++t) reversed[t] = T - 1 - t;
  for (std::size_t k = 0; k < pairs; ++k) {
    for (const Tensor& clip : forward_clips[k]) {
      data.clips.push_back(clip);
      data.labels.push_back(2 * k);
    }
    for (const Tensor& clip : forward_clips[k]) {
      data.clips.push_back(reorder_frames(clip, reversed));
      data.labels.push_back(2 * k + 1);
    }
  }
  return data;
}

Tensor reorder_frames(const Tensor& clip, const std::vector<std::size_t>& order) {
  if (clip.rank() != 4 || order.size() != clip.dim(1)) throw Error("reorder_frames: order does not match clip");
  const std::size_t C = clip.dim(0), T = clip.dim(1), plane = clip.dim(2) * clip.dim(3);
  auto v = clip.values();
  std::vector<double> out(v.size());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < T; ++t) {
      if (order[t] >= T) throw Error("reorder_frames: index out of range");
      std::copy_n(v.data() + (c * T + order[t]) * plane, plane, out.data() + (c * T + t) * plane);
    }
  return Tensor(clip.shape(), std::move(out), clip.dtype());
}

// ---------------------------------------------------------------------------
// Training configuration

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw Error("base_lr must be positive");
  if (batch_size == 0) throw Error("batch_size must be positive");
  if (total_epochs == 0) throw Error("total_epochs must be positive");
  if (warmup_epochs >= total_epochs) throw Error("warmup_epochs must be less than total_epochs");
  if (weight_decay < 0.0) throw Error("weight_decay must be non-negative");
  if (!(drop_path_max >= 0.0 && drop_path_max < 1.0)) throw Error("drop_path_max must be in [0, 1)");
  for (double b : betas) {
    if (!(b >= 0.0 && b < 1.0)) throw Error("betas must be in [0, 1)");
  }
}

TrainConfig parse_train_config(std::string_view json_text) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(std::string("train config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error("train config must be a JSON object");
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "base_lr") c.base_lr = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "warmup_epochs") c.warmup_epochs = value.get<std::size_t>();
      else if (key == "total_epochs") c.total_epochs = value.get<std::size_t>();
      else if (key == "weight_decay") c.weight_decay = value.get<double>();
      else if (key == "drop_path_max") c.drop_path_max = value.get<double>();
      else if (key == "betas") c.betas = value.get<std::array<double, 2>>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "shuffle_frames") c.shuffle_frames = value.get<bool>();
      else if (key == "eval_shuffles") c.eval_shuffles = value.get<std::size_t>();
      else throw Error("unknown train config field \"" + key + "\"");
    }
  } catch (const json::exception& e) {
    throw Error(std::string("train config field has the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

std::string train_config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["base_lr"] = c.base_lr;
  j["batch_size"] = c.batch_size;
  j["warmup_epochs"] = c.warmup_epochs;
  j["total_epochs"] = c.total_epochs;
  j["weight_decay"] = c.weight_decay;
  j["drop_path_max"] = c.drop_path_max;
  j["betas"] = c.betas;
  j["seed"] = c.seed;
  j["shuffle_frames"] = c.shuffle_frames;
  j["eval_shuffles"] = c.eval_shuffles;
  return j.dump(2);
}

TrainConfig load_train_config(const std::string& path) {
  if (path == "default") return TrainConfig{};
  std::ifstream in(path);
  if (!in) throw Error("cannot open train config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::vector<std::size_t> random_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Fisher-Yates with raw draws so the sequence does not depend on the
  // standard library's distribution implementation.
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  return order;
}

Tensor stack_clips(const std::vector<Tensor>& clips) {
  Shape shape = clips.front().shape();
  std::vector<double> v;
  v.reserve(clips.size() * clips.front().numel());
  for (const Tensor& c : clips) v.insert(v.end(), c.values().begin(), c.values().end());
  shape.insert(shape.begin(), clips.size());
  return Tensor(std::move(shape), std::move(v), clips.front().dtype());
}

std::size_t count_correct(const Tensor& logits, const std::vector<std::size_t>& labels) {
  const std::size_t K = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (argmax(logits.values().subspan(b * K, K)) == labels[b]) ++correct;
  }
  return correct;
}

}  // namespace

std::string format_step(const StepLog& s) {
  std::ostringstream os;
  os.precision(10);
  os << s.step << "," << s.lr << "," << s.loss << "," << s.acc;
  return os.str();
}

TrainResult train_toy(UniFormer& model, const SyntheticDataset& data, const TrainConfig& config,
                      const std::function<void(const StepLog&)>& on_step) {
  config.validate();
  if (data.clips.empty()) throw Error("training set is empty");
  if (data.num_classes != model.config().num_classes) {
    throw Error("dataset has " + std::to_string(data.num_classes) + " classes but the model predicts " +
                std::to_string(model.config().num_classes));
  }
  model.set_drop_path_max(config.drop_path_max);
  const std::size_t N = data.clips.size();
  const std::size_t batch = std::min(config.batch_size, N);
  const std::size_t per_epoch = (N + batch - 1) / batch;
  const std::size_t total = config.total_epochs * per_epoch;
  const std::size_t warmup = config.warmup_epochs * per_epoch;
  const double lr_peak = config.effective_lr();
  const std::size_t T = data.clips.front().dim(1);

  Rng order_rng(config.seed);
  Rng shuffle_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  Rng drop_rng(config.seed + 1);

  model.set_requires_grad(true);
  AdamW opt(model.parameters(), {config.betas[0], config.betas[1], 1e-8, config.weight_decay});
  TrainResult result;
  std::vector<std::size_t> order;
  for (std::size_t step = 0; step < total; ++step) {
    if (step % per_epoch == 0) order = random_order(N, order_rng);
    const std::size_t begin = (step % per_epoch) * batch;
    const std::size_t end = std::min(begin + batch, N);
    std::vector<Tensor> clips;
    std::vector<std::size_t> labels;
    for (std::size_t i = begin; i < end; ++i) {
      const Tensor& clip = data.clips[order[i]];
      clips.push_back(config.shuffle_frames ? reorder_frames(clip, random_order(T, shuffle_rng)) : clip);
      labels.push_back(data.labels[order[i]]);
    }
    const double lr = lr_at(step, total, warmup, lr_peak);
    Tensor logits = model.forward(stack_clips(clips), Mode::train, drop_rng);
    Tensor loss = cross_entropy(logits, labels);
    if (!std::isfinite(loss.item())) {
      model.set_requires_grad(false);
      throw Error("non-finite loss at step " + std::to_string(step));
    }
    StepLog entry{step, lr, loss.item(),
                  static_cast<double>(count_correct(logits, labels)) / static_cast<double>(labels.size())};
    loss.backward();
    opt.step(lr);
    result.log.push_back(entry);
    if (on_step) on_step(entry);
  }
  model.set_requires_grad(false);
  result.steps = total;
  result.final_accuracy =
      evaluate_accuracy(model, data, config.shuffle_frames ? config.eval_shuffles : 0, config.seed + 2);
  return result;
}

double evaluate_accuracy(UniFormer& model, const SyntheticDataset& data, std::size_t shuffle_rounds,
                         std::uint64_t seed) {
  NoGradGuard guard;
  if (data.clips.empty()) return 0.0;
  const std::size_t T = data.clips.front().dim(1);
  Rng rng(seed);
  const std::size_t rounds = std::max<std::size_t>(1, shuffle_rounds);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < rounds; ++r) {
    std::vector<Tensor> clips;
    for (const Tensor& c : data.clips) clips.push_back(shuffle_rounds ? reorder_frames(c, random_order(T, rng)) : c);
    correct += count_correct(model.forward(stack_clips(clips), Mode::eval), data.labels);
  }
  return static_cast<double>(correct) / static_cast<double>(rounds * data.clips.size());
}

// ---------------------------------------------------------------------------
// Multi-view evaluation

VideoPrediction predict_video(UniFormer& model, const Tensor& video, const EvalOptions& options) {
  if (video.rank() != 4) throw Error("video must be [3,T,H,W], got " + shape_str(video.shape()));
  NoGradGuard guard;
  const SamplingPlan plan = dense_sample(video.dim(1), options.frames, options.stride, options.clips, options.crops);
  std::vector<Tensor> logits;
  for (const ViewSpec& view : plan.views) {
    logits.push_back(model.forward(build_view(video, view, options.crops, options.geometry), Mode::eval));
  }
  VideoPrediction p;
  p.scores = multi_view_average(logits);
  p.label = argmax(p.scores.values());
  p.views = logits.size();
  return p;
}

}  // namespace uniformer
