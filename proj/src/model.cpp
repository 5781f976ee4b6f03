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

#include "uniformer/model.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "uniformer/ops.hpp"
#include "uniformer/tensor_io.hpp"

namespace uniformer {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

void ModelConfig::validate() const {
  if (stage_types.size() != 4) {
    throw Error("stage_types must have 4 letters, got \"" + stage_types + "\"");
  }
  for (std::size_t s = 0; s < 4; ++s) {
    const char c = stage_types[s];
    if (c != 'L' && c != 'G') {
      throw Error(std::string("invalid stage_types character '") + c + "' in \"" + stage_types +
                  "\" (expected L or G)");
    }
    if (stage_channels[s] == 0) throw Error("stage_channels must be positive");
    if (stage_depths[s] == 0) throw Error("stage_depths must be positive");
    if (c == 'G' && (head_dim == 0 || stage_channels[s] % head_dim != 0)) {
      std::ostringstream os;
      os << "head_dim " << head_dim << " does not divide global stage " << s + 1 << " channels "
         << stage_channels[s];
      throw Error(os.str());
    }
  }
  if (tube.t % 2 == 0 || tube.h % 2 == 0 || tube.w % 2 == 0) throw Error("tube extents must be odd");
  if (num_classes == 0) throw Error("num_classes must be positive");
  if (!(drop_path_max >= 0.0 && drop_path_max < 1.0)) throw Error("drop_path_max must be in [0, 1)");
  if (overlap_patch_embed && input_mode != InputMode::image) {
    throw Error("overlap_patch_embed requires input_mode image");
  }
  if (overlap_patch_embed && stage_channels[0] < 2) {
    throw Error("overlap_patch_embed needs at least 2 stem channels");
  }
}

BlockKind ModelConfig::stage_kind(std::size_t stage) const {
  return stage_types.at(stage) == 'G' ? BlockKind::global : BlockKind::local;
}

std::size_t ModelConfig::total_blocks() const {
  std::size_t n = 0;
  for (std::size_t d : stage_depths) n += d;
  return n;
}

std::vector<double> ModelConfig::drop_path_rates() const {
  const std::size_t n = total_blocks();
  std::vector<double> rates(n, drop_path_max);
  if (drop_path_schedule == DropPathSchedule::linear && n > 1) {
    for (std::size_t i = 0; i < n; ++i) {
      rates[i] = drop_path_max * (static_cast<double>(i) / static_cast<double>(n - 1));
    }
  }
  return rates;
}

BlockConfig ModelConfig::block_config(std::size_t stage) const {
  BlockConfig b;
  b.kind = stage_kind(stage);
  b.channels = stage_channels.at(stage);
  b.tube = tube;
  b.head_dim = head_dim;
  if (input_mode == InputMode::image) {
    b.tube.t = 1;
    b.dpe_kernel.t = 1;
  }
  return b;
}

namespace {

struct PresetEntry {
  const char* name;
  ModelConfig config;
};

std::vector<PresetEntry> presets() {
  ModelConfig s;
  ModelConfig sd = s;
  sd.stage_depths = {3, 5, 9, 3};
  sd.input_mode = InputMode::image;
  sd.overlap_patch_embed = true;
  sd.num_classes = 1000;
  ModelConfig b = s;
  b.stage_depths = {5, 8, 20, 7};
  ModelConfig l = s;
  l.stage_channels = {128, 192, 448, 640};
  l.stage_depths = {5, 10, 24, 7};
  ModelConfig tiny = s;
  tiny.stage_channels = {8, 16, 32, 64};
  tiny.stage_depths = {1, 1, 1, 1};
  tiny.head_dim = 16;
  tiny.num_classes = 4;
  return {{"S", s}, {"S-dagger", sd}, {"B", b}, {"L", l}, {"tiny", tiny}};
}

const char* mode_name(InputMode m) { return m == InputMode::video ? "video" : "image"; }
const char* schedule_name(DropPathSchedule s) {
  return s == DropPathSchedule::linear ? "linear" : "constant";
}

}  // namespace

ModelConfig preset(std::string_view name) {
  for (const auto& p : presets()) {
    if (name == p.name) return p.config;
  }
  std::string known;
  for (const auto& p : presets()) known += std::string(known.empty() ? "" : ", ") + p.name;
  throw Error("unknown preset \"" + std::string(name) + "\" (known: " + known + ")");
}

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& p : presets()) out.emplace_back(p.name);
  return out;
}

ModelConfig parse_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error("config must be a JSON object");
  ModelConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "stage_channels") {
        c.stage_channels = value.get<std::array<std::size_t, 4>>();
      } else if (key == "stage_depths") {
        c.stage_depths = value.get<std::array<std::size_t, 4>>();
      } else if (key == "stage_types") {
        c.stage_types = value.get<std::string>();
      } else if (key == "tube") {
        auto t = value.get<std::array<std::size_t, 3>>();
        c.tube = {t[0], t[1], t[2]};
      } else if (key == "head_dim") {
        c.head_dim = value.get<std::size_t>();
      } else if (key == "num_classes") {
        c.num_classes = value.get<std::size_t>();
      } else if (key == "drop_path_max") {
        c.drop_path_max = value.get<double>();
      } else if (key == "input_mode") {
        const auto m = value.get<std::string>();
        if (m != "video" && m != "image") throw Error("input_mode must be video or image, got " + m);
        c.input_mode = m == "video" ? InputMode::video : InputMode::image;
      } else if (key == "drop_path_schedule") {
        const auto s = value.get<std::string>();
        if (s != "linear" && s != "constant") {
          throw Error("drop_path_schedule must be linear or constant, got " + s);
        }
        c.drop_path_schedule = s == "linear" ? DropPathSchedule::linear : DropPathSchedule::constant;
      } else if (key == "overlap_patch_embed") {
        c.overlap_patch_embed = value.get<bool>();
      } else {
        throw Error("unknown config field \"" + key + "\"");
      }
    }
  } catch (const json::exception& e) {
    throw Error(std::string("config field has the wrong type: ") + e.what());
  }
  c.validate();
  return c;
}

std::string config_to_json(const ModelConfig& c) {
  json j;
  j["stage_channels"] = c.stage_channels;
  j["stage_depths"] = c.stage_depths;
  j["stage_types"] = c.stage_types;
  j["tube"] = std::array<std::size_t, 3>{c.tube.t, c.tube.h, c.tube.w};
  j["head_dim"] = c.head_dim;
  j["num_classes"] = c.num_classes;
  j["drop_path_max"] = c.drop_path_max;
  j["input_mode"] = mode_name(c.input_mode);
  j["drop_path_schedule"] = schedule_name(c.drop_path_schedule);
  j["overlap_patch_embed"] = c.overlap_patch_embed;
  return j.dump(2);
}

ModelConfig load_config(const std::string& name_or_path) {
  for (const auto& name : preset_names()) {
    if (name == name_or_path) return preset(name);
  }
  std::ifstream in(name_or_path);
  if (!in) throw Error("cannot open config " + name_or_path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// Layers

Tensor ConvNorm::forward(const Tensor& x) const {
  Tensor y = layernorm(conv3d(x, spec, weight, bias), norm, 1);
  return gelu ? uniformer::gelu(y) : y;
}

Tensor PatchEmbed::forward(const Tensor& x) const {
  Tensor y = x;
  for (const auto& layer : layers) y = layer.forward(y);
  return y;
}

std::vector<Conv3dSpec> patch_embed_specs(const ModelConfig& config, std::size_t stage) {
  const bool video = config.input_mode == InputMode::video;
  auto make = [](std::size_t in, std::size_t out, Extent3 k, Extent3 s, Extent3 p) {
    Conv3dSpec spec;
    spec.in_channels = in;
    spec.out_channels = out;
    spec.kernel = k;
    spec.stride = s;
    spec.padding = p;
    return spec;
  };
  const std::size_t out = config.stage_channels.at(stage);
  if (config.overlap_patch_embed) {
    const Extent3 k{1, 3, 3}, s{1, 2, 2}, p{0, 1, 1};
    if (stage == 0) return {make(3, out / 2, k, s, p), make(out / 2, out, k, s, p)};
    return {make(config.stage_channels[stage - 1], out, k, s, p)};
  }
  if (stage == 0) {
    return {video ? make(3, out, {3, 4, 4}, {2, 4, 4}, {1, 0, 0})
                  : make(3, out, {1, 4, 4}, {1, 4, 4}, {0, 0, 0})};
  }
  return {make(config.stage_channels[stage - 1], out, {1, 2, 2}, {1, 2, 2}, {0, 0, 0})};
}

UniFormer::UniFormer(const ModelConfig& config, std::uint64_t seed, DType dtype)
    : config_(config), dtype_(dtype), rng_(seed) {
  config_.validate();
  const double std = 0.02;
  const auto rates = config_.drop_path_rates();
  std::size_t block_index = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    for (const Conv3dSpec& spec : patch_embed_specs(config_, s)) {
      ConvNorm layer;
      layer.spec = spec;
      layer.weight = truncated_normal(spec.weight_shape(), std, rng_, dtype);
      layer.bias = Tensor::zeros({spec.out_channels}, dtype);
      layer.norm = LayerNorm(spec.out_channels, dtype);
      stages[s].embed.layers.push_back(std::move(layer));
    }
    if (config_.overlap_patch_embed && s == 0) stages[s].embed.layers[0].gelu = true;
    for (std::size_t d = 0; d < config_.stage_depths[s]; ++d) {
      BlockConfig bc = config_.block_config(s);
      bc.drop_path_rate = rates[block_index++];
      stages[s].blocks.emplace_back(bc, rng_, dtype);
    }
  }
  head_weight = truncated_normal({config_.num_classes, config_.stage_channels[3]}, std, rng_, dtype);
  head_bias = Tensor::zeros({config_.num_classes}, dtype);
}

void UniFormer::check_input(const Tensor& x) const {
  if (x.rank() != 5 || x.dim(1) != 3) {
    throw Error("model input must be [B,3,T,H,W], got " + shape_str(x.shape()));
  }
  const std::size_t T = x.dim(2), H = x.dim(3), W = x.dim(4);
  if (config_.input_mode == InputMode::video && (T == 0 || T % 2 != 0)) {
    throw Error("video input needs an even frame count, got T=" + std::to_string(T));
  }
  if (config_.input_mode == InputMode::image && T != 1) {
    throw Error("image input needs T=1, got T=" + std::to_string(T));
  }
  const std::size_t stride = config_.spatial_stride();
  if (H == 0 || W == 0 || H % stride != 0 || W % stride != 0) {
    std::ostringstream os;
    os << "spatial extent " << H << "x" << W << " not divisible by the cumulative stride " << stride;
    throw Error(os.str());
  }
}

Tensor UniFormer::forward(const Tensor& x, Mode mode, const ForwardObserver& observer) {
  return forward(x, mode, rng_, observer);
}

Tensor UniFormer::forward(const Tensor& x, Mode mode, Rng& rng, const ForwardObserver& observer) {
  check_input(x);
  auto emit = [&observer](const std::string& name, const Tensor& t) {
    if (observer) observer(name, t);
  };
  Tensor h = x;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string stage = "stage" + std::to_string(s + 1);
    h = stages[s].embed.forward(h);
    emit(s == 0 ? std::string("stem") : stage + ".downsample", h);
    for (std::size_t d = 0; d < stages[s].blocks.size(); ++d) {
      h = stages[s].blocks[d].forward(h, mode, rng);
      emit(stage + ".block" + std::to_string(d), h);
    }
  }
  Tensor pooled = global_avg_pool(h);
  emit("pool", pooled);
  Tensor logits = linear(pooled, head_weight, head_bias);
  emit("head", logits);
  return logits;
}

ParamList UniFormer::parameters() {
  ParamList out;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::string embed = s == 0 ? std::string("stem.") : "stage" + std::to_string(s + 1) + ".downsample.";
    auto& layers = stages[s].embed.layers;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string p = embed + std::to_string(i) + ".";
      out.push_back({p + "conv.weight", &layers[i].weight, true});
      out.push_back({p + "conv.bias", &layers[i].bias, true});
      out.push_back({p + "norm.weight", &layers[i].norm.weight, true});
      out.push_back({p + "norm.bias", &layers[i].norm.bias, true});
    }
    for (std::size_t d = 0; d < stages[s].blocks.size(); ++d) {
      stages[s].blocks[d].collect("stage" + std::to_string(s + 1) + ".block" + std::to_string(d) + ".",
                                  out);
    }
  }
  out.push_back({"head.weight", &head_weight, true});
  out.push_back({"head.bias", &head_bias, true});
  return out;
}

void UniFormer::set_requires_grad(bool on) {
  for (auto& slot : parameters()) {
    if (slot.trainable) slot.tensor->set_requires_grad(on);
  }
}

void UniFormer::set_drop_path_max(double rate) {
  ModelConfig c = config_;
  c.drop_path_max = rate;
  c.validate();
  const auto rates = c.drop_path_rates();
  std::size_t i = 0;
  for (auto& stage : stages)
    for (auto& block : stage.blocks) block.set_drop_path_rate(rates[i++]);
  config_ = c;
}

std::size_t count_params(UniFormer& model) {
  std::size_t n = 0;
  for (const auto& slot : model.parameters()) {
    if (slot.trainable) n += slot.tensor->numel();
  }
  return n;
}

Tensor inflate_2d(const Tensor& weights_2d, std::size_t kt) {
  if (kt < 1) throw Error("inflate_2d needs kt >= 1");
  if (weights_2d.rank() != 4) {
    throw Error("inflate_2d expects [Co,Ci,kh,kw], got " + shape_str(weights_2d.shape()));
  }
  const std::size_t co = weights_2d.dim(0), ci = weights_2d.dim(1);
  const std::size_t plane = weights_2d.dim(2) * weights_2d.dim(3);
  auto w = weights_2d.values();
  std::vector<double> out(co * ci * kt * plane);
  for (std::size_t oc = 0; oc < co * ci; ++oc)
    for (std::size_t t = 0; t < kt; ++t)
      for (std::size_t i = 0; i < plane; ++i) {
        out[(oc * kt + t) * plane + i] = w[oc * plane + i] / static_cast<double>(kt);
      }
  return Tensor({co, ci, kt, weights_2d.dim(2), weights_2d.dim(3)}, std::move(out), weights_2d.dtype());
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_params(UniFormer& model, const std::filesystem::path& path) {
  NamedTensors records;
  for (const auto& slot : model.parameters()) records.emplace_back(slot.name, slot.tensor->detach());
  save_named_tensors(path, std::move(records));
}

void load_params(UniFormer& model, const std::filesystem::path& path) {
  NamedTensors records = load_named_tensors(path);
  ParamList slots = model.parameters();
  std::sort(slots.begin(), slots.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  const std::size_t common = std::min(slots.size(), records.size());
  for (std::size_t i = 0; i < common; ++i) {
    if (slots[i].name != records[i].first) {
      const std::string& first = std::min(slots[i].name, records[i].first);
      const bool missing = first == slots[i].name;
      throw Error("parameter file mismatch at \"" + first + "\": " +
                  (missing ? "missing from file" : "not in model"));
    }
    if (slots[i].tensor->shape() != records[i].second.shape()) {
      throw Error("parameter \"" + slots[i].name + "\" shape mismatch: model " +
                  shape_str(slots[i].tensor->shape()) + ", file " +
                  shape_str(records[i].second.shape()));
    }
  }
  if (slots.size() != records.size()) {
    const bool file_short = records.size() < slots.size();
    const std::string& name = file_short ? slots[common].name : records[common].first;
    throw Error("parameter file mismatch at \"" + name + "\": " +
                (file_short ? "missing from file" : "not in model"));
  }
  for (std::size_t i = 0; i < common; ++i) {
    Tensor& target = *slots[i].tensor;
    const bool grad = target.requires_grad();
    target = records[i].second.to(model.dtype());
    target.set_requires_grad(grad);
  }
}

}  // namespace uniformer
