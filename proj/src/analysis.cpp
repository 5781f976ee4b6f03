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

#include "uniformer/analysis.hpp"

#include <iomanip>
#include <sstream>

namespace uniformer {

const char* cost_category_name(CostCategory c) {
  switch (c) {
    case CostCategory::token_linear: return "token-linear";
    case CostCategory::attention_quadratic: return "attention-quadratic";
    case CostCategory::fixed: return "fixed";
  }
  return "?";
}

std::string shape_compact(const Shape& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out;
}

std::uint64_t CostReport::total_params() const {
  std::uint64_t n = 0;
  for (const auto& l : layers) n += l.params;
  return n;
}

double CostReport::single_view_flops() const {
  double f = 0.0;
  for (const auto& l : layers) f += l.flops;
  return f;
}

double CostReport::total_flops() const { return single_view_flops() * static_cast<double>(views); }

std::string CostReport::to_text() const {
  std::size_t width = 5;
  for (const auto& l : layers) width = std::max(width, l.name.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "layer" << "  " << std::setw(18) << "output"
     << std::right << std::setw(12) << "params" << std::setw(16) << "flops" << "\n";
  for (const auto& l : layers) {
    os << std::left << std::setw(static_cast<int>(width)) << l.name << "  " << std::setw(18)
       << shape_compact(l.out_shape) << std::right << std::setw(12) << l.params << std::setw(16)
       << std::fixed << std::setprecision(0) << l.flops << "\n";
  }
  os << std::setprecision(4) << std::fixed;
  os << "params: " << total_params() << " (" << static_cast<double>(total_params()) / 1e6 << " M)\n";
  os << "flops per view: " << single_view_flops() / 1e9 << " G\n";
  os << "views: " << views << "\n";
  os << "flops total: " << total_flops() / 1e9 << " G\n";
  return os.str();
}

std::string CostReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "name,out_shape,params,flops\n";
  const double v = static_cast<double>(views);
  for (const auto& l : layers) {
    os << l.name << "," << shape_compact(l.out_shape) << "," << l.params << "," << l.flops * v << "\n";
  }
  os << "total,," << total_params() << "," << total_flops() << "\n";
  return os.str();
}

namespace {

struct Walker {
  const ModelConfig& config;
  bool batched;
  std::size_t batch;
  std::size_t channels;
  Extent3 grid;
  std::vector<LayerCost> fine;
  ShapeTrace coarse;

  Shape shape() const {
    Shape s{channels, grid.t, grid.h, grid.w};
    if (batched) s.insert(s.begin(), batch);
    return s;
  }
  double tokens() const { return static_cast<double>(batch * grid.volume()); }
  double elems() const { return tokens() * static_cast<double>(channels); }

  void add(const std::string& name, std::uint64_t params, double flops,
           CostCategory cat = CostCategory::token_linear) {
    fine.push_back({name, shape(), params, flops, cat});
  }

  void conv(const std::string& name, const Conv3dSpec& spec, bool bias) {
    spec.validate();
    if (spec.in_channels != channels) throw Error(name + ": channel mismatch");
    try {
      grid = spec.output_extent(grid);
    } catch (const Error& e) {
      throw Error(name + ": " + e.what());
    }
    channels = spec.out_channels;
    const std::uint64_t k = spec.kernel.volume() * (spec.in_channels / spec.groups);
    const std::uint64_t params = spec.out_channels * k + (bias ? spec.out_channels : 0);
    add(name, params, elems() * static_cast<double>(k));
  }

  void norm(const std::string& name) { add(name, 2 * channels, elems()); }
  void elementwise(const std::string& name, double factor = 1.0) { add(name, 0, elems() * factor); }

  void pointwise(const std::string& name, std::size_t out, bool bias) {
    const std::size_t in = channels;
    channels = out;
    add(name, in * out + (bias ? out : 0), elems() * static_cast<double>(in));
  }

  void embed(std::size_t stage, const std::string& prefix) {
    const auto specs = patch_embed_specs(config, stage);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const std::string p = prefix + "." + std::to_string(i);
      conv(p + ".conv", specs[i], true);
      norm(p + ".norm");
      if (config.overlap_patch_embed && stage == 0 && i == 0) elementwise(p + ".gelu");
    }
  }

  void block(const BlockConfig& b, const std::string& p) {
    const std::size_t C = channels;
    // Dynamic position embedding, depthwise.
    conv(p + ".dpe", Conv3dSpec::depthwise(C, b.dpe_kernel), false);
    elementwise(p + ".dpe.add");
    norm(p + ".norm1");
    if (b.kind == BlockKind::local) {
      pointwise(p + ".attn.v", C, false);
      conv(p + ".attn.affinity", Conv3dSpec::depthwise(C, b.tube), false);
      pointwise(p + ".attn.u", C, false);
    } else {
      const double L = static_cast<double>(grid.volume());
      const double heads = static_cast<double>(b.heads());
      const double nb = static_cast<double>(batch);
      add(p + ".attn.qkv", 3 * (C * C + C), 3 * elems() * static_cast<double>(C));
      add(p + ".attn.scores", 0, nb * L * L * static_cast<double>(C), CostCategory::attention_quadratic);
      add(p + ".attn.softmax", 0, nb * 4.0 * heads * L * L, CostCategory::attention_quadratic);
      add(p + ".attn.weighting", 0, nb * L * L * static_cast<double>(C), CostCategory::attention_quadratic);
      pointwise(p + ".attn.u", C, true);
    }
    elementwise(p + ".attn.add");
    norm(p + ".norm2");
    pointwise(p + ".mlp.fc1", b.hidden(), true);
    elementwise(p + ".mlp.gelu");
    pointwise(p + ".mlp.fc2", C, true);
    elementwise(p + ".mlp.add");
  }

  void run() {
    for (std::size_t s = 0; s < 4; ++s) {
      const std::string stage = "stage" + std::to_string(s + 1);
      const std::string embed_name = s == 0 ? std::string("stem") : stage + ".downsample";
      embed(s, embed_name);
      coarse.emplace_back(embed_name, shape());
      const BlockConfig b = config.block_config(s);
      for (std::size_t d = 0; d < config.stage_depths[s]; ++d) {
        const std::string name = stage + ".block" + std::to_string(d);
        block(b, name);
        coarse.emplace_back(name, shape());
      }
    }
    add("pool", 0, elems());
    Shape pooled = batched ? Shape{batch, channels} : Shape{channels};
    fine.back().out_shape = pooled;
    coarse.emplace_back("pool", pooled);
    const std::size_t K = config.num_classes;
    Shape logits = batched ? Shape{batch, K} : Shape{K};
    fine.push_back({"head", logits, channels * K + K,
                    static_cast<double>(batch * channels * K), CostCategory::fixed});
    coarse.emplace_back("head", logits);
  }
};

Walker walk(const ModelConfig& config, const Shape& input) {
  config.validate();
  const bool batched = input.size() == 5;
  if (input.size() != 4 && !batched) {
    throw Error("input shape must be [3,T,H,W] or [B,3,T,H,W], got " + shape_str(input));
  }
  const std::size_t off = batched ? 1 : 0;
  if (input[off] != 3) throw Error("input must have 3 channels, got " + shape_str(input));
  for (std::size_t v : input) {
    if (v == 0) throw Error("input shape has a zero extent: " + shape_str(input));
  }
  Walker w{config, batched, batched ? input[0] : 1, 3, {input[off + 1], input[off + 2], input[off + 3]}, {}, {}};
  w.run();
  return w;
}

}  // namespace

ShapeTrace shape_trace(const ModelConfig& config, const Shape& input) { return walk(config, input).coarse; }

CostReport count_flops(const ModelConfig& config, const Shape& input, std::size_t views) {
  if (views == 0) throw Error("views must be at least 1");
  CostReport r;
  r.layers = walk(config, input).fine;
  r.views = views;
  return r;
}

std::uint64_t count_params(const ModelConfig& config) {
  // Parameter counts do not depend on the input extent; use the smallest valid one.
  const bool video = config.input_mode == InputMode::video;
  return count_flops(config, Shape{3, video ? 2u : 1u, 32, 32}).total_params();
}

}  // namespace uniformer
