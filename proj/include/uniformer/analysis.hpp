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

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "uniformer/model.hpp"

namespace uniformer {

// Counting conventions: one multiply-accumulate is one FLOP; norms,
// activations, residual adds and pooling cost one FLOP per element; softmax
// costs four per logit. Bias adds are folded into their MACs.

enum class CostCategory {
  token_linear,         // proportional to the number of tokens
  attention_quadratic,  // proportional to L^2 (global attention scores and weighting)
  fixed,                // independent of the input extent (classifier)
};

const char* cost_category_name(CostCategory c);

struct LayerCost {
  std::string name;
  Shape out_shape;
  std::uint64_t params = 0;
  double flops = 0.0;  // one view
  CostCategory category = CostCategory::token_linear;
};

struct CostReport {
  std::vector<LayerCost> layers;
  std::size_t views = 1;

  std::uint64_t total_params() const;
  double single_view_flops() const;
  /// single_view_flops() * views.
  double total_flops() const;

  /// Aligned human-readable table with totals.
  std::string to_text() const;
  /// Header "name,out_shape,params,flops"; one row per layer with flops for
  /// all views, then a "total" row. Shapes are written as 64x8x56x56.
  std::string to_csv() const;
};

using ShapeTrace = std::vector<std::pair<std::string, Shape>>;

/// Symbolic layer shapes without allocating activations. `input` is
/// [3,T,H,W] or [B,3,T,H,W]; the trace keeps the same leading layout.
/// Layer names match the model's forward observer.
ShapeTrace shape_trace(const ModelConfig& config, const Shape& input);

CostReport count_flops(const ModelConfig& config, const Shape& input, std::size_t views = 1);
inline CostReport count_flops(const UniFormer& model, const Shape& input, std::size_t views = 1) {
  return count_flops(model.config(), input, views);
}

/// Learnable scalars implied by the configuration (BN running statistics
/// excluded). Matches count_params() on a built model.
std::uint64_t count_params(const ModelConfig& config);

std::string shape_compact(const Shape& s);

}  // namespace uniformer
