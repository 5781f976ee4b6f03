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
#include <functional>
#include <string>
#include <vector>

#include "uniformer/tensor.hpp"

namespace uniformer {

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error, so vanishing gradients are
  /// compared on an absolute scale instead of amplifying rounding noise.
  double magnitude_floor = 1e-3;
  /// Coordinates checked per input; 0 checks every coordinate. Sampled
  /// coordinates always include the one with the largest analytic gradient.
  std::size_t max_checks_per_input = 0;
  std::uint64_t seed = 0;
};

struct InputGradReport {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  bool finite = true;
};

struct GradcheckReport {
  std::vector<InputGradReport> inputs;
  double tolerance = 0.0;
  bool passed = false;
  bool non_finite = false;

  double max_rel_error() const;
  std::string summary() const;
};

using TensorFunction = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compares reverse-mode gradients of `f` against central finite
/// differences, coordinate by coordinate. Inputs must be f64 leaves; they are
/// perturbed in place and restored. Non-scalar outputs are contracted with a
/// fixed pseudo-random weight tensor before differentiation.
GradcheckReport gradcheck(const TensorFunction& f, const std::vector<Tensor>& inputs,
                          const GradcheckOptions& options = {},
                          const std::vector<std::string>& names = {});

}  // namespace uniformer
