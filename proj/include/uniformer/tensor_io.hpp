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

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "uniformer/tensor.hpp"

namespace uniformer {

// Golden-tensor encoding, all integers and elements little-endian:
//
//   "UFT1" | dtype u8 (0=f32, 1=f64) | rank u32 | extents u32 x rank | elements
//
// Named tensor files (parameter checkpoints) wrap the same payload:
//
//   "UFP1" | count u32 | count x (name_len u32 | UTF-8 name | tensor payload)
//
// with records sorted by name.

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void write_named_tensors(std::ostream& out, NamedTensors tensors);
NamedTensors read_named_tensors(std::istream& in);

void save_named_tensors(const std::filesystem::path& path, NamedTensors tensors);
NamedTensors load_named_tensors(const std::filesystem::path& path);

}  // namespace uniformer
