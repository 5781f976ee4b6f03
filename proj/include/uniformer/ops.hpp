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

#include <vector>

#include "uniformer/tensor.hpp"

namespace uniformer {

enum class BinaryOp { add, sub, mul, div };
enum class UnaryOp { neg, exp, log, tanh, square, sqrt };
enum class ReduceOp { sum, mean, max };

// Operands must have equal shapes; there is no implicit broadcasting.
// Use expand() to materialise a broadcast explicitly.
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);
Tensor elementwise(BinaryOp op, const Tensor& a, double b);
Tensor unary(UnaryOp op, const Tensor& x);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::add, a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::sub, a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::mul, a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::div, a, b); }
inline Tensor operator+(const Tensor& a, double b) { return elementwise(BinaryOp::add, a, b); }
inline Tensor operator-(const Tensor& a, double b) { return elementwise(BinaryOp::sub, a, b); }
inline Tensor operator*(const Tensor& a, double b) { return elementwise(BinaryOp::mul, a, b); }
inline Tensor operator/(const Tensor& a, double b) { return elementwise(BinaryOp::div, a, b); }
inline Tensor operator-(const Tensor& x) { return unary(UnaryOp::neg, x); }

/// [M,K]x[K,N] -> [M,N], or batched [B,M,K]x[B,K,N] -> [B,M,N].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Reduces over `axes` (all axes when empty). Reduced axes are dropped unless
/// keepdim; a full reduction without keepdim yields shape [1].
Tensor reduce(ReduceOp op, const Tensor& t, std::vector<std::size_t> axes = {},
              bool keepdim = false);
inline Tensor sum(const Tensor& t, std::vector<std::size_t> axes = {}, bool keepdim = false) {
  return reduce(ReduceOp::sum, t, std::move(axes), keepdim);
}
inline Tensor mean(const Tensor& t, std::vector<std::size_t> axes = {}, bool keepdim = false) {
  return reduce(ReduceOp::mean, t, std::move(axes), keepdim);
}

Tensor reshape(const Tensor& t, Shape shape);
/// out.shape[i] = t.shape[perm[i]].
Tensor permute(const Tensor& t, const std::vector<std::size_t>& perm);
Tensor transpose(const Tensor& t, std::size_t axis0, std::size_t axis1);
/// Broadcasts size-1 axes of `t` to `shape` (same rank). Backward sums.
Tensor expand(const Tensor& t, const Shape& shape);
Tensor narrow(const Tensor& t, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

/// Row-major strides for `shape`.
std::vector<std::size_t> strides_of(const Shape& shape);

}  // namespace uniformer
