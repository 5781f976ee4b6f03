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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace uniformer {

/// Storage precision of a tensor. All arithmetic is carried out in double;
/// f32 tensors round every stored value to the nearest float.
enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

using Shape = std::vector<std::size_t>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
const char* dtype_name(DType dtype);

namespace detail {
struct TensorImpl;
struct Node;

/// Receives gradient contributions for the inputs of one tape node.
class GradSink {
 public:
  explicit GradSink(std::vector<std::vector<double>*> buffers) : buffers_(std::move(buffers)) {}
  /// True when input `index` needs a gradient.
  bool wants(std::size_t index) const { return buffers_.at(index) != nullptr; }
  /// Zero-initialised accumulation buffer for input `index`.
  std::span<double> buffer(std::size_t index) { return *buffers_.at(index); }

 private:
  std::vector<std::vector<double>*> buffers_;
};

using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<const double> out_values,
                       GradSink& sink)>;

}  // namespace detail

/// Dense row-major N-d array with optional reverse-mode gradient tracking.
///
/// Tensor is a shared handle: copies alias the same storage. Values are
/// immutable once an operation has produced them; the only sanctioned
/// in-place mutations are gradient accumulation and explicit parameter
/// updates through mutable_values().
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, DType dtype = DType::f64,
         bool requires_grad = false);

  static Tensor zeros(Shape shape, DType dtype = DType::f64);
  static Tensor ones(Shape shape, DType dtype = DType::f64);
  static Tensor full(Shape shape, double value, DType dtype = DType::f64);
  static Tensor scalar(double value, DType dtype = DType::f64);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  DType dtype() const;

  std::span<const double> values() const;
  /// Direct write access for optimizers and initializers. Bypasses the tape.
  std::span<double> mutable_values();
  double item() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  /// Gradient as a tensor (zeros when none has been accumulated yet).
  Tensor grad_tensor() const;
  void zero_grad();

  /// Reverse-mode sweep from a scalar root. Gradients accumulate into every
  /// reachable tensor that requires them; the recorded graph is released.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;
  Tensor to(DType dtype) const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>, detail::BackwardFn,
                            const char*);

  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds an op result. `backward` receives the upstream gradient, the
/// result's own values, and a sink addressed by position in `inputs`.
/// When no input tracks gradients (or recording is disabled) no node is kept.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   detail::BackwardFn backward, const char* op_name);

}  // namespace uniformer
