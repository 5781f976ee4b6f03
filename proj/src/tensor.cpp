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

#include "uniformer/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace uniformer {

namespace detail {

struct Node {
  const char* op_name = "";
  std::vector<Tensor> inputs;
  BackwardFn backward;
  bool released = false;
};

struct TensorImpl {
  Shape shape;
  DType dtype = DType::f64;
  std::vector<double> values;
  bool requires_grad = false;
  std::vector<double> grad;  // empty until first accumulation
  std::shared_ptr<Node> grad_fn;
};

namespace {

void round_storage(DType dtype, std::span<double> values) {
  if (dtype != DType::f32) return;
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

thread_local bool g_grad_enabled = true;

}  // namespace
}  // namespace detail

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

const char* dtype_name(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

Tensor::Tensor(Shape shape, std::vector<double> values, DType dtype, bool requires_grad) {
  for (std::size_t e : shape) {
    if (e == 0) throw Error("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    std::ostringstream os;
    os << "tensor of shape " << shape_str(shape) << " needs " << shape_numel(shape)
       << " values, got " << values.size();
    throw Error(os.str());
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->dtype = dtype;
  impl_->values = std::move(values);
  impl_->requires_grad = requires_grad;
  detail::round_storage(dtype, impl_->values);
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return full(std::move(shape), 0.0, dtype); }
Tensor Tensor::ones(Shape shape, DType dtype) { return full(std::move(shape), 1.0, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  std::vector<double> values(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(values), dtype);
}

Tensor Tensor::scalar(double value, DType dtype) { return Tensor({1}, {value}, dtype); }

namespace {
const detail::TensorImpl& checked(const std::shared_ptr<detail::TensorImpl>& impl) {
  if (!impl) throw Error("use of an undefined tensor");
  return *impl;
}
}  // namespace

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw Error("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return checked(impl_).values.size(); }
DType Tensor::dtype() const { return checked(impl_).dtype; }
std::span<const double> Tensor::values() const { return checked(impl_).values; }

std::span<double> Tensor::mutable_values() {
  checked(impl_);
  return impl_->values;
}

double Tensor::item() const {
  if (numel() != 1) throw Error("item() needs a single-element tensor, got " + shape_str(shape()));
  return impl_->values[0];
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  checked(impl_);
  if (!flag && impl_->grad_fn) throw Error("cannot stop gradient tracking on a non-leaf tensor");
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return checked(impl_).grad_fn == nullptr; }
bool Tensor::has_grad() const { return !checked(impl_).grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw Error("tensor has no accumulated gradient");
  return impl_->grad;
}

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return zeros(shape(), dtype());
  return Tensor(shape(), impl_->grad, dtype());
}

void Tensor::zero_grad() {
  checked(impl_);
  impl_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(shape(), impl_->values, dtype()); }
Tensor Tensor::clone() const { return detach(); }
Tensor Tensor::to(DType target) const { return Tensor(shape(), impl_->values, target); }

NoGradGuard::NoGradGuard() : previous_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { detail::g_grad_enabled = previous_; }
bool grad_enabled() { return detail::g_grad_enabled; }

Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   detail::BackwardFn backward, const char* op_name) {
  DType dtype = DType::f32;
  bool track = false;
  for (const Tensor& in : inputs) {
    if (in.dtype() == DType::f64) dtype = DType::f64;
    track = track || in.requires_grad();
  }
  if (inputs.empty()) dtype = DType::f64;
  Tensor out(std::move(shape), std::move(values), dtype);
  if (track && detail::g_grad_enabled) {
    auto node = std::make_shared<detail::Node>();
    node->op_name = op_name;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    out.impl_->requires_grad = true;
    out.impl_->grad_fn = std::move(node);
  }
  return out;
}

void Tensor::backward() const {
  checked(impl_);
  if (numel() != 1) {
    throw Error("backward() needs a scalar root, got shape " + shape_str(shape()));
  }
  if (!impl_->requires_grad) throw Error("backward() root does not require grad");

  // Post-order DFS gives a topological order with inputs before outputs.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> seen;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack{{impl_.get(), 0}};
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node_impl, next] = stack.back();
    const auto& fn = node_impl->grad_fn;
    if (fn && fn->released) {
      throw Error(std::string("graph through '") + fn->op_name +
                  "' was already released by an earlier backward()");
    }
    if (fn && next < fn->inputs.size()) {
      detail::TensorImpl* child = fn->inputs[next++].impl().get();
      if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
      continue;
    }
    order.push_back(node_impl);
    stack.pop_back();
  }

  std::unordered_map<detail::TensorImpl*, std::vector<double>> pass;
  pass[impl_.get()] = std::vector<double>(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* node_impl = *it;
    auto found = pass.find(node_impl);
    const auto& fn = node_impl->grad_fn;
    if (!fn || found == pass.end()) continue;
    // Element references survive rehashing; iterators do not.
    const std::vector<double>& upstream = found->second;
    std::vector<std::vector<double>*> buffers;
    buffers.reserve(fn->inputs.size());
    for (const Tensor& in : fn->inputs) {
      detail::TensorImpl* p = in.impl().get();
      if (!p->requires_grad) {
        buffers.push_back(nullptr);
        continue;
      }
      auto& buf = pass[p];
      if (buf.empty()) buf.assign(p->values.size(), 0.0);
      buffers.push_back(&buf);
    }
    detail::GradSink sink(std::move(buffers));
    fn->backward(upstream, node_impl->values, sink);
  }

  for (detail::TensorImpl* node_impl : order) {
    auto found = pass.find(node_impl);
    if (found != pass.end()) {
      auto& g = node_impl->grad;
      if (g.empty()) {
        g = std::move(found->second);
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += found->second[i];
      }
      detail::round_storage(node_impl->dtype, g);
    }
    if (node_impl->grad_fn) {
      node_impl->grad_fn->inputs.clear();
      node_impl->grad_fn->backward = nullptr;
      node_impl->grad_fn->released = true;
    }
  }
}

}  // namespace uniformer
