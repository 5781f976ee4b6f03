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

#include "uniformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

#include "detail/gemm.hpp"

namespace uniformer {

namespace {

const char* binary_name(BinaryOp op) {
  switch (op) {
    case BinaryOp::add: return "add";
    case BinaryOp::sub: return "sub";
    case BinaryOp::mul: return "mul";
    case BinaryOp::div: return "div";
  }
  return "?";
}

// Source offsets for every output position of a strided view.
std::vector<std::size_t> gather_offsets(const Shape& out_shape,
                                        const std::vector<std::size_t>& src_strides,
                                        std::size_t base) {
  const std::size_t n = shape_numel(out_shape);
  const std::size_t rank = out_shape.size();
  std::vector<std::size_t> offsets(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = base;
  for (std::size_t i = 0; i < n; ++i) {
    offsets[i] = off;
    for (std::size_t ax = rank; ax-- > 0;) {
      if (++idx[ax] < out_shape[ax]) {
        off += src_strides[ax];
        break;
      }
      off -= src_strides[ax] * (idx[ax] - 1);
      idx[ax] = 0;
    }
  }
  return offsets;
}

Tensor gather_view(const Tensor& t, Shape out_shape, std::vector<std::size_t> offsets,
                   const char* name) {
  auto src = t.values();
  std::vector<double> out(offsets.size());
  for (std::size_t i = 0; i < offsets.size(); ++i) out[i] = src[offsets[i]];
  auto shared = std::make_shared<std::vector<std::size_t>>(std::move(offsets));
  return make_result(std::move(out_shape), std::move(out), {t},
                     [shared](std::span<const double> g, std::span<const double>,
                              detail::GradSink& sink) {
                       auto gx = sink.buffer(0);
                       const auto& offs = *shared;
                       for (std::size_t i = 0; i < offs.size(); ++i) gx[offs[i]] += g[i];
                     },
                     name);
}

}  // namespace

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    std::ostringstream os;
    os << "shape mismatch in " << binary_name(op) << ": " << shape_str(a.shape()) << " vs "
       << shape_str(b.shape());
    throw Error(os.str());
  }
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  switch (op) {
    case BinaryOp::add:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
      break;
    case BinaryOp::sub:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
      break;
    case BinaryOp::mul:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
      break;
    case BinaryOp::div:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] / bv[i];
      break;
  }
  return make_result(
      a.shape(), std::move(out), {a, b},
      [op, a, b](std::span<const double> g, std::span<const double>, detail::GradSink& sink) {
        auto av = a.values();
        auto bv = b.values();
        if (sink.wants(0)) {
          auto ga = sink.buffer(0);
          for (std::size_t i = 0; i < g.size(); ++i) {
            switch (op) {
              case BinaryOp::add:
              case BinaryOp::sub: ga[i] += g[i]; break;
              case BinaryOp::mul: ga[i] += g[i] * bv[i]; break;
              case BinaryOp::div: ga[i] += g[i] / bv[i]; break;
            }
          }
        }
        if (sink.wants(1)) {
          auto gb = sink.buffer(1);
          for (std::size_t i = 0; i < g.size(); ++i) {
            switch (op) {
              case BinaryOp::add: gb[i] += g[i]; break;
              case BinaryOp::sub: gb[i] -= g[i]; break;
              case BinaryOp::mul: gb[i] += g[i] * av[i]; break;
              case BinaryOp::div: gb[i] -= g[i] * av[i] / (bv[i] * bv[i]); break;
            }
          }
        }
      },
      binary_name(op));
}

Tensor elementwise(BinaryOp op, const Tensor& a, double b) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (op) {
      case BinaryOp::add: out[i] = av[i] + b; break;
      case BinaryOp::sub: out[i] = av[i] - b; break;
      case BinaryOp::mul: out[i] = av[i] * b; break;
      case BinaryOp::div: out[i] = av[i] / b; break;
    }
  }
  const double scale = op == BinaryOp::mul ? b : op == BinaryOp::div ? 1.0 / b : 1.0;
  return make_result(a.shape(), std::move(out), {a},
                     [scale](std::span<const double> g, std::span<const double>,
                             detail::GradSink& sink) {
                       auto ga = sink.buffer(0);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * scale;
                     },
                     binary_name(op));
}

Tensor unary(UnaryOp op, const Tensor& x) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    switch (op) {
      case UnaryOp::neg: out[i] = -xv[i]; break;
      case UnaryOp::exp: out[i] = std::exp(xv[i]); break;
      case UnaryOp::log: out[i] = std::log(xv[i]); break;
      case UnaryOp::tanh: out[i] = std::tanh(xv[i]); break;
      case UnaryOp::square: out[i] = xv[i] * xv[i]; break;
      case UnaryOp::sqrt: out[i] = std::sqrt(xv[i]); break;
    }
  }
  return make_result(
      x.shape(), std::move(out), {x},
      [op, x](std::span<const double> g, std::span<const double> y, detail::GradSink& sink) {
        auto gx = sink.buffer(0);
        auto xv = x.values();
        for (std::size_t i = 0; i < g.size(); ++i) {
          switch (op) {
            case UnaryOp::neg: gx[i] -= g[i]; break;
            case UnaryOp::exp: gx[i] += g[i] * y[i]; break;
            case UnaryOp::log: gx[i] += g[i] / xv[i]; break;
            case UnaryOp::tanh: gx[i] += g[i] * (1.0 - y[i] * y[i]); break;
            case UnaryOp::square: gx[i] += 2.0 * g[i] * xv[i]; break;
            case UnaryOp::sqrt: gx[i] += g[i] / (2.0 * y[i]); break;
          }
        }
      },
      "unary");
}

using detail::gemm_acc;

Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool batched = a.rank() == 3;
  if (!((a.rank() == 2 && b.rank() == 2) || (a.rank() == 3 && b.rank() == 3))) {
    throw Error("matmul needs two rank-2 or two rank-3 tensors, got " + shape_str(a.shape()) +
                " and " + shape_str(b.shape()));
  }
  const std::size_t batch = batched ? a.dim(0) : 1;
  const std::size_t M = a.dim(a.rank() - 2), K = a.dim(a.rank() - 1);
  const std::size_t K2 = b.dim(b.rank() - 2), N = b.dim(b.rank() - 1);
  if (K != K2 || (batched && b.dim(0) != batch)) {
    throw Error("matmul inner extent mismatch: " + shape_str(a.shape()) + " x " +
                shape_str(b.shape()));
  }
  std::vector<double> out(batch * M * N, 0.0);
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  for (std::size_t i = 0; i < batch; ++i) {
    gemm_acc(M, K, N, ap + i * M * K, K, 1, bp + i * K * N, N, 1, out.data() + i * M * N);
  }
  Shape shape = batched ? Shape{batch, M, N} : Shape{M, N};
  return make_result(
      std::move(shape), std::move(out), {a, b},
      [a, b, batch, M, K, N](std::span<const double> g, std::span<const double>,
                             detail::GradSink& sink) {
        const double* ap = a.values().data();
        const double* bp = b.values().data();
        for (std::size_t i = 0; i < batch; ++i) {
          const double* gi = g.data() + i * M * N;
          if (sink.wants(0)) {
            // dA = G * B^T
            gemm_acc(M, N, K, gi, N, 1, bp + i * K * N, 1, N, sink.buffer(0).data() + i * M * K);
          }
          if (sink.wants(1)) {
            // dB = A^T * G
            gemm_acc(K, M, N, ap + i * M * K, 1, K, gi, N, 1, sink.buffer(1).data() + i * K * N);
          }
        }
      },
      "matmul");
}

Tensor reduce(ReduceOp op, const Tensor& t, std::vector<std::size_t> axes, bool keepdim) {
  const Shape& in_shape = t.shape();
  const std::size_t rank = in_shape.size();
  std::vector<bool> reduced(rank, axes.empty());
  for (std::size_t ax : axes) {
    if (ax >= rank) {
      throw Error("reduce axis " + std::to_string(ax) + " invalid for shape " +
                  shape_str(in_shape));
    }
    if (reduced[ax]) throw Error("reduce axis " + std::to_string(ax) + " listed twice");
    reduced[ax] = true;
  }
  Shape kept_shape;  // keepdim layout
  for (std::size_t i = 0; i < rank; ++i) kept_shape.push_back(reduced[i] ? 1 : in_shape[i]);
  Shape out_shape;
  if (keepdim) {
    out_shape = kept_shape;
  } else {
    for (std::size_t i = 0; i < rank; ++i) {
      if (!reduced[i]) out_shape.push_back(in_shape[i]);
    }
    if (out_shape.empty()) out_shape = {1};
  }
  // Map every input position to its output slot via zero strides on reduced axes.
  auto kept_strides = strides_of(kept_shape);
  for (std::size_t i = 0; i < rank; ++i) {
    if (reduced[i]) kept_strides[i] = 0;
  }
  auto slot = std::make_shared<std::vector<std::size_t>>(gather_offsets(in_shape, kept_strides, 0));
  const std::size_t out_n = shape_numel(out_shape);
  const std::size_t count = t.numel() / out_n;
  auto xv = t.values();
  std::vector<double> out(out_n, op == ReduceOp::max ? -std::numeric_limits<double>::infinity() : 0.0);
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  if (op == ReduceOp::max) {
    argmax->assign(out_n, 0);
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const std::size_t o = (*slot)[i];
      if (xv[i] > out[o]) {
        out[o] = xv[i];
        (*argmax)[o] = i;
      }
    }
  } else {
    for (std::size_t i = 0; i < xv.size(); ++i) out[(*slot)[i]] += xv[i];
    if (op == ReduceOp::mean) {
      for (double& v : out) v /= static_cast<double>(count);
    }
  }
  return make_result(
      std::move(out_shape), std::move(out), {t},
      [op, slot, argmax, count](std::span<const double> g, std::span<const double>,
                                detail::GradSink& sink) {
        auto gx = sink.buffer(0);
        if (op == ReduceOp::max) {
          for (std::size_t o = 0; o < g.size(); ++o) gx[(*argmax)[o]] += g[o];
          return;
        }
        const double scale = op == ReduceOp::mean ? 1.0 / static_cast<double>(count) : 1.0;
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[(*slot)[i]] * scale;
      },
      op == ReduceOp::max ? "max" : op == ReduceOp::mean ? "mean" : "sum");
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (shape_numel(shape) != t.numel()) {
    throw Error("cannot reshape " + shape_str(t.shape()) + " to " + shape_str(shape));
  }
  std::vector<double> out(t.values().begin(), t.values().end());
  return make_result(std::move(shape), std::move(out), {t},
                     [](std::span<const double> g, std::span<const double>,
                        detail::GradSink& sink) {
                       auto gx = sink.buffer(0);
                       for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                     },
                     "reshape");
}

Tensor permute(const Tensor& t, const std::vector<std::size_t>& perm) {
  const Shape& in_shape = t.shape();
  if (perm.size() != in_shape.size()) {
    throw Error("permutation rank " + std::to_string(perm.size()) + " does not match shape " +
                shape_str(in_shape));
  }
  std::vector<bool> used(perm.size(), false);
  for (std::size_t p : perm) {
    if (p >= perm.size() || used[p]) throw Error("invalid permutation for " + shape_str(in_shape));
    used[p] = true;
  }
  const auto in_strides = strides_of(in_shape);
  Shape out_shape(perm.size());
  std::vector<std::size_t> src_strides(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    out_shape[i] = in_shape[perm[i]];
    src_strides[i] = in_strides[perm[i]];
  }
  auto offsets = gather_offsets(out_shape, src_strides, 0);
  return gather_view(t, std::move(out_shape), std::move(offsets), "permute");
}

Tensor transpose(const Tensor& t, std::size_t axis0, std::size_t axis1) {
  std::vector<std::size_t> perm(t.rank());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  if (axis0 >= perm.size() || axis1 >= perm.size()) {
    throw Error("transpose axes out of range for " + shape_str(t.shape()));
  }
  std::swap(perm[axis0], perm[axis1]);
  return permute(t, perm);
}

Tensor expand(const Tensor& t, const Shape& shape) {
  const Shape& in_shape = t.shape();
  if (shape.size() != in_shape.size()) {
    throw Error("expand keeps rank: cannot expand " + shape_str(in_shape) + " to " +
                shape_str(shape));
  }
  auto src_strides = strides_of(in_shape);
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (in_shape[i] == shape[i]) continue;
    if (in_shape[i] != 1) {
      throw Error("cannot expand " + shape_str(in_shape) + " to " + shape_str(shape));
    }
    src_strides[i] = 0;
  }
  auto offsets = gather_offsets(shape, src_strides, 0);
  return gather_view(t, shape, std::move(offsets), "expand");
}

Tensor narrow(const Tensor& t, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& in_shape = t.shape();
  if (axis >= in_shape.size() || length == 0 || start + length > in_shape[axis]) {
    throw Error("narrow(" + std::to_string(axis) + ", " + std::to_string(start) + ", " +
                std::to_string(length) + ") out of range for " + shape_str(in_shape));
  }
  const auto strides = strides_of(in_shape);
  Shape out_shape = in_shape;
  out_shape[axis] = length;
  auto offsets = gather_offsets(out_shape, strides, start * strides[axis]);
  return gather_view(t, std::move(out_shape), std::move(offsets), "narrow");
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw Error("concat needs at least one tensor");
  Shape out_shape = parts.front().shape();
  if (axis >= out_shape.size()) throw Error("concat axis out of range");
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    Shape s = p.shape();
    if (s.size() != out_shape.size()) throw Error("concat rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != parts.front().shape()[i]) {
        throw Error("concat shape mismatch: " + shape_str(parts.front().shape()) + " vs " +
                    shape_str(s));
      }
    }
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= out_shape[i];
  for (std::size_t i = axis + 1; i < out_shape.size(); ++i) inner *= out_shape[i];
  const std::size_t out_axis = out_shape[axis];
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> starts;
  std::size_t at = 0;
  for (const Tensor& p : parts) {
    starts.push_back(at);
    const std::size_t len = p.dim(axis);
    auto v = p.values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(v.begin() + o * len * inner, len * inner,
                  out.begin() + (o * out_axis + at) * inner);
    }
    at += len;
  }
  return make_result(std::move(out_shape), std::move(out), parts,
                     [parts, starts, outer, inner, out_axis, axis](
                         std::span<const double> g, std::span<const double>,
                         detail::GradSink& sink) {
                       for (std::size_t k = 0; k < parts.size(); ++k) {
                         if (!sink.wants(k)) continue;
                         auto gp = sink.buffer(k);
                         const std::size_t len = parts[k].dim(axis);
                         for (std::size_t o = 0; o < outer; ++o) {
                           for (std::size_t i = 0; i < len * inner; ++i) {
                             gp[o * len * inner + i] += g[(o * out_axis + starts[k]) * inner + i];
                           }
                         }
                       }
                     },
                     "concat");
}

}  // namespace uniformer
