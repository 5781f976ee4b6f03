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

#include "uniformer/nn.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <sstream>

#include "detail/gemm.hpp"
#include "uniformer/ops.hpp"

namespace uniformer {

using detail::gemm_acc;

// ---------------------------------------------------------------------------
// Convolution

Conv3dSpec Conv3dSpec::pointwise(std::size_t in_channels, std::size_t out_channels) {
  Conv3dSpec s;
  s.in_channels = in_channels;
  s.out_channels = out_channels;
  return s;
}

Conv3dSpec Conv3dSpec::depthwise(std::size_t channels, Extent3 kernel) {
  Conv3dSpec s;
  s.in_channels = channels;
  s.out_channels = channels;
  s.kernel = kernel;
  s.padding = {kernel.t / 2, kernel.h / 2, kernel.w / 2};
  s.groups = channels;
  return s;
}

void Conv3dSpec::validate() const {
  if (groups == 0 || in_channels == 0 || out_channels == 0) {
    throw Error("conv3d channels and groups must be positive");
  }
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    std::ostringstream os;
    os << "conv3d channels " << in_channels << "->" << out_channels
       << " not divisible by groups " << groups;
    throw Error(os.str());
  }
  if (kernel.volume() == 0 || stride.volume() == 0) {
    throw Error("conv3d kernel and stride extents must be positive");
  }
}

Shape Conv3dSpec::weight_shape() const {
  return {out_channels, in_channels / groups, kernel.t, kernel.h, kernel.w};
}

Extent3 Conv3dSpec::output_extent(Extent3 input) const {
  auto axis = [](std::size_t in, std::size_t k, std::size_t s, std::size_t p, const char* name) {
    const std::size_t padded = in + 2 * p;
    if (padded < k) {
      std::ostringstream os;
      os << "conv3d output extent along " << name << " is non-positive (input " << in
         << ", kernel " << k << ", padding " << p << ")";
      throw Error(os.str());
    }
    return (padded - k) / s + 1;
  };
  return {axis(input.t, kernel.t, stride.t, padding.t, "T"),
          axis(input.h, kernel.h, stride.h, padding.h, "H"),
          axis(input.w, kernel.w, stride.w, padding.w, "W")};
}

namespace {

// Output positions o in [lo, hi) whose input coordinate o*stride + offset
// falls inside [0, in_extent).
struct Range {
  std::ptrdiff_t lo;
  std::ptrdiff_t hi;
};

Range valid_range(std::ptrdiff_t out_extent, std::ptrdiff_t stride, std::ptrdiff_t offset,
                  std::ptrdiff_t in_extent) {
  std::ptrdiff_t lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  std::ptrdiff_t last = in_extent - 1 - offset;
  std::ptrdiff_t hi = last < 0 ? 0 : std::min(out_extent, last / stride + 1);
  return {lo, std::max(lo, hi)};
}

struct ConvGeometry {
  std::size_t batch, cin, cout, groups;
  std::ptrdiff_t T, H, W, To, Ho, Wo;
  std::ptrdiff_t kt, kh, kw, st, sh, sw, pt, ph, pw;

  std::size_t cin_g() const { return cin / groups; }
  std::size_t cout_g() const { return cout / groups; }
  std::size_t in_plane() const { return static_cast<std::size_t>(T * H * W); }
  std::size_t out_plane() const { return static_cast<std::size_t>(To * Ho * Wo); }
  bool pointwise() const {
    return groups == 1 && kt == 1 && kh == 1 && kw == 1 && st == 1 && sh == 1 && sw == 1 &&
           pt == 0 && ph == 0 && pw == 0;
  }
};

// Visits every (input row, output row) pair joined by each kernel tap
// for one (input plane, output plane) combination.
template <typename Fn>
void for_each_tap(const ConvGeometry& g, Fn&& fn) {
  for (std::ptrdiff_t a = 0; a < g.kt; ++a) {
    const Range rt = valid_range(g.To, g.st, a - g.pt, g.T);
    for (std::ptrdiff_t b = 0; b < g.kh; ++b) {
      const Range rh = valid_range(g.Ho, g.sh, b - g.ph, g.H);
      for (std::ptrdiff_t c = 0; c < g.kw; ++c) {
        const Range rw = valid_range(g.Wo, g.sw, c - g.pw, g.W);
        if (rw.lo >= rw.hi) continue;
        const std::size_t tap = static_cast<std::size_t>((a * g.kh + b) * g.kw + c);
        for (std::ptrdiff_t to = rt.lo; to < rt.hi; ++to) {
          const std::ptrdiff_t ti = to * g.st + a - g.pt;
          for (std::ptrdiff_t ho = rh.lo; ho < rh.hi; ++ho) {
            const std::ptrdiff_t hi = ho * g.sh + b - g.ph;
            const std::size_t out_row = static_cast<std::size_t>((to * g.Ho + ho) * g.Wo);
            const std::size_t in_row = static_cast<std::size_t>((ti * g.H + hi) * g.W);
            fn(tap, in_row, out_row, rw.lo, rw.hi, c - g.pw);
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv3d(const Tensor& x, const Conv3dSpec& spec, const Tensor& weight, const Tensor& bias) {
  spec.validate();
  if (x.rank() != 5) throw Error("conv3d expects [B,C,T,H,W], got " + shape_str(x.shape()));
  if (x.dim(1) != spec.in_channels) {
    std::ostringstream os;
    os << "conv3d expects " << spec.in_channels << " input channels, got " << x.dim(1);
    throw Error(os.str());
  }
  if (weight.shape() != spec.weight_shape()) {
    throw Error("conv3d weight shape " + shape_str(weight.shape()) + " does not match " +
                shape_str(spec.weight_shape()) + " (groups " + std::to_string(spec.groups) + ")");
  }
  if (bias.defined() && bias.shape() != Shape{spec.out_channels}) {
    throw Error("conv3d bias shape " + shape_str(bias.shape()) + " does not match [" +
                std::to_string(spec.out_channels) + "]");
  }
  const Extent3 out_ext = spec.output_extent({x.dim(2), x.dim(3), x.dim(4)});
  auto P = [](std::size_t v) { return static_cast<std::ptrdiff_t>(v); };
  const ConvGeometry g{x.dim(0),           spec.in_channels,  spec.out_channels, spec.groups,
                       P(x.dim(2)),        P(x.dim(3)),       P(x.dim(4)),       P(out_ext.t),
                       P(out_ext.h),       P(out_ext.w),      P(spec.kernel.t),  P(spec.kernel.h),
                       P(spec.kernel.w),   P(spec.stride.t),  P(spec.stride.h),  P(spec.stride.w),
                       P(spec.padding.t),  P(spec.padding.h), P(spec.padding.w)};
  const std::size_t in_plane = g.in_plane(), out_plane = g.out_plane();
  const std::size_t taps = spec.kernel.volume();
  std::vector<double> out(g.batch * g.cout * out_plane, 0.0);
  const double* xv = x.values().data();
  const double* wv = weight.values().data();

  if (g.pointwise()) {
    for (std::size_t b = 0; b < g.batch; ++b) {
      gemm_acc(g.cout, g.cin, out_plane, wv, g.cin, 1, xv + b * g.cin * in_plane, in_plane, 1,
               out.data() + b * g.cout * out_plane);
    }
  } else {
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t co = 0; co < g.cout; ++co) {
        const std::size_t grp = co / g.cout_g();
        double* op = out.data() + (b * g.cout + co) * out_plane;
        for (std::size_t cl = 0; cl < g.cin_g(); ++cl) {
          const std::size_t ci = grp * g.cin_g() + cl;
          const double* ip = xv + (b * g.cin + ci) * in_plane;
          const double* wk = wv + (co * g.cin_g() + cl) * taps;
          for_each_tap(g, [&](std::size_t tap, std::size_t in_row, std::size_t out_row,
                              std::ptrdiff_t lo, std::ptrdiff_t hi, std::ptrdiff_t off) {
            const double w = wk[tap];
            for (std::ptrdiff_t wo = lo; wo < hi; ++wo) {
              op[out_row + wo] += w * ip[in_row + wo * g.sw + off];
            }
          });
        }
      }
    }
  }
  if (bias.defined()) {
    auto bv = bias.values();
    for (std::size_t b = 0; b < g.batch; ++b) {
      for (std::size_t co = 0; co < g.cout; ++co) {
        double* op = out.data() + (b * g.cout + co) * out_plane;
        for (std::size_t i = 0; i < out_plane; ++i) op[i] += bv[co];
      }
    }
  }

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      {g.batch, g.cout, out_ext.t, out_ext.h, out_ext.w}, std::move(out), std::move(inputs),
      [x, weight, g, has_bias = bias.defined()](std::span<const double> grad,
                                                std::span<const double>, detail::GradSink& sink) {
        const std::size_t in_plane = g.in_plane(), out_plane = g.out_plane();
        const std::size_t taps = static_cast<std::size_t>(g.kt * g.kh * g.kw);
        const double* xv = x.values().data();
        const double* wv = weight.values().data();
        const bool want_x = sink.wants(0), want_w = sink.wants(1);
        double* gx = want_x ? sink.buffer(0).data() : nullptr;
        double* gw = want_w ? sink.buffer(1).data() : nullptr;
        if (has_bias && sink.wants(2)) {
          auto gb = sink.buffer(2);
          for (std::size_t b = 0; b < g.batch; ++b) {
            for (std::size_t co = 0; co < g.cout; ++co) {
              const double* gp = grad.data() + (b * g.cout + co) * out_plane;
              double acc = 0.0;
              for (std::size_t i = 0; i < out_plane; ++i) acc += gp[i];
              gb[co] += acc;
            }
          }
        }
        if (g.pointwise()) {
          for (std::size_t b = 0; b < g.batch; ++b) {
            const double* gp = grad.data() + b * g.cout * out_plane;
            const double* xp = xv + b * g.cin * in_plane;
            if (want_x) {
              gemm_acc(g.cin, g.cout, in_plane, wv, 1, g.cin, gp, out_plane, 1,
                       gx + b * g.cin * in_plane);
            }
            if (want_w) gemm_acc(g.cout, out_plane, g.cin, gp, out_plane, 1, xp, 1, in_plane, gw);
          }
          return;
        }
        for (std::size_t b = 0; b < g.batch; ++b) {
          for (std::size_t co = 0; co < g.cout; ++co) {
            const std::size_t grp = co / g.cout_g();
            const double* gp = grad.data() + (b * g.cout + co) * out_plane;
            for (std::size_t cl = 0; cl < g.cin_g(); ++cl) {
              const std::size_t ci = grp * g.cin_g() + cl;
              const std::size_t in_base = (b * g.cin + ci) * in_plane;
              const std::size_t w_base = (co * g.cin_g() + cl) * taps;
              for_each_tap(g, [&](std::size_t tap, std::size_t in_row, std::size_t out_row,
                                  std::ptrdiff_t lo, std::ptrdiff_t hi, std::ptrdiff_t off) {
                const std::ptrdiff_t row = static_cast<std::ptrdiff_t>(in_base + in_row) + off;
                if (want_x) {
                  const double w = wv[w_base + tap];
                  for (std::ptrdiff_t wo = lo; wo < hi; ++wo) {
                    gx[row + wo * g.sw] += w * gp[out_row + wo];
                  }
                }
                if (want_w) {
                  double acc = 0.0;
                  for (std::ptrdiff_t wo = lo; wo < hi; ++wo) {
                    acc += xv[row + wo * g.sw] * gp[out_row + wo];
                  }
                  gw[w_base + tap] += acc;
                }
              });
            }
          }
        }
      },
      "conv3d");
}

// ---------------------------------------------------------------------------
// Normalization

BatchNorm3d::BatchNorm3d(std::size_t channels, DType dtype)
    : spec(NormSpec::batchnorm(channels)),
      weight(Tensor::ones({channels}, dtype)),
      bias(Tensor::zeros({channels}, dtype)),
      running_mean(Tensor::zeros({channels}, dtype)),
      running_var(Tensor::ones({channels}, dtype)) {}

Tensor batchnorm3d(const Tensor& x, BatchNorm3d& bn, Mode mode) {
  if (x.rank() != 5) throw Error("batchnorm3d expects [B,C,T,H,W], got " + shape_str(x.shape()));
  const std::size_t C = x.dim(1);
  if (C != bn.spec.extent || bn.weight.shape() != Shape{C}) {
    throw Error("batchnorm3d channel mismatch: input has " + std::to_string(C) +
                " channels, parameters have " + std::to_string(bn.spec.extent));
  }
  const std::size_t B = x.dim(0);
  const std::size_t plane = x.dim(2) * x.dim(3) * x.dim(4);
  const std::size_t count = B * plane;
  if (mode == Mode::train && count < 2) {
    throw Error("batchnorm3d train mode needs at least 2 values per channel");
  }
  auto xv = x.values();
  auto gamma = bn.weight.values();
  auto beta = bn.bias.values();
  auto mean = std::make_shared<std::vector<double>>(C);
  auto invstd = std::make_shared<std::vector<double>>(C);
  if (mode == Mode::train) {
    auto rm = bn.running_mean.mutable_values();
    auto rv = bn.running_var.mutable_values();
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* p = xv.data() + (b * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const double* p = xv.data() + (b * C + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      const double var = ss / static_cast<double>(count);
      (*mean)[c] = mu;
      (*invstd)[c] = 1.0 / std::sqrt(var + bn.spec.eps);
      rm[c] = (1.0 - bn.momentum) * rm[c] + bn.momentum * mu;
      rv[c] = (1.0 - bn.momentum) * rv[c] +
              bn.momentum * ss / static_cast<double>(count - 1);
    }
  } else {
    auto rm = bn.running_mean.values();
    auto rv = bn.running_var.values();
    for (std::size_t c = 0; c < C; ++c) {
      (*mean)[c] = rm[c];
      (*invstd)[c] = 1.0 / std::sqrt(rv[c] + bn.spec.eps);
    }
  }
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  std::vector<double> out(xv.size());
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (b * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double h = (xv[base + i] - (*mean)[c]) * (*invstd)[c];
        (*xhat)[base + i] = h;
        out[base + i] = gamma[c] * h + beta[c];
      }
    }
  }
  const bool batch_stats = mode == Mode::train;
  return make_result(
      x.shape(), std::move(out), {x, bn.weight, bn.bias},
      [xhat, invstd, gamma_t = bn.weight, B, C, plane, count, batch_stats](
          std::span<const double> g, std::span<const double>, detail::GradSink& sink) {
        auto gamma = gamma_t.values();
        std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (b * C + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              sum_g[c] += g[base + i];
              sum_gx[c] += g[base + i] * (*xhat)[base + i];
            }
          }
        }
        if (sink.wants(1)) {
          auto gw = sink.buffer(1);
          for (std::size_t c = 0; c < C; ++c) gw[c] += sum_gx[c];
        }
        if (sink.wants(2)) {
          auto gb = sink.buffer(2);
          for (std::size_t c = 0; c < C; ++c) gb[c] += sum_g[c];
        }
        if (!sink.wants(0)) return;
        auto gx = sink.buffer(0);
        const double n = static_cast<double>(count);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (b * C + c) * plane;
            const double k = gamma[c] * (*invstd)[c];
            for (std::size_t i = 0; i < plane; ++i) {
              if (batch_stats) {
                // d/dx of gamma * (x - mean) * invstd with batch mean/var.
                gx[base + i] +=
                    k * (g[base + i] - sum_g[c] / n - (*xhat)[base + i] * sum_gx[c] / n);
              } else {
                gx[base + i] += k * g[base + i];
              }
            }
          }
        }
      },
      "batchnorm3d");
}

LayerNorm::LayerNorm(std::size_t channels, DType dtype)
    : spec(NormSpec::layernorm(channels)),
      weight(Tensor::ones({channels}, dtype)),
      bias(Tensor::zeros({channels}, dtype)) {}

Tensor layernorm(const Tensor& x, const LayerNorm& ln, std::size_t axis) {
  const std::size_t C = x.dim(axis);
  if (C != ln.spec.extent || ln.weight.shape() != Shape{C} || ln.bias.shape() != Shape{C}) {
    throw Error("layernorm channel mismatch: input extent " + std::to_string(C) +
                " along axis " + std::to_string(axis) + ", parameters have " +
                std::to_string(ln.spec.extent));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  auto xv = x.values();
  auto gamma = ln.weight.values();
  auto beta = ln.bias.values();
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto invstd = std::make_shared<std::vector<double>>(outer * inner);
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * C * inner + i;
      double s = 0.0;
      for (std::size_t c = 0; c < C; ++c) s += xv[base + c * inner];
      const double mu = s / static_cast<double>(C);
      double ss = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double d = xv[base + c * inner] - mu;
        ss += d * d;
      }
      const double is = 1.0 / std::sqrt(ss / static_cast<double>(C) + ln.spec.eps);
      (*invstd)[o * inner + i] = is;
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t k = base + c * inner;
        (*xhat)[k] = (xv[k] - mu) * is;
        out[k] = gamma[c] * (*xhat)[k] + beta[c];
      }
    }
  }
  return make_result(
      x.shape(), std::move(out), {x, ln.weight, ln.bias},
      [xhat, invstd, gamma_t = ln.weight, outer, inner, C](
          std::span<const double> g, std::span<const double>, detail::GradSink& sink) {
        auto gamma = gamma_t.values();
        const bool want_x = sink.wants(0);
        double* gx = want_x ? sink.buffer(0).data() : nullptr;
        double* gw = sink.wants(1) ? sink.buffer(1).data() : nullptr;
        double* gb = sink.wants(2) ? sink.buffer(2).data() : nullptr;
        const double n = static_cast<double>(C);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * C * inner + i;
            double sum_gh = 0.0, sum_ghx = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t k = base + c * inner;
              const double gh = g[k] * gamma[c];
              sum_gh += gh;
              sum_ghx += gh * (*xhat)[k];
              if (gw) gw[c] += g[k] * (*xhat)[k];
              if (gb) gb[c] += g[k];
            }
            if (!want_x) continue;
            const double is = (*invstd)[o * inner + i];
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t k = base + c * inner;
              gx[k] += is * (g[k] * gamma[c] - sum_gh / n - (*xhat)[k] * sum_ghx / n);
            }
          }
        }
      },
      "layernorm");
}

// ---------------------------------------------------------------------------
// Activations and heads

Tensor gelu(const Tensor& x) {
  constexpr double kAlpha = 0.044715;
  const double k = std::sqrt(2.0 / std::numbers::pi);
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(k * (v + kAlpha * v * v * v)));
  }
  return make_result(x.shape(), std::move(out), {x},
                     [x, k](std::span<const double> g, std::span<const double>,
                            detail::GradSink& sink) {
                       auto gx = sink.buffer(0);
                       auto xv = x.values();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double v = xv[i];
                         const double th = std::tanh(k * (v + kAlpha * v * v * v));
                         const double du = k * (1.0 + 3.0 * kAlpha * v * v);
                         gx[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du);
                       }
                     },
                     "gelu");
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw Error("softmax axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  }
  const std::size_t L = x.dim(axis);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * L * inner + i;
      double mx = xv[base];
      for (std::size_t j = 1; j < L; ++j) mx = std::max(mx, xv[base + j * inner]);
      double s = 0.0;
      for (std::size_t j = 0; j < L; ++j) {
        const double e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        s += e;
      }
      for (std::size_t j = 0; j < L; ++j) out[base + j * inner] /= s;
    }
  }
  return make_result(x.shape(), std::move(out), {x},
                     [outer, inner, L](std::span<const double> g, std::span<const double> y,
                                       detail::GradSink& sink) {
                       auto gx = sink.buffer(0);
                       for (std::size_t o = 0; o < outer; ++o) {
                         for (std::size_t i = 0; i < inner; ++i) {
                           const std::size_t base = o * L * inner + i;
                           double dot = 0.0;
                           for (std::size_t j = 0; j < L; ++j) {
                             dot += g[base + j * inner] * y[base + j * inner];
                           }
                           for (std::size_t j = 0; j < L; ++j) {
                             const std::size_t k = base + j * inner;
                             gx[k] += y[k] * (g[k] - dot);
                           }
                         }
                       }
                     },
                     "softmax");
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2) throw Error("linear weight must be [out, in]");
  const std::size_t in = weight.dim(1), out_f = weight.dim(0);
  if (x.rank() == 0 || x.shape().back() != in) {
    throw Error("linear expects last extent " + std::to_string(in) + ", got " +
                shape_str(x.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{out_f}) {
    throw Error("linear bias shape " + shape_str(bias.shape()) + " does not match [" +
                std::to_string(out_f) + "]");
  }
  const std::size_t rows = x.numel() / in;
  std::vector<double> out(rows * out_f, 0.0);
  gemm_acc(rows, in, out_f, x.values().data(), in, 1, weight.values().data(), 1, in, out.data());
  if (bias.defined()) {
    auto bv = bias.values();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t o = 0; o < out_f; ++o) out[r * out_f + o] += bv[o];
    }
  }
  Shape shape = x.shape();
  shape.back() = out_f;
  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result(
      std::move(shape), std::move(out), std::move(inputs),
      [x, weight, rows, in, out_f, has_bias = bias.defined()](
          std::span<const double> g, std::span<const double>, detail::GradSink& sink) {
        if (sink.wants(0)) {
          gemm_acc(rows, out_f, in, g.data(), out_f, 1, weight.values().data(), in, 1,
                   sink.buffer(0).data());
        }
        if (sink.wants(1)) {
          gemm_acc(out_f, rows, in, g.data(), 1, out_f, x.values().data(), in, 1,
                   sink.buffer(1).data());
        }
        if (has_bias && sink.wants(2)) {
          auto gb = sink.buffer(2);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t o = 0; o < out_f; ++o) gb[o] += g[r * out_f + o];
          }
        }
      },
      "linear");
}

Tensor drop_path(const Tensor& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw Error("drop_path rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::eval || rate == 0.0) return x;
  const std::size_t batch = x.dim(0);
  const std::size_t per_sample = x.numel() / batch;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  auto scale = std::make_shared<std::vector<double>>(batch);
  for (double& s : *scale) s = uniform(rng) < 1.0 - rate ? 1.0 / (1.0 - rate) : 0.0;
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * (*scale)[i / per_sample];
  return make_result(x.shape(), std::move(out), {x},
                     [scale, per_sample](std::span<const double> g, std::span<const double>,
                                         detail::GradSink& sink) {
                       auto gx = sink.buffer(0);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         gx[i] += g[i] * (*scale)[i / per_sample];
                       }
                     },
                     "drop_path");
}

Tensor zero_pad3d(const Tensor& x, Extent3 pad) {
  if (x.rank() != 5) throw Error("zero_pad3d expects [B,C,T,H,W], got " + shape_str(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t T = x.dim(2), H = x.dim(3), W = x.dim(4);
  const std::size_t To = T + 2 * pad.t, Ho = H + 2 * pad.h, Wo = W + 2 * pad.w;
  std::vector<double> out(planes * To * Ho * Wo, 0.0);
  auto xv = x.values();
  auto dest = [=](std::size_t p, std::size_t t, std::size_t h, std::size_t w) {
    return ((p * To + t + pad.t) * Ho + h + pad.h) * Wo + w + pad.w;
  };
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w) out[dest(p, t, h, w)] = xv[((p * T + t) * H + h) * W + w];
  return make_result({x.dim(0), x.dim(1), To, Ho, Wo}, std::move(out), {x},
                     [=](std::span<const double> g, std::span<const double>,
                         detail::GradSink& sink) {
                       auto gx = sink.buffer(0);
                       for (std::size_t p = 0; p < planes; ++p)
                         for (std::size_t t = 0; t < T; ++t)
                           for (std::size_t h = 0; h < H; ++h)
                             for (std::size_t w = 0; w < W; ++w)
                               gx[((p * T + t) * H + h) * W + w] += g[dest(p, t, h, w)];
                     },
                     "zero_pad3d");
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 5) {
    throw Error("global_avg_pool expects [B,C,T,H,W], got " + shape_str(x.shape()));
  }
  return mean(x, {2, 3, 4});
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw Error("cross_entropy expects [B,K] logits with B labels, got " +
                shape_str(logits.shape()) + " and " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  auto lv = logits.values();
  auto probs = std::make_shared<std::vector<double>>(B * K);
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] >= K) throw Error("label " + std::to_string(labels[b]) + " out of range");
    const double* row = lv.data() + b * K;
    const double mx = *std::max_element(row, row + K);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(row[k] - mx);
    for (std::size_t k = 0; k < K; ++k) (*probs)[b * K + k] = std::exp(row[k] - mx) / s;
    loss += std::log(s) + mx - row[labels[b]];
  }
  loss /= static_cast<double>(B);
  return make_result({1}, {loss}, {logits},
                     [probs, labels, B, K](std::span<const double> g, std::span<const double>,
                                           detail::GradSink& sink) {
                       auto gx = sink.buffer(0);
                       const double scale = g[0] / static_cast<double>(B);
                       for (std::size_t b = 0; b < B; ++b) {
                         for (std::size_t k = 0; k < K; ++k) {
                           const double target = k == labels[b] ? 1.0 : 0.0;
                           gx[b * K + k] += scale * ((*probs)[b * K + k] - target);
                         }
                       }
                     },
                     "cross_entropy");
}

Tensor truncated_normal(Shape shape, double std, Rng& rng, DType dtype) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) {
    double z = normal(rng);
    while (std::abs(z) > 2.0) z = normal(rng);
    v = z * std;
  }
  return Tensor(std::move(shape), std::move(values), dtype);
}

}  // namespace uniformer
