// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "uniformer/gradcheck.hpp"
#include "uniformer/nn.hpp"
#include "uniformer/ops.hpp"

#include "oracles.hpp"

using namespace uniformer;
using uniformer::testing::max_abs_diff;
using uniformer::testing::naive_conv3d;
using uniformer::testing::random_tensor;

TEST_CASE("conv3d spec geometry") {
  Conv3dSpec s;
  s.in_channels = 3;
  s.out_channels = 64;
  s.kernel = {3, 4, 4};
  s.stride = {2, 4, 4};
  s.padding = {1, 0, 0};
  CHECK(s.output_extent({16, 224, 224}) == Extent3{8, 56, 56});
  s.groups = 2;
  CHECK_THROWS_AS(s.validate(), Error);

  Conv3dSpec big = Conv3dSpec::pointwise(2, 2);
  big.kernel = {5, 5, 5};
  CHECK_THROWS_AS(big.output_extent({4, 4, 4}), Error);
}

TEST_CASE("conv3d identity cases") {
  std::mt19937_64 rng(10);
  SUBCASE("1x1x1 identity weight matrix is channel-space identity") {
    Tensor x = random_tensor({2, 3, 2, 3, 4}, rng);
    std::vector<double> w(9, 0.0);
    for (int i = 0; i < 3; ++i) w[static_cast<std::size_t>(i * 3 + i)] = 1.0;
    Tensor y = conv3d(x, Conv3dSpec::pointwise(3, 3), Tensor({3, 3, 1, 1, 1}, w));
    CHECK(max_abs_diff(x, y) == 0.0);
  }
  SUBCASE("depthwise 3x3x3 centre delta is identity") {
    Tensor x = random_tensor({1, 4, 3, 5, 5}, rng);
    std::vector<double> w(4 * 27, 0.0);
    for (int c = 0; c < 4; ++c) w[static_cast<std::size_t>(c * 27 + 13)] = 1.0;
    Tensor y = conv3d(x, Conv3dSpec::depthwise(4, {3, 3, 3}), Tensor({4, 1, 3, 3, 3}, w));
    CHECK(max_abs_diff(x, y) == 0.0);
  }
}

TEST_CASE("conv3d matches the sliding-window oracle") {
  std::mt19937_64 rng(11);
  SUBCASE("random 2-channel 1x4x4x4 input") {
    Conv3dSpec s;
    s.in_channels = 2;
    s.out_channels = 3;
    s.kernel = {3, 3, 3};
    s.padding = {1, 1, 1};
    Tensor x = random_tensor({1, 2, 4, 4, 4}, rng);
    Tensor w = random_tensor(s.weight_shape(), rng);
    Tensor b = random_tensor({3}, rng);
    Shape oshape;
    auto ref = naive_conv3d(x, s, w, &b, oshape);
    Tensor y = conv3d(x, s, w, b);
    CHECK(y.shape() == oshape);
    CHECK(max_abs_diff(y.values(), ref) < 1e-12);
  }
  SUBCASE("randomised strides, paddings and groups") {
    std::uniform_int_distribution<std::size_t> small(1, 3);
    for (int trial = 0; trial < 25; ++trial) {
      Conv3dSpec s;
      s.groups = small(rng);
      s.in_channels = s.groups * small(rng);
      s.out_channels = s.groups * small(rng);
      s.kernel = {small(rng), small(rng), small(rng)};
      s.stride = {small(rng), small(rng), small(rng)};
      s.padding = {small(rng) - 1, small(rng) - 1, small(rng) - 1};
      Tensor x = random_tensor({small(rng), s.in_channels, 3 + small(rng), 3 + small(rng),
                                3 + small(rng)},
                               rng);
      Tensor w = random_tensor(s.weight_shape(), rng);
      Shape oshape;
      auto ref = naive_conv3d(x, s, w, nullptr, oshape);
      Tensor y = conv3d(x, s, w);
      REQUIRE(y.shape() == oshape);
      CHECK(max_abs_diff(y.values(), ref) < 1e-12);
    }
  }
  SUBCASE("pointwise fast path") {
    Conv3dSpec s = Conv3dSpec::pointwise(4, 5);
    Tensor x = random_tensor({2, 4, 2, 3, 3}, rng);
    Tensor w = random_tensor(s.weight_shape(), rng);
    Shape oshape;
    auto ref = naive_conv3d(x, s, w, nullptr, oshape);
    CHECK(max_abs_diff(conv3d(x, s, w).values(), ref) < 1e-12);
  }
}

TEST_CASE("conv3d errors") {
  Conv3dSpec s = Conv3dSpec::pointwise(3, 4);
  CHECK_THROWS_AS(conv3d(Tensor::zeros({1, 2, 1, 1, 1}), s, Tensor::zeros(s.weight_shape())),
                  Error);
  CHECK_THROWS_AS(conv3d(Tensor::zeros({1, 3, 1, 1, 1}), s, Tensor::zeros({4, 3, 1, 1, 2})),
                  Error);
}

TEST_CASE("depthwise conv equals per-channel correlation, pointwise equals per-position linear") {
  std::mt19937_64 rng(12);
  Tensor x = random_tensor({1, 3, 3, 4, 4}, rng);
  Conv3dSpec dw = Conv3dSpec::depthwise(3, {3, 3, 3});
  Tensor w = random_tensor(dw.weight_shape(), rng);
  Tensor y = conv3d(x, dw, w);
  for (std::size_t c = 0; c < 3; ++c) {
    Conv3dSpec single = Conv3dSpec::depthwise(1, {3, 3, 3});
    Tensor yc = conv3d(narrow(x, 1, c, 1), single, narrow(w, 0, c, 1));
    CHECK(max_abs_diff(yc, narrow(y, 1, c, 1)) < 1e-15);
  }
  Conv3dSpec pw = Conv3dSpec::pointwise(3, 2);
  Tensor wp = random_tensor(pw.weight_shape(), rng);
  Tensor yp = conv3d(x, pw, wp);
  Tensor tokens = reshape(permute(x, {0, 2, 3, 4, 1}), {48, 3});
  Tensor lin = linear(tokens, reshape(wp, {2, 3}));
  Tensor lin5 = permute(reshape(lin, {1, 3, 4, 4, 2}), {0, 4, 1, 2, 3});
  CHECK(max_abs_diff(yp, lin5) < 1e-14);
}

TEST_CASE("batchnorm3d") {
  std::mt19937_64 rng(13);
  SUBCASE("constant-per-channel input in train mode yields the shift") {
    BatchNorm3d bn(2);
    bn.bias.mutable_values()[0] = 0.25;
    bn.bias.mutable_values()[1] = -1.5;
    std::vector<double> v(2 * 2 * 8);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = ((i / 8) % 2 == 0) ? 3.0 : -7.0;
    Tensor y = batchnorm3d(Tensor({2, 2, 2, 2, 2}, v), bn, Mode::train);
    for (std::size_t i = 0; i < v.size(); ++i) {
      CHECK(y.values()[i] == ((i / 8) % 2 == 0 ? 0.25 : -1.5));
    }
  }
  SUBCASE("unit statistics pass through") {
    // Exactly zero-mean, unit-variance channel values.
    std::vector<double> v{1, -1, 1, -1, 1, -1, 1, -1};
    BatchNorm3d bn(1);
    Tensor y = batchnorm3d(Tensor({2, 1, 1, 2, 2}, v), bn, Mode::train);
    CHECK(max_abs_diff(y.values(), std::span<const double>(v)) < 1e-5);
  }
  SUBCASE("train-mode statistics are normalised") {
    Tensor x = random_tensor({3, 4, 2, 3, 3}, rng, -10.0, 30.0);
    BatchNorm3d bn(4);
    Tensor y = batchnorm3d(x, bn, Mode::train);
    const std::size_t plane = 18;
    for (std::size_t c = 0; c < 4; ++c) {
      double s = 0, ss = 0;
      for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t i = 0; i < plane; ++i) s += y.values()[(b * 4 + c) * plane + i];
      const double mu = s / 54.0;
      for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = y.values()[(b * 4 + c) * plane + i] - mu;
          ss += d * d;
        }
      CHECK(std::abs(mu) < 1e-10);
      CHECK(std::abs(ss / 54.0 - 1.0) < 1e-6);
    }
  }
  SUBCASE("running statistics and eval mode") {
    BatchNorm3d bn(1);
    Tensor x({1, 1, 1, 1, 4}, {1, 2, 3, 4});
    Tensor fresh = batchnorm3d(x, bn, Mode::eval);  // defaults: mean 0, var 1
    CHECK(fresh.values()[3] == doctest::Approx(4.0 / std::sqrt(1.0 + 1e-5)));
    batchnorm3d(x, bn, Mode::train);
    CHECK(bn.running_mean.values()[0] == doctest::Approx(0.1 * 2.5));
    CHECK(bn.running_var.values()[0] == doctest::Approx(0.9 + 0.1 * (5.0 / 3.0)));
    CHECK_THROWS_AS(batchnorm3d(Tensor::zeros({1, 1, 1, 1, 1}), bn, Mode::train), Error);
    CHECK_THROWS_AS(batchnorm3d(Tensor::zeros({1, 2, 1, 1, 2}), bn, Mode::train), Error);
  }
  SUBCASE("gradcheck in both modes") {
    for (Mode mode : {Mode::train, Mode::eval}) {
      BatchNorm3d bn(3);
      bn.weight = random_tensor({3}, rng, 0.5, 1.5);
      bn.bias = random_tensor({3}, rng);
      bn.running_mean = random_tensor({3}, rng);
      bn.running_var = random_tensor({3}, rng, 0.5, 2.0);
      Tensor x = random_tensor({2, 3, 2, 2, 2}, rng);
      auto r = gradcheck(
          [&bn, mode](auto& in) {
            BatchNorm3d local = bn;
            local.weight = in[1];
            local.bias = in[2];
            local.running_mean = bn.running_mean.clone();
            local.running_var = bn.running_var.clone();
            return batchnorm3d(in[0], local, mode);
          },
          {x, bn.weight, bn.bias});
      CHECK_MESSAGE(r.passed, r.summary());
    }
  }
}

TEST_CASE("layernorm") {
  std::mt19937_64 rng(14);
  LayerNorm ln(4);
  SUBCASE("equal channel values normalise to zero") {
    Tensor x = Tensor::full({2, 4}, 3.7);
    CHECK(max_abs_diff(layernorm(x, ln, 1), Tensor::zeros({2, 4})) == 0.0);
  }
  SUBCASE("invariant to a per-token constant shift") {
    Tensor x = random_tensor({3, 4}, rng);
    std::vector<double> shifted(x.values().begin(), x.values().end());
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t c = 0; c < 4; ++c) shifted[t * 4 + c] += 10.0 * static_cast<double>(t + 1);
    CHECK(max_abs_diff(layernorm(x, ln, 1), layernorm(Tensor({3, 4}, shifted), ln, 1)) < 1e-9);
  }
  SUBCASE("channel axis of a 5-d tensor") {
    Tensor x = random_tensor({2, 4, 1, 2, 3}, rng);
    Tensor y = layernorm(x, ln, 1);
    Tensor tokens = permute(x, {0, 2, 3, 4, 1});
    Tensor yt = permute(layernorm(tokens, ln, 4), {0, 4, 1, 2, 3});
    CHECK(max_abs_diff(y, yt) < 1e-14);
  }
  SUBCASE("extent mismatch") { CHECK_THROWS_AS(layernorm(Tensor::zeros({2, 3}), ln, 1), Error); }
  SUBCASE("gradcheck") {
    LayerNorm p(4);
    p.weight = random_tensor({4}, rng, 0.5, 1.5);
    p.bias = random_tensor({4}, rng);
    Tensor x = random_tensor({2, 4, 3}, rng);
    auto r = gradcheck(
        [](auto& in) {
          LayerNorm local(4);
          local.weight = in[1];
          local.bias = in[2];
          return layernorm(in[0], local, 1);
        },
        {x, p.weight, p.bias}, {.tolerance = 1e-5});
    CHECK_MESSAGE(r.passed, r.summary());
  }
}

TEST_CASE("gelu, softmax, linear") {
  std::mt19937_64 rng(15);
  CHECK(gelu(Tensor::scalar(0.0)).item() == 0.0);
  // tanh form at x = 1: 0.5 (1 + tanh(sqrt(2/pi) * 1.044715)).
  CHECK(gelu(Tensor::scalar(1.0)).item() ==
        doctest::Approx(0.5 * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * 1.044715))).epsilon(1e-15));
  auto r = gradcheck([](auto& in) { return gelu(in[0]); }, {random_tensor({10}, rng, -3, 3)});
  CHECK_MESSAGE(r.passed, r.summary());

  Tensor uniform = softmax(Tensor::zeros({2, 5}), 1);
  for (double v : uniform.values()) CHECK(v == doctest::Approx(0.2).epsilon(1e-15));

  Tensor x = random_tensor({3, 6}, rng, -5, 5);
  Tensor sx = softmax(x, 1);
  CHECK(max_abs_diff(sx, softmax(x + 123.0, 1)) < 1e-12);
  for (std::size_t row = 0; row < 3; ++row) {
    double s = 0;
    for (std::size_t j = 0; j < 6; ++j) {
      const double v = sx.values()[row * 6 + j];
      CHECK(v > 0.0);
      CHECK(v <= 1.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(softmax(x, 2), Error);
  Tensor big({1, 2}, {1000.0, 0.0});
  CHECK(softmax(big, 1).values()[0] == 1.0);

  Tensor w({2, 4}, std::vector<double>(8, 1.0));
  Tensor b({2}, {0.5, -0.5});
  Tensor y = linear(Tensor::ones({3, 4}), w, b);
  CHECK(y.shape() == Shape{3, 2});
  CHECK(y.values()[0] == 4.5);
  CHECK_THROWS_AS(linear(Tensor::ones({3, 5}), w, b), Error);
}

TEST_CASE("drop_path") {
  std::mt19937_64 rng(16);
  Rng drng(1);
  Tensor x = random_tensor({4, 3}, rng);
  CHECK(max_abs_diff(drop_path(x, 0.0, Mode::train, drng), x) == 0.0);
  CHECK(max_abs_diff(drop_path(x, 0.7, Mode::eval, drng), x) == 0.0);
  CHECK_THROWS_AS(drop_path(x, 1.0, Mode::train, drng), Error);
  CHECK_THROWS_AS(drop_path(x, -0.1, Mode::train, drng), Error);

  // Samples are kept or dropped whole.
  Tensor y = drop_path(x, 0.5, Mode::train, drng);
  for (std::size_t b = 0; b < 4; ++b) {
    const bool kept = y.values()[b * 3] != 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(y.values()[b * 3 + j] == doctest::Approx(kept ? 2.0 * x.values()[b * 3 + j] : 0.0));
    }
  }

  // Monte Carlo expectation: mean over 1e5 draws within 1% of the input.
  const std::size_t draws = 100000;
  Tensor ones = Tensor::ones({draws, 1});
  Tensor d = drop_path(ones, 0.3, Mode::train, drng);
  CHECK(std::abs(mean(d).item() - 1.0) < 0.01);
}

TEST_CASE("zero padding, pooling and cross entropy") {
  std::mt19937_64 rng(17);
  Tensor x = random_tensor({1, 2, 2, 2, 2}, rng);
  Tensor p = zero_pad3d(x, {1, 0, 2});
  CHECK(p.shape() == Shape{1, 2, 4, 2, 6});
  CHECK(sum(p).item() == doctest::Approx(sum(x).item()));
  auto r = gradcheck([](auto& in) { return zero_pad3d(in[0], {1, 1, 1}); }, {x});
  CHECK(r.passed);

  Tensor pooled = global_avg_pool(x);
  CHECK(pooled.shape() == Shape{1, 2});

  Tensor logits = Tensor::zeros({2, 4});
  CHECK(cross_entropy(logits, {0, 3}).item() == doctest::Approx(std::log(4.0)));
  Tensor l = random_tensor({3, 5}, rng);
  auto rc = gradcheck([](auto& in) { return cross_entropy(in[0], {1, 4, 0}); }, {l});
  CHECK_MESSAGE(rc.passed, rc.summary());
  CHECK_THROWS_AS(cross_entropy(l, {1, 5, 0}), Error);
}

TEST_CASE("nn ops pass gradcheck at 1e-4 on randomised small shapes") {
  std::mt19937_64 rng(18);
  std::uniform_int_distribution<std::size_t> small(1, 3);
  for (int trial = 0; trial < 6; ++trial) {
    Conv3dSpec s;
    s.groups = small(rng);
    s.in_channels = s.groups * small(rng);
    s.out_channels = s.groups * small(rng);
    s.kernel = {small(rng), small(rng), small(rng)};
    s.stride = {small(rng), small(rng), small(rng)};
    s.padding = {small(rng) - 1, small(rng) - 1, small(rng) - 1};
    Tensor x = random_tensor({small(rng), s.in_channels, 3, 4, 4}, rng);
    Tensor w = random_tensor(s.weight_shape(), rng);
    Tensor b = random_tensor({s.out_channels}, rng);
    auto r = gradcheck([s](auto& in) { return conv3d(in[0], s, in[1], in[2]); }, {x, w, b});
    CHECK_MESSAGE(r.passed, r.summary());
  }
}
