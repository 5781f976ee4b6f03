// SPDX-License-Identifier: Apache-2.0
//
// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails. Pass criterion ids (A1 ... A9) as
// arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "test_util.hpp"
#include "uniformer/analysis.hpp"
#include "uniformer/blocks.hpp"
#include "uniformer/gradcheck.hpp"
#include "uniformer/model.hpp"
#include "uniformer/ops.hpp"
#include "uniformer/pipeline.hpp"

using namespace uniformer;
using uniformer::testing::max_abs_diff;
using uniformer::testing::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

double rel(double value, double target) { return std::abs(value - target) / std::abs(target); }

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

// ---------------------------------------------------------------------------

Outcome a1() {
  struct Case {
    const char* label;
    ModelConfig config;
    double target;
  };
  ModelConfig s174 = preset("S");
  s174.num_classes = 174;
  const std::vector<Case> cases{{"S/400", preset("S"), 21.4e6}, {"B/400", preset("B"), 49.8e6}, {"S/174", s174, 21.3e6}};
  Outcome o{true, ""};
  for (const auto& c : cases) {
    const double n = static_cast<double>(count_params(c.config));
    o.pass = o.pass && rel(n, c.target) <= 0.01;
    o.detail += std::string(c.label) + " " + fmt(n / 1e6) + "M (target " + fmt(c.target / 1e6) + "M, " +
                fmt(100 * rel(n, c.target), 2) + "%) ";
  }
  return o;
}

Outcome a2() {
  Outcome o{true, ""};
  auto check = [&](const char* label, double value, double target, double tol) {
    o.pass = o.pass && rel(value, target) <= tol;
    o.detail += std::string(label) + " " + fmt(value / 1e9) + "G (" + fmt(100 * rel(value, target), 2) + "%) ";
  };
  const double s16 = count_flops(preset("S"), {3, 16, 224, 224}).total_flops();
  check("S@16", s16, 41.8e9, 0.05);
  check("S@32", count_flops(preset("S"), {3, 32, 224, 224}).total_flops(), 109.6e9, 0.05);
  check("B@16", count_flops(preset("B"), {3, 16, 224, 224}).total_flops(), 96.7e9, 0.05);
  const double s16x4 = count_flops(preset("S"), {3, 16, 224, 224}, 4).total_flops();
  check("S@16x4", s16x4, 167.2e9, 0.05);
  const bool linear = s16x4 == 4.0 * s16;
  o.pass = o.pass && linear;
  o.detail += linear ? "views exact " : "views NOT exact ";
  ModelConfig image = preset("S");
  image.input_mode = InputMode::image;
  image.num_classes = 1000;
  check("image S@224", count_flops(image, {3, 1, 224, 224}).total_flops(), 3.6e9, 0.10);
  return o;
}

GlobalMhraParams random_global(std::size_t c, std::mt19937_64& rng) {
  GlobalMhraParams p;
  for (Tensor* w : {&p.q_weight, &p.k_weight, &p.v_weight, &p.u_weight}) *w = random_tensor({c, c}, rng);
  for (Tensor* b : {&p.q_bias, &p.k_bias, &p.v_bias, &p.u_bias}) *b = random_tensor({c}, rng);
  return p;
}

Outcome a3() {
  double local_worst = 0.0, global_worst = 0.0;
  const std::size_t trials = 25;
  for (std::uint64_t seed = 0; seed < trials; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    std::uniform_int_distribution<std::size_t> t_ext(1, 2), s_ext(1, 4), chans(1, 16);
    const std::size_t B = 1 + seed % 2;
    const Shape shape{B, chans(rng), t_ext(rng), s_ext(rng), s_ext(rng)};
    const std::size_t C = shape[1];
    Tensor x = random_tensor(shape, rng);

    const std::size_t k = seed % 3 == 0 ? 3 : (seed % 3 == 1 ? 5 : 7);
    LocalMhraParams lp{random_tensor({C, C, 1, 1, 1}, rng), random_tensor({C, 1, k, k, k}, rng),
                       random_tensor({C, C, 1, 1, 1}, rng)};
    local_worst = std::max(local_worst, max_abs_diff(local_mhra(x, lp).values(), testing::local_mhra_oracle(x, lp)));

    std::vector<std::size_t> divisors;
    for (std::size_t d = 1; d <= C; ++d)
      if (C % d == 0) divisors.push_back(d);
    const std::size_t head_dim = divisors[rng() % divisors.size()];
    GlobalMhraParams gp = random_global(C, rng);
    global_worst = std::max(global_worst,
                            max_abs_diff(global_mhra(x, gp, head_dim).values(), testing::global_mhra_oracle(x, gp, head_dim)));
  }
  return {local_worst < 1e-10 && global_worst < 1e-10,
          std::to_string(trials) + " seeds, local max diff " + fmt(local_worst, 3) + ", global max diff " +
              fmt(global_worst, 3)};
}

Outcome a4() {
  std::mt19937_64 rng(4);
  std::vector<std::string> failed;
  std::size_t op_checks = 0;
  double worst_op = 0.0;
  auto check = [&](const std::string& name, const TensorFunction& f, std::vector<Tensor> in) {
    auto r = gradcheck(f, in, {.tolerance = 1e-4});
    ++op_checks;
    worst_op = std::max(worst_op, r.max_rel_error());
    if (!r.passed) failed.push_back(name);
  };

  // Tensor primitives.
  Tensor a = random_tensor({2, 3, 4}, rng);
  Tensor b = random_tensor({2, 3, 4}, rng, 0.5, 2.0);
  check("add", [](auto& in) { return in[0] + in[1]; }, {a, b});
  check("sub", [](auto& in) { return in[0] - in[1]; }, {a, b});
  check("mul", [](auto& in) { return in[0] * in[1]; }, {a, b});
  check("div", [](auto& in) { return in[0] / in[1]; }, {a, b});
  check("scalar ops", [](auto& in) { return (in[0] * 3.0 - 1.0) / 2.0 + 4.0; }, {a});
  check("neg", [](auto& in) { return -in[0]; }, {a});
  check("exp", [](auto& in) { return unary(UnaryOp::exp, in[0]); }, {a});
  check("log", [](auto& in) { return unary(UnaryOp::log, in[0]); }, {b});
  check("tanh", [](auto& in) { return unary(UnaryOp::tanh, in[0]); }, {a});
  check("square", [](auto& in) { return unary(UnaryOp::square, in[0]); }, {a});
  check("sqrt", [](auto& in) { return unary(UnaryOp::sqrt, in[0]); }, {b});
  check("sum", [](auto& in) { return reduce(ReduceOp::sum, in[0], {1}); }, {a});
  check("mean", [](auto& in) { return mean(in[0], {0, 2}); }, {a});
  check("max", [](auto& in) { return reduce(ReduceOp::max, in[0], {2}, true); }, {a});
  check("matmul", [](auto& in) { return matmul(in[0], in[1]); }, {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});
  check("reshape", [](auto& in) { return reshape(in[0], {6, 4}); }, {a});
  check("permute", [](auto& in) { return permute(in[0], {2, 0, 1}); }, {a});
  check("transpose", [](auto& in) { return transpose(in[0], 0, 2); }, {a});
  check("expand", [](auto& in) { return expand(in[0], {2, 3, 4}); }, {random_tensor({1, 3, 4}, rng)});
  check("narrow", [](auto& in) { return narrow(in[0], 2, 1, 2); }, {a});
  check("concat", [](auto& in) { return concat({in[0], in[1]}, 1); }, {a, b});

  // Network ops.
  Tensor x = random_tensor({2, 4, 2, 3, 3}, rng);
  Conv3dSpec grouped{.in_channels = 4, .out_channels = 6, .kernel = {2, 3, 2}, .stride = {1, 2, 1},
                     .padding = {1, 1, 0}, .groups = 2};
  check("conv3d", [grouped](auto& in) { return conv3d(in[0], grouped, in[1], in[2]); },
        {x, random_tensor(grouped.weight_shape(), rng), random_tensor({6}, rng)});
  check("batchnorm3d", [](auto& in) {
          BatchNorm3d bn(4);
          bn.weight = in[1];
          bn.bias = in[2];
          return batchnorm3d(in[0], bn, Mode::train);
        },
        {x, random_tensor({4}, rng, 0.5, 1.5), random_tensor({4}, rng)});
  check("layernorm", [](auto& in) {
          LayerNorm ln(4);
          ln.weight = in[1];
          ln.bias = in[2];
          return layernorm(in[0], ln, 1);
        },
        {x, random_tensor({4}, rng, 0.5, 1.5), random_tensor({4}, rng)});
  check("gelu", [](auto& in) { return gelu(in[0]); }, {a});
  check("softmax", [](auto& in) { return softmax(in[0], 1); }, {a});
  check("linear", [](auto& in) { return linear(in[0], in[1], in[2]); },
        {a, random_tensor({5, 4}, rng), random_tensor({5}, rng)});
  check("drop_path", [](auto& in) {
          Rng r(11);
          return drop_path(in[0], 0.5, Mode::train, r);
        },
        {random_tensor({6, 3}, rng)});
  check("zero_pad3d", [](auto& in) { return zero_pad3d(in[0], {1, 0, 2}); }, {x});
  check("global_avg_pool", [](auto& in) { return global_avg_pool(in[0]); }, {x});
  check("cross_entropy", [](auto& in) { return cross_entropy(in[0], {2, 0, 1}); }, {random_tensor({3, 4}, rng)});

  // Block components.
  check("dpe", [](auto& in) { return dpe(in[0], in[1]); }, {x, random_tensor({4, 1, 3, 3, 3}, rng)});
  check("local_mhra", [](auto& in) { return local_mhra(in[0], LocalMhraParams{in[1], in[2], in[3]}); },
        {x, random_tensor({4, 4, 1, 1, 1}, rng), random_tensor({4, 1, 3, 3, 3}, rng), random_tensor({4, 4, 1, 1, 1}, rng)});
  GlobalMhraParams gp = random_global(4, rng);
  check("global_mhra", [](auto& in) {
          return global_mhra(in[0], GlobalMhraParams{in[1], in[2], in[3], in[4], in[5], in[6], in[7], in[8]}, 2);
        },
        {x, gp.q_weight, gp.q_bias, gp.k_weight, gp.k_bias, gp.v_weight, gp.v_bias, gp.u_weight, gp.u_bias});
  FfnParams fp{random_tensor({16, 4}, rng), random_tensor({16}, rng), random_tensor({4, 16}, rng), random_tensor({4}, rng)};
  check("ffn", [](auto& in) { return ffn(in[0], FfnParams{in[1], in[2], in[3], in[4]}); },
        {random_tensor({5, 4}, rng), fp.fc1_weight, fp.fc1_bias, fp.fc2_weight, fp.fc2_bias});
  check("ffn_conv", [](auto& in) { return ffn_conv(in[0], FfnParams{in[1], in[2], in[3], in[4]}); },
        {x, fp.fc1_weight, fp.fc1_bias, fp.fc2_weight, fp.fc2_bias});

  // Full tiny model, every coordinate of the input and every trainable parameter.
  UniFormer model(preset("tiny"), 12);
  std::vector<Tensor> inputs{random_tensor({1, 3, 2, 32, 32}, rng)};
  std::vector<std::string> names{"input"};
  for (auto& s : model.parameters()) {
    if (!s.trainable) continue;
    inputs.push_back(*s.tensor);
    names.push_back(s.name);
  }
  auto forward = [&model](const std::vector<Tensor>& in) {
    UniFormer local = model;
    ParamList ps = local.parameters();
    std::size_t i = 1;
    for (auto& s : ps) {
      if (s.trainable) *s.tensor = in[i++];
      else *s.tensor = s.tensor->clone();
    }
    return local.forward(in[0], Mode::train);
  };
  auto rep = gradcheck(forward, inputs, {.tolerance = 1e-4}, names);
  std::size_t coords = 0;
  for (const auto& r : rep.inputs) coords += r.checked;

  std::string detail = std::to_string(op_checks) + " ops (worst rel err " + fmt(worst_op, 3) + ")";
  if (!failed.empty()) {
    detail += ", failed:";
    for (const auto& f : failed) detail += " " + f;
  }
  detail += "; tiny model " + std::to_string(coords) + " coordinates, worst rel err " + fmt(rep.max_rel_error(), 3);
  return {failed.empty() && rep.passed, detail};
}

// Reorders the tokens of [B,C,T,H,W]: new token i is old token perm[i].
Tensor permute_tokens(const Tensor& x, const std::vector<std::size_t>& perm) {
  const std::size_t B = x.dim(0), C = x.dim(1), L = perm.size();
  std::vector<double> out(x.numel());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < L; ++i) out[(b * C + c) * L + i] = x.values()[(b * C + c) * L + perm[i]];
  return Tensor(x.shape(), out);
}

Outcome a5() {
  // Briefly train the tiny model so the stage-3 global block carries learned weights.
  UniFormer model(preset("tiny"), 5);
  SyntheticDataset data = make_synthetic_dataset(4, 2, {3, 8, 32, 32}, 5);
  TrainConfig tc;
  tc.total_epochs = 40;
  tc.warmup_epochs = 4;
  train_toy(model, data, tc);
  Block block = model.stages[2].blocks[0];
  const std::size_t C = block.config().channels;
  const Tensor trained_dpe = block.dpe_weight.clone();
  double dpe_norm = 0.0;
  for (double v : trained_dpe.values()) dpe_norm = std::max(dpe_norm, std::abs(v));

  std::mt19937_64 rng(55);
  Rng unused(0);
  Tensor x = random_tensor({1, C, 2, 3, 4}, rng);
  std::vector<std::size_t> perm(24);
  std::iota(perm.begin(), perm.end(), 0);

  block.dpe_weight = Tensor::zeros(trained_dpe.shape());
  double zero_dpe_worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor lhs = permute_tokens(block.forward(x, Mode::eval, unused), perm);
    Tensor rhs = block.forward(permute_tokens(x, perm), Mode::eval, unused);
    zero_dpe_worst = std::max(zero_dpe_worst, max_abs_diff(lhs, rhs));
    lhs = permute_tokens(global_mhra(x, block.global, block.config().head_dim), perm);
    rhs = global_mhra(permute_tokens(x, perm), block.global, block.config().head_dim);
    zero_dpe_worst = std::max(zero_dpe_worst, max_abs_diff(lhs, rhs));
  }

  block.dpe_weight = trained_dpe;
  double dpe_best = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor lhs = permute_tokens(block.forward(x, Mode::eval, unused), perm);
    Tensor rhs = block.forward(permute_tokens(x, perm), Mode::eval, unused);
    dpe_best = std::max(dpe_best, max_abs_diff(lhs, rhs));
  }

  // Translation: content supported away from the border, shifted by one token along H and W.
  const std::size_t T = 2, H = 8, W = 8;
  std::vector<double> base(C * T * H * W, 0.0), shifted(base.size(), 0.0);
  std::uniform_real_distribution<double> u(-1, 1);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t h = 2; h <= 4; ++h)
        for (std::size_t w = 2; w <= 4; ++w) {
          const double v = u(rng);
          base[((c * T + t) * H + h) * W + w] = v;
          shifted[((c * T + t) * H + h + 1) * W + w + 1] = v;
        }
  Tensor y0 = dpe(Tensor({1, C, T, H, W}, base), trained_dpe);
  Tensor y1 = dpe(Tensor({1, C, T, H, W}, shifted), trained_dpe);
  double translate_worst = 0.0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t h = 0; h + 1 < H; ++h)
        for (std::size_t w = 0; w + 1 < W; ++w)
          translate_worst = std::max(translate_worst, std::abs(y1.values()[((c * T + t) * H + h + 1) * W + w + 1] -
                                                               y0.values()[((c * T + t) * H + h) * W + w]));

  const bool pass = zero_dpe_worst <= 1e-12 && dpe_norm > 0.0 && dpe_best > 1e-6 && translate_worst < 1e-10;
  return {pass, "zero-DPE max diff " + fmt(zero_dpe_worst, 3) + " over 10 permutations; trained DPE (max |w| " +
                    fmt(dpe_norm, 3) + ") max diff " + fmt(dpe_best, 3) + "; translation diff " + fmt(translate_worst, 3)};
}

Outcome a6() {
  std::mt19937_64 rng(6);
  const std::size_t Co = 4, Ci = 3, H = 9, W = 10, T = 7;
  double response_worst = 0.0;
  std::string sum_detail;
  bool sums_exact = true;
  for (std::size_t kt = 1; kt <= 5; ++kt) {
    Tensor w2 = random_tensor({Co, Ci, 3, 3}, rng);
    Tensor image = random_tensor({1, Ci, 1, H, W}, rng);
    Conv3dSpec spec2{.in_channels = Ci, .out_channels = Co, .kernel = {1, 3, 3}, .stride = {1, 1, 1}, .padding = {0, 1, 1}};
    Tensor ref = conv3d(image, spec2, reshape(w2, {Co, Ci, 1, 3, 3}));

    std::vector<double> rep(Ci * T * H * W);
    for (std::size_t c = 0; c < Ci; ++c)
      for (std::size_t t = 0; t < T; ++t)
        std::copy_n(image.values().data() + c * H * W, H * W, rep.data() + (c * T + t) * H * W);
    Tensor video({1, Ci, T, H, W}, rep);
    Tensor w3 = inflate_2d(w2, kt);
    Conv3dSpec spec3 = spec2;
    spec3.kernel = {kt, 3, 3};
    spec3.padding = {kt / 2, 1, 1};
    Tensor out = conv3d(video, spec3, w3);
    const std::size_t To = out.dim(2);
    for (std::size_t t = 0; t < To; ++t) {
      // Window covers input frames t - pad .. t - pad + kt - 1.
      if (t < kt / 2 || t - kt / 2 + kt > T) continue;
      for (std::size_t o = 0; o < Co; ++o)
        for (std::size_t i = 0; i < H * W; ++i)
          response_worst = std::max(response_worst,
                                    std::abs(out.values()[(o * To + t) * H * W + i] - ref.values()[o * H * W + i]));
    }

    std::size_t mismatches = 0;
    const std::size_t plane = 9;
    for (std::size_t oc = 0; oc < Co * Ci; ++oc)
      for (std::size_t i = 0; i < plane; ++i) {
        double s = 0.0;
        for (std::size_t t = 0; t < kt; ++t) s += w3.values()[(oc * kt + t) * plane + i];
        if (s != w2.values()[oc * plane + i]) ++mismatches;
      }
    if (mismatches) sums_exact = false;
    sum_detail += " kt=" + std::to_string(kt) + ":" + std::to_string(mismatches) + "/" + std::to_string(Co * Ci * plane);
  }
  return {response_worst < 1e-12 && sums_exact,
          "response max diff " + fmt(response_worst, 3) + "; inexact slice sums" + sum_detail};
}

Outcome a7() {
  const Shape clip{3, 8, 32, 32};
  SyntheticDataset data = make_synthetic_dataset(4, 2, clip, 7);
  TrainConfig tc;  // 300 epochs of one 8-clip batch: 300 AdamW steps
  Outcome o{true, ""};
  for (const char* types : {"LLGG", "LLLL"}) {
    ModelConfig cfg = preset("tiny");
    cfg.stage_types = types;
    UniFormer model(cfg, 0);
    TrainResult r = train_toy(model, data, tc);
    const bool ok = r.steps <= 300 && r.final_accuracy == 1.0;
    o.pass = o.pass && ok;
    o.detail += std::string(types) + " acc " + fmt(r.final_accuracy) + " after " + std::to_string(r.steps) +
                " steps (loss " + fmt(r.log.back().loss, 3) + "); ";
  }
  tc.shuffle_frames = true;
  for (const char* types : {"LLGG", "LLLL"}) {
    ModelConfig cfg = preset("tiny");
    cfg.stage_types = types;
    UniFormer model(cfg, 0);
    TrainResult r = train_toy(model, data, tc);
    o.pass = o.pass && r.final_accuracy <= 0.60;
    o.detail += std::string(types) + " shuffled-frame control acc " + fmt(r.final_accuracy) + "; ";
  }
  return o;
}

Outcome a8() {
  std::vector<std::string> broken;
  auto same_plan = [](const SamplingPlan& a, const SamplingPlan& b) {
    if (a.views.size() != b.views.size()) return false;
    for (std::size_t i = 0; i < a.views.size(); ++i)
      if (a.views[i].frames != b.views[i].frames || a.views[i].clip != b.views[i].clip) return false;
    return true;
  };
  if (!same_plan(dense_sample(300, 16, 4, 4, 3), dense_sample(300, 16, 4, 4, 3))) broken.push_back("dense");
  if (!same_plan(uniform_sample(300, 16, UniformMode::random, 9), uniform_sample(300, 16, UniformMode::random, 9)))
    broken.push_back("uniform");
  for (std::size_t s = 0; s < 1000; ++s)
    if (lr_at(s, 1000, 50, 1e-3) != lr_at(s, 1000, 50, 1e-3)) broken.push_back("lr");

  std::mt19937_64 rng(8);
  Tensor x = random_tensor({2, 3, 2, 32, 32}, rng);
  UniFormer m1(preset("tiny"), 21), m2(preset("tiny"), 21);
  Tensor y1 = m1.forward(x, Mode::eval);
  if (!bitwise_equal(y1, m2.forward(x, Mode::eval)) || !bitwise_equal(y1, m1.forward(x, Mode::eval)))
    broken.push_back("eval forward");

  SyntheticDataset data = make_synthetic_dataset(4, 2, {3, 8, 32, 32}, 3);
  TrainConfig tc;
  tc.total_epochs = 5;
  tc.warmup_epochs = 1;
  tc.drop_path_max = 0.1;
  UniFormer t1(preset("tiny"), 2), t2(preset("tiny"), 2);
  auto r1 = train_toy(t1, data, tc), r2 = train_toy(t2, data, tc);
  for (std::size_t i = 0; i < r1.log.size(); ++i)
    if (r1.log[i].loss != r2.log[i].loss || r1.log[i].lr != r2.log[i].lr) {
      broken.push_back("training log");
      break;
    }

  const auto path = std::filesystem::temp_directory_path() / "uniformer_acceptance_params.ufp";
  save_params(t1, path);
  UniFormer restored(preset("tiny"), 99);
  load_params(restored, path);
  std::filesystem::remove(path);
  ParamList pa = t1.parameters(), pb = restored.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (pa[i].name != pb[i].name || !bitwise_equal(*pa[i].tensor, *pb[i].tensor)) {
      broken.push_back("save/load " + pa[i].name);
      break;
    }
  if (!bitwise_equal(t1.forward(x, Mode::eval), restored.forward(x, Mode::eval))) broken.push_back("restored forward");

  std::string detail = "sampling, lr, eval forward, seeded training, save/load";
  if (!broken.empty()) {
    detail = "mismatch:";
    for (const auto& b : broken) detail += " " + b;
  } else {
    detail += " all bit-identical (" + std::to_string(pa.size()) + " tensors round-tripped)";
  }
  return {broken.empty(), detail};
}

Outcome a9() {
  const std::vector<std::pair<std::string, Shape>> expected{{"stem", {64, 8, 56, 56}},
                                                            {"stage2.downsample", {128, 8, 28, 28}},
                                                            {"stage3.downsample", {320, 8, 14, 14}},
                                                            {"stage4.downsample", {512, 8, 7, 7}}};
  Outcome o{true, ""};
  for (const char* name : {"S", "B"}) {
    const ShapeTrace trace = shape_trace(preset(name), {3, 16, 224, 224});
    std::map<std::string, Shape> at(trace.begin(), trace.end());
    std::string chain;
    for (const auto& [layer, shape] : expected) {
      o.pass = o.pass && at[layer] == shape;
      chain += (chain.empty() ? "" : " -> ") + shape_compact(at[layer]);
    }
    // The executed model must agree with the analytic trace.
    UniFormer model(preset(name), 0);
    std::map<std::string, Shape> observed;
    {
      NoGradGuard guard;
      Tensor x = Tensor::zeros({1, 3, 16, 224, 224});
      model.forward(x, Mode::eval, [&](const std::string& layer, const Tensor& t) {
        Shape s(t.shape().begin() + 1, t.shape().end());
        observed[layer] = s;
      });
    }
    for (const auto& [layer, shape] : expected) o.pass = o.pass && observed[layer] == shape;
    o.detail += std::string(name) + ": " + chain + " (trace and forward); ";
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"A1", a1}, {"A2", a2}, {"A3", a3}, {"A4", a4}, {"A5", a5},
      {"A6", a6}, {"A7", a7}, {"A8", a8}, {"A9", a9}};
  std::set<std::string> selected(argv + 1, argv + argc);
  bool all = true;
  for (const auto& [id, run] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    all = all && o.pass;
    while (!o.detail.empty() && (o.detail.back() == ' ' || o.detail.back() == ';')) o.detail.pop_back();
    std::cout << id << " " << (o.pass ? "PASS" : "FAIL") << " " << o.detail << " [" << fmt(secs, 3) << " s]"
              << std::endl;
  }
  return all ? 0 : 1;
}
