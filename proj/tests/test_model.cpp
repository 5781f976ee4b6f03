// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "test_util.hpp"
#include "uniformer/gradcheck.hpp"
#include "uniformer/model.hpp"
#include "uniformer/ops.hpp"
#include "uniformer/tensor_io.hpp"

using namespace uniformer;
using uniformer::testing::max_abs_diff;
using uniformer::testing::random_tensor;

namespace {

std::vector<std::pair<std::string, Shape>> run_trace(UniFormer& m, const Tensor& x) {
  std::vector<std::pair<std::string, Shape>> out;
  m.forward(x, Mode::eval, [&](const std::string& name, const Tensor& t) { out.emplace_back(name, t.shape()); });
  return out;
}

Shape find(const std::vector<std::pair<std::string, Shape>>& trace, const std::string& name) {
  for (const auto& [n, s] : trace)
    if (n == name) return s;
  return {};
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("uniformer_test_" + name);
}

}  // namespace

TEST_CASE("config presets and validation") {
  ModelConfig s = preset("S");
  CHECK(s.stage_channels == std::array<std::size_t, 4>{64, 128, 320, 512});
  CHECK(s.stage_depths == std::array<std::size_t, 4>{3, 4, 8, 3});
  CHECK(s.stage_types == "LLGG");
  CHECK(preset("B").stage_depths == std::array<std::size_t, 4>{5, 8, 20, 7});
  CHECK(preset("S-dagger").stage_depths == std::array<std::size_t, 4>{3, 5, 9, 3});
  CHECK(preset("L").stage_channels == std::array<std::size_t, 4>{128, 192, 448, 640});
  CHECK(preset("L").stage_depths == std::array<std::size_t, 4>{5, 10, 24, 7});
  CHECK_THROWS_AS(preset("XL"), Error);

  CHECK(s.block_config(2).heads() == 5);
  CHECK(s.block_config(3).heads() == 8);
  CHECK(s.block_config(0).kind == BlockKind::local);

  ModelConfig bad = s;
  bad.stage_types = "LLXG";
  CHECK_THROWS_AS(bad.validate(), Error);
  bad.stage_types = "LLG";
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = s;
  bad.head_dim = 48;  // divides neither 320 nor 512
  CHECK_THROWS_AS(bad.validate(), Error);
  bad.stage_types = "LLLL";
  CHECK_NOTHROW(bad.validate());
  bad = s;
  bad.overlap_patch_embed = true;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("config json round trip") {
  ModelConfig c = preset("tiny");
  c.stage_types = "LGLG";
  c.drop_path_max = 0.25;
  c.drop_path_schedule = DropPathSchedule::constant;
  CHECK(parse_config(config_to_json(c)) == c);
  CHECK(parse_config(R"({"num_classes": 174})").num_classes == 174);
  CHECK_THROWS_AS(parse_config(R"({"num_klasses": 174})"), Error);
  CHECK_THROWS_AS(parse_config(R"({"stage_types": "LLZG"})"), Error);
  CHECK_THROWS_AS(parse_config(R"({"stage_depths": [1, 2]})"), Error);
  CHECK_THROWS_AS(parse_config("not json"), Error);

  auto path = temp_path("config.json");
  std::ofstream(path) << config_to_json(c);
  CHECK(load_config(path.string()) == c);
  CHECK(load_config("B") == preset("B"));
  CHECK_THROWS_AS(load_config("/nonexistent/cfg.json"), Error);
}

TEST_CASE("drop-path schedule") {
  ModelConfig c = preset("S");
  c.drop_path_max = 0.1;
  auto rates = c.drop_path_rates();
  REQUIRE(rates.size() == 18);
  CHECK(rates.front() == 0.0);
  CHECK(rates.back() == 0.1);
  for (std::size_t i = 1; i < rates.size(); ++i) CHECK(rates[i] >= rates[i - 1]);
  c.drop_path_schedule = DropPathSchedule::constant;
  for (double r : c.drop_path_rates()) CHECK(r == 0.1);
  ModelConfig one = preset("tiny");
  one.stage_depths = {1, 1, 1, 1};
  one.drop_path_max = 0.2;
  CHECK(one.drop_path_rates().back() == 0.2);
}

TEST_CASE("stage-type strings select block kinds") {
  ModelConfig c = preset("tiny");
  c.head_dim = 8;
  for (std::string types : {"LLLL", "LLGG", "GGGG", "LGLG"}) {
    c.stage_types = types;
    UniFormer m(c, 1);
    for (std::size_t s = 0; s < 4; ++s) {
      CHECK(m.stages[s].blocks[0].config().kind == (types[s] == 'G' ? BlockKind::global : BlockKind::local));
    }
  }
}

TEST_CASE("forward shapes follow the stride arithmetic") {
  UniFormer tiny(preset("tiny"), 2);
  std::mt19937_64 rng(3);
  auto trace = run_trace(tiny, random_tensor({2, 3, 4, 64, 32}, rng));
  CHECK(find(trace, "stem") == Shape{2, 8, 2, 16, 8});
  CHECK(find(trace, "stage2.downsample") == Shape{2, 16, 2, 8, 4});
  CHECK(find(trace, "stage3.block0") == Shape{2, 32, 2, 4, 2});
  CHECK(find(trace, "stage4.block0") == Shape{2, 64, 2, 2, 1});
  CHECK(find(trace, "head") == Shape{2, 4});

  CHECK_THROWS_AS(tiny.forward(random_tensor({1, 3, 3, 32, 32}, rng), Mode::eval), Error);
  CHECK_THROWS_AS(tiny.forward(random_tensor({1, 3, 2, 48, 32}, rng), Mode::eval), Error);
  CHECK_THROWS_AS(tiny.forward(random_tensor({1, 1, 2, 32, 32}, rng), Mode::eval), Error);
}

TEST_CASE("preset S forward trace on a reduced input") {
  UniFormer s(preset("S"), 5);
  std::mt19937_64 rng(6);
  auto trace = run_trace(s, random_tensor({1, 3, 4, 64, 64}, rng));
  CHECK(find(trace, "stem") == Shape{1, 64, 2, 16, 16});
  CHECK(find(trace, "stage2.block3") == Shape{1, 128, 2, 8, 8});
  CHECK(find(trace, "stage3.block7") == Shape{1, 320, 2, 4, 4});
  CHECK(find(trace, "stage4.block2") == Shape{1, 512, 2, 2, 2});
  CHECK(find(trace, "head") == Shape{1, 400});
}

TEST_CASE("image mode") {
  ModelConfig c = preset("tiny");
  c.input_mode = InputMode::image;
  auto stem = patch_embed_specs(c, 0);
  REQUIRE(stem.size() == 1);
  CHECK(stem[0].kernel == Extent3{1, 4, 4});
  CHECK(stem[0].stride == Extent3{1, 4, 4});
  CHECK(c.block_config(0).tube == Extent3{1, 5, 5});
  CHECK(c.block_config(0).dpe_kernel == Extent3{1, 3, 3});
  UniFormer m(c, 7);
  std::mt19937_64 rng(8);
  CHECK(m.forward(random_tensor({2, 3, 1, 32, 32}, rng), Mode::eval).shape() == Shape{2, 4});
  CHECK_THROWS_AS(m.forward(random_tensor({2, 3, 2, 32, 32}, rng), Mode::eval), Error);

  c.overlap_patch_embed = true;
  auto overlap = patch_embed_specs(c, 0);
  CHECK(overlap.size() == 2);
  UniFormer o(c, 9);
  auto trace = run_trace(o, random_tensor({1, 3, 1, 64, 32}, rng));
  CHECK(find(trace, "stem") == Shape{1, 8, 1, 16, 8});
  CHECK(find(trace, "stage4.downsample") == Shape{1, 64, 1, 2, 1});
}

TEST_CASE("eval-mode forward is deterministic") {
  UniFormer m(preset("tiny"), 10);
  std::mt19937_64 rng(11);
  Tensor x = random_tensor({2, 3, 2, 32, 32}, rng);
  Tensor a = m.forward(x, Mode::eval);
  Tensor b = m.forward(x, Mode::eval);
  CHECK(max_abs_diff(a, b) == 0.0);
  UniFormer twin(preset("tiny"), 10);
  CHECK(max_abs_diff(twin.forward(x, Mode::eval), a) == 0.0);
}

TEST_CASE("tiny model gradcheck (sampled coordinates)") {
  ModelConfig c = preset("tiny");
  UniFormer m(c, 12);
  std::mt19937_64 rng(13);
  ParamList slots = m.parameters();
  std::vector<Tensor> inputs{random_tensor({1, 3, 2, 32, 32}, rng)};
  std::vector<std::string> names{"input"};
  for (auto& s : slots) {
    if (!s.trainable) continue;
    inputs.push_back(*s.tensor);
    names.push_back(s.name);
  }
  auto f = [&m](const std::vector<Tensor>& in) {
    UniFormer local = m;
    ParamList ps = local.parameters();
    std::size_t i = 1;
    for (auto& s : ps) {
      if (!s.trainable) continue;
      *s.tensor = in[i++];
    }
    for (auto& s : ps)
      if (!s.trainable) *s.tensor = s.tensor->clone();
    return local.forward(in[0], Mode::train);
  };
  auto rep = gradcheck(f, inputs, {.tolerance = 1e-4, .max_checks_per_input = 6, .seed = 1}, names);
  CHECK_MESSAGE(rep.passed, rep.summary());
}

TEST_CASE("inflate_2d") {
  std::mt19937_64 rng(14);
  Tensor w2 = random_tensor({4, 3, 3, 3}, rng);
  CHECK(max_abs_diff(reshape(inflate_2d(w2, 1), {4, 3, 3, 3}), w2) == 0.0);
  CHECK_THROWS_AS(inflate_2d(w2, 0), Error);
  // Power-of-two extents sum back exactly. Other extents are exact in real
  // arithmetic but w / kt rounds, so allow one ulp.
  for (std::size_t kt : {2u, 4u}) {
    Tensor w3 = inflate_2d(w2, kt);
    CHECK(w3.shape() == Shape{4, 3, kt, 3, 3});
    CAPTURE(kt);
    CHECK(max_abs_diff(sum(w3, {2}), w2) == 0.0);
  }
  for (std::size_t kt : {3u, 5u}) {
    Tensor total = sum(inflate_2d(w2, kt), {2});
    for (std::size_t i = 0; i < w2.numel(); ++i) {
      const double w = w2.values()[i];
      CHECK(std::abs(total.values()[i] - w) <= std::nextafter(std::abs(w), INFINITY) - std::abs(w));
    }
  }

  // Response preservation on a temporally replicated image.
  Tensor image = random_tensor({1, 3, 1, 9, 9}, rng);
  Conv3dSpec s2;
  s2.in_channels = 3;
  s2.out_channels = 4;
  s2.kernel = {1, 3, 3};
  s2.padding = {0, 1, 1};
  Tensor response = conv3d(image, s2, reshape(w2, {4, 3, 1, 3, 3}));
  for (std::size_t kt : {1u, 2u, 3u, 5u}) {
    const std::size_t T = 8;
    Tensor video = expand(image, {1, 3, T, 9, 9});
    Conv3dSpec s3 = s2;
    s3.kernel.t = kt;
    s3.padding.t = kt / 2;
    Tensor out = conv3d(video, s3, inflate_2d(w2, kt));
    for (std::size_t t = kt / 2; t + kt / 2 < T && t + kt - kt / 2 <= T; ++t) {
      CHECK(max_abs_diff(narrow(out, 2, t, 1), response) < 1e-12);
    }
  }
}

TEST_CASE("parameter save and load") {
  std::mt19937_64 rng(15);
  Tensor x = random_tensor({1, 3, 2, 32, 32}, rng);
  UniFormer a(preset("tiny"), 16);
  a.forward(x, Mode::train);  // moves the BN running statistics off their defaults
  auto path = temp_path("params.ufp");
  save_params(a, path);

  UniFormer b(preset("tiny"), 99);
  CHECK(max_abs_diff(a.forward(x, Mode::eval), b.forward(x, Mode::eval)) > 0.0);
  load_params(b, path);
  CHECK(max_abs_diff(a.forward(x, Mode::eval), b.forward(x, Mode::eval)) == 0.0);
  ParamList pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(max_abs_diff(*pa[i].tensor, *pb[i].tensor) == 0.0);

  SUBCASE("shape mismatch names the parameter") {
    ModelConfig wide = preset("tiny");
    wide.num_classes = 5;
    UniFormer w(wide, 1);
    try {
      load_params(w, path);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("head.bias") != std::string::npos);
    }
  }
  SUBCASE("architecture mismatch") {
    ModelConfig g = preset("tiny");
    g.stage_types = "LLLL";
    UniFormer w(g, 1);
    CHECK_THROWS_AS(load_params(w, path), Error);
  }
  SUBCASE("f32 file widens exactly into an f64 model") {
    UniFormer f32(preset("tiny"), 17, DType::f32);
    auto p32 = temp_path("params32.ufp");
    save_params(f32, p32);
    UniFormer f64(preset("tiny"), 18);
    load_params(f64, p32);
    CHECK(f64.dtype() == DType::f64);
    ParamList s32 = f32.parameters(), s64 = f64.parameters();
    for (std::size_t i = 0; i < s32.size(); ++i) {
      CHECK(s64[i].tensor->dtype() == DType::f64);
      auto v32 = s32[i].tensor->values();
      auto v64 = s64[i].tensor->values();
      for (std::size_t k = 0; k < v32.size(); ++k) {
        CHECK(v64[k] == static_cast<double>(static_cast<float>(v32[k])));
      }
    }
  }
}

TEST_CASE("parameter counts") {
  UniFormer tiny(preset("tiny"), 0);
  std::size_t by_hand = 0;
  for (auto& s : tiny.parameters())
    if (s.trainable) by_hand += s.tensor->numel();
  CHECK(count_params(tiny) == by_hand);
  // The running statistics are present but not counted.
  std::size_t buffers = 0;
  for (auto& s : tiny.parameters())
    if (!s.trainable) buffers += s.tensor->numel();
  CHECK(buffers == 2 * 2 * (8 + 16));
}
