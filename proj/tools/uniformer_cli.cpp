// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "uniformer/analysis.hpp"
#include "uniformer/gradcheck.hpp"
#include "uniformer/model.hpp"
#include "uniformer/pipeline.hpp"
#include "uniformer/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace uniformer;

namespace {

Shape parse_shape(const std::string& text) {
  Shape s;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != part.size() || v == 0) throw Error("bad shape \"" + text + "\", expected e.g. 3x16x224x224");
    s.push_back(v);
  }
  if (s.empty()) throw Error("empty shape");
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

int cmd_describe(const std::string& config_name) {
  const ModelConfig c = load_config(config_name);
  std::cout << config_to_json(c) << "\n";
  const auto rates = c.drop_path_rates();
  std::size_t block = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    const BlockConfig b = c.block_config(s);
    std::cout << "stage" << s + 1 << ": " << block_kind_name(b.kind) << " x" << c.stage_depths[s]
              << ", channels " << b.channels << ", heads " << b.heads();
    if (b.kind == BlockKind::local) {
      std::cout << ", tube " << b.tube.t << "x" << b.tube.h << "x" << b.tube.w;
    }
    std::cout << ", drop-path";
    for (std::size_t d = 0; d < c.stage_depths[s]; ++d) std::cout << " " << rates[block++];
    std::cout << "\n";
  }
  std::cout << "params: " << count_params(c) << "\n";
  return 0;
}

int cmd_params(const std::string& config_name, bool built) {
  const ModelConfig c = load_config(config_name);
  std::cout << "params: " << count_params(c) << "\n";
  if (built) {
    UniFormer model(c);
    std::cout << "built: " << count_params(model) << "\n";
    for (auto& slot : model.parameters()) {
      std::cout << slot.name << " " << shape_compact(slot.tensor->shape()) << (slot.trainable ? "" : " (buffer)") << "\n";
    }
  }
  return 0;
}

int cmd_flops(const std::string& config_name, const std::string& input, std::size_t views, const std::string& csv) {
  const CostReport r = count_flops(load_config(config_name), parse_shape(input), views);
  std::cout << r.to_text();
  if (!csv.empty()) write_text(csv, r.to_csv());
  return 0;
}

int cmd_gradcheck(const std::string& config_name, std::uint64_t seed, const std::string& input, std::size_t samples,
                  double tolerance) {
  UniFormer model(load_config(config_name), seed);
  Shape shape = parse_shape(input);
  Rng rng(seed + 1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) v = u(rng);
  std::vector<Tensor> inputs{Tensor(shape, std::move(values))};
  std::vector<std::string> names{"input"};
  for (auto& slot : model.parameters()) {
    if (!slot.trainable) continue;
    inputs.push_back(*slot.tensor);
    names.push_back(slot.name);
  }
  auto f = [&model](const std::vector<Tensor>& in) {
    UniFormer local = model;
    ParamList ps = local.parameters();
    std::size_t i = 1;
    for (auto& slot : ps) {
      if (slot.trainable) *slot.tensor = in[i++];
      else *slot.tensor = slot.tensor->clone();
    }
    return local.forward(in[0], Mode::train);
  };
  GradcheckOptions opts;
  opts.tolerance = tolerance;
  opts.max_checks_per_input = samples;
  opts.seed = seed;
  const GradcheckReport rep = gradcheck(f, inputs, opts, names);
  std::cout << rep.summary() << "\n";
  if (!rep.passed) throw Error("gradcheck failed: max rel err " + std::to_string(rep.max_rel_error()));
  return 0;
}

struct SampleArgs {
  std::string protocol = "dense";
  std::size_t video_len = 0;
  std::size_t frames = 16;
  std::size_t stride = 4;
  std::size_t clips = 1;
  std::size_t crops = 1;
  std::string mode = "center";
  std::uint64_t seed = 0;
};

int cmd_sample(const SampleArgs& a) {
  SamplingPlan plan;
  if (a.protocol == "dense") {
    plan = dense_sample(a.video_len, a.frames, a.stride, a.clips, a.crops);
  } else {
    if (a.mode != "center" && a.mode != "random") throw Error("mode must be center or random");
    plan = uniform_sample(a.video_len, a.frames, a.mode == "center" ? UniformMode::center : UniformMode::random, a.seed);
  }
  plan.validate();
  std::cout << "clip,crop,frames\n";
  for (const auto& v : plan.views) {
    std::cout << v.clip << "," << v.crop << ",";
    for (std::size_t i = 0; i < v.frames.size(); ++i) std::cout << (i ? " " : "") << v.frames[i];
    std::cout << "\n";
  }
  return 0;
}

struct TrainArgs {
  std::string config = "tiny";
  std::string train_config = "default";
  std::uint64_t seed = 0;
  std::string log;
  std::string save;
  std::size_t classes = 4;
  std::size_t clips_per_class = 2;
  std::string clip_shape = "3x8x32x32";
};

int cmd_train(const TrainArgs& a, bool seed_given) {
  TrainConfig tc = load_train_config(a.train_config);
  if (seed_given) tc.seed = a.seed;
  ModelConfig mc = load_config(a.config);
  UniFormer model(mc, tc.seed);
  const SyntheticDataset data = make_synthetic_dataset(a.classes, a.clips_per_class, parse_shape(a.clip_shape), tc.seed);
  std::ofstream log;
  if (!a.log.empty()) {
    log.open(a.log);
    if (!log) throw Error("cannot write " + a.log);
  }
  const TrainResult r = train_toy(model, data, tc, [&](const StepLog& s) {
    if (log.is_open()) log << format_step(s) << "\n";
  });
  if (!a.save.empty()) save_params(model, a.save);
  std::cout << "steps: " << r.steps << "\n"
            << "final_loss: " << r.log.back().loss << "\n"
            << "accuracy: " << r.final_accuracy << "\n";
  return 0;
}

struct EvalArgs {
  std::string config;
  std::string params;
  std::string input_dir;
  std::size_t clips = 1;
  std::size_t crops = 1;
  std::size_t frames = 16;
  std::size_t stride = 4;
  std::size_t short_side = 256;
  std::size_t crop = 224;
  std::string labels;
};

std::map<std::string, std::size_t> read_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open labels " + path);
  std::map<std::string, std::size_t> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw Error("labels line without a comma: " + line);
    try {
      out[line.substr(0, comma)] = std::stoul(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw Error("bad label in line: " + line);
    }
  }
  return out;
}

int cmd_eval(const EvalArgs& a) {
  UniFormer model(load_config(a.config));
  load_params(model, a.params);
  if (!fs::is_directory(a.input_dir)) throw Error("not a directory: " + a.input_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(a.input_dir))
    if (e.is_regular_file() && e.path().extension() == ".uft") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error("no .uft videos in " + a.input_dir);
  const auto labels = a.labels.empty() ? std::map<std::string, std::size_t>{} : read_labels(a.labels);

  EvalOptions opt{a.frames, a.stride, a.clips, a.crops, {a.short_side, a.crop}};
  std::size_t correct = 0, scored = 0;
  std::cout << "file,prediction,score,views\n";
  for (const auto& f : files) {
    const VideoPrediction p = predict_video(model, load_tensor(f).to(model.dtype()), opt);
    std::cout << f.filename().string() << "," << p.label << "," << p.scores.values()[p.label] << "," << p.views << "\n";
    if (auto it = labels.find(f.filename().string()); it != labels.end()) {
      ++scored;
      correct += it->second == p.label;
    }
  }
  if (scored) std::cout << "accuracy: " << static_cast<double>(correct) / static_cast<double>(scored) << "\n";
  return 0;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UniFormer reference implementation: model analysis, gradient checks, sampling and toy training"};
  app.require_subcommand(1);

  std::string config = "S";
  auto* describe = app.add_subcommand("describe", "Print a configuration and its stage layout");
  describe->add_option("--config", config, "Preset name or JSON file")->required();

  bool built = false;
  auto* params = app.add_subcommand("params", "Count learnable parameters");
  params->add_option("--config", config, "Preset name or JSON file")->required();
  params->add_flag("--built", built, "Also build the model and list every tensor");

  std::string input = "3x16x224x224", csv;
  std::size_t views = 1;
  auto* flops = app.add_subcommand("flops", "Per-layer FLOP and parameter report");
  flops->add_option("--config", config, "Preset name or JSON file")->required();
  flops->add_option("--input", input, "Input shape CxTxHxW or BxCxTxHxW")->capture_default_str();
  flops->add_option("--views", views, "Test views (clips x crops)")->capture_default_str();
  flops->add_option("--csv", csv, "Write the report as CSV");

  std::uint64_t seed = 0;
  std::string gc_input = "1x3x2x32x32";
  std::size_t samples = 0;
  double tolerance = 1e-4;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the full model");
  grad->add_option("--config", config, "Preset name or JSON file")->required();
  grad->add_option("--seed", seed, "Initialisation and input seed")->capture_default_str();
  grad->add_option("--input", gc_input, "Input shape BxCxTxHxW")->capture_default_str();
  grad->add_option("--samples", samples, "Coordinates per tensor (0 = all)")->capture_default_str();
  grad->add_option("--tolerance", tolerance, "Relative error bound")->capture_default_str();

  SampleArgs sa;
  auto* sample = app.add_subcommand("sample-indices", "Print frame indices per view");
  sample->add_option("--protocol", sa.protocol, "dense or uniform")
      ->check(CLI::IsMember({"dense", "uniform"}))
      ->capture_default_str();
  sample->add_option("--video-len", sa.video_len, "Frames in the video")->required();
  sample->add_option("--frames", sa.frames, "Frames per clip (segments for uniform)")->capture_default_str();
  sample->add_option("--stride", sa.stride, "Dense sampling stride")->capture_default_str();
  sample->add_option("--clips", sa.clips, "Dense clips")->capture_default_str();
  sample->add_option("--crops", sa.crops, "Spatial crops per clip")->capture_default_str();
  sample->add_option("--mode", sa.mode, "Uniform pick: center or random")->capture_default_str();
  sample->add_option("--seed", sa.seed, "Seed for random uniform picks")->capture_default_str();

  TrainArgs ta;
  auto* train = app.add_subcommand("train-toy", "Train on the synthetic motion dataset");
  train->add_option("--config", ta.config, "Preset name or JSON file")->capture_default_str();
  train->add_option("--train-config", ta.train_config, "Training JSON file or 'default'")->capture_default_str();
  auto* seed_opt = train->add_option("--seed", ta.seed, "Overrides the training config seed");
  train->add_option("--log", ta.log, "Write step,lr,loss,acc lines here");
  train->add_option("--save", ta.save, "Save trained parameters");
  train->add_option("--classes", ta.classes, "Number of classes (even)")->capture_default_str();
  train->add_option("--clips-per-class", ta.clips_per_class, "Clips per class")->capture_default_str();
  train->add_option("--clip-shape", ta.clip_shape, "Clip shape CxTxHxW")->capture_default_str();

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Multi-view prediction for stored video tensors");
  eval->add_option("--config", ea.config, "Preset name or JSON file")->required();
  eval->add_option("--params", ea.params, "Parameter file")->required();
  eval->add_option("--input-dir", ea.input_dir, "Directory of [3,T,H,W] .uft videos")->required();
  eval->add_option("--clips", ea.clips, "Temporal clips")->capture_default_str();
  eval->add_option("--crops", ea.crops, "Spatial crops (1 or 3)")->capture_default_str();
  eval->add_option("--frames", ea.frames, "Frames per clip")->capture_default_str();
  eval->add_option("--stride", ea.stride, "Frame stride")->capture_default_str();
  eval->add_option("--short-side", ea.short_side, "Resize the shorter side to this")->capture_default_str();
  eval->add_option("--crop", ea.crop, "Square crop size")->capture_default_str();
  eval->add_option("--labels", ea.labels, "CSV of file,label for accuracy");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << one_line(e.what()) << std::endl;
    return e.get_exit_code() ? e.get_exit_code() : 2;
  }

  try {
    if (*describe) return cmd_describe(config);
    if (*params) return cmd_params(config, built);
    if (*flops) return cmd_flops(config, input, views, csv);
    if (*grad) return cmd_gradcheck(config, seed, gc_input, samples, tolerance);
    if (*sample) return cmd_sample(sa);
    if (*train) return cmd_train(ta, seed_opt->count() > 0);
    if (*eval) return cmd_eval(ea);
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << std::endl;
    return 1;
  }
  return 0;
}
