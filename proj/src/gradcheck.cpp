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

#include "uniformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "uniformer/ops.hpp"

namespace uniformer {

double GradcheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& r : inputs) worst = std::max(worst, r.max_rel_error);
  return worst;
}

std::string GradcheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " max_rel_err=" << max_rel_error() << " tol=" << tolerance;
  if (non_finite) os << " non-finite values encountered";
  for (const auto& r : inputs) {
    os << "\n  " << r.name << ": checked=" << r.checked << " max_rel=" << r.max_rel_error
       << " max_abs=" << r.max_abs_error << " worst@" << r.worst_index
       << (r.finite ? "" : " NON-FINITE");
  }
  return os.str();
}

namespace {

double scalarize(const Tensor& y, const Tensor& weights) {
  if (y.numel() == 1) return y.item();
  double acc = 0.0;
  auto yv = y.values();
  auto wv = weights.values();
  for (std::size_t i = 0; i < yv.size(); ++i) acc += yv[i] * wv[i];
  return acc;
}

}  // namespace

GradcheckReport gradcheck(const TensorFunction& f, const std::vector<Tensor>& inputs,
                          const GradcheckOptions& options, const std::vector<std::string>& names) {
  for (const Tensor& in : inputs) {
    if (in.dtype() != DType::f64) throw Error("gradcheck needs f64 inputs");
    if (!in.is_leaf()) throw Error("gradcheck inputs must be leaf tensors");
  }
  std::vector<Tensor> args = inputs;
  std::vector<bool> previous_flags;
  for (Tensor& in : args) {
    previous_flags.push_back(in.requires_grad());
    in.set_requires_grad(true);
    in.zero_grad();
  }

  std::mt19937_64 rng(options.seed);
  GradcheckReport report;
  report.tolerance = options.tolerance;

  Tensor y = f(args);
  Tensor weights;
  if (y.numel() != 1) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> w(y.numel());
    for (double& v : w) v = normal(rng);
    weights = Tensor(y.shape(), std::move(w));
  }
  Tensor loss = y.numel() == 1 ? y : sum(y * weights);
  loss.backward();

  auto evaluate = [&]() {
    NoGradGuard guard;
    return scalarize(f(args), weights);
  };

  for (std::size_t k = 0; k < args.size(); ++k) {
    Tensor& in = args[k];
    InputGradReport r;
    r.name = k < names.size() ? names[k] : "input" + std::to_string(k);
    std::vector<double> analytic = in.has_grad()
                                       ? std::vector<double>(in.grad().begin(), in.grad().end())
                                       : std::vector<double>(in.numel(), 0.0);
    std::vector<std::size_t> coords(in.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_checks_per_input > 0 && coords.size() > options.max_checks_per_input) {
      const auto largest = static_cast<std::size_t>(
          std::max_element(analytic.begin(), analytic.end(),
                           [](double a, double b) { return std::abs(a) < std::abs(b); }) -
          analytic.begin());
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_checks_per_input);
      if (std::find(coords.begin(), coords.end(), largest) == coords.end()) coords[0] = largest;
    }
    auto values = in.mutable_values();
    for (std::size_t idx : coords) {
      const double original = values[idx];
      values[idx] = original + options.step;
      const double up = evaluate();
      values[idx] = original - options.step;
      const double down = evaluate();
      values[idx] = original;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[idx];
      ++r.checked;
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        r.finite = false;
        report.non_finite = true;
        continue;
      }
      const double abs_err = std::abs(a - numeric);
      const double rel_err =
          abs_err / std::max({std::abs(a), std::abs(numeric), options.magnitude_floor});
      r.max_abs_error = std::max(r.max_abs_error, abs_err);
      if (rel_err >= r.max_rel_error) {
        r.max_rel_error = rel_err;
        r.worst_index = idx;
      }
    }
    report.inputs.push_back(std::move(r));
  }

  for (std::size_t k = 0; k < args.size(); ++k) {
    args[k].zero_grad();
    args[k].set_requires_grad(previous_flags[k]);
  }
  report.passed = !report.non_finite && report.max_rel_error() < options.tolerance;
  return report;
}

}  // namespace uniformer
