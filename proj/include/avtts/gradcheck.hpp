// Copyright (c) 2026 The avtts Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Central finite-difference oracle for reverse-mode gradients. Evaluation
// rebuilds the graph from scratch for every perturbed value, so it shares
// nothing with the backward closures it checks.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>

#include "avtts/graph.hpp"
#include "avtts/params.hpp"
#include "avtts/rng.hpp"

namespace avtts {

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor so that near-zero gradients are compared absolutely.
  // Scaled by max(1, |loss|): central differences carry roughly
  // k * eps * |loss| / step of roundoff, with k growing with the number of
  // accumulated terms (k ~ 10 observed on full-model losses).
  double floor = 1e-5;
  // 0 checks every element; otherwise a seeded sample per tensor.
  std::size_t samples_per_tensor = 0;
  bool training = false;
  std::uint64_t seed = 7;
  std::vector<bool> trainable;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "name[index]"
  std::size_t checked = 0;

  bool passed(double tol) const { return checked > 0 && max_rel_error < tol; }
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// `loss` builds a scalar from a fresh graph bound to `store`.
inline GradCheckResult check_gradients(ParamStore<double>& store,
                                       const std::function<Var<double>(Graph<double>&)>& loss,
                                       const GradCheckOptions& opt = {}) {
  auto evaluate = [&]() {
    Graph<double> g(&store, opt.training, opt.seed, opt.trainable);
    return loss(g).value().item();
  };
  std::vector<Tensor<double>> analytic;
  double floor = opt.floor;
  {
    Graph<double> g(&store, opt.training, opt.seed, opt.trainable);
    Var<double> l = loss(g);
    floor *= std::max(1.0, std::abs(l.value().item()));
    analytic = g.backward(l);
  }
  GradCheckResult res;
  Rng rng(opt.seed ^ 0x5eedULL);
  for (std::size_t p = 0; p < store.size(); ++p) {
    if (!opt.trainable.empty() && !opt.trainable[p]) continue;
    auto& tensor = store.entry(p).value;
    std::vector<std::size_t> idx;
    if (opt.samples_per_tensor == 0 || opt.samples_per_tensor >= tensor.size()) {
      for (std::size_t i = 0; i < tensor.size(); ++i) idx.push_back(i);
    } else {
      for (std::size_t s = 0; s < opt.samples_per_tensor; ++s)
        idx.push_back(static_cast<std::size_t>(rng.bits() % tensor.size()));
    }
    for (std::size_t i : idx) {
      const double saved = tensor[i];
      tensor[i] = saved + opt.step;
      const double fp = evaluate();
      tensor[i] = saved - opt.step;
      const double fm = evaluate();
      tensor[i] = saved;
      const double numeric = (fp - fm) / (2.0 * opt.step);
      const double err = relative_error(analytic[p][i], numeric, floor);
      ++res.checked;
      if (err > res.max_rel_error || res.worst.empty()) {
        res.max_rel_error = std::max(res.max_rel_error, err);
        if (err >= res.max_rel_error) res.worst = store.entry(p).name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

}  // namespace avtts
