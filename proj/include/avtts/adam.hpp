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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "avtts/params.hpp"
#include "avtts/tensor.hpp"

namespace avtts {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  std::uint64_t warmup_steps = 0;  // linear ramp from 0 to lr
};

template <typename T>
class Adam {
 public:
  Adam(const ParamStore<T>& store, AdamConfig cfg) : cfg_(cfg) {
    for (const auto& e : store.entries()) {
      m_.emplace_back(e.value.shape());
      v_.emplace_back(e.value.shape());
    }
  }

  const AdamConfig& config() const noexcept { return cfg_; }
  std::uint64_t steps() const noexcept { return step_; }

  // Learning rate applied at 1-based step t.
  double lr_at(std::uint64_t t) const {
    if (cfg_.warmup_steps == 0) return cfg_.lr;
    return cfg_.lr * std::min(1.0, double(t) / double(cfg_.warmup_steps));
  }

  // Applies one bias-corrected update to every trainable entry. An empty
  // `trainable` means all entries.
  void step(ParamStore<T>& store, const std::vector<Tensor<T>>& grads, const std::vector<bool>& trainable = {}) {
    if (grads.size() != store.size() || m_.size() != store.size())
      throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                       std::to_string(store.size()) + " parameters");
    for (std::size_t i = 0; i < store.size(); ++i)
      if (grads[i].shape() != store.entry(i).value.shape())
        shape_fail("adam_step", store.entry(i).value.shape(), grads[i].shape());
    ++step_;
    const double t = double(step_);
    const T lr = static_cast<T>(lr_at(step_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T c1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, t));
    const T c2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, t));
    const T eps = static_cast<T>(cfg_.epsilon);
    for (std::size_t i = 0; i < store.size(); ++i) {
      if (!trainable.empty() && !trainable[i]) continue;
      auto& p = store.entry(i).value;
      auto& m = m_[i];
      auto& v = v_[i];
      const auto& g = grads[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = b1 * m[j] + (T(1) - b1) * g[j];
        v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
        const T mhat = m[j] / c1;
        const T vhat = v[j] / c2;
        p[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

  std::vector<Tensor<T>>& first_moments() noexcept { return m_; }
  std::vector<Tensor<T>>& second_moments() noexcept { return v_; }
  const std::vector<Tensor<T>>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor<T>>& second_moments() const noexcept { return v_; }
  void set_steps(std::uint64_t s) noexcept { step_ = s; }

 private:
  AdamConfig cfg_;
  std::uint64_t step_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace avtts
