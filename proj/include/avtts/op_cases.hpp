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

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "avtts/gradcheck.hpp"
#include "avtts/ops.hpp"

// Finite-difference cases, one per differentiable op.

namespace avtts {

inline Tensor<double> random_tensor(const Shape& s, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor<double> t(s);
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

// Sum of y weighted by a fixed random tensor, so that every output element
// carries a distinct upstream gradient.
inline Var<double> weighted_sum(Var<double> y, std::uint64_t seed = 99) {
  auto w = y.graph->constant(random_tensor(y.shape(), seed));
  return sum(mul(y, w));
}

struct OpCase {
  const char* name;
  std::vector<std::pair<std::string, Shape>> inputs;
  std::function<Var<double>(Graph<double>&)> build;
  bool training = false;
};

inline std::vector<OpCase> op_cases() {
  auto P = [](Graph<double>& g, const char* n) { return g.param(n); };
  std::vector<OpCase> c;
  c.push_back({"matmul", {{"x", {2, 3, 4}}, {"w", {4, 5}}},
               [=](Graph<double>& g) { return weighted_sum(matmul(P(g, "x"), P(g, "w"))); }});
  c.push_back({"add_broadcast", {{"x", {2, 3, 4}}, {"b", {4}}},
               [=](Graph<double>& g) { return weighted_sum(add(P(g, "x"), P(g, "b"))); }});
  c.push_back({"sub", {{"x", {3, 4}}, {"y", {3, 4}}},
               [=](Graph<double>& g) { return weighted_sum(sub(P(g, "x"), P(g, "y"))); }});
  c.push_back({"mul_broadcast", {{"x", {2, 3, 4}}, {"b", {3, 4}}},
               [=](Graph<double>& g) { return weighted_sum(mul(P(g, "x"), P(g, "b"))); }});
  c.push_back({"scale_reshape", {{"x", {2, 6}}},
               [=](Graph<double>& g) { return weighted_sum(reshape(scale(P(g, "x"), 0.7), {3, 4})); }});
  c.push_back({"outer", {{"v", {5}}}, [=](Graph<double>& g) {
                 return weighted_sum(outer(Tensor<double>({3}, {0.0, 0.5, 1.0}), P(g, "v")));
               }});
  c.push_back({"embedding", {{"t", {6, 4}}}, [=](Graph<double>& g) {
                 return weighted_sum(embedding(P(g, "t"), {0, 3, 3, 5, 1, 0}, {2, 3}));
               }});
  c.push_back({"concat_seq", {{"a", {2, 1, 4}}, {"b", {2, 3, 4}}},
               [=](Graph<double>& g) { return weighted_sum(concat(P(g, "a"), P(g, "b"), 1)); }});
  c.push_back({"concat_last", {{"a", {2, 3, 4}}, {"b", {2, 3, 2}}},
               [=](Graph<double>& g) { return weighted_sum(concat(P(g, "a"), P(g, "b"), 2)); }});
  c.push_back({"slice", {{"x", {2, 5, 3}}},
               [=](Graph<double>& g) { return weighted_sum(slice(P(g, "x"), 1, 1, 3)); }});
  c.push_back({"expand", {{"x", {2, 4}}}, [=](Graph<double>& g) { return weighted_sum(expand(P(g, "x"), 3)); }});
  c.push_back({"gather_rows", {{"x", {2, 3, 4}}}, [=](Graph<double>& g) {
                 return weighted_sum(gather_rows(P(g, "x"), {0, 0, 1, 2, 2, 2, 1, 1, -1, -1, 2, -1}, 6));
               }});
  c.push_back({"mask_rows", {{"x", {2, 3, 4}}}, [=](Graph<double>& g) {
                 return weighted_sum(mask_rows(P(g, "x"), Tensor<double>({2, 3}, {1, 1, 0, 1, 0, 0})));
               }});
  c.push_back({"conv1d_k3", {{"x", {2, 5, 3}}, {"w", {3, 3, 4}}},
               [=](Graph<double>& g) { return weighted_sum(conv1d(P(g, "x"), P(g, "w"))); }});
  c.push_back({"conv1d_k1", {{"x", {2, 5, 3}}, {"w", {1, 3, 4}}},
               [=](Graph<double>& g) { return weighted_sum(conv1d(P(g, "x"), P(g, "w"))); }});
  c.push_back({"layer_norm", {{"x", {2, 3, 5}}, {"g", {5}}, {"b", {5}}}, [=](Graph<double>& g) {
                 return weighted_sum(layer_norm(P(g, "x"), P(g, "g"), P(g, "b")));
               }});
  c.push_back({"softmax", {{"x", {3, 5}}}, [=](Graph<double>& g) { return weighted_sum(softmax(P(g, "x"))); }});
  c.push_back({"attention", {{"q", {2, 4, 6}}, {"k", {2, 4, 6}}, {"v", {2, 4, 6}}}, [=](Graph<double>& g) {
                 Tensor<double> mask({2, 4}, {1, 1, 1, 0, 1, 1, 0, 0});
                 return weighted_sum(attention(P(g, "q"), P(g, "k"), P(g, "v"), mask, 2));
               }});
  c.push_back({"relu", {{"x", {4, 5}}}, [=](Graph<double>& g) { return weighted_sum(relu(P(g, "x"))); }});
  c.push_back({"dropout", {{"x", {4, 5}}}, [=](Graph<double>& g) { return weighted_sum(dropout(P(g, "x"), 0.5)); },
               true});
  c.push_back({"masked_mse", {{"x", {2, 3, 4}}}, [=](Graph<double>& g) {
                 return masked_mse(P(g, "x"), random_tensor({2, 3, 4}, 41), Tensor<double>({2, 3}, {1, 1, 1, 1, 0, 0}));
               }});
  c.push_back({"masked_mae", {{"x", {2, 3, 4}}}, [=](Graph<double>& g) {
                 return masked_mae(P(g, "x"), random_tensor({2, 3, 4}, 42), Tensor<double>({2, 3}, {1, 1, 1, 1, 0, 0}));
               }});
  return c;
}

// Checks one op case against central differences on seeded random inputs.
inline GradCheckResult check_op_case(const OpCase& c) {
  ParamStore<double> store;
  std::uint64_t seed = 100;
  for (const auto& [name, shape] : c.inputs) store.add(name, random_tensor(shape, seed++), ParamGroup::backbone);
  GradCheckOptions opt;
  opt.training = c.training;
  return check_gradients(store, c.build, opt);
}

}  // namespace avtts
