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

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "avtts/rng.hpp"
#include "avtts/tensor.hpp"

namespace avtts {

enum class InitScheme { xavier_uniform, zeros, ones, embedding_normal };

// Backbone tensors are frozen in the second training stage.
enum class ParamGroup { backbone, prosody };

inline const char* group_name(ParamGroup g) { return g == ParamGroup::backbone ? "backbone" : "prosody"; }

// Fan sizes follow the usual convention: the last axis is fan-out, the
// product of all other axes is fan-in, and for 3-D convolution kernels
// [K, Cin, Cout] the receptive field K multiplies both.
inline std::pair<double, double> fans(const Shape& shape) {
  if (shape.size() == 1) return {double(shape[0]), double(shape[0])};
  if (shape.size() == 2) return {double(shape[0]), double(shape[1])};
  double receptive = 1;
  for (std::size_t i = 0; i + 2 < shape.size(); ++i) receptive *= double(shape[i]);
  return {receptive * double(shape[shape.size() - 2]), receptive * double(shape.back())};
}

inline double xavier_bound(const Shape& shape) {
  auto [fin, fout] = fans(shape);
  return std::sqrt(6.0 / (fin + fout));
}

// Deterministic per (shape, scheme, seed).
template <typename T>
Tensor<T> init_tensor(const Shape& shape, InitScheme scheme, std::uint64_t seed) {
  Tensor<T> t(shape);
  Rng rng(seed);
  switch (scheme) {
    case InitScheme::zeros:
      break;
    case InitScheme::ones:
      t.fill(T(1));
      break;
    case InitScheme::xavier_uniform: {
      const double a = xavier_bound(shape);
      for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-a, a));
      break;
    }
    case InitScheme::embedding_normal: {
      const double sd = 1.0 / std::sqrt(double(shape.back()));
      for (auto& v : t.values()) v = static_cast<T>(sd * rng.normal());
      break;
    }
  }
  return t;
}

// Named, ordered tensor store. Index order is insertion order and is the
// order used for gradients, optimizer moments and checkpoints.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    ParamGroup group;
  };

  std::size_t add(std::string name, Tensor<T> value, ParamGroup group) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(value), group});
    return entries_.size() - 1;
  }

  std::size_t add(const std::string& name, const Shape& shape, InitScheme scheme, ParamGroup group,
                  std::uint64_t seed) {
    return add(name, init_tensor<T>(shape, scheme, hash_combine(seed, hash_string(name))), group);
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
  }

  Entry& entry(std::size_t i) { return entries_.at(i); }
  const Entry& entry(std::size_t i) const { return entries_.at(i); }
  Tensor<T>& operator[](const std::string& name) { return entries_[index(name)].value; }
  const Tensor<T>& operator[](const std::string& name) const { return entries_[index(name)].value; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>(), e.group);
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace avtts
