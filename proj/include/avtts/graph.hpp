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

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "avtts/params.hpp"
#include "avtts/tensor.hpp"

namespace avtts {

template <typename T>
class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const Tensor<T>& value() const { return graph->value(id); }
  const Shape& shape() const { return graph->value(id).shape(); }
  bool valid() const noexcept { return graph != nullptr && id >= 0; }
};

// Tape of op records. Nodes are appended as they are created, so node order
// is a topological order and the backward pass walks it in reverse.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int)>;

  struct Node {
    const char* op = "";
    std::vector<int> inputs;
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;  // parameter leaves alias the store
    int param = -1;
    bool requires_grad = false;
    BackwardFn backward;

    const Tensor<T>& value() const { return external ? *external : owned; }
  };

  // `trainable` (when non-empty) selects which store entries receive
  // gradients; the rest act as constants.
  explicit Graph(const ParamStore<T>* store = nullptr, bool training = false, std::uint64_t seed = 0,
                 std::vector<bool> trainable = {})
      : store_(store), training_(training), seed_(seed), trainable_(std::move(trainable)) {
    if (store_) param_nodes_.assign(store_->size(), -1);
  }

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool training() const noexcept { return training_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_stream() noexcept { return stream_++; }
  const ParamStore<T>* store() const noexcept { return store_; }

  Var<T> constant(Tensor<T> t) {
    Node n;
    n.op = "constant";
    n.owned = std::move(t);
    return append(std::move(n));
  }

  Var<T> param(std::size_t index) {
    if (!store_) throw std::logic_error("Graph::param: no parameter store bound");
    if (param_nodes_.at(index) >= 0) return {this, param_nodes_[index]};
    Node n;
    n.op = "param";
    n.external = &store_->entry(index).value;
    n.param = static_cast<int>(index);
    n.requires_grad = trainable_.empty() || trainable_.at(index);
    Var<T> v = append(std::move(n));
    param_nodes_[index] = v.id;
    return v;
  }

  Var<T> param(const std::string& name) { return param(store_->index(name)); }

  // Appends an op result. The backward closure is kept only when some
  // input needs a gradient.
  Var<T> record(const char* op, std::vector<int> inputs, Tensor<T> value, BackwardFn fn) {
    Node n;
    n.op = op;
    n.owned = std::move(value);
    for (int i : inputs) n.requires_grad = n.requires_grad || nodes_.at(i).requires_grad;
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(fn);
    return append(std::move(n));
  }

  const Tensor<T>& value(int id) const { return nodes_.at(id).value(); }
  const Node& node(int id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool requires_grad(int id) const { return nodes_.at(id).requires_grad; }

  // Gradient buffer for node `id`, allocated as zeros on first access.
  Tensor<T>& grad(int id) {
    auto& g = grads_.at(id);
    if (g.empty()) g = Tensor<T>(value(id).shape());
    return g;
  }

  // Reverse-mode pass from a scalar loss. Returns one gradient per store
  // entry (zeros for entries the loss does not depend on).
  std::vector<Tensor<T>> backward(Var<T> loss) {
    if (loss.graph != this) throw std::invalid_argument("backward: loss belongs to another graph");
    if (value(loss.id).size() != 1)
      throw ShapeError("backward: loss must be scalar, got " + shape_str(value(loss.id).shape()));
    grads_.assign(nodes_.size(), Tensor<T>());
    visited_.clear();
    grad(loss.id)[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.requires_grad || grads_[i].empty()) continue;
      visited_.push_back(i);
      if (n.backward) n.backward(*this, i);
    }
    std::vector<Tensor<T>> out;
    if (!store_) return out;
    out.reserve(store_->size());
    for (std::size_t p = 0; p < store_->size(); ++p) {
      const int id = param_nodes_[p];
      if (id >= 0 && id <= loss.id && !grads_[id].empty())
        out.push_back(std::move(grads_[id]));
      else
        out.emplace_back(store_->entry(p).value.shape());
    }
    return out;
  }

  // Node ids in the order the last backward pass processed them.
  const std::vector<int>& backward_order() const noexcept { return visited_; }

 private:
  Var<T> append(Node n) {
    nodes_.push_back(std::move(n));
    grads_.emplace_back();
    return {this, static_cast<int>(nodes_.size() - 1)};
  }

  const ParamStore<T>* store_;
  bool training_;
  std::uint64_t seed_;
  std::uint64_t stream_ = 0;
  std::vector<bool> trainable_;
  std::vector<int> param_nodes_;
  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
  std::vector<int> visited_;
};

}  // namespace avtts
