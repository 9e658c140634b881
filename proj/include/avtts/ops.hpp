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

// Differentiable op set. Each op computes its forward value eagerly and
// records a closure that accumulates input gradients.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "avtts/graph.hpp"
#include "avtts/rng.hpp"
#include "avtts/tensor.hpp"

namespace avtts {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using CMatMap = Eigen::Map<const RowMat<T>>;

namespace detail {

template <typename T>
Graph<T>& graph_of(Var<T> a) {
  if (!a.valid()) throw std::invalid_argument("op on invalid Var");
  return *a.graph;
}

template <typename T>
void same_graph(Var<T> a, Var<T> b) {
  if (a.graph != b.graph) throw std::invalid_argument("ops on Vars from different graphs");
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline Shape with_last(Shape s, std::size_t last) {
  s.back() = last;
  return s;
}

// (outer, axis extent, inner) decomposition of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

// x [..., K] times w [K, N] -> [..., N].
template <typename T>
Var<T> matmul(Var<T> x, Var<T> w) {
  detail::same_graph(x, w);
  auto& g = detail::graph_of(x);
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (ws.size() != 2 || xs.empty() || xs.back() != ws[0]) shape_fail("matmul", xs, ws);
  const std::size_t m = x.value().rows(), k = ws[0], n = ws[1];
  Tensor<T> out(detail::with_last(xs, n));
  MatMap<T>(out.data(), m, n).noalias() = CMatMap<T>(x.value().data(), m, k) * CMatMap<T>(w.value().data(), k, n);
  const int xi = x.id, wi = w.id;
  return g.record("matmul", {xi, wi}, std::move(out), [=](Graph<T>& gr, int self) {
    CMatMap<T> dy(gr.grad(self).data(), m, n);
    if (gr.requires_grad(xi))
      MatMap<T>(gr.grad(xi).data(), m, k).noalias() += dy * CMatMap<T>(gr.value(wi).data(), k, n).transpose();
    if (gr.requires_grad(wi))
      MatMap<T>(gr.grad(wi).data(), k, n).noalias() += CMatMap<T>(gr.value(xi).data(), m, k).transpose() * dy;
  });
}

namespace detail {

// Elementwise binary op with leading-axis broadcasting: one operand's shape
// must equal the other's or be a suffix of it.
template <typename T, typename F, typename DA, typename DB>
Var<T> broadcast_binary(const char* op, Var<T> a, Var<T> b, F f, DA da, DB db) {
  same_graph(a, b);
  auto& g = graph_of(a);
  const bool swap = a.shape().size() < b.shape().size();
  const Var<T> big = swap ? b : a, small = swap ? a : b;
  if (!is_suffix(small.shape(), big.shape())) shape_fail(op, a.shape(), b.shape());
  const std::size_t n = big.value().size(), period = small.value().size();
  Tensor<T> out(big.shape());
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  // Walk the big operand in blocks of the small one's size.
  const bool a_big = !swap;
  auto each = [n, period, a_big](auto&& fn) {
    if (period == 0) return;
    for (std::size_t r = 0; r < n; r += period)
      for (std::size_t j = 0; j < period; ++j) fn(r + j, a_big ? r + j : j, a_big ? j : r + j);
  };
  each([&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = f(pa[ia], pb[ib]); });
  const int ai = a.id, bi = b.id;
  return g.record(op, {ai, bi}, std::move(out), [=](Graph<T>& gr, int self) {
    const T* gy = gr.grad(self).data();
    const T* va = gr.value(ai).data();
    const T* vb = gr.value(bi).data();
    if (gr.requires_grad(ai)) {
      T* ga = gr.grad(ai).data();
      each([&](std::size_t i, std::size_t ia, std::size_t ib) { ga[ia] += da(gy[i], va[ia], vb[ib]); });
    }
    if (gr.requires_grad(bi)) {
      T* gb = gr.grad(bi).data();
      each([&](std::size_t i, std::size_t ia, std::size_t ib) { gb[ib] += db(gy[i], va[ia], vb[ib]); });
    }
  });
}

}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::broadcast_binary(
      "add", a, b, [](T x, T y) { return x + y; }, [](T gy, T, T) { return gy; }, [](T gy, T, T) { return gy; });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::broadcast_binary(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T gy, T, T) { return gy; }, [](T gy, T, T) { return -gy; });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return detail::broadcast_binary(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T gy, T, T y) { return gy * y; },
      [](T gy, T x, T) { return gy * x; });
}

template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T>
Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T>
Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }

template <typename T>
Var<T> scale(Var<T> x, T s) {
  auto& g = detail::graph_of(x);
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v *= s;
  const int xi = x.id;
  return g.record("scale", {xi}, std::move(out), [=](Graph<T>& gr, int self) {
    const auto& gy = gr.grad(self);
    auto& gx = gr.grad(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += s * gy[i];
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  auto& g = detail::graph_of(x);
  Tensor<T> out = x.value();
  out.reshape(std::move(shape));
  const int xi = x.id;
  return g.record("reshape", {xi}, std::move(out), [=](Graph<T>& gr, int self) {
    const auto& gy = gr.grad(self);
    auto& gx = gr.grad(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i];
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  auto& g = detail::graph_of(x);
  T s = 0;
  for (T v : x.value().values()) s += v;
  const int xi = x.id;
  return g.record("sum", {xi}, Tensor<T>::scalar(s), [=](Graph<T>& gr, int self) {
    const T gy = gr.grad(self)[0];
    for (auto& v : gr.grad(xi).values()) v += gy;
  });
}

// coeffs [B] (constant) outer v [H] -> [B, H].
template <typename T>
Var<T> outer(const Tensor<T>& coeffs, Var<T> v) {
  auto& g = detail::graph_of(v);
  if (v.shape().size() != 1 || coeffs.rank() != 1) shape_fail("outer", coeffs.shape(), v.shape());
  const std::size_t b = coeffs.size(), h = v.value().size();
  Tensor<T> out({b, h});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < h; ++j) out[i * h + j] = coeffs[i] * v.value()[j];
  const int vi = v.id;
  return g.record("outer", {vi}, std::move(out), [=](Graph<T>& gr, int self) {
    const auto& gy = gr.grad(self);
    auto& gv = gr.grad(vi);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < h; ++j) gv[j] += coeffs[i] * gy[i * h + j];
  });
}

// ---------------------------------------------------------------------------
// Sequence plumbing

// ids (shape `id_shape`) index rows of table [V, H]; result id_shape + [H].
template <typename T>
Var<T> embedding(Var<T> table, std::vector<int> ids, Shape id_shape) {
  auto& g = detail::graph_of(table);
  const auto& ts = table.shape();
  if (ts.size() != 2 || numel(id_shape) != ids.size()) shape_fail("embedding", ts, id_shape);
  const std::size_t v = ts[0], h = ts[1];
  for (int id : ids)
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw std::out_of_range("embedding: id " + std::to_string(id) + " outside table of " + std::to_string(v));
  Shape os = id_shape;
  os.push_back(h);
  Tensor<T> out(os);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto src = table.value().row(ids[i]);
    std::copy(src.begin(), src.end(), out.data() + i * h);
  }
  const int ti = table.id;
  return g.record("embedding", {ti}, std::move(out), [=, ids = std::move(ids)](Graph<T>& gr, int self) {
    const auto& gy = gr.grad(self);
    auto& gt = gr.grad(ti);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < h; ++j) gt[ids[i] * h + j] += gy[i * h + j];
  });
}

// Concatenate along `axis`; all other extents must agree.
template <typename T>
Var<T> concat(Var<T> a, Var<T> b, std::size_t axis) {
  detail::same_graph(a, b);
  auto& g = detail::graph_of(a);
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != bs.size() || axis >= as.size()) shape_fail("concat", as, bs);
  for (std::size_t i = 0; i < as.size(); ++i)
    if (i != axis && as[i] != bs[i]) shape_fail("concat", as, bs);
  const auto sa = detail::split_at(as, axis), sb = detail::split_at(bs, axis);
  const std::size_t ca = sa.extent * sa.inner, cb = sb.extent * sb.inner;
  Shape os = as;
  os[axis] += bs[axis];
  Tensor<T> out(os);
  for (std::size_t o = 0; o < sa.outer; ++o) {
    std::copy_n(a.value().data() + o * ca, ca, out.data() + o * (ca + cb));
    std::copy_n(b.value().data() + o * cb, cb, out.data() + o * (ca + cb) + ca);
  }
  const int ai = a.id, bi = b.id;
  const std::size_t outer_n = sa.outer;
  return g.record("concat", {ai, bi}, std::move(out), [=](Graph<T>& gr, int self) {
    const auto& gy = gr.grad(self);
    if (gr.requires_grad(ai)) {
      auto& ga = gr.grad(ai);
      for (std::size_t o = 0; o < outer_n; ++o)
        for (std::size_t i = 0; i < ca; ++i) ga[o * ca + i] += gy[o * (ca + cb) + i];
    }
    if (gr.requires_grad(bi)) {
      auto& gb = gr.grad(bi);
      for (std::size_t o = 0; o < outer_n; ++o)
        for (std::size_t i = 0; i < cb; ++i) gb[o * cb + i] += gy[o * (ca + cb) + ca + i];
    }
  });
}

template <typename T>
Var<T> slice(Var<T> x, std::size_t axis, std::size_t start, std::size_t len) {
  auto& g = detail::graph_of(x);
  const auto& xs = x.shape();
  if (axis >= xs.size() || len == 0 || start + len > xs[axis]) {
    Shape want = xs;
    if (axis < want.size()) want[axis] = start + len;
    shape_fail("slice", xs, want);
  }
  const auto s = detail::split_at(xs, axis);
  Shape os = xs;
  os[axis] = len;
  Tensor<T> out(os);
  const std::size_t src_chunk = s.extent * s.inner, dst_chunk = len * s.inner, off = start * s.inner;
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(x.value().data() + o * src_chunk + off, dst_chunk, out.data() + o * dst_chunk);
  const int xi = x.id;
  const std::size_t outer_n = s.outer;
  return g.record("slice", {xi}, std::move(out), [=](Graph<T>& gr, int self) {
    const auto& gy = gr.grad(self);
    auto& gx = gr.grad(xi);
    for (std::size_t o = 0; o < outer_n; ++o)
      for (std::size_t i = 0; i < dst_chunk; ++i) gx[o * src_chunk + off + i] += gy[o * dst_chunk + i];
  });
}

// x [B, H] -> [B, L, H] by repeating each row L times.
template <typename T>
Var<T> expand(Var<T> x, std::size_t len) {
  auto& g = detail::graph_of(x);
  const auto& xs = x.shape();
  if (xs.size() != 2 || len == 0) shape_fail("expand", xs, Shape{0, len, 0});
  const std::size_t b = xs[0], h = xs[1];
  Tensor<T> out({b, len, h});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t t = 0; t < len; ++t) std::copy_n(x.value().data() + i * h, h, out.data() + (i * len + t) * h);
  const int xi = x.id;
  return g.record("expand", {xi}, std::move(out), [=](Graph<T>& gr, int self) {
    const auto& gy = gr.grad(self);
    auto& gx = gr.grad(xi);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t t = 0; t < len; ++t)
        for (std::size_t j = 0; j < h; ++j) gx[i * h + j] += gy[(i * len + t) * h + j];
  });
}

// x [B, L, H]; index [B, T] selects a source row per output frame, -1 gives
// a zero row. This is the differentiable core of length regulation.
template <typename T>
Var<T> gather_rows(Var<T> x, std::vector<int> index, std::size_t frames) {
  auto& g = detail::graph_of(x);
  const auto& xs = x.shape();
  if (xs.size() != 3 || index.size() != xs[0] * frames) shape_fail("gather_rows", xs, Shape{xs.at(0), frames});
  const std::size_t b = xs[0], l = xs[1], h = xs[2];
  Tensor<T> out({b, frames, h});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t t = 0; t < frames; ++t) {
      const int src = index[i * frames + t];
      if (src < 0) continue;
      if (static_cast<std::size_t>(src) >= l) throw std::out_of_range("gather_rows: source row out of range");
      std::copy_n(x.value().data() + (i * l + src) * h, h, out.data() + (i * frames + t) * h);
    }
  const int xi = x.id;
  return g.record("gather_rows", {xi}, std::move(out), [=, index = std::move(index)](Graph<T>& gr, int self) {
    const auto& gy = gr.grad(self);
    auto& gx = gr.grad(xi);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t t = 0; t < frames; ++t) {
        const int src = index[i * frames + t];
        if (src < 0) continue;
        for (std::size_t j = 0; j < h; ++j) gx[(i * l + src) * h + j] += gy[(i * frames + t) * h + j];
      }
  });
}

// Multiplies every last-axis row of x by a 0/1 mask entry. `mask` has the
// shape of x without its last axis.
template <typename T>
Var<T> mask_rows(Var<T> x, const Tensor<T>& mask) {
  auto& g = detail::graph_of(x);
  const auto& xs = x.shape();
  if (mask.rank() + 1 != xs.size() || !std::equal(mask.shape().begin(), mask.shape().end(), xs.begin()))
    shape_fail("mask_rows", xs, mask.shape());
  const std::size_t h = xs.back();
  Tensor<T> out = x.value();
  for (std::size_t r = 0; r < mask.size(); ++r)
    for (std::size_t j = 0; j < h; ++j) out[r * h + j] *= mask[r];
  const int xi = x.id;
  return g.record("mask_rows", {xi}, std::move(out), [=](Graph<T>& gr, int self) {
    const auto& gy = gr.grad(self);
    auto& gx = gr.grad(xi);
    for (std::size_t r = 0; r < mask.size(); ++r)
      for (std::size_t j = 0; j < h; ++j) gx[r * h + j] += gy[r * h + j] * mask[r];
  });
}

// ---------------------------------------------------------------------------
// Neural layers

// Same-padded 1-D convolution: x [B, T, Cin], w [K, Cin, Cout] (K odd).
template <typename T>
Var<T> conv1d(Var<T> x, Var<T> w) {
  detail::same_graph(x, w);
  auto& g = detail::graph_of(x);
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  if (xs.size() != 3 || ws.size() != 3 || ws[1] != xs[2] || ws[0] % 2 == 0) shape_fail("conv1d", xs, ws);
  const std::size_t b = xs[0], t = xs[1], cin = xs[2], k = ws[0], cout = ws[2];
  const std::size_t half = k / 2, m = b * t, kc = k * cin;
  Tensor<T> cols;
  if (k == 1) {
    cols = x.value();
  } else {
    cols = Tensor<T>({m, kc});
    const T* px = x.value().data();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t s = 0; s < t; ++s)
        for (std::size_t j = 0; j < k; ++j) {
          const long src = static_cast<long>(s + j) - static_cast<long>(half);
          if (src < 0 || src >= static_cast<long>(t)) continue;
          std::copy_n(px + (i * t + src) * cin, cin, cols.data() + (i * t + s) * kc + j * cin);
        }
  }
  Tensor<T> out({b, t, cout});
  MatMap<T>(out.data(), m, cout).noalias() = CMatMap<T>(cols.data(), m, kc) * CMatMap<T>(w.value().data(), kc, cout);
  const int xi = x.id, wi = w.id;
  return g.record("conv1d", {xi, wi}, std::move(out), [=, cols = std::move(cols)](Graph<T>& gr, int self) {
    CMatMap<T> dy(gr.grad(self).data(), m, cout);
    if (gr.requires_grad(wi))
      MatMap<T>(gr.grad(wi).data(), kc, cout).noalias() += CMatMap<T>(cols.data(), m, kc).transpose() * dy;
    if (!gr.requires_grad(xi)) return;
    if (k == 1) {
      MatMap<T>(gr.grad(xi).data(), m, cin).noalias() += dy * CMatMap<T>(gr.value(wi).data(), kc, cout).transpose();
      return;
    }
    RowMat<T> dcols = dy * CMatMap<T>(gr.value(wi).data(), kc, cout).transpose();
    T* gx = gr.grad(xi).data();
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t s = 0; s < t; ++s)
        for (std::size_t j = 0; j < k; ++j) {
          const long src = static_cast<long>(s + j) - static_cast<long>(half);
          if (src < 0 || src >= static_cast<long>(t)) continue;
          const T* d = dcols.data() + (i * t + s) * kc + j * cin;
          T* dst = gx + (i * t + src) * cin;
          for (std::size_t c = 0; c < cin; ++c) dst[c] += d[c];
        }
  });
}

// Normalizes over the last axis, then applies gain and bias.
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5)) {
  auto& g = detail::graph_of(x);
  const auto& xs = x.shape();
  const std::size_t h = xs.back(), rows = x.value().rows();
  if (gain.shape() != Shape{h} || bias.shape() != Shape{h}) shape_fail("layer_norm", xs, gain.shape());
  Tensor<T> out(xs);
  Tensor<T> xhat(xs);
  std::vector<T> inv_std(rows);
  const T* px = x.value().data();
  const T* pg = gain.value().data();
  const T* pb = bias.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = px + r * h;
    T mean = 0;
    for (std::size_t j = 0; j < h; ++j) mean += row[j];
    mean /= T(h);
    T var = 0;
    for (std::size_t j = 0; j < h; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= T(h);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < h; ++j) {
      const T xh = (row[j] - mean) * is;
      xhat[r * h + j] = xh;
      out[r * h + j] = xh * pg[j] + pb[j];
    }
  }
  const int xi = x.id, gi = gain.id, bi = bias.id;
  return g.record("layer_norm", {xi, gi, bi}, std::move(out),
                  [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph<T>& gr, int self) {
                    const auto& gy = gr.grad(self);
                    const T* pgain = gr.value(gi).data();
                    if (gr.requires_grad(gi)) {
                      auto& gg = gr.grad(gi);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < h; ++j) gg[j] += gy[r * h + j] * xhat[r * h + j];
                    }
                    if (gr.requires_grad(bi)) {
                      auto& gb = gr.grad(bi);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < h; ++j) gb[j] += gy[r * h + j];
                    }
                    if (!gr.requires_grad(xi)) return;
                    auto& gx = gr.grad(xi);
                    for (std::size_t r = 0; r < rows; ++r) {
                      T m1 = 0, m2 = 0;
                      for (std::size_t j = 0; j < h; ++j) {
                        const T d = gy[r * h + j] * pgain[j];
                        m1 += d;
                        m2 += d * xhat[r * h + j];
                      }
                      m1 /= T(h);
                      m2 /= T(h);
                      for (std::size_t j = 0; j < h; ++j) {
                        const T d = gy[r * h + j] * pgain[j];
                        gx[r * h + j] += inv_std[r] * (d - m1 - xhat[r * h + j] * m2);
                      }
                    }
                  });
}

namespace detail {

template <typename T>
void softmax_row(T* row, std::size_t n) {
  T mx = row[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
  T s = 0;
  for (std::size_t j = 0; j < n; ++j) {
    row[j] = std::exp(row[j] - mx);
    s += row[j];
  }
  for (std::size_t j = 0; j < n; ++j) row[j] /= s;
}

}  // namespace detail

template <typename T>
Var<T> softmax(Var<T> x) {
  auto& g = detail::graph_of(x);
  Tensor<T> out = x.value();
  const std::size_t h = out.last(), rows = out.rows();
  for (std::size_t r = 0; r < rows; ++r) detail::softmax_row(out.data() + r * h, h);
  const int xi = x.id;
  return g.record("softmax", {xi}, std::move(out), [=](Graph<T>& gr, int self) {
    const auto& gy = gr.grad(self);
    const auto& y = gr.value(self);
    auto& gx = gr.grad(xi);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t j = 0; j < h; ++j) dot += gy[r * h + j] * y[r * h + j];
      for (std::size_t j = 0; j < h; ++j) gx[r * h + j] += y[r * h + j] * (gy[r * h + j] - dot);
    }
  });
}

// Multi-head scaled dot-product attention. q, k, v: [B, L, H]; key_mask
// [B, L] holds 1 for attendable keys. Masked keys receive an additive
// -1e9 before the softmax.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const Tensor<T>& key_mask, std::size_t heads) {
  detail::same_graph(q, k);
  detail::same_graph(q, v);
  auto& g = detail::graph_of(q);
  const auto& qs = q.shape();
  if (qs.size() != 3 || k.shape() != qs || v.shape() != qs) shape_fail("attention", qs, k.shape());
  if (key_mask.shape() != Shape{qs[0], qs[1]}) shape_fail("attention mask", qs, key_mask.shape());
  const std::size_t b = qs[0], l = qs[1], h = qs[2];
  if (heads == 0 || h % heads != 0) throw std::invalid_argument("attention: hidden size not divisible by heads");
  const std::size_t dh = h / heads;
  const T inv_scale = T(1) / std::sqrt(T(dh));
  using Stride = Eigen::OuterStride<>;
  using HeadMap = Eigen::Map<RowMat<T>, 0, Stride>;
  using CHeadMap = Eigen::Map<const RowMat<T>, 0, Stride>;

  std::vector<RowMat<T>> probs(b * heads);
  Tensor<T> out(qs);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const std::size_t off = i * l * h + hd * dh;
      CHeadMap qh(q.value().data() + off, l, dh, Stride(h));
      CHeadMap kh(k.value().data() + off, l, dh, Stride(h));
      CHeadMap vh(v.value().data() + off, l, dh, Stride(h));
      RowMat<T>& p = probs[i * heads + hd];
      p.noalias() = (qh * kh.transpose()) * inv_scale;
      for (std::size_t c = 0; c < l; ++c)
        if (key_mask[i * l + c] == T(0)) p.col(c).array() += T(-1e9);
      for (std::size_t r = 0; r < l; ++r) detail::softmax_row(p.data() + r * l, l);
      HeadMap(out.data() + off, l, dh, Stride(h)).noalias() = p * vh;
    }
  const int qi = q.id, ki = k.id, vi = v.id;
  return g.record("attention", {qi, ki, vi}, std::move(out),
                  [=, probs = std::move(probs)](Graph<T>& gr, int self) {
                    const T* gy = gr.grad(self).data();
                    for (std::size_t i = 0; i < b; ++i)
                      for (std::size_t hd = 0; hd < heads; ++hd) {
                        const std::size_t off = i * l * h + hd * dh;
                        const RowMat<T>& p = probs[i * heads + hd];
                        CHeadMap dout(gy + off, l, dh, Stride(h));
                        CHeadMap qh(gr.value(qi).data() + off, l, dh, Stride(h));
                        CHeadMap kh(gr.value(ki).data() + off, l, dh, Stride(h));
                        CHeadMap vh(gr.value(vi).data() + off, l, dh, Stride(h));
                        if (gr.requires_grad(vi))
                          HeadMap(gr.grad(vi).data() + off, l, dh, Stride(h)).noalias() += p.transpose() * dout;
                        if (!gr.requires_grad(qi) && !gr.requires_grad(ki)) continue;
                        RowMat<T> dp = dout * vh.transpose();
                        RowMat<T> ds(l, l);
                        for (std::size_t r = 0; r < l; ++r) {
                          const T dot = dp.row(r).dot(p.row(r));
                          ds.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
                        }
                        ds *= inv_scale;
                        if (gr.requires_grad(qi))
                          HeadMap(gr.grad(qi).data() + off, l, dh, Stride(h)).noalias() += ds * kh;
                        if (gr.requires_grad(ki))
                          HeadMap(gr.grad(ki).data() + off, l, dh, Stride(h)).noalias() += ds.transpose() * qh;
                      }
                  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  auto& g = detail::graph_of(x);
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  const int xi = x.id;
  return g.record("relu", {xi}, std::move(out), [=](Graph<T>& gr, int self) {
    const auto& gy = gr.grad(self);
    const auto& xv = gr.value(xi);
    auto& gx = gr.grad(xi);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += xv[i] > T(0) ? gy[i] : T(0);
  });
}

// Inverted dropout. Active only on training graphs; the keep mask is a pure
// function of (graph seed, call index, element index).
template <typename T>
Var<T> dropout(Var<T> x, double p) {
  auto& g = detail::graph_of(x);
  if (!g.training() || p <= 0.0) return x;
  if (p >= 1.0) throw std::invalid_argument("dropout: p must be < 1");
  const std::uint64_t key = hash_combine(g.seed(), g.next_stream());
  const T keep_scale = T(1.0 / (1.0 - p));
  const std::size_t n = x.value().size();
  std::vector<T> factor(n);
  for (std::size_t i = 0; i < n; ++i) factor[i] = counter_uniform(key, i) >= p ? keep_scale : T(0);
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < n; ++i) out[i] *= factor[i];
  const int xi = x.id;
  return g.record("dropout", {xi}, std::move(out), [=, factor = std::move(factor)](Graph<T>& gr, int self) {
    const auto& gy = gr.grad(self);
    auto& gx = gr.grad(xi);
    for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] * factor[i];
  });
}

// ---------------------------------------------------------------------------
// Masked reductions

namespace detail {

// Expands a mask of shape prefix(pred) (or equal shape) to per-element
// weights and returns the normalizer.
template <typename T>
std::vector<T> element_mask(const char* op, const Shape& ps, const Tensor<T>& mask, T& denom) {
  const std::size_t n = numel(ps);
  std::size_t inner = 0;
  if (mask.shape() == ps)
    inner = 1;
  else if (mask.rank() + 1 == ps.size() && std::equal(mask.shape().begin(), mask.shape().end(), ps.begin()))
    inner = ps.back();
  else
    shape_fail(op, ps, mask.shape());
  std::vector<T> w(n);
  denom = 0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = mask[i / inner];
    denom += w[i];
  }
  return w;
}

template <typename T, typename Err, typename DErr>
Var<T> masked_reduce(const char* op, Var<T> pred, const Tensor<T>& target, const Tensor<T>& mask, Err err,
                     DErr derr) {
  auto& g = detail::graph_of(pred);
  if (target.shape() != pred.shape()) shape_fail(op, pred.shape(), target.shape());
  T denom = 0;
  std::vector<T> w = element_mask(op, pred.shape(), mask, denom);
  const std::size_t n = w.size();
  T total = 0;
  const T* p = pred.value().data();
  for (std::size_t i = 0; i < n; ++i)
    if (w[i] != T(0)) total += w[i] * err(p[i] - target[i]);
  const T value = denom > T(0) ? total / denom : T(0);
  const int pi = pred.id;
  return g.record(op, {pi}, Tensor<T>::scalar(value), [=, w = std::move(w)](Graph<T>& gr, int self) {
    if (denom <= T(0)) return;
    const T gy = gr.grad(self)[0] / denom;
    const T* pv = gr.value(pi).data();
    auto& gp = gr.grad(pi);
    for (std::size_t i = 0; i < n; ++i)
      if (w[i] != T(0)) gp[i] += gy * w[i] * derr(pv[i] - target[i]);
  });
}

}  // namespace detail

// Mean squared error over unmasked elements; 0 when everything is masked.
template <typename T>
Var<T> masked_mse(Var<T> pred, const Tensor<T>& target, const Tensor<T>& mask) {
  return detail::masked_reduce(
      "masked_mse", pred, target, mask, [](T d) { return d * d; }, [](T d) { return T(2) * d; });
}

// Mean absolute error over unmasked elements; subgradient 0 at 0.
template <typename T>
Var<T> masked_mae(Var<T> pred, const Tensor<T>& target, const Tensor<T>& mask) {
  return detail::masked_reduce(
      "masked_mae", pred, target, mask, [](T d) { return d < T(0) ? -d : d; },
      [](T d) { return d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0)); });
}

}  // namespace avtts
