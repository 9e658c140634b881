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

// Multi-speaker FastSpeech2-style acoustic model with an arousal/valence
// Prosody Control (PC) block.
//
//   phonemes -> embed, prepend projected speaker vector -> encoder -> E1
//   E1, e = a*v_A + v*v_V -> condition block -> E2
//   duration/pitch/energy predictors read E2 (E1 in stage 1)
//   regulated E1 + pitch/energy bucket embeddings -> decoder -> mel

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "avtts/graph.hpp"
#include "avtts/ops.hpp"
#include "avtts/params.hpp"
#include "avtts/tensor.hpp"

namespace avtts {

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  std::size_t vocab = 72;
  std::size_t speaker_dim = 256;
  std::size_t hidden = 256;
  std::size_t encoder_layers = 4;
  std::size_t decoder_layers = 4;
  std::size_t heads = 2;
  std::size_t filter = 1024;
  std::size_t ffn_kernel = 9;
  std::size_t ffn_kernel2 = 1;
  double dropout = 0.2;
  std::size_t vp_channels = 256;
  std::size_t vp_kernel = 3;
  double vp_dropout = 0.5;
  std::size_t buckets = 256;
  std::size_t max_phonemes = 256;
  std::size_t mel_bins = 80;

  void validate() const {
    auto need = [](bool ok, const std::string& msg) {
      if (!ok) throw ModelError("ModelConfig: " + msg);
    };
    need(hidden > 0 && heads > 0 && hidden % heads == 0, "hidden must be divisible by heads");
    need(buckets >= 2, "buckets must be >= 2");
    need(ffn_kernel % 2 == 1 && ffn_kernel2 % 2 == 1 && vp_kernel % 2 == 1, "kernel sizes must be odd");
    need(encoder_layers > 0 && decoder_layers > 0, "need at least one encoder and decoder layer");
    need(vocab > 3 && speaker_dim > 0 && filter > 0 && vp_channels > 0 && mel_bins > 0 && max_phonemes > 1,
         "sizes must be positive");
    need(dropout >= 0 && dropout < 1 && vp_dropout >= 0 && vp_dropout < 1, "dropout must be in [0, 1)");
  }

  // The architecture as described (H = 256 throughout).
  static ModelConfig paper() { return {}; }

  // Same topology at desk scale for single-core training runs.
  static ModelConfig compact() {
    ModelConfig c;
    c.hidden = 64;
    c.encoder_layers = 2;
    c.decoder_layers = 2;
    c.filter = 256;
    c.dropout = 0.1;
    c.vp_channels = 64;
    return c;
  }
};

inline nlohmann::json model_config_to_json(const ModelConfig& c) {
  return {{"vocab", c.vocab},
          {"speaker_dim", c.speaker_dim},
          {"hidden", c.hidden},
          {"encoder_layers", c.encoder_layers},
          {"decoder_layers", c.decoder_layers},
          {"heads", c.heads},
          {"filter", c.filter},
          {"ffn_kernel", c.ffn_kernel},
          {"ffn_kernel2", c.ffn_kernel2},
          {"dropout", c.dropout},
          {"vp_channels", c.vp_channels},
          {"vp_kernel", c.vp_kernel},
          {"vp_dropout", c.vp_dropout},
          {"buckets", c.buckets},
          {"max_phonemes", c.max_phonemes},
          {"mel_bins", c.mel_bins}};
}

// Fields absent from `j` keep the values of `base`; unknown keys throw.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {}) {
  if (!j.is_object()) throw ModelError("model config must be a JSON object");
  const auto ref = model_config_to_json(base);
  for (const auto& [key, _] : j.items())
    if (!ref.contains(key)) throw ModelError("model config: unknown key '" + key + "'");
  try {
    auto sz = [&](const char* k, std::size_t& out) {
      if (j.contains(k)) out = j.at(k).get<std::size_t>();
    };
    sz("vocab", base.vocab);
    sz("speaker_dim", base.speaker_dim);
    sz("hidden", base.hidden);
    sz("encoder_layers", base.encoder_layers);
    sz("decoder_layers", base.decoder_layers);
    sz("heads", base.heads);
    sz("filter", base.filter);
    sz("ffn_kernel", base.ffn_kernel);
    sz("ffn_kernel2", base.ffn_kernel2);
    sz("vp_channels", base.vp_channels);
    sz("vp_kernel", base.vp_kernel);
    sz("buckets", base.buckets);
    sz("max_phonemes", base.max_phonemes);
    sz("mel_bins", base.mel_bins);
    if (j.contains("dropout")) base.dropout = j.at("dropout").get<double>();
    if (j.contains("vp_dropout")) base.vp_dropout = j.at("vp_dropout").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ModelError(std::string("model config: ") + e.what());
  }
  base.validate();
  return base;
}

// Bucket range of standardized pitch and energy (from corpus stats).
struct VarianceRanges {
  double pitch_min = -1, pitch_max = 1;
  double energy_min = -1, energy_max = 1;
};

// floor((x - lo) / (hi - lo) * n), clamped to [0, n - 1].
inline int bucketize(double x, double lo, double hi, std::size_t n) {
  if (!(hi > lo)) throw ModelError("bucketize: empty range");
  const double b = std::floor((x - lo) / (hi - lo) * double(n));
  return static_cast<int>(std::clamp(b, 0.0, double(n - 1)));
}

// Inference durations from log-domain predictions: max(0, round(exp(p) - 1)).
// Only the first `length` entries are real; if they all round to 0, the
// phoneme with the largest prediction gets one frame.
inline std::vector<int> durations_from_log(const float* p, std::size_t length) {
  std::vector<int> d(length, 0);
  long total = 0;
  for (std::size_t i = 0; i < length; ++i) {
    d[i] = static_cast<int>(std::max(0.0, std::round(std::exp(double(p[i])) - 1.0)));
    total += d[i];
  }
  if (total == 0 && length > 0) d[static_cast<std::size_t>(std::max_element(p, p + length) - p)] = 1;
  return d;
}

// Sinusoidal position table [len, h].
template <typename T>
Tensor<T> sinusoid_positions(std::size_t len, std::size_t h) {
  Tensor<T> pe({len, h});
  for (std::size_t pos = 0; pos < len; ++pos)
    for (std::size_t i = 0; i < h; ++i) {
      const double rate = std::pow(10000.0, -double(2 * (i / 2)) / double(h));
      pe[pos * h + i] = static_cast<T>(i % 2 == 0 ? std::sin(double(pos) * rate) : std::cos(double(pos) * rate));
    }
  return pe;
}

// Length-regulation index: output frame t of row b copies phoneme index[b, t]
// (-1 past the row's total). Returns the frame count max_b sum(d_b).
inline std::size_t regulation_index(const std::vector<int>& durations, std::size_t batch, std::size_t length,
                                    std::vector<int>& index, std::size_t min_frames = 0) {
  std::size_t frames = min_frames;
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t total = 0;
    for (std::size_t i = 0; i < length; ++i) {
      const int d = durations[b * length + i];
      if (d < 0) throw ModelError("length_regulate: negative duration");
      total += static_cast<std::size_t>(d);
    }
    frames = std::max(frames, total);
  }
  if (frames == 0) throw ModelError("length_regulate: zero total frames");
  index.assign(batch * frames, -1);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t t = 0;
    for (std::size_t i = 0; i < length; ++i)
      for (int r = 0; r < durations[b * length + i]; ++r) index[b * frames + t++] = static_cast<int>(i);
  }
  return frames;
}

// Model inputs for one padded batch. Targets are present for training and
// teacher-forced synthesis.
template <typename T>
struct Batch {
  std::size_t size = 0;
  std::size_t length = 0;             // phonemes (padded)
  std::vector<int> ids;               // [B * L]
  Tensor<T> phone_mask;               // [B, L]
  Tensor<T> speaker;                  // [B, speaker_dim]
  Tensor<T> arousal, valence;         // [B], normalized to [0, 1]
  bool has_affect = false;

  bool has_targets = false;
  std::size_t frames = 0;             // padded
  std::vector<int> durations;         // [B * L]
  Tensor<T> log_duration;             // [B, L], log(d + 1)
  Tensor<T> mel;                      // [B, T, mel_bins]
  Tensor<T> pitch, energy;            // [B, T], standardized
  Tensor<T> frame_mask;               // [B, T]
};

enum class Route { e1, e2 };

struct ForwardOptions {
  Route route = Route::e1;
  bool teacher_force = true;  // regulate with target durations, add target pitch/energy
};

template <typename T>
struct ForwardOutput {
  Var<T> e1, e2;          // e2 invalid on the E1 route
  Var<T> log_duration;    // [B, L]
  Var<T> pitch, energy;   // [B, T]
  Var<T> mel;             // [B, T, mel_bins]
  std::vector<int> durations;  // used for regulation, [B * L]
  std::size_t frames = 0;
  Tensor<T> frame_mask;   // [B, T]
};

template <typename T>
class Model {
 public:
  explicit Model(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    cfg_.validate();
    build(seed);
  }

  Model(ModelConfig cfg, ParamStore<T> params, VarianceRanges ranges) : cfg_(cfg), ranges_(ranges) {
    cfg_.validate();
    Model<T> ref(cfg_, 0);
    if (params.size() != ref.params_.size()) throw ModelError("parameter store does not match model config");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& a = params.entry(i);
      const auto& b = ref.params_.entry(i);
      if (a.name != b.name || a.value.shape() != b.value.shape() || a.group != b.group)
        throw ModelError("parameter '" + a.name + "' does not match model config (expected '" + b.name + "' " +
                         shape_str(b.value.shape()) + ")");
    }
    params_ = std::move(params);
  }

  template <typename U>
  Model<U> cast() const {
    return Model<U>(cfg_, params_.template cast<U>(), ranges_);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  ParamStore<T>& params() noexcept { return params_; }
  const ParamStore<T>& params() const noexcept { return params_; }
  const VarianceRanges& ranges() const noexcept { return ranges_; }
  void set_ranges(const VarianceRanges& r) { ranges_ = r; }

  // Stage 1 trains everything; stage 2 only the prosody group.
  std::vector<bool> trainable_mask(int stage) const {
    std::vector<bool> m(params_.size(), true);
    if (stage == 2)
      for (std::size_t i = 0; i < params_.size(); ++i) m[i] = params_.entry(i).group == ParamGroup::prosody;
    return m;
  }

  // ---- building blocks ---------------------------------------------------

  // [B, L, H] phoneme embeddings -> [B, L+1, H] with the projected speaker
  // vector at position 0.
  Var<T> prepend_speaker(Graph<T>& g, Var<T> phones, const Tensor<T>& speaker) const {
    const std::size_t b = phones.shape()[0], h = cfg_.hidden;
    if (speaker.shape() != Shape{b, cfg_.speaker_dim})
      throw ModelError("speaker embedding must be [" + std::to_string(b) + ", " + std::to_string(cfg_.speaker_dim) +
                       "], got " + shape_str(speaker.shape()));
    Var<T> s = affine(g, g.constant(speaker), "speaker_proj");
    return concat(reshape(s, {b, 1, h}), phones, 1);
  }

  // E1 [B, L, H]: embed, prepend speaker, add positions, encode, strip slot.
  Var<T> encode(Graph<T>& g, const std::vector<int>& ids, const Tensor<T>& mask, const Tensor<T>& speaker) const {
    const std::size_t b = mask.dim(0), l = mask.dim(1), h = cfg_.hidden;
    if (ids.size() != b * l) throw ModelError("encode: ids/mask size mismatch");
    if (l + 1 > cfg_.max_phonemes)
      throw ModelError("encode: " + std::to_string(l) + " phonemes plus speaker slot exceed max_phonemes " +
                       std::to_string(cfg_.max_phonemes));
    for (int id : ids)
      if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab) throw ModelError("encode: phoneme id out of range");
    Var<T> x = prepend_speaker(g, embedding(g.param("phoneme_embedding"), ids, {b, l}), speaker);
    Tensor<T> full_mask({b, l + 1}, T(1));
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = 0; j < l; ++j) full_mask[i * (l + 1) + j + 1] = mask[i * l + j];
    x = add(x, g.constant(sinusoid_positions<T>(l + 1, h)));
    x = mask_rows(x, full_mask);
    for (std::size_t layer = 0; layer < cfg_.encoder_layers; ++layer)
      x = fft_block(g, x, full_mask, "encoder." + std::to_string(layer));
    return slice(x, 1, 1, l);
  }

  // e = a * v_A + v * v_V for normalized a, v of shape [B]; result [B, H].
  Var<T> affect_vector(Graph<T>& g, const Tensor<T>& arousal, const Tensor<T>& valence) const {
    return add(outer(arousal, g.param("pc.v_arousal")), outer(valence, g.param("pc.v_valence")));
  }

  // E2 = [E1, e] W + b, per position.
  Var<T> condition(Graph<T>& g, Var<T> e1, Var<T> e) const {
    const std::size_t l = e1.shape()[1];
    return affine(g, concat(e1, expand(e, l), 2), "pc.condition");
  }

  // Two conv/ReLU/LN/dropout layers and a scalar head: [B, N, H] -> [B, N].
  Var<T> variance_predictor(Graph<T>& g, const std::string& name, Var<T> x, const Tensor<T>& mask) const {
    const std::size_t b = x.shape()[0], n = x.shape()[1];
    for (int layer = 1; layer <= 2; ++layer) {
      const std::string p = name + ".conv" + std::to_string(layer);
      x = mask_rows(x, mask);
      x = add(conv1d(x, g.param(p + ".w")), g.param(p + ".b"));
      x = relu(x);
      x = layer_norm(x, g.param(name + ".ln" + std::to_string(layer) + ".g"),
                     g.param(name + ".ln" + std::to_string(layer) + ".b"));
      x = dropout(x, cfg_.vp_dropout);
    }
    return reshape(affine(g, x, name + ".linear"), {b, n});
  }

  // Repeats row i of x [B, L, H] durations[b, i] times.
  Var<T> length_regulate(Var<T> x, const std::vector<int>& durations, std::size_t* frames_out = nullptr,
                         std::size_t min_frames = 0) const {
    const std::size_t b = x.shape()[0], l = x.shape()[1];
    if (durations.size() != b * l) throw ModelError("length_regulate: need one duration per phoneme");
    std::vector<int> index;
    const std::size_t frames = regulation_index(durations, b, l, index, min_frames);
    if (frames_out) *frames_out = frames;
    return gather_rows(x, std::move(index), frames);
  }

  // Regulated E1 plus pitch and energy bucket embeddings.
  Var<T> add_variances(Graph<T>& g, Var<T> regulated, const Tensor<T>& pitch, const Tensor<T>& energy) const {
    const std::size_t b = regulated.shape()[0], t = regulated.shape()[1];
    if (pitch.shape() != Shape{b, t} || energy.shape() != Shape{b, t})
      throw ModelError("add_variances: pitch/energy " + shape_str(pitch.shape()) + " do not match frames " +
                       shape_str(Shape{b, t}));
    std::vector<int> pb(b * t), eb(b * t);
    for (std::size_t i = 0; i < b * t; ++i) {
      pb[i] = bucketize(pitch[i], ranges_.pitch_min, ranges_.pitch_max, cfg_.buckets);
      eb[i] = bucketize(energy[i], ranges_.energy_min, ranges_.energy_max, cfg_.buckets);
    }
    return add(add(regulated, embedding(g.param("pitch_embedding"), pb, {b, t})),
               embedding(g.param("energy_embedding"), eb, {b, t}));
  }

  // [B, T, H] -> mel [B, T, mel_bins].
  Var<T> decode(Graph<T>& g, Var<T> x, const Tensor<T>& frame_mask) const {
    const std::size_t t = x.shape()[1];
    x = add(x, g.constant(sinusoid_positions<T>(t, cfg_.hidden)));
    x = mask_rows(x, frame_mask);
    for (std::size_t layer = 0; layer < cfg_.decoder_layers; ++layer)
      x = fft_block(g, x, frame_mask, "decoder." + std::to_string(layer));
    return mask_rows(affine(g, x, "mel_proj"), frame_mask);
  }

  // ---- full pass ---------------------------------------------------------

  ForwardOutput<T> forward(Graph<T>& g, const Batch<T>& batch, const ForwardOptions& opt) const {
    if (opt.teacher_force && !batch.has_targets) throw ModelError("forward: teacher forcing needs targets");
    if (opt.route == Route::e2 && !batch.has_affect) throw ModelError("forward: E2 route needs arousal/valence");
    const std::size_t b = batch.size, l = batch.length;
    ForwardOutput<T> out;
    out.e1 = encode(g, batch.ids, batch.phone_mask, batch.speaker);
    Var<T> prosody_in = out.e1;
    if (opt.route == Route::e2) {
      out.e2 = condition(g, out.e1, affect_vector(g, batch.arousal, batch.valence));
      prosody_in = out.e2;
    }
    out.log_duration = variance_predictor(g, "duration_predictor", prosody_in, batch.phone_mask);

    if (opt.teacher_force) {
      out.durations = batch.durations;
    } else {
      out.durations.assign(b * l, 0);
      const auto& p = out.log_duration.value();
      for (std::size_t i = 0; i < b; ++i) {
        std::size_t len = 0;
        while (len < l && batch.phone_mask[i * l + len] != T(0)) ++len;
        std::vector<float> row(len);
        for (std::size_t j = 0; j < len; ++j) row[j] = static_cast<float>(p[i * l + j]);
        const auto d = durations_from_log(row.data(), len);
        std::copy(d.begin(), d.end(), out.durations.begin() + static_cast<long>(i * l));
      }
    }
    const std::size_t min_frames = opt.teacher_force ? batch.frames : 0;
    Var<T> reg_e1 = length_regulate(out.e1, out.durations, &out.frames, min_frames);
    Var<T> reg_prosody = opt.route == Route::e2 ? length_regulate(out.e2, out.durations, nullptr, min_frames) : reg_e1;
    if (opt.teacher_force && out.frames != batch.frames)
      throw ModelError("forward: target durations sum to " + std::to_string(out.frames) + " but targets have " +
                       std::to_string(batch.frames) + " frames");

    const std::size_t t = out.frames;
    if (opt.teacher_force) {
      out.frame_mask = batch.frame_mask;
    } else {
      out.frame_mask = Tensor<T>({b, t}, T(0));
      for (std::size_t i = 0; i < b; ++i) {
        long total = 0;
        for (std::size_t j = 0; j < l; ++j) total += out.durations[i * l + j];
        for (long f = 0; f < total; ++f) out.frame_mask[i * t + static_cast<std::size_t>(f)] = T(1);
      }
    }
    out.pitch = variance_predictor(g, "pitch_predictor", reg_prosody, out.frame_mask);
    out.energy = variance_predictor(g, "energy_predictor", reg_prosody, out.frame_mask);
    const Tensor<T>& pitch_in = opt.teacher_force ? batch.pitch : out.pitch.value();
    const Tensor<T>& energy_in = opt.teacher_force ? batch.energy : out.energy.value();
    Var<T> dec_in = mask_rows(add_variances(g, reg_e1, pitch_in, energy_in), out.frame_mask);
    out.mel = decode(g, dec_in, out.frame_mask);
    return out;
  }

 private:
  Var<T> affine(Graph<T>& g, Var<T> x, const std::string& name) const {
    return add(matmul(x, g.param(name + ".w")), g.param(name + ".b"));
  }

  // Post-norm feed-forward transformer block.
  Var<T> fft_block(Graph<T>& g, Var<T> x, const Tensor<T>& mask, const std::string& p) const {
    Var<T> q = affine(g, x, p + ".attn.q");
    Var<T> k = affine(g, x, p + ".attn.k");
    Var<T> v = affine(g, x, p + ".attn.v");
    Var<T> a = affine(g, attention(q, k, v, mask, cfg_.heads), p + ".attn.o");
    x = layer_norm(add(x, dropout(a, cfg_.dropout)), g.param(p + ".ln1.g"), g.param(p + ".ln1.b"));
    x = mask_rows(x, mask);
    Var<T> f = relu(add(conv1d(x, g.param(p + ".ffn.conv1.w")), g.param(p + ".ffn.conv1.b")));
    f = mask_rows(f, mask);
    f = add(conv1d(f, g.param(p + ".ffn.conv2.w")), g.param(p + ".ffn.conv2.b"));
    x = layer_norm(add(x, dropout(f, cfg_.dropout)), g.param(p + ".ln2.g"), g.param(p + ".ln2.b"));
    return mask_rows(x, mask);
  }

  void add_linear(const std::string& name, std::size_t in, std::size_t out, ParamGroup grp, std::uint64_t seed) {
    params_.add(name + ".w", {in, out}, InitScheme::xavier_uniform, grp, seed);
    params_.add(name + ".b", {out}, InitScheme::zeros, grp, seed);
  }

  void add_layer_norm(const std::string& name, std::size_t n, ParamGroup grp, std::uint64_t seed) {
    params_.add(name + ".g", {n}, InitScheme::ones, grp, seed);
    params_.add(name + ".b", {n}, InitScheme::zeros, grp, seed);
  }

  void add_fft_block(const std::string& p, std::uint64_t seed) {
    const std::size_t h = cfg_.hidden;
    const auto bb = ParamGroup::backbone;
    for (const char* m : {".attn.q", ".attn.k", ".attn.v", ".attn.o"}) add_linear(p + m, h, h, bb, seed);
    add_layer_norm(p + ".ln1", h, bb, seed);
    params_.add(p + ".ffn.conv1.w", {cfg_.ffn_kernel, h, cfg_.filter}, InitScheme::xavier_uniform, bb, seed);
    params_.add(p + ".ffn.conv1.b", {cfg_.filter}, InitScheme::zeros, bb, seed);
    params_.add(p + ".ffn.conv2.w", {cfg_.ffn_kernel2, cfg_.filter, h}, InitScheme::xavier_uniform, bb, seed);
    params_.add(p + ".ffn.conv2.b", {h}, InitScheme::zeros, bb, seed);
    add_layer_norm(p + ".ln2", h, bb, seed);
  }

  void add_variance_predictor(const std::string& p, std::uint64_t seed) {
    const std::size_t h = cfg_.hidden, c = cfg_.vp_channels, k = cfg_.vp_kernel;
    const auto pg = ParamGroup::prosody;
    params_.add(p + ".conv1.w", {k, h, c}, InitScheme::xavier_uniform, pg, seed);
    params_.add(p + ".conv1.b", {c}, InitScheme::zeros, pg, seed);
    add_layer_norm(p + ".ln1", c, pg, seed);
    params_.add(p + ".conv2.w", {k, c, c}, InitScheme::xavier_uniform, pg, seed);
    params_.add(p + ".conv2.b", {c}, InitScheme::zeros, pg, seed);
    add_layer_norm(p + ".ln2", c, pg, seed);
    add_linear(p + ".linear", c, 1, pg, seed);
  }

  void build(std::uint64_t seed) {
    const std::size_t h = cfg_.hidden;
    const auto bb = ParamGroup::backbone, pg = ParamGroup::prosody;
    params_.add("phoneme_embedding", {cfg_.vocab, h}, InitScheme::embedding_normal, bb, seed);
    add_linear("speaker_proj", cfg_.speaker_dim, h, bb, seed);
    for (std::size_t i = 0; i < cfg_.encoder_layers; ++i) add_fft_block("encoder." + std::to_string(i), seed);
    params_.add("pitch_embedding", {cfg_.buckets, h}, InitScheme::embedding_normal, bb, seed);
    params_.add("energy_embedding", {cfg_.buckets, h}, InitScheme::embedding_normal, bb, seed);
    for (std::size_t i = 0; i < cfg_.decoder_layers; ++i) add_fft_block("decoder." + std::to_string(i), seed);
    add_linear("mel_proj", h, cfg_.mel_bins, bb, seed);

    params_.add("pc.v_arousal", {h}, InitScheme::embedding_normal, pg, seed);
    params_.add("pc.v_valence", {h}, InitScheme::embedding_normal, pg, seed);
    add_linear("pc.condition", 2 * h, h, pg, seed);
    // Identity on the E1 half, so E2 starts as E1 plus the affect term.
    auto& w = params_["pc.condition.w"];
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < h; ++j) w[i * h + j] = i == j ? T(1) : T(0);
    add_variance_predictor("duration_predictor", seed);
    add_variance_predictor("pitch_predictor", seed);
    add_variance_predictor("energy_predictor", seed);
  }

  ModelConfig cfg_;
  ParamStore<T> params_;
  VarianceRanges ranges_;
};

}  // namespace avtts
