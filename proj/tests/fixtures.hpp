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

// Small model configs and random batches for unit tests.

#pragma once

#include <cmath>
#include <vector>

#include "avtts/dataset.hpp"
#include "avtts/model.hpp"
#include "avtts/rng.hpp"

namespace avtts::testing_fixtures {

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.speaker_dim = 8;
  c.hidden = 8;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.heads = 2;
  c.filter = 12;
  c.ffn_kernel = 3;
  c.vp_channels = 6;
  c.buckets = 16;
  c.mel_bins = 5;
  c.max_phonemes = 64;
  return c;
}

inline std::vector<float> random_unit(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  double s = 0;
  for (auto& x : v) {
    x = static_cast<float>(rng.normal());
    s += double(x) * x;
  }
  for (auto& x : v) x = static_cast<float>(x / std::sqrt(s));
  return v;
}

// Random padded batch with consistent targets. `lengths` are phoneme counts.
template <typename T>
Batch<T> random_batch(const ModelConfig& cfg, const std::vector<std::size_t>& lengths, std::uint64_t seed,
                      bool affect = true, int max_duration = 4) {
  Rng rng(seed);
  Batch<T> b;
  b.size = lengths.size();
  b.length = 0;
  for (auto l : lengths) b.length = std::max(b.length, l);
  b.ids.assign(b.size * b.length, 0);
  b.phone_mask = Tensor<T>({b.size, b.length}, T(0));
  b.durations.assign(b.size * b.length, 0);
  b.log_duration = Tensor<T>({b.size, b.length}, T(0));
  std::vector<std::size_t> totals(b.size, 0);
  for (std::size_t i = 0; i < b.size; ++i)
    for (std::size_t j = 0; j < lengths[i]; ++j) {
      b.ids[i * b.length + j] = rng.uniform_int(3, int(cfg.vocab) - 1);
      b.phone_mask[i * b.length + j] = T(1);
      const int d = rng.uniform_int(0, max_duration);
      b.durations[i * b.length + j] = d;
      b.log_duration[i * b.length + j] = static_cast<T>(std::log(d + 1.0));
      totals[i] += static_cast<std::size_t>(d);
    }
  for (std::size_t i = 0; i < b.size; ++i)
    if (totals[i] == 0) {
      b.durations[i * b.length] = 1;
      b.log_duration[i * b.length] = static_cast<T>(std::log(2.0));
      totals[i] = 1;
    }
  b.frames = *std::max_element(totals.begin(), totals.end());
  b.speaker = Tensor<T>({b.size, cfg.speaker_dim});
  for (std::size_t i = 0; i < b.size; ++i) {
    const auto u = random_unit(cfg.speaker_dim, rng);
    for (std::size_t k = 0; k < cfg.speaker_dim; ++k) b.speaker[i * cfg.speaker_dim + k] = static_cast<T>(u[k]);
  }
  b.has_affect = affect;
  b.arousal = Tensor<T>({b.size});
  b.valence = Tensor<T>({b.size});
  for (std::size_t i = 0; i < b.size; ++i) {
    b.arousal[i] = static_cast<T>(rng.uniform());
    b.valence[i] = static_cast<T>(rng.uniform());
  }
  b.has_targets = true;
  b.mel = Tensor<T>({b.size, b.frames, cfg.mel_bins}, T(0));
  b.pitch = Tensor<T>({b.size, b.frames}, T(0));
  b.energy = Tensor<T>({b.size, b.frames}, T(0));
  b.frame_mask = Tensor<T>({b.size, b.frames}, T(0));
  for (std::size_t i = 0; i < b.size; ++i)
    for (std::size_t t = 0; t < totals[i]; ++t) {
      b.frame_mask[i * b.frames + t] = T(1);
      b.pitch[i * b.frames + t] = static_cast<T>(rng.uniform(-1.5, 1.5));
      b.energy[i * b.frames + t] = static_cast<T>(rng.uniform(-1.5, 1.5));
      for (std::size_t m = 0; m < cfg.mel_bins; ++m)
        b.mel[(i * b.frames + t) * cfg.mel_bins + m] = static_cast<T>(rng.uniform(-5.0, 0.0));
    }
  return b;
}

// Prepared utterances whose targets are a smooth function of the phonemes,
// speaker and affect, so a tiny model can fit them.
inline std::vector<PreparedUtterance> random_prepared(const ModelConfig& cfg, std::size_t count, std::uint64_t seed,
                                                      bool affect = true, std::size_t speakers = 2) {
  Rng rng(seed);
  std::vector<std::vector<float>> voices;
  for (std::size_t s = 0; s < speakers; ++s) voices.push_back(random_unit(cfg.speaker_dim, rng));
  std::vector<PreparedUtterance> out;
  for (std::size_t n = 0; n < count; ++n) {
    PreparedUtterance u;
    u.id = "utt" + std::to_string(n);
    const std::size_t spk = n % speakers;
    u.speaker = "spk" + std::to_string(spk);
    u.embedding = voices[spk];
    const double a = rng.uniform();
    if (affect) u.affect = AffectPoint{1.0 + 6.0 * a, 1.0 + 6.0 * rng.uniform()};
    const std::size_t len = std::size_t(rng.uniform_int(3, 7));
    std::size_t frames = 0;
    for (std::size_t j = 0; j < len; ++j) {
      const int id = rng.uniform_int(3, 12);
      u.phoneme_ids.push_back(id);
      u.durations.push_back(1 + id % 3);
      frames += std::size_t(1 + id % 3);
    }
    u.mel.frames = frames;
    u.mel.cols = cfg.mel_bins;
    std::size_t f = 0;
    for (std::size_t j = 0; j < len; ++j)
      for (int r = 0; r < u.durations[j]; ++r, ++f) {
        const int id = u.phoneme_ids[j];
        for (std::size_t c = 0; c < cfg.mel_bins; ++c)
          u.mel.data.push_back(static_cast<float>(-3.0 + std::sin(0.7 * id * double(c + 1)) + 0.3 * double(spk)));
        u.log_f0.push_back(static_cast<float>(std::log(150.0 + 10.0 * (id % 4) + 40.0 * spk) + 0.3 * a));
        u.energy.push_back(static_cast<float>(1.0 + 0.1 * (id % 5) + 0.5 * a));
      }
    out.push_back(std::move(u));
  }
  return out;
}

inline PreparedCorpus random_corpus(const ModelConfig& cfg, std::size_t count, std::uint64_t seed, bool affect = true) {
  PreparedCorpus c;
  c.items = random_prepared(cfg, count, seed, affect);
  c.stats = compute_stats(c.items, false);
  return c;
}

}  // namespace avtts::testing_fixtures
