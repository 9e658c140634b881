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
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avtts/adam.hpp"
#include "avtts/dataset.hpp"
#include "avtts/io.hpp"
#include "avtts/log.hpp"
#include "avtts/model.hpp"

namespace avtts {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossWeights {
  double mel = 1.0, duration = 1.0, pitch = 1.0, energy = 1.0;
};

struct TrainConfig {
  std::size_t batch_size = 16;
  double lr = 1e-4;
  std::uint64_t warmup_steps = 4000;
  std::uint64_t steps = 2000;  // per stage
  LossWeights weights;
  bool mel_mae = true;         // false: MSE
  std::uint64_t seed = 0;
  std::uint64_t checkpoint_interval = 500;
  std::uint64_t log_interval = 50;

  void validate() const {
    if (batch_size < 1) throw TrainError("TrainConfig: batch_size must be >= 1");
    if (steps < 1) throw TrainError("TrainConfig: steps must be >= 1");
    if (!(lr > 0)) throw TrainError("TrainConfig: lr must be positive");
    for (double w : {weights.mel, weights.duration, weights.pitch, weights.energy})
      if (!(w >= 0)) throw TrainError("TrainConfig: loss weights must be >= 0");
  }

  AdamConfig adam() const {
    AdamConfig a;
    a.lr = lr;
    a.warmup_steps = warmup_steps;
    return a;
  }
};

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"lr", c.lr},
          {"warmup_steps", c.warmup_steps},
          {"steps", c.steps},
          {"loss_weights",
           {{"mel", c.weights.mel}, {"duration", c.weights.duration}, {"pitch", c.weights.pitch}, {"energy", c.weights.energy}}},
          {"mel_loss", c.mel_mae ? "mae" : "mse"},
          {"seed", c.seed},
          {"checkpoint_interval", c.checkpoint_interval},
          {"log_interval", c.log_interval}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
  if (!j.is_object()) throw TrainError("train config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "warmup_steps") c.warmup_steps = v.get<std::uint64_t>();
      else if (key == "steps") c.steps = v.get<std::uint64_t>();
      else if (key == "mel_loss") {
        const auto s = v.get<std::string>();
        if (s != "mae" && s != "mse") throw TrainError("mel_loss must be \"mae\" or \"mse\"");
        c.mel_mae = s == "mae";
      } else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "checkpoint_interval") c.checkpoint_interval = v.get<std::uint64_t>();
      else if (key == "log_interval") c.log_interval = v.get<std::uint64_t>();
      else if (key == "loss_weights") {
        for (const auto& [wk, wv] : v.items()) {
          if (wk == "mel") c.weights.mel = wv.get<double>();
          else if (wk == "duration") c.weights.duration = wv.get<double>();
          else if (wk == "pitch") c.weights.pitch = wv.get<double>();
          else if (wk == "energy") c.weights.energy = wv.get<double>();
          else throw TrainError("unknown loss weight '" + wk + "'");
        }
      } else {
        throw TrainError("unknown train config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw TrainError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

inline VarianceRanges ranges_from_stats(const FeatureStats& s) {
  return {s.pitch_min, s.pitch_max, s.energy_min, s.energy_max};
}

// ---- batching -------------------------------------------------------------

// Pads prepared utterances into a model batch with standardized targets.
// `need_affect` makes a missing AffectPoint an error naming the utterance.
template <typename T>
Batch<T> collate(const std::vector<const PreparedUtterance*>& items, const FeatureStats& stats, const ModelConfig& mc,
                 bool need_affect) {
  if (items.empty()) throw TrainError("collate: empty batch");
  Batch<T> b;
  b.size = items.size();
  b.has_targets = true;
  b.has_affect = true;
  for (const auto* u : items) {
    b.length = std::max(b.length, u->phoneme_ids.size());
    b.frames = std::max(b.frames, u->frames());
    if (!u->affect) {
      if (need_affect) throw TrainError("utterance '" + u->id + "' has no arousal/valence label");
      b.has_affect = false;
    }
  }
  const std::size_t n = b.size, l = b.length, t = b.frames, m = mc.mel_bins;
  b.ids.assign(n * l, 0);
  b.phone_mask = Tensor<T>({n, l}, T(0));
  b.speaker = Tensor<T>({n, mc.speaker_dim}, T(0));
  b.arousal = Tensor<T>({n}, T(0));
  b.valence = Tensor<T>({n}, T(0));
  b.durations.assign(n * l, 0);
  b.log_duration = Tensor<T>({n, l}, T(0));
  b.mel = Tensor<T>({n, t, m}, T(0));
  b.pitch = Tensor<T>({n, t}, T(0));
  b.energy = Tensor<T>({n, t}, T(0));
  b.frame_mask = Tensor<T>({n, t}, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& u = *items[i];
    if (u.embedding.size() != mc.speaker_dim)
      throw TrainError("utterance '" + u.id + "': speaker embedding has " + std::to_string(u.embedding.size()) +
                       " values, model expects " + std::to_string(mc.speaker_dim));
    if (u.mel.cols != m) throw TrainError("utterance '" + u.id + "': mel has " + std::to_string(u.mel.cols) + " bins");
    if (u.durations.size() != u.phoneme_ids.size()) throw TrainError("utterance '" + u.id + "': duration count mismatch");
    long total = 0;
    for (std::size_t j = 0; j < u.phoneme_ids.size(); ++j) {
      const int id = u.phoneme_ids[j];
      if (id < 0 || std::size_t(id) >= mc.vocab) throw TrainError("utterance '" + u.id + "': phoneme id out of range");
      b.ids[i * l + j] = id;
      b.phone_mask[i * l + j] = T(1);
      b.durations[i * l + j] = u.durations[j];
      b.log_duration[i * l + j] = static_cast<T>(std::log(double(u.durations[j]) + 1.0));
      total += u.durations[j];
    }
    if (std::size_t(total) != u.frames())
      throw TrainError("utterance '" + u.id + "': durations sum to " + std::to_string(total) + ", audio has " +
                       std::to_string(u.frames()) + " frames");
    for (std::size_t k = 0; k < mc.speaker_dim; ++k) b.speaker[i * mc.speaker_dim + k] = static_cast<T>(u.embedding[k]);
    if (u.affect) {
      b.arousal[i] = static_cast<T>(u.affect->arousal_norm());
      b.valence[i] = static_cast<T>(u.affect->valence_norm());
    }
    const auto p = stats.standardize_pitch(u), e = stats.standardize_energy(u);
    for (std::size_t f = 0; f < u.frames(); ++f) {
      b.frame_mask[i * t + f] = T(1);
      b.pitch[i * t + f] = static_cast<T>(p[f]);
      b.energy[i * t + f] = static_cast<T>(e[f]);
      for (std::size_t c = 0; c < m; ++c) b.mel[(i * t + f) * m + c] = static_cast<T>(u.mel.at(f, c));
    }
  }
  return b;
}

// Single-utterance inference batch (no targets).
template <typename T>
Batch<T> inference_batch(const std::vector<int>& phonemes, const std::vector<float>& speaker,
                         const std::optional<AffectPoint>& affect, const ModelConfig& mc) {
  if (phonemes.empty()) throw TrainError("synthesis needs at least one phoneme");
  if (speaker.size() != mc.speaker_dim)
    throw TrainError("speaker embedding has " + std::to_string(speaker.size()) + " values, model expects " +
                     std::to_string(mc.speaker_dim));
  Batch<T> b;
  b.size = 1;
  b.length = phonemes.size();
  for (int id : phonemes)
    if (id < 0 || std::size_t(id) >= mc.vocab) throw TrainError("phoneme id " + std::to_string(id) + " out of range");
  b.ids = phonemes;
  b.phone_mask = Tensor<T>({1, b.length}, T(1));
  b.speaker = Tensor<T>({1, mc.speaker_dim});
  for (std::size_t k = 0; k < mc.speaker_dim; ++k) b.speaker[k] = static_cast<T>(speaker[k]);
  b.has_affect = affect.has_value();
  b.arousal = Tensor<T>({1}, affect ? static_cast<T>(affect->arousal_norm()) : T(0));
  b.valence = Tensor<T>({1}, affect ? static_cast<T>(affect->valence_norm()) : T(0));
  return b;
}

// ---- losses ---------------------------------------------------------------

template <typename T>
struct LossTerms {
  Var<T> mel, duration, pitch, energy, total;
};

// L = w_mel L_mel + w_dur L_dur + w_pitch L_pitch + w_energy L_energy, each a
// mean over unmasked elements.
template <typename T>
LossTerms<T> total_loss(const ForwardOutput<T>& out, const Batch<T>& b, const TrainConfig& cfg) {
  if (!b.has_targets) throw TrainError("total_loss: batch has no targets");
  LossTerms<T> l;
  l.mel = cfg.mel_mae ? masked_mae(out.mel, b.mel, b.frame_mask) : masked_mse(out.mel, b.mel, b.frame_mask);
  l.duration = masked_mse(out.log_duration, b.log_duration, b.phone_mask);
  l.pitch = masked_mse(out.pitch, b.pitch, b.frame_mask);
  l.energy = masked_mse(out.energy, b.energy, b.frame_mask);
  const auto& w = cfg.weights;
  l.total = add(add(scale(l.mel, T(w.mel)), scale(l.duration, T(w.duration))),
                add(scale(l.pitch, T(w.pitch)), scale(l.energy, T(w.energy))));
  return l;
}

struct StepMetrics {
  std::uint64_t step = 0;  // 1-based
  double mel = 0, duration = 0, pitch = 0, energy = 0, total = 0;
};

// ---- checkpoints ----------------------------------------------------------

struct Checkpoint {
  static constexpr char magic[6] = {'A', 'V', 'T', 'T', 'S', '1'};
  static constexpr std::uint32_t version = 1;

  int stage = 1;
  std::uint64_t step = 0;
  ModelConfig model;
  TrainConfig train;
  FeatureStats stats;
  ParamStore<float> params;
  std::uint64_t adam_steps = 0;
  std::vector<Tensor<float>> adam_m, adam_v;  // empty: no optimizer state

  Model<float> build_model() const { return Model<float>(model, params, ranges_from_stats(stats)); }
};

namespace detail {

inline void put_tensor_data(ByteWriter& w, const Tensor<float>& t) { w.put_raw(t.data(), t.size() * sizeof(float)); }

inline void get_tensor_data(ByteReader& r, Tensor<float>& t) {
  if (r.remaining() < t.size() * sizeof(float)) r.fail("tensor data truncated");
  r.get_raw(t.data(), t.size() * sizeof(float));
}

}  // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& c) {
  ByteWriter w;
  w.put_raw(Checkpoint::magic, sizeof(Checkpoint::magic));
  w.put(Checkpoint::version);
  w.put(static_cast<std::uint8_t>(c.stage));
  w.put(c.step);
  const nlohmann::json meta{
      {"model", model_config_to_json(c.model)}, {"train", train_config_to_json(c.train)}, {"stats", stats_to_json(c.stats)}};
  w.put_string(meta.dump());
  w.put(static_cast<std::uint32_t>(c.params.size()));
  for (const auto& e : c.params.entries()) {
    w.put_string(e.name);
    w.put(static_cast<std::uint8_t>(e.group));
    w.put(static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) w.put(static_cast<std::uint64_t>(d));
    detail::put_tensor_data(w, e.value);
  }
  const bool has_adam = !c.adam_m.empty();
  if (has_adam && (c.adam_m.size() != c.params.size() || c.adam_v.size() != c.params.size()))
    throw TrainError("checkpoint: optimizer state does not match parameters");
  w.put(static_cast<std::uint8_t>(has_adam));
  w.put(c.adam_steps);
  if (has_adam)
    for (std::size_t i = 0; i < c.params.size(); ++i) {
      if (c.adam_m[i].shape() != c.params.entry(i).value.shape() || c.adam_v[i].shape() != c.params.entry(i).value.shape())
        throw TrainError("checkpoint: optimizer state shape mismatch for " + c.params.entry(i).name);
      detail::put_tensor_data(w, c.adam_m[i]);
      detail::put_tensor_data(w, c.adam_v[i]);
    }
  w.put_raw("END!", 4);
  return w.take();
}

inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& what = "checkpoint") {
  ByteReader r(bytes, what);
  char magic[sizeof(Checkpoint::magic)];
  if (r.remaining() < sizeof(magic)) r.fail("file too short");
  r.get_raw(magic, sizeof(magic));
  if (std::memcmp(magic, Checkpoint::magic, sizeof(magic)) != 0) r.fail("not an avtts checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::version) r.fail("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.stage = r.get<std::uint8_t>();
  if (c.stage != 1 && c.stage != 2) r.fail("invalid stage tag " + std::to_string(c.stage));
  c.step = r.get<std::uint64_t>();
  try {
    const auto meta = nlohmann::json::parse(r.get_string());
    c.model = model_config_from_json(meta.at("model"));
    c.train = train_config_from_json(meta.at("train"));
    c.stats = stats_from_json(meta.at("stats"));
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("bad metadata: ") + e.what());
  } catch (const ModelError& e) {
    r.fail(e.what());
  } catch (const TrainError& e) {
    r.fail(e.what());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.get_string();
    const auto group = r.get<std::uint8_t>();
    if (group > 1) r.fail("invalid parameter group for " + name);
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) r.fail("invalid rank for " + name);
    Shape shape(rank);
    std::uint64_t n = 1;
    for (auto& d : shape) {
      const auto v = r.get<std::uint64_t>();
      if (v == 0 || v > r.remaining()) r.fail("invalid extent for " + name);
      d = static_cast<std::size_t>(v);
      n *= v;
    }
    if (n > r.remaining() / sizeof(float)) r.fail("tensor data truncated for " + name);
    Tensor<float> t(shape);
    detail::get_tensor_data(r, t);
    c.params.add(std::move(name), std::move(t), static_cast<ParamGroup>(group));
  }
  const bool has_adam = r.get<std::uint8_t>() != 0;
  c.adam_steps = r.get<std::uint64_t>();
  if (has_adam)
    for (const auto& e : c.params.entries()) {
      c.adam_m.emplace_back(e.value.shape());
      c.adam_v.emplace_back(e.value.shape());
      detail::get_tensor_data(r, c.adam_m.back());
      detail::get_tensor_data(r, c.adam_v.back());
    }
  char end[4];
  if (r.remaining() < 4) r.fail("missing end marker");
  r.get_raw(end, 4);
  if (std::memcmp(end, "END!", 4) != 0) r.fail("bad end marker");
  if (!r.done()) r.fail("trailing bytes");
  try {
    (void)c.build_model();  // names and shapes must match the config
  } catch (const ModelError& e) {
    r.fail(e.what());
  }
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) { write_file_bytes(path, encode_checkpoint(c)); }

inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path), path); }

// ---- metrics --------------------------------------------------------------

inline std::string metrics_header() { return "step,L_mel,L_dur,L_pitch,L_energy,total"; }

inline std::string metrics_row(const StepMetrics& m) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%llu,%.9g,%.9g,%.9g,%.9g,%.9g", static_cast<unsigned long long>(m.step), m.mel,
                m.duration, m.pitch, m.energy, m.total);
  return buf;
}

// Appends per-step rows to a CSV. Opening at `resume_step` drops rows past
// that step so a resumed run reproduces the uninterrupted file.
class MetricsCsv {
 public:
  MetricsCsv(const std::string& path, std::uint64_t resume_step) : path_(path) {
    std::vector<std::string> keep;
    if (resume_step > 0 && std::filesystem::exists(path)) {
      std::ifstream in(path);
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (std::stoull(line.substr(0, line.find(','))) <= resume_step) keep.push_back(line);
      }
    }
    out_.open(path, std::ios::trunc);
    if (!out_) throw TrainError("cannot write metrics to " + path);
    out_ << metrics_header() << '\n';
    for (const auto& l : keep) out_ << l << '\n';
    out_.flush();
  }

  void append(const StepMetrics& m) {
    out_ << metrics_row(m) << '\n';
    out_.flush();
  }

 private:
  std::string path_;
  std::ofstream out_;
};

// ---- trainer --------------------------------------------------------------

// One training stage. Stage 1 routes E1 into the predictors and trains every
// parameter; stage 2 routes E2 and trains only the prosody group.
class Trainer {
 public:
  // Fresh stage-1 run.
  static Trainer stage1(const PreparedCorpus& data, const ModelConfig& mc, const TrainConfig& tc) {
    tc.validate();
    Model<float> model(mc, tc.seed);
    model.set_ranges(ranges_from_stats(data.stats));
    return Trainer(1, std::move(model), data.stats, tc, data.items, 0, nullptr);
  }

  // Fresh stage-2 run from a checkpoint. Targets are standardized with the
  // checkpoint's statistics so the frozen pitch/energy embeddings see the
  // scale they were trained on.
  static Trainer stage2(const Checkpoint& init, const PreparedCorpus& data, const TrainConfig& tc) {
    tc.validate();
    for (const auto& u : data.items)
      if (!u.affect) throw TrainError("stage 2: utterance '" + u.id + "' has no arousal/valence label");
    return Trainer(2, init.build_model(), init.stats, tc, data.items, 0, nullptr);
  }

  // Continues the run stored in `ck`. `steps` (when nonzero) overrides the
  // stage length.
  static Trainer resume(const Checkpoint& ck, const PreparedCorpus& data, std::uint64_t steps = 0) {
    TrainConfig tc = ck.train;
    if (steps) tc.steps = steps;
    if (ck.stage == 2)
      for (const auto& u : data.items)
        if (!u.affect) throw TrainError("stage 2: utterance '" + u.id + "' has no arousal/valence label");
    return Trainer(ck.stage, ck.build_model(), ck.stats, tc, data.items, ck.step, &ck);
  }

  int stage() const noexcept { return stage_; }
  std::uint64_t step_count() const noexcept { return step_; }
  const TrainConfig& config() const noexcept { return cfg_; }
  const Model<float>& model() const noexcept { return model_; }
  const FeatureStats& stats() const noexcept { return stats_; }
  const std::vector<Tensor<float>>& last_gradients() const noexcept { return grads_; }
  bool done() const noexcept { return step_ >= cfg_.steps; }

  StepMetrics step() {
    const auto idx = batch_indices(step_);
    std::vector<const PreparedUtterance*> items;
    for (auto i : idx) items.push_back(&(*data_)[i]);
    const Batch<float> batch = collate<float>(items, stats_, model_.config(), stage_ == 2);
    Graph<float> g(&model_.params(), true, hash_combine(cfg_.seed, hash_combine(0x7374657000ULL + stage_, step_)),
                   mask_);
    const auto out = model_.forward(g, batch, {stage_ == 2 ? Route::e2 : Route::e1, true});
    const auto loss = total_loss(out, batch, cfg_);
    grads_ = g.backward(loss.total);
    adam_.step(model_.params(), grads_, mask_);
    ++step_;
    StepMetrics m;
    m.step = step_;
    m.mel = loss.mel.value().item();
    m.duration = loss.duration.value().item();
    m.pitch = loss.pitch.value().item();
    m.energy = loss.energy.value().item();
    m.total = loss.total.value().item();
    if (!std::isfinite(m.total)) throw TrainError("loss became non-finite at step " + std::to_string(step_));
    return m;
  }

  // Runs until the configured step count. `on_step` sees every step;
  // `on_checkpoint` runs every checkpoint_interval steps and at the end.
  void run(const std::function<void(const StepMetrics&)>& on_step = {},
           const std::function<void(const Checkpoint&)>& on_checkpoint = {}) {
    while (!done()) {
      const auto m = step();
      if (on_step) on_step(m);
      if ((cfg_.checkpoint_interval && step_ % cfg_.checkpoint_interval == 0) || done()) {
        verify_frozen();
        if (on_checkpoint) on_checkpoint(checkpoint());
      }
    }
  }

  // Stage 2 never touches a backbone tensor; throws on any byte difference.
  void verify_frozen() const {
    if (stage_ != 2) return;
    for (const auto& [i, ref] : frozen_) {
      const auto& now = model_.params().entry(i).value;
      if (std::memcmp(now.data(), ref.data(), ref.size() * sizeof(float)) != 0)
        throw TrainError("freeze violated: backbone tensor '" + model_.params().entry(i).name + "' changed in stage 2");
    }
  }

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.stage = stage_;
    c.step = step_;
    c.model = model_.config();
    c.train = cfg_;
    c.stats = stats_;
    c.params = model_.params();
    c.adam_steps = adam_.steps();
    c.adam_m = adam_.first_moments();
    c.adam_v = adam_.second_moments();
    return c;
  }

  // Utterance indices of the batch used at 0-based step `s`: epoch-seeded
  // bucketed shuffles, so the order is a pure function of (seed, s).
  std::vector<std::size_t> batch_indices(std::uint64_t s) {
    const std::uint64_t epoch = s / batches_per_epoch_;
    if (!epoch_batches_ || cached_epoch_ != epoch) {
      epoch_batches_ = std::make_shared<std::vector<std::vector<std::size_t>>>(
          make_batches(lengths_, cfg_.batch_size, cfg_.seed, epoch));
      cached_epoch_ = epoch;
    }
    return (*epoch_batches_)[s % batches_per_epoch_];
  }

 private:
  Trainer(int stage, Model<float> model, FeatureStats stats, TrainConfig cfg, const std::vector<PreparedUtterance>& data,
          std::uint64_t step, const Checkpoint* resume_from)
      : stage_(stage),
        model_(std::move(model)),
        stats_(std::move(stats)),
        cfg_(cfg),
        data_(std::make_shared<const std::vector<PreparedUtterance>>(data)),
        adam_(model_.params(), cfg.adam()),
        step_(step) {
    if (data_->empty()) throw TrainError("training data is empty");
    mask_ = model_.trainable_mask(stage_);
    for (const auto& u : *data_) lengths_.push_back(u.frames());
    batches_per_epoch_ = make_batches(lengths_, cfg_.batch_size, cfg_.seed, 0).size();
    if (resume_from && !resume_from->adam_m.empty()) {
      adam_.first_moments() = resume_from->adam_m;
      adam_.second_moments() = resume_from->adam_v;
      adam_.set_steps(resume_from->adam_steps);
    }
    if (stage_ == 2)
      for (std::size_t i = 0; i < model_.params().size(); ++i)
        if (!mask_[i]) frozen_.emplace(i, model_.params().entry(i).value);
  }

  int stage_;
  Model<float> model_;
  FeatureStats stats_;
  TrainConfig cfg_;
  std::shared_ptr<const std::vector<PreparedUtterance>> data_;
  Adam<float> adam_;
  std::uint64_t step_;
  std::vector<bool> mask_;
  std::vector<std::size_t> lengths_;
  std::size_t batches_per_epoch_ = 1;
  std::shared_ptr<std::vector<std::vector<std::size_t>>> epoch_batches_;
  std::uint64_t cached_epoch_ = 0;
  std::map<std::size_t, Tensor<float>> frozen_;
  std::vector<Tensor<float>> grads_;
};

// ---- synthesis ------------------------------------------------------------

struct SynthesisResult {
  MelSpectrogram mel;
  std::vector<int> durations;
  std::vector<float> pitch, energy;  // standardized, per frame
};

// Runs the model on one utterance. Stage-1 models ignore `affect`. With a
// `teacher`, durations, pitch and energy come from the prepared features.
inline SynthesisResult synthesize(const Model<float>& model, int stage, const FeatureStats& stats,
                                  const std::vector<int>& phonemes, const std::vector<float>& speaker,
                                  std::optional<AffectPoint> affect, const PreparedUtterance* teacher = nullptr) {
  const auto& mc = model.config();
  Batch<float> b;
  if (teacher) {
    PreparedUtterance u = *teacher;
    u.embedding = speaker;
    u.affect = affect;
    if (u.phoneme_ids != phonemes) throw TrainError("teacher-forced synthesis: phonemes differ from the reference");
    b = collate<float>({&u}, stats, mc, false);
  } else {
    b = inference_batch<float>(phonemes, speaker, affect, mc);
  }
  const Route route = stage == 2 && affect ? Route::e2 : Route::e1;
  Graph<float> g(&model.params());
  const auto out = model.forward(g, b, {route, teacher != nullptr});
  SynthesisResult r;
  r.durations = out.durations;
  r.mel.frames = out.frames;
  r.mel.cols = mc.mel_bins;
  r.mel.data.assign(out.mel.value().storage().begin(), out.mel.value().storage().end());
  r.pitch.assign(out.pitch.value().storage().begin(), out.pitch.value().storage().end());
  r.energy.assign(out.energy.value().storage().begin(), out.energy.value().storage().end());
  return r;
}

}  // namespace avtts
