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

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avtts/audio.hpp"
#include "avtts/io.hpp"
#include "avtts/model.hpp"
#include "avtts/training.hpp"

namespace avtts {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline nlohmann::json audio_config_to_json(const AudioConfig& c) {
  return {{"sample_rate", c.sample_rate}, {"fft_size", c.fft_size},   {"hop", c.hop},
          {"win_length", c.win_length},   {"mel_bins", c.mel_bins},   {"fmin", c.fmin},
          {"fmax", c.fmax},               {"log_floor", c.log_floor}, {"f0_min", c.f0_min},
          {"f0_max", c.f0_max},           {"voicing_threshold", c.voicing_threshold}};
}

inline AudioConfig audio_config_from_json(const nlohmann::json& j, AudioConfig c = {}) {
  if (!j.is_object()) throw ConfigError("audio config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "sample_rate") c.sample_rate = v.get<int>();
      else if (key == "fft_size") c.fft_size = v.get<int>();
      else if (key == "hop") c.hop = v.get<int>();
      else if (key == "win_length") c.win_length = v.get<int>();
      else if (key == "mel_bins") c.mel_bins = v.get<int>();
      else if (key == "fmin") c.fmin = v.get<double>();
      else if (key == "fmax") c.fmax = v.get<double>();
      else if (key == "log_floor") c.log_floor = v.get<double>();
      else if (key == "f0_min") c.f0_min = v.get<double>();
      else if (key == "f0_max") c.f0_max = v.get<double>();
      else if (key == "voicing_threshold") c.voicing_threshold = v.get<double>();
      else throw ConfigError("unknown audio config key '" + key + "'");
    }
    c.validate();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("audio config: ") + e.what());
  } catch (const AudioError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

// Everything a command needs: audio front end, model, both training stages.
// "stage2" holds overrides applied on top of "train" for the second stage.
struct RunConfig {
  std::string model_preset = "paper";
  AudioConfig audio;
  ModelConfig model;
  TrainConfig train;
  nlohmann::json stage2_overrides = nlohmann::json::object();
  bool per_speaker_stats = false;

  TrainConfig stage_config(int stage) const {
    return stage == 2 ? train_config_from_json(stage2_overrides, train) : train;
  }
};

inline ModelConfig model_preset(const std::string& name) {
  if (name == "paper") return ModelConfig::paper();
  if (name == "compact") return ModelConfig::compact();
  throw ConfigError("unknown model preset '" + name + "' (expected paper or compact)");
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  return {{"model_preset", c.model_preset},
          {"audio", audio_config_to_json(c.audio)},
          {"model", model_config_to_json(c.model)},
          {"train", train_config_to_json(c.train)},
          {"stage2", c.stage2_overrides},
          {"data", {{"per_speaker_stats", c.per_speaker_stats}}}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, v] : j.items())
    if (key != "model_preset" && key != "audio" && key != "model" && key != "train" && key != "stage2" && key != "data")
      throw ConfigError("unknown config key '" + key + "'");
  RunConfig c;
  try {
    if (j.contains("model_preset")) c.model_preset = j.at("model_preset").get<std::string>();
    c.model = model_preset(c.model_preset);
    if (j.contains("audio")) c.audio = audio_config_from_json(j.at("audio"));
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"), c.model);
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("stage2")) {
      c.stage2_overrides = j.at("stage2");
      (void)train_config_from_json(c.stage2_overrides, c.train);  // validate now
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      if (!d.is_object()) throw ConfigError("data config must be a JSON object");
      for (const auto& [key, v] : d.items()) {
        if (key == "per_speaker_stats") c.per_speaker_stats = v.get<bool>();
        else throw ConfigError("unknown data config key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const ModelError& e) {
    throw ConfigError(e.what());
  } catch (const TrainError& e) {
    throw ConfigError(e.what());
  }
  if (c.model.mel_bins != std::size_t(c.audio.mel_bins))
    throw ConfigError("model.mel_bins (" + std::to_string(c.model.mel_bins) + ") must equal audio.mel_bins (" +
                      std::to_string(c.audio.mel_bins) + ")");
  return c;
}

// Applies "section.key=value" to a config document. The value is parsed as
// JSON when possible and taken as a string otherwise.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
    if (!node->is_object()) throw ConfigError("override '" + assignment + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = nlohmann::json::object();
    start = dot + 1;
  }
}

// Reads an optional config file, applies overrides, and validates.
inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  nlohmann::json doc = nlohmann::json::object();
  if (!path.empty()) {
    try {
      doc = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return run_config_from_json(doc);
}

}  // namespace avtts
