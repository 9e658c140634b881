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

// Corpus plumbing: JSON-Lines manifests, forced-alignment ingestion with
// the discard rule, a synthetic corpus with known ground truth, the prepared
// feature cache, and length-bucketed batching.

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "avtts/audio.hpp"
#include "avtts/io.hpp"
#include "avtts/log.hpp"
#include "avtts/rng.hpp"
#include "avtts/text.hpp"
#include "avtts/wav.hpp"

namespace avtts {

namespace fs = std::filesystem;
using nlohmann::json;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when an utterance must be dropped; the message is the reason.
class DiscardError : public DataError {
 public:
  using DataError::DataError;
};

// ---------------------------------------------------------------------------
// Affect

struct AffectPoint {
  double arousal = 1.0;  // raw 1..7
  double valence = 1.0;

  // Clamps into [1, 7]; sets *clamped when anything moved.
  static AffectPoint from_raw(double arousal, double valence, bool* clamped = nullptr) {
    AffectPoint p{std::clamp(arousal, 1.0, 7.0), std::clamp(valence, 1.0, 7.0)};
    if (clamped) *clamped = p.arousal != arousal || p.valence != valence;
    return p;
  }

  double arousal_norm() const noexcept { return (arousal - 1.0) / 6.0; }
  double valence_norm() const noexcept { return (valence - 1.0) / 6.0; }

  bool operator==(const AffectPoint&) const = default;
};

// ---------------------------------------------------------------------------
// Manifest

struct Utterance {
  std::string id;
  std::string wav;
  std::vector<std::string> phonemes;
  std::vector<int> durations;  // frames per phoneme, may be empty when an alignment is given
  std::string speaker;
  std::optional<AffectPoint> affect;
  std::string embedding_path;
  std::string alignment;  // optional `phoneme<TAB>start<TAB>end` file
};

struct Manifest {
  std::string root;  // directory relative paths resolve against
  std::vector<Utterance> utterances;

  std::string resolve(const std::string& path) const {
    if (path.empty() || fs::path(path).is_absolute()) return path;
    return (fs::path(root) / path).string();
  }
};

inline json utterance_to_json(const Utterance& u) {
  json j;
  j["id"] = u.id;
  j["wav"] = u.wav;
  j["phonemes"] = u.phonemes;
  j["durations"] = u.durations;
  j["speaker"] = u.speaker;
  if (u.affect) {
    j["arousal"] = u.affect->arousal;
    j["valence"] = u.affect->valence;
  }
  if (!u.embedding_path.empty()) j["embedding_path"] = u.embedding_path;
  if (!u.alignment.empty()) j["alignment"] = u.alignment;
  return j;
}

inline Utterance utterance_from_json(const json& j, const std::string& where) {
  static const std::set<std::string> known = {"id",      "wav",     "phonemes",       "durations", "speaker",
                                              "arousal", "valence", "embedding_path", "alignment"};
  if (!j.is_object()) throw DataError(where + ": expected a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw DataError(where + ": unknown field '" + key + "'");
  Utterance u;
  try {
    u.id = j.at("id").get<std::string>();
    u.wav = j.at("wav").get<std::string>();
    u.phonemes = j.at("phonemes").get<std::vector<std::string>>();
    if (j.contains("durations")) u.durations = j.at("durations").get<std::vector<int>>();
    u.speaker = j.value("speaker", std::string());
    u.embedding_path = j.value("embedding_path", std::string());
    u.alignment = j.value("alignment", std::string());
    const bool has_a = j.contains("arousal"), has_v = j.contains("valence");
    if (has_a != has_v) throw DataError(where + ": arousal and valence must be given together");
    if (has_a) {
      bool clamped = false;
      u.affect = AffectPoint::from_raw(j.at("arousal").get<double>(), j.at("valence").get<double>(), &clamped);
      if (clamped) log_warning(where + ": arousal/valence clamped into [1, 7]");
    }
  } catch (const json::exception& e) {
    throw DataError(where + ": " + e.what());
  }
  if (u.id.empty()) throw DataError(where + ": empty id");
  if (u.phonemes.empty()) throw DataError(where + ": empty phoneme list");
  if (!u.durations.empty() && u.durations.size() != u.phonemes.size())
    throw DataError(where + ": " + std::to_string(u.durations.size()) + " durations for " +
                    std::to_string(u.phonemes.size()) + " phonemes");
  for (int d : u.durations)
    if (d < 0) throw DataError(where + ": negative duration");
  return u;
}

inline Manifest parse_manifest(std::istream& in, const std::string& root, const std::string& name = "manifest") {
  Manifest m;
  m.root = root;
  std::set<std::string> ids;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = name + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(where + ": " + e.what());
    }
    auto u = utterance_from_json(j, where);
    if (!ids.insert(u.id).second) throw DataError(where + ": duplicate id '" + u.id + "'");
    m.utterances.push_back(std::move(u));
  }
  return m;
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open manifest: " + path);
  return parse_manifest(f, fs::path(path).parent_path().string(), path);
}

inline std::string manifest_text(const std::vector<Utterance>& utts) {
  std::string out;
  for (const auto& u : utts) out += utterance_to_json(u).dump() + "\n";
  return out;
}

inline void write_manifest(const std::string& path, const std::vector<Utterance>& utts) {
  write_text_file(path, manifest_text(utts));
}

// Reads a speaker embedding stored as a JSON array or {"embedding": [...]}.
// Non-unit vectors are renormalized.
inline std::vector<float> read_embedding(const std::string& path) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const std::exception& e) {
    throw DataError("cannot read speaker embedding " + path + ": " + e.what());
  }
  if (j.is_object() && j.contains("embedding")) j = j["embedding"];
  if (!j.is_array()) throw DataError(path + ": speaker embedding must be a JSON array");
  std::vector<double> v = j.get<std::vector<double>>();
  if (v.size() != static_cast<std::size_t>(kSpeakerEmbeddingDim))
    throw DataError(path + ": speaker embedding has " + std::to_string(v.size()) + " values, expected " +
                    std::to_string(kSpeakerEmbeddingDim));
  double n = 0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (!(n > 0) || !std::isfinite(n)) throw DataError(path + ": speaker embedding has zero or non-finite norm");
  if (std::abs(n - 1.0) > 1e-6) log_warning(path + ": speaker embedding renormalized (norm " + std::to_string(n) + ")");
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / n);
  return out;
}

inline void write_embedding(const std::string& path, const std::vector<float>& e, const std::string& speaker = "") {
  json j;
  if (!speaker.empty()) j["speaker"] = speaker;
  j["embedding"] = e;
  write_text_file(path, j.dump() + "\n");
}

// ---------------------------------------------------------------------------
// Alignment

struct AlignInterval {
  std::string label;
  double start = 0;
  double end = 0;
};

inline std::vector<AlignInterval> parse_alignment_text(std::istream& in) {
  std::vector<AlignInterval> out;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::istringstream ls(line);
    AlignInterval iv;
    std::string start, end;
    if (!std::getline(ls, iv.label, '\t') || !std::getline(ls, start, '\t') || !std::getline(ls, end, '\t'))
      throw DiscardError("alignment line " + std::to_string(lineno) + ": expected phoneme<TAB>start<TAB>end");
    try {
      std::size_t p1 = 0, p2 = 0;
      iv.start = std::stod(start, &p1);
      iv.end = std::stod(end, &p2);
      if (p1 != start.size() || p2 != end.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw DiscardError("alignment line " + std::to_string(lineno) + ": unparsable time");
    }
    if (!std::isfinite(iv.start) || !std::isfinite(iv.end))
      throw DiscardError("alignment line " + std::to_string(lineno) + ": non-finite time");
    out.push_back(std::move(iv));
  }
  return out;
}

inline std::vector<AlignInterval> read_alignment(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DiscardError("cannot open alignment " + path);
  return parse_alignment_text(f);
}

inline bool is_silence_label(const std::string& label) {
  std::string l = label;
  std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
  return l.empty() || l == "sil" || l == "sp" || l == "spn" || l == "<eps>";
}

inline bool same_phone(const std::string& a, const std::string& b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](unsigned char x, unsigned char y) {
           return std::toupper(x) == std::toupper(y);
         });
}

// Frame durations per transcript phoneme from aligned intervals. Boundaries
// are rounded once, b = round(t * sr / hop), so durations sum exactly to the
// final boundary. Labels must follow the transcript in order; transcript
// phonemes the aligner skipped get duration 0 (at most 10% of them).
// Silence intervals not in the transcript are merged into the preceding
// phoneme. Throws DiscardError naming the reason.
inline std::vector<int> parse_alignment(const std::vector<AlignInterval>& intervals,
                                        const std::vector<std::string>& transcript, const AudioConfig& cfg) {
  if (transcript.empty()) throw DiscardError("empty transcript");
  if (intervals.empty()) throw DiscardError("empty alignment");
  constexpr double kTol = 1e-6;
  double prev_end = 0;
  for (std::size_t i = 0; i < intervals.size(); ++i) {
    const auto& iv = intervals[i];
    if (iv.start < -kTol) throw DiscardError("negative start time at interval " + std::to_string(i));
    if (iv.end < iv.start) throw DiscardError("retrograde interval " + std::to_string(i) + " ('" + iv.label + "')");
    if (i > 0 && iv.start < prev_end - kTol)
      throw DiscardError("interval " + std::to_string(i) + " ('" + iv.label + "') overlaps its predecessor");
    prev_end = iv.end;
  }

  auto boundary = [&](double t) {
    return static_cast<long>(std::lround(std::max(0.0, t) * cfg.sample_rate / cfg.hop));
  };
  // start boundary of each matched transcript position, -1 = missing
  std::vector<long> starts(transcript.size(), -1);
  std::size_t j = 0;
  for (const auto& iv : intervals) {
    if (is_silence_label(iv.label)) {
      if (j < transcript.size() && transcript[j] == "SIL") starts[j++] = boundary(iv.start);
      continue;
    }
    std::size_t k = j;
    while (k < transcript.size() && !same_phone(transcript[k], iv.label)) ++k;
    if (k == transcript.size())
      throw DiscardError("alignment label '" + iv.label + "' does not match the transcript");
    starts[k] = boundary(iv.start);
    j = k + 1;
  }
  const auto missing = static_cast<std::size_t>(std::count(starts.begin(), starts.end(), -1L));
  if (missing * 10 > transcript.size())
    throw DiscardError(std::to_string(missing) + " of " + std::to_string(transcript.size()) +
                       " transcript phonemes missing from the alignment");

  const long total = boundary(intervals.back().end);
  std::vector<int> durations(transcript.size(), 0);
  bool first = true;
  for (std::size_t i = 0; i < transcript.size(); ++i) {
    if (starts[i] < 0) continue;
    const long b = first ? 0 : starts[i];
    first = false;
    std::size_t next = i + 1;
    while (next < transcript.size() && starts[next] < 0) ++next;
    const long e = next < transcript.size() ? starts[next] : total;
    if (e < b) throw DiscardError("alignment boundaries are not monotone");
    durations[i] = static_cast<int>(e - b);
  }
  return durations;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct PseudoPhone {
  const char* symbol;
  double f1, f2;      // formant centers, Hz
  double mean_ms;     // typical duration
  double f0_factor;   // intrinsic pitch
};

inline const std::array<PseudoPhone, 10>& pseudo_phones() {
  static const std::array<PseudoPhone, 10> table = {{{"AA1", 750, 1100, 170, 0.95},
                                                     {"AE1", 650, 1700, 190, 1.00},
                                                     {"AH1", 550, 1200, 120, 0.92},
                                                     {"AO1", 600, 900, 200, 0.97},
                                                     {"EH1", 530, 1850, 150, 1.03},
                                                     {"ER1", 480, 1350, 160, 0.98},
                                                     {"IH1", 400, 2000, 110, 1.08},
                                                     {"IY1", 300, 2300, 180, 1.10},
                                                     {"UH1", 420, 1000, 100, 1.05},
                                                     {"UW1", 320, 850, 210, 0.90}}};
  return table;
}

inline const PseudoPhone& pseudo_phone(const std::string& symbol) {
  for (const auto& p : pseudo_phones())
    if (symbol == p.symbol) return p;
  throw DataError("not a synthetic pseudo-phoneme: " + symbol);
}

struct SyntheticVoice {
  std::string id;
  double base_f0 = 150;  // Hz
  double tilt = 1.0;     // harmonic roll-off exponent
};

// One rendered utterance plus the ground truth it was built from.
struct SyntheticRender {
  std::vector<float> samples;
  std::vector<float> f0;             // per frame, Hz
  std::vector<std::uint8_t> stable;  // analysis window inside a single segment
};

struct SegmentSpec {
  std::string symbol;
  int frames = 1;
  double amplitude = 0.5;
};

// Harmonic pseudo-speech. Segment i covers frames [b_i, b_{i+1}), i.e.
// samples [b_i*hop - hop/2, b_{i+1}*hop - hop/2), so the rendered length
// sum(frames)*hop - hop/2 yields exactly sum(frames) STFT frames.
inline SyntheticRender render_pseudo_speech(const SyntheticVoice& voice, const std::vector<SegmentSpec>& segments,
                                            const std::optional<AffectPoint>& affect, const AudioConfig& cfg) {
  const double a = affect ? affect->arousal_norm() : 0.0;
  const double v = affect ? affect->valence_norm() : 0.5;
  const double sr = cfg.sample_rate;
  const long hop = cfg.hop;
  long frames = 0;
  for (const auto& s : segments) frames += s.frames;
  if (segments.empty() || frames < 1) throw DataError("render_pseudo_speech: no frames");
  const long n = frames * hop - hop / 2;
  const double t_mid = 0.5 * double(n) / sr;
  const double slope = (v - 0.5) * 20.0;
  constexpr double kGain = 0.8;
  constexpr int kMaxHarmonics = 30;
  constexpr double kMaxHarmonicHz = 4000.0;

  SyntheticRender r;
  r.samples.assign(static_cast<std::size_t>(n), 0.0f);
  r.f0.assign(static_cast<std::size_t>(frames), 0.0f);
  r.stable.assign(static_cast<std::size_t>(frames), 0);

  auto f0_at = [&](const PseudoPhone& p, double t) { return voice.base_f0 * p.f0_factor * (1.0 + 0.3 * a) + slope * (t - t_mid); };

  double phase = 0;
  long b = 0;
  for (const auto& seg : segments) {
    const auto& p = pseudo_phone(seg.symbol);
    const long s0 = std::max(0L, b * hop - hop / 2);
    const long s1 = std::min(n, (b + seg.frames) * hop - hop / 2);
    const double amp = kGain * seg.amplitude * (1.0 + 0.5 * a);
    for (long i = s0; i < s1; ++i) {
      const double t = double(i) / sr;
      const double f = f0_at(p, t);
      phase += 2.0 * std::numbers::pi * f / sr;
      if (phase > 2.0 * std::numbers::pi * 1e6) phase = std::fmod(phase, 2.0 * std::numbers::pi);
      double acc = 0, norm = 0;
      for (int h = 1; h <= kMaxHarmonics && h * f < kMaxHarmonicHz; ++h) {
        const double hf = h * f;
        const double env = 0.3 + std::exp(-std::pow((hf - p.f1) / 150.0, 2)) + 0.7 * std::exp(-std::pow((hf - p.f2) / 200.0, 2));
        const double w = env / std::pow(double(h), voice.tilt);
        acc += w * std::sin(h * phase);
        norm += w;
      }
      r.samples[i] = static_cast<float>(amp * acc / norm);
    }
    for (long t = b; t < b + seg.frames; ++t) {
      r.f0[t] = static_cast<float>(f0_at(p, double(t * hop) / sr));
      const long w0 = t * hop - cfg.fft_size / 2, w1 = t * hop + cfg.fft_size / 2;
      r.stable[t] = w0 >= s0 && w1 <= s1 && w0 >= 0 && w1 <= n;
    }
    b += seg.frames;
  }
  // 5 ms fades at both ends.
  const long fade = std::min<long>(n / 2, static_cast<long>(0.005 * sr));
  for (long i = 0; i < fade; ++i) {
    const float g = float(i) / float(fade);
    r.samples[i] *= g;
    r.samples[n - 1 - i] *= g;
  }
  return r;
}

struct SyntheticOptions {
  std::size_t utterances = 8;
  std::size_t speakers = 2;
  std::uint64_t seed = 0;
  bool affect = false;
  // Overrides the drawn AffectPoint of every utterance (implies affect).
  std::optional<AffectPoint> fixed_affect;
  AudioConfig audio;
};

struct SyntheticUtterance {
  Utterance meta;
  SyntheticRender render;
};

struct SyntheticCorpus {
  std::vector<SyntheticVoice> voices;
  std::vector<std::vector<float>> reference_audio;  // one neutral recording per voice
  std::vector<std::vector<float>> embeddings;       // fingerprint of each reference
  std::vector<SyntheticUtterance> utterances;
};

// Per-phoneme frames for a symbol sequence; `jitter` in [-1, 1] per phoneme.
inline int pseudo_phone_frames(const PseudoPhone& p, double jitter, double arousal_norm, const AudioConfig& cfg) {
  const double ms = std::clamp(p.mean_ms * (1.0 + 0.3 * jitter), 80.0, 250.0) * (1.0 - 0.2 * arousal_norm);
  return std::max(1, static_cast<int>(std::lround(ms / 1000.0 * cfg.sample_rate / cfg.hop)));
}

inline SyntheticVoice synthetic_voice(std::size_t index, std::uint64_t seed) {
  Rng rng(hash_combine(seed, hash_combine(0x766f696365ULL, index)));
  SyntheticVoice v;
  v.id = "spk" + std::to_string(index);
  v.base_f0 = rng.uniform(100.0, 300.0);
  v.tilt = rng.uniform(0.6, 1.4);
  return v;
}

// Neutral reading of every pseudo-phoneme at its mean duration.
inline std::vector<float> synthetic_reference(const SyntheticVoice& voice, const AudioConfig& cfg) {
  std::vector<SegmentSpec> segs;
  for (const auto& p : pseudo_phones()) segs.push_back({p.symbol, pseudo_phone_frames(p, 0.0, 0.0, cfg), 0.5});
  return render_pseudo_speech(voice, segs, std::nullopt, cfg).samples;
}

inline SyntheticCorpus gen_synthetic_corpus(const SyntheticOptions& opt) {
  if (opt.utterances < 1) throw DataError("gen_synthetic_corpus: need at least one utterance");
  if (opt.speakers < 1) throw DataError("gen_synthetic_corpus: need at least one speaker");
  opt.audio.validate();
  SyntheticCorpus c;
  for (std::size_t s = 0; s < opt.speakers; ++s) {
    c.voices.push_back(synthetic_voice(s, opt.seed));
    c.reference_audio.push_back(synthetic_reference(c.voices.back(), opt.audio));
    c.embeddings.push_back(speaker_fingerprint(c.reference_audio.back(), opt.audio));
  }
  const auto& table = pseudo_phones();
  for (std::size_t i = 0; i < opt.utterances; ++i) {
    // Every draw below happens regardless of options, so toggling affect
    // changes nothing else about an utterance.
    Rng rng(hash_combine(opt.seed, hash_combine(0x7574740000ULL, i)));
    const std::size_t spk = i % opt.speakers;
    const int count = rng.uniform_int(3, 8);
    std::vector<const PseudoPhone*> phones;
    std::vector<double> jitter, amps;
    for (int k = 0; k < count; ++k) {
      phones.push_back(&table[static_cast<std::size_t>(rng.uniform_int(0, int(table.size()) - 1))]);
      jitter.push_back(rng.uniform(-1.0, 1.0));
      amps.push_back(rng.uniform(0.2, 0.8));
    }
    const double raw_a = rng.uniform(1.0, 7.0), raw_v = rng.uniform(1.0, 7.0);
    std::optional<AffectPoint> affect;
    if (opt.fixed_affect) {
      affect = opt.fixed_affect;
    } else if (opt.affect) {
      affect = AffectPoint{raw_a, raw_v};
    }

    SyntheticUtterance u;
    char id[32];
    std::snprintf(id, sizeof id, "utt%04zu", i);
    u.meta.id = id;
    u.meta.wav = std::string("wavs/") + id + ".wav";
    u.meta.alignment = std::string("align/") + id + ".tsv";
    u.meta.speaker = c.voices[spk].id;
    u.meta.embedding_path = "speakers/" + c.voices[spk].id + ".json";
    u.meta.affect = affect;
    std::vector<SegmentSpec> segs;
    for (int k = 0; k < count; ++k) {
      const int frames = pseudo_phone_frames(*phones[k], jitter[k], affect ? affect->arousal_norm() : 0.0, opt.audio);
      segs.push_back({phones[k]->symbol, frames, amps[k]});
      u.meta.phonemes.push_back(phones[k]->symbol);
      u.meta.durations.push_back(frames);
    }
    u.render = render_pseudo_speech(c.voices[spk], segs, affect, opt.audio);
    c.utterances.push_back(std::move(u));
  }
  return c;
}

inline std::string alignment_text(const Utterance& u, const AudioConfig& cfg) {
  std::string out;
  long b = 0;
  char buf[128];
  for (std::size_t i = 0; i < u.phonemes.size(); ++i) {
    const double t0 = double(b * cfg.hop) / cfg.sample_rate;
    b += u.durations[i];
    const double t1 = double(b * cfg.hop) / cfg.sample_rate;
    std::snprintf(buf, sizeof buf, "%s\t%.6f\t%.6f\n", u.phonemes[i].c_str(), t0, t1);
    out += buf;
  }
  return out;
}

// Layout: manifest.jsonl, truth.jsonl, wavs/, align/, speakers/.
inline void write_synthetic_corpus(const SyntheticCorpus& c, const std::string& dir, const AudioConfig& cfg) {
  std::error_code ec;
  for (const char* sub : {"wavs", "align", "speakers"}) {
    fs::create_directories(fs::path(dir) / sub, ec);
    if (ec) throw DataError("cannot create " + (fs::path(dir) / sub).string() + ": " + ec.message());
  }
  for (std::size_t s = 0; s < c.voices.size(); ++s) {
    const auto base = fs::path(dir) / "speakers" / c.voices[s].id;
    write_wav(base.string() + ".wav", c.reference_audio[s], cfg.sample_rate);
    write_embedding(base.string() + ".json", c.embeddings[s], c.voices[s].id);
  }
  std::vector<Utterance> metas;
  std::string truth;
  for (const auto& u : c.utterances) {
    write_wav((fs::path(dir) / u.meta.wav).string(), u.render.samples, cfg.sample_rate);
    write_text_file((fs::path(dir) / u.meta.alignment).string(), alignment_text(u.meta, cfg));
    metas.push_back(u.meta);
    json t;
    t["id"] = u.meta.id;
    t["f0"] = u.render.f0;
    t["stable"] = u.render.stable;
    truth += t.dump() + "\n";
  }
  write_manifest((fs::path(dir) / "manifest.jsonl").string(), metas);
  write_text_file((fs::path(dir) / "truth.jsonl").string(), truth);
}

// ---------------------------------------------------------------------------
// Prepared features

struct PreparedUtterance {
  std::string id;
  std::string speaker;
  std::vector<int> phoneme_ids;
  std::vector<int> durations;
  MelSpectrogram mel;            // frames x mel_bins
  std::vector<float> log_f0;     // per frame, log Hz
  std::vector<float> energy;     // per frame
  std::vector<float> embedding;  // unit speaker vector
  std::optional<AffectPoint> affect;

  std::size_t frames() const noexcept { return mel.frames; }
};

struct MeanStd {
  double mean = 0;
  double std = 1;
};

// Standardization of pitch (log Hz) and energy, per corpus or per speaker.
// The min/max of the standardized training values define the bucket range.
struct FeatureStats {
  bool per_speaker = false;
  MeanStd pitch, energy;
  std::map<std::string, std::pair<MeanStd, MeanStd>> speakers;
  float pitch_min = -1, pitch_max = 1, energy_min = -1, energy_max = 1;

  const MeanStd& pitch_for(const std::string& spk) const {
    if (per_speaker)
      if (auto it = speakers.find(spk); it != speakers.end()) return it->second.first;
    return pitch;
  }
  const MeanStd& energy_for(const std::string& spk) const {
    if (per_speaker)
      if (auto it = speakers.find(spk); it != speakers.end()) return it->second.second;
    return energy;
  }

  std::vector<float> standardize_pitch(const PreparedUtterance& u) const {
    const auto& s = pitch_for(u.speaker);
    std::vector<float> out(u.log_f0.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>((u.log_f0[i] - s.mean) / s.std);
    return out;
  }
  std::vector<float> standardize_energy(const PreparedUtterance& u) const {
    const auto& s = energy_for(u.speaker);
    std::vector<float> out(u.energy.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>((u.energy[i] - s.mean) / s.std);
    return out;
  }
};

inline json stats_to_json(const FeatureStats& s) {
  auto ms = [](const MeanStd& m) { return json{{"mean", m.mean}, {"std", m.std}}; };
  json j{{"per_speaker", s.per_speaker},
         {"pitch", ms(s.pitch)},
         {"energy", ms(s.energy)},
         {"pitch_range", {s.pitch_min, s.pitch_max}},
         {"energy_range", {s.energy_min, s.energy_max}}};
  json spk = json::object();
  for (const auto& [name, pe] : s.speakers) spk[name] = {{"pitch", ms(pe.first)}, {"energy", ms(pe.second)}};
  j["speakers"] = spk;
  return j;
}

inline FeatureStats stats_from_json(const json& j) {
  auto ms = [](const json& x) { return MeanStd{x.at("mean").get<double>(), x.at("std").get<double>()}; };
  FeatureStats s;
  s.per_speaker = j.at("per_speaker").get<bool>();
  s.pitch = ms(j.at("pitch"));
  s.energy = ms(j.at("energy"));
  s.pitch_min = j.at("pitch_range").at(0).get<float>();
  s.pitch_max = j.at("pitch_range").at(1).get<float>();
  s.energy_min = j.at("energy_range").at(0).get<float>();
  s.energy_max = j.at("energy_range").at(1).get<float>();
  for (const auto& [name, pe] : j.at("speakers").items()) s.speakers[name] = {ms(pe.at("pitch")), ms(pe.at("energy"))};
  return s;
}

namespace detail {

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  if (xs.empty()) return m;
  double acc = 0;
  for (double x : xs) acc += x;
  m.mean = acc / double(xs.size());
  double var = 0;
  for (double x : xs) var += (x - m.mean) * (x - m.mean);
  m.std = std::max(std::sqrt(var / double(xs.size())), 1e-6);
  return m;
}

}  // namespace detail

inline FeatureStats compute_stats(const std::vector<PreparedUtterance>& items, bool per_speaker) {
  if (items.empty()) throw DataError("compute_stats: no utterances");
  FeatureStats s;
  s.per_speaker = per_speaker;
  std::vector<double> p, e;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_spk;
  for (const auto& u : items) {
    p.insert(p.end(), u.log_f0.begin(), u.log_f0.end());
    e.insert(e.end(), u.energy.begin(), u.energy.end());
    if (per_speaker) {
      auto& slot = by_spk[u.speaker];
      slot.first.insert(slot.first.end(), u.log_f0.begin(), u.log_f0.end());
      slot.second.insert(slot.second.end(), u.energy.begin(), u.energy.end());
    }
  }
  s.pitch = detail::mean_std(p);
  s.energy = detail::mean_std(e);
  for (const auto& [name, pe] : by_spk) s.speakers[name] = {detail::mean_std(pe.first), detail::mean_std(pe.second)};
  s.pitch_min = s.energy_min = std::numeric_limits<float>::max();
  s.pitch_max = s.energy_max = std::numeric_limits<float>::lowest();
  for (const auto& u : items) {
    for (float v : s.standardize_pitch(u)) s.pitch_min = std::min(s.pitch_min, v), s.pitch_max = std::max(s.pitch_max, v);
    for (float v : s.standardize_energy(u))
      s.energy_min = std::min(s.energy_min, v), s.energy_max = std::max(s.energy_max, v);
  }
  // Degenerate (constant) features still need a non-empty bucket range.
  if (s.pitch_max <= s.pitch_min) s.pitch_min -= 1.0f, s.pitch_max += 1.0f;
  if (s.energy_max <= s.energy_min) s.energy_min -= 1.0f, s.energy_max += 1.0f;
  return s;
}

struct Discard {
  std::string id;
  std::string reason;
};

struct PreparedCorpus {
  std::vector<PreparedUtterance> items;
  FeatureStats stats;
  std::vector<Discard> discards;
};

// Reconciles alignment totals with the audio: a difference of up to
// `slack` frames is absorbed by the last phoneme, anything larger discards.
inline void reconcile_total(std::vector<int>& durations, std::size_t frames, int slack = 2) {
  const long total = std::accumulate(durations.begin(), durations.end(), 0L);
  const long diff = static_cast<long>(frames) - total;
  if (diff == 0) return;
  if (std::abs(diff) > slack || durations.back() + diff < 0)
    throw DiscardError("durations sum to " + std::to_string(total) + " but the audio has " + std::to_string(frames) +
                       " frames");
  durations.back() += static_cast<int>(diff);
}

// Features for one manifest entry; throws DiscardError on any inconsistency.
inline PreparedUtterance prepare_utterance(const Utterance& u, const Manifest& m, const AudioConfig& cfg,
                                           const PhonemeInventory& inv = default_inventory()) {
  PreparedUtterance p;
  p.id = u.id;
  p.speaker = u.speaker;
  p.affect = u.affect;
  for (const auto& ph : u.phonemes) {
    const int id = inv.id(ph);
    if (id == kUnkId || id == kPadId) throw DiscardError("unknown phoneme '" + ph + "'");
    p.phoneme_ids.push_back(id);
  }
  std::vector<float> samples;
  try {
    samples = read_wav(m.resolve(u.wav), cfg.sample_rate);
  } catch (const WavError& e) {
    throw DiscardError(e.what());
  }
  if (samples.empty()) throw DiscardError("empty audio");
  p.mel = mel_spectrogram(samples, cfg);
  if (!u.alignment.empty()) {
    p.durations = parse_alignment(read_alignment(m.resolve(u.alignment)), u.phonemes, cfg);
  } else if (!u.durations.empty()) {
    p.durations = u.durations;
  } else {
    throw DiscardError("no durations and no alignment");
  }
  reconcile_total(p.durations, p.mel.frames);
  const auto f0 = extract_f0(samples, cfg);
  p.log_f0.resize(f0.hz.size());
  for (std::size_t i = 0; i < f0.hz.size(); ++i) p.log_f0[i] = std::log(f0.hz[i]);
  p.energy = extract_energy(samples, cfg).values;
  if (!u.embedding_path.empty()) {
    try {
      p.embedding = read_embedding(m.resolve(u.embedding_path));
    } catch (const DataError& e) {
      throw DiscardError(e.what());
    }
  } else {
    try {
      p.embedding = speaker_fingerprint(samples, cfg);
    } catch (const AudioError& e) {
      throw DiscardError(e.what());
    }
  }
  return p;
}

inline PreparedCorpus prepare_corpus(const Manifest& m, const AudioConfig& cfg, bool per_speaker_stats = false) {
  PreparedCorpus c;
  for (const auto& u : m.utterances) {
    try {
      c.items.push_back(prepare_utterance(u, m, cfg));
    } catch (const DiscardError& e) {
      c.discards.push_back({u.id, e.what()});
    }
  }
  if (c.items.empty()) throw DataError("prepare: every utterance was discarded");
  c.stats = compute_stats(c.items, per_speaker_stats);
  return c;
}

inline constexpr char kFeatureMagic[8] = {'A', 'V', 'F', 'E', 'A', 'T', '1', '\0'};

inline std::vector<unsigned char> encode_prepared(const std::vector<PreparedUtterance>& items) {
  ByteWriter w;
  w.put_raw(kFeatureMagic, sizeof kFeatureMagic);
  w.put(static_cast<std::uint64_t>(items.size()));
  for (const auto& u : items) {
    w.put_string(u.id);
    w.put_string(u.speaker);
    w.put_vector(u.phoneme_ids);
    w.put_vector(u.durations);
    w.put(static_cast<std::uint64_t>(u.mel.frames));
    w.put(static_cast<std::uint64_t>(u.mel.cols));
    w.put_vector(u.mel.data);
    w.put_vector(u.log_f0);
    w.put_vector(u.energy);
    w.put_vector(u.embedding);
    w.put(static_cast<std::uint8_t>(u.affect.has_value()));
    w.put(u.affect ? u.affect->arousal : 0.0);
    w.put(u.affect ? u.affect->valence : 0.0);
  }
  return w.take();
}

inline std::vector<PreparedUtterance> decode_prepared(const std::vector<unsigned char>& bytes, const std::string& what) {
  ByteReader r(bytes, what);
  char magic[8];
  r.get_raw(magic, sizeof magic);
  if (std::memcmp(magic, kFeatureMagic, sizeof magic) != 0) r.fail("not an avtts feature cache");
  const auto n = r.get<std::uint64_t>();
  std::vector<PreparedUtterance> items;
  for (std::uint64_t i = 0; i < n; ++i) {
    PreparedUtterance u;
    u.id = r.get_string();
    u.speaker = r.get_string();
    u.phoneme_ids = r.get_vector<int>();
    u.durations = r.get_vector<int>();
    u.mel.frames = r.get<std::uint64_t>();
    u.mel.cols = r.get<std::uint64_t>();
    u.mel.data = r.get_vector<float>();
    u.log_f0 = r.get_vector<float>();
    u.energy = r.get_vector<float>();
    u.embedding = r.get_vector<float>();
    const bool has_affect = r.get<std::uint8_t>() != 0;
    const double a = r.get<double>(), v = r.get<double>();
    if (has_affect) u.affect = AffectPoint{a, v};
    if (u.mel.data.size() != u.mel.frames * u.mel.cols || u.log_f0.size() != u.mel.frames ||
        u.energy.size() != u.mel.frames || u.durations.size() != u.phoneme_ids.size())
      r.fail("inconsistent entry '" + u.id + "'");
    items.push_back(std::move(u));
  }
  if (!r.done()) r.fail("trailing bytes");
  return items;
}

// Cache layout: features.bin, stats.json, discards.tsv.
inline void save_prepared(const PreparedCorpus& c, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir + ": " + ec.message());
  write_file_bytes((fs::path(dir) / "features.bin").string(), encode_prepared(c.items));
  write_text_file((fs::path(dir) / "stats.json").string(), stats_to_json(c.stats).dump(2) + "\n");
  std::string log = "id\treason\n";
  for (const auto& d : c.discards) log += d.id + "\t" + d.reason + "\n";
  write_text_file((fs::path(dir) / "discards.tsv").string(), log);
}

inline PreparedCorpus load_prepared(const std::string& dir) {
  const auto features = (fs::path(dir) / "features.bin").string();
  const auto stats = (fs::path(dir) / "stats.json").string();
  if (!fs::exists(features) || !fs::exists(stats)) throw DataError("no prepared features in " + dir);
  PreparedCorpus c;
  c.items = decode_prepared(read_file_bytes(features), features);
  try {
    c.stats = stats_from_json(json::parse(read_text_file(stats)));
  } catch (const json::exception& e) {
    throw DataError(stats + ": " + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Batching

// Index batches for one epoch: a (seed, epoch)-keyed shuffle, then
// length-sorted buckets of `bucket_batches` batches, then shuffled batch
// order. Every index appears exactly once.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& lengths,
                                                          std::size_t batch_size, std::uint64_t seed,
                                                          std::uint64_t epoch, std::size_t bucket_batches = 4) {
  if (lengths.empty()) throw DataError("make_batches: empty dataset");
  if (batch_size < 1) throw DataError("make_batches: batch size must be >= 1");
  Rng rng(hash_combine(seed, hash_combine(0x6261746368ULL, epoch)));
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, int(i) - 1))]);
  const std::size_t bucket = batch_size * std::max<std::size_t>(1, bucket_batches);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b0 = 0; b0 < order.size(); b0 += bucket) {
    const auto first = order.begin() + static_cast<long>(b0);
    const auto last = order.begin() + static_cast<long>(std::min(order.size(), b0 + bucket));
    std::stable_sort(first, last, [&](std::size_t x, std::size_t y) { return lengths[x] < lengths[y]; });
    for (auto it = first; it < last; it += static_cast<long>(std::min<std::size_t>(batch_size, last - it)))
      batches.emplace_back(it, it + static_cast<long>(std::min<std::size_t>(batch_size, last - it)));
  }
  for (std::size_t i = batches.size(); i > 1; --i)
    std::swap(batches[i - 1], batches[static_cast<std::size_t>(rng.uniform_int(0, int(i) - 1))]);
  return batches;
}

}  // namespace avtts
