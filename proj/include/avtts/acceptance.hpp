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

// End-to-end acceptance checks, shared by the acceptance binary and
// `avtts verify`.

#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "avtts/dataset.hpp"
#include "avtts/gradcheck.hpp"
#include "avtts/op_cases.hpp"
#include "avtts/signals.hpp"
#include "avtts/training.hpp"

namespace avtts::acceptance {

namespace fs = std::filesystem;

struct Result {
  int id = 0;
  std::string title;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

enum class Suite { gradients, dsp, invariants, all };

inline Suite parse_suite(const std::string& s) {
  if (s == "gradients") return Suite::gradients;
  if (s == "dsp") return Suite::dsp;
  if (s == "invariants") return Suite::invariants;
  if (s == "all") return Suite::all;
  throw std::invalid_argument("unknown suite '" + s + "' (expected gradients, dsp, invariants or all)");
}

struct Options {
  std::string work_dir;  // scratch space for corpora and checkpoints
  std::function<void(const std::string&)> progress;
};

inline std::string format_result(const Result& r) {
  char buf[64];
  std::snprintf(buf, sizeof buf, " (%.1f s)", r.seconds);
  return std::string(r.passed ? "PASS" : "FAIL") + " [" + std::to_string(r.id) + "] " + r.title + ": " + r.detail + buf;
}

namespace detail {

inline std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

template <typename F>
Result timed(int id, std::string title, F&& body) {
  Result r;
  r.id = id;
  r.title = std::move(title);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline void say(const Options& o, const std::string& msg) {
  if (o.progress) o.progress(msg);
}

// Writes a synthetic corpus and prepares it; `hold_out` trailing utterances
// are prepared separately and kept out of the statistics.
struct Scenario {
  std::string dir;
  Manifest manifest;
  PreparedCorpus train;
  std::vector<PreparedUtterance> held_out;
};

inline Scenario make_scenario(const std::string& dir, std::size_t utterances, std::uint64_t seed, std::size_t hold_out) {
  SyntheticOptions o;
  o.utterances = utterances + hold_out;
  o.speakers = 2;
  o.seed = seed;
  o.affect = true;
  fs::remove_all(dir);
  write_synthetic_corpus(gen_synthetic_corpus(o), dir, o.audio);
  Scenario s;
  s.dir = dir;
  s.manifest = read_manifest(dir + "/manifest.jsonl");
  Manifest train = s.manifest;
  train.utterances.resize(utterances);
  s.train = prepare_corpus(train, o.audio);
  if (!s.train.discards.empty()) throw std::runtime_error("synthetic corpus produced discards");
  for (std::size_t i = utterances; i < s.manifest.utterances.size(); ++i)
    s.held_out.push_back(prepare_utterance(s.manifest.utterances[i], s.manifest, o.audio));
  return s;
}

inline TrainConfig desk_train_config(std::size_t batch, std::uint64_t steps) {
  TrainConfig t;
  t.batch_size = batch;
  t.lr = 1e-3;
  t.warmup_steps = 50;
  t.steps = steps;
  t.seed = 1;
  t.checkpoint_interval = 0;
  return t;
}

inline double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, double(std::abs(a[i] - b[i])));
  return d;
}

inline bool backbone_identical(const ParamStore<float>& a, const ParamStore<float>& b, std::string* which) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& e = a.entry(i);
    if (e.group != ParamGroup::backbone) continue;
    const auto& f = b.entry(i).value;
    if (f.size() != e.value.size() || std::memcmp(f.data(), e.value.data(), f.size() * sizeof(float)) != 0) {
      if (which) *which = e.name;
      return false;
    }
  }
  return true;
}

}  // namespace detail

// ---- 1: gradients -----------------------------------------------------------

inline ModelConfig gradient_check_config() {
  ModelConfig c;
  c.hidden = 8;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.heads = 2;
  c.filter = 12;
  c.ffn_kernel = 3;
  c.vp_channels = 6;
  c.buckets = 16;
  c.max_phonemes = 64;
  return c;  // speaker_dim 256 and 80 mel bins, as for real data
}

inline Result check_gradients_all(const Options& opt) {
  return detail::timed(1, "gradient correctness", [&](Result& r) {
    double worst = 0;
    std::string where;
    std::size_t checked = 0, cases = 0;
    bool ok = true;
    for (const auto& c : op_cases()) {
      const auto res = check_op_case(c);
      ++cases;
      checked += res.checked;
      ok &= res.passed(1e-4);
      if (res.max_rel_error >= worst) worst = res.max_rel_error, where = std::string(c.name) + ":" + res.worst;
    }
    detail::say(opt, "gradients: " + std::to_string(cases) + " op cases done");

    const auto s = detail::make_scenario(opt.work_dir + "/grad_corpus", 2, 21, 0);
    const ModelConfig mc = gradient_check_config();
    Model<float> mf(mc, 3);
    mf.set_ranges(ranges_from_stats(s.train.stats));
    Model<double> m = mf.cast<double>();
    std::vector<const PreparedUtterance*> items;
    for (const auto& u : s.train.items) items.push_back(&u);
    const auto batch = collate<double>(items, s.train.stats, mc, true);
    for (int stage : {1, 2})
      for (bool mae : {true, false}) {
        TrainConfig tc;
        tc.mel_mae = mae;
        GradCheckOptions g;
        g.samples_per_tensor = 32;
        g.training = true;
        g.trainable = m.trainable_mask(stage);
        const auto res = check_gradients(
            m.params(),
            [&](Graph<double>& gr) {
              return total_loss(m.forward(gr, batch, {stage == 2 ? Route::e2 : Route::e1, true}), batch, tc).total;
            },
            g);
        ++cases;
        checked += res.checked;
        ok &= res.passed(1e-4);
        if (res.max_rel_error >= worst)
          worst = res.max_rel_error, where = "stage" + std::to_string(stage) + (mae ? "-mae:" : "-mse:") + res.worst;
      }
    r.passed = ok;
    r.detail = std::to_string(cases) + " cases, " + std::to_string(checked) + " elements, max rel error " +
               detail::fmt("%.2e", worst) + " at " + where + " (limit 1e-4)";
  });
}

// ---- 6: DSP -----------------------------------------------------------------

inline Result check_dsp(const Options&) {
  return detail::timed(6, "DSP oracles", [&](Result& r) {
    const AudioConfig cfg;
    std::ostringstream d;
    bool ok = true;
    // F0 of pure tones, every frame.
    double worst_f0 = 0;
    for (double f = 100.0; f <= 300.0; f += 10.0) {
      const auto f0 = extract_f0(signals::sine(f, 0.5, 0.5), cfg);
      for (std::size_t t = 0; t < f0.hz.size(); ++t) {
        worst_f0 = std::max(worst_f0, std::abs(f0.hz[t] - f) / std::max(5.0, 0.02 * f));
      }
    }
    ok &= worst_f0 <= 1.0;
    d << "F0 worst/allowed " << detail::fmt("%.3f", worst_f0);
    // Frame-count formula.
    Rng rng(606);
    int exact = 0;
    for (int i = 0; i < 100; ++i) {
      const std::size_t n = std::size_t(rng.uniform_int(1024, 40000));
      std::vector<float> x(n);
      for (auto& v : x) v = static_cast<float>(rng.uniform(-0.5, 0.5));
      exact += mel_spectrogram(x, cfg).frames == 1 + n / std::size_t(cfg.hop);
    }
    ok &= exact == 100;
    d << "; frames exact " << exact << "/100";
    // Griffin-Lim round trip of a 220 Hz tone.
    const auto mel = mel_spectrogram(signals::sine(220.0, 1.0, 0.5), cfg);
    const auto audio = griffin_lim(mel, cfg, 60, 1);
    const double dom = signals::dominant_frequency(audio, cfg.sample_rate);
    const double corr = signals::mean_frame_correlation(mel, mel_spectrogram(audio, cfg));
    ok &= std::abs(dom - 220.0) <= 10.0 && corr > 0.9;
    d << "; GL dominant " << detail::fmt("%.1f", dom) << " Hz, mel r " << detail::fmt("%.3f", corr);
    r.passed = ok;
    r.detail = d.str();
  });
}

// ---- 7, 8: laws and ingestion ------------------------------------------------

inline Result check_length_regulator(const Options&) {
  return detail::timed(7, "length-regulator laws", [&](Result& r) {
    Model<float> m(gradient_check_config(), 1);
    Graph<float> g(&m.params());
    Rng rng(77);
    int good = 0;
    const int cases = 1000;
    for (int trial = 0; trial < cases; ++trial) {
      const std::size_t h = 3, lx = std::size_t(rng.uniform_int(1, 6)), ly = std::size_t(rng.uniform_int(1, 6));
      Tensor<float> tx({1, lx, h}), ty({1, ly, h});
      for (auto& v : tx.values()) v = static_cast<float>(rng.normal());
      for (auto& v : ty.values()) v = static_cast<float>(rng.normal());
      std::vector<int> dx(lx), dy(ly);
      for (auto& v : dx) v = rng.uniform_int(0, 4);
      for (auto& v : dy) v = rng.uniform_int(0, 4);
      dx[0] = std::max(dx[0], 1);
      dy[0] = std::max(dy[0], 1);
      std::size_t fx = 0, fy = 0, fxy = 0;
      const auto x = g.constant(tx), y = g.constant(ty);
      const auto rx = m.length_regulate(x, dx, &fx).value();
      const auto ry = m.length_regulate(y, dy, &fy).value();
      auto dxy = dx;
      dxy.insert(dxy.end(), dy.begin(), dy.end());
      const auto rxy = m.length_regulate(concat(x, y, 1), dxy, &fxy).value();
      bool ok = fx == std::size_t(std::accumulate(dx.begin(), dx.end(), 0)) && fxy == fx + fy;
      std::vector<float> cat = rx.storage();
      cat.insert(cat.end(), ry.storage().begin(), ry.storage().end());
      ok &= rxy.storage() == cat;
      std::size_t t = 0;
      for (std::size_t i = 0; i < lx; ++i)
        for (int k = 0; k < dx[i]; ++k, ++t)
          for (std::size_t j = 0; j < h; ++j) ok &= rx[t * h + j] == tx[i * h + j];
      good += ok;
    }
    r.passed = good == cases;
    r.detail = std::to_string(good) + "/" + std::to_string(cases) + " cases satisfy sum, concatenation and elision laws";
  });
}

inline Result check_alignment(const Options&) {
  return detail::timed(8, "alignment ingestion", [&](Result& r) {
    const AudioConfig cfg;
    const auto d = parse_alignment({{"K", 0, 0.1}, {"AE1", 0.1, 0.25}, {"T", 0.25, 0.5}}, {"K", "AE1", "T"}, cfg);
    bool ok = d == std::vector<int>{9, 13, 21};
    // Oracle: accepted iff the labels are an in-order subsequence of the
    // transcript with at most 10% of the transcript missing.
    auto subsequence = [](const std::vector<std::string>& labels, const std::vector<std::string>& tr) {
      std::size_t j = 0;
      for (const auto& l : labels) {
        while (j < tr.size() && tr[j] != l) ++j;
        if (j == tr.size()) return false;
        ++j;
      }
      return true;
    };
    Rng rng(808);
    const auto& phones = pseudo_phones();
    int mismatched = 0, discarded = 0, agree = 0;
    const int cases = 1000;
    for (int trial = 0; trial < cases; ++trial) {
      std::vector<std::string> tr;
      const int n = rng.uniform_int(1, 14);
      for (int i = 0; i < n; ++i) tr.push_back(phones[std::size_t(rng.uniform_int(0, int(phones.size()) - 1))].symbol);
      auto labels = tr;
      const int kind = rng.uniform_int(0, 2);
      const std::size_t at = std::size_t(rng.uniform_int(0, n - 1));
      const std::string other = phones[std::size_t(rng.uniform_int(0, int(phones.size()) - 1))].symbol;
      if (kind == 0) labels[at] = other;
      else if (kind == 1) labels.insert(labels.begin() + long(at), other);
      else if (n > 1) std::swap(labels[at], labels[(at + 1) % std::size_t(n)]);
      std::vector<AlignInterval> iv;
      for (std::size_t i = 0; i < labels.size(); ++i) iv.push_back({labels[i], 0.05 * double(i), 0.05 * double(i + 1)});
      const bool is_sub = subsequence(labels, tr);
      const std::size_t missing = tr.size() - std::min(tr.size(), labels.size());
      const bool expect_accept = is_sub && missing * 10 <= tr.size();
      bool accepted = true;
      try {
        (void)parse_alignment(iv, tr, cfg);
      } catch (const DiscardError&) {
        accepted = false;
      }
      agree += accepted == expect_accept;
      if (!is_sub) {
        ++mismatched;
        discarded += !accepted;
      }
    }
    ok &= agree == cases && discarded == mismatched && mismatched > 0;
    r.passed = ok;
    r.detail = std::string("[9,13,21] ") + (d == std::vector<int>{9, 13, 21} ? "exact" : "WRONG") + "; " +
               std::to_string(discarded) + "/" + std::to_string(mismatched) + " mismatched transcripts discarded; " +
               std::to_string(agree) + "/" + std::to_string(cases) + " mutations agree with the oracle";
  });
}

// ---- training-based criteria ---------------------------------------------------

inline std::vector<Result> check_training(const Options& opt) {
  std::vector<Result> out;
  const ModelConfig mc = ModelConfig::compact();

  // 4: overfit sanity on 8 utterances.
  std::optional<detail::Scenario> small;
  out.push_back(detail::timed(4, "overfit sanity", [&](Result& r) {
    small = detail::make_scenario(opt.work_dir + "/overfit_corpus", 8, 11, 0);
    auto tr = Trainer::stage1(small->train, mc, detail::desk_train_config(8, 1500));
    double at10 = 0, last = 0;
    std::uint64_t reached = 0;
    while (!tr.done() && !reached) {
      const auto m = tr.step();
      if (m.step == 10) at10 = m.mel;
      last = m.mel;
      if (m.step > 10 && m.mel <= 0.1 * at10) reached = m.step;
      if (m.step % 250 == 0) detail::say(opt, "overfit: step " + std::to_string(m.step) + " mel " + detail::fmt("%.4f", m.mel));
    }
    r.passed = reached > 0;
    r.detail = "mel loss " + detail::fmt("%.4f", at10) + " at step 10 -> " + detail::fmt("%.4f", last) +
               (reached ? " at step " + std::to_string(reached) : " after 1500 steps") + " (" +
               detail::fmt("%.1f", 100.0 * (1.0 - last / at10)) + "% drop, need >= 90%)";
  }));

  // 9: determinism and resume, on the same small corpus.
  out.push_back(detail::timed(9, "determinism and resume", [&](Result& r) {
    if (!small) throw std::runtime_error("overfit corpus unavailable");
    auto tc = detail::desk_train_config(4, 30);
    auto run = [&](std::uint64_t steps) {
      auto c = tc;
      c.steps = steps;
      auto t = Trainer::stage1(small->train, mc, c);
      t.run();
      return t.checkpoint();
    };
    const auto a = encode_checkpoint(run(30)), b = encode_checkpoint(run(30));
    const std::string path = opt.work_dir + "/resume.ckpt";
    save_checkpoint(run(13), path);
    auto resumed = Trainer::resume(load_checkpoint(path), small->train, 30);
    resumed.run();
    const auto c = encode_checkpoint(resumed.checkpoint());
    // Same for stage 2, starting from the stage-1 result.
    const auto s1 = decode_checkpoint(a);
    auto s2 = [&](std::uint64_t steps) {
      auto c2 = tc;
      c2.steps = steps;
      auto t = Trainer::stage2(s1, small->train, c2);
      t.run();
      return t.checkpoint();
    };
    const auto full2 = encode_checkpoint(s2(20));
    auto r2 = Trainer::resume(decode_checkpoint(encode_checkpoint(s2(9))), small->train, 20);
    r2.run();
    const bool same = a == b, res1 = c == a, res2 = encode_checkpoint(r2.checkpoint()) == full2;
    r.passed = same && res1 && res2;
    r.detail = std::string("repeat run ") + (same ? "bit-identical" : "DIFFERS") + "; stage-1 resume 13+17 " +
               (res1 ? "bit-identical" : "DIFFERS") + "; stage-2 resume 9+11 " + (res2 ? "bit-identical" : "DIFFERS") +
               " (" + std::to_string(a.size()) + "-byte checkpoints)";
  }));

  // 3 and 5 share one two-stage run on a 64-utterance affect corpus.
  std::optional<detail::Scenario> big;
  std::optional<Checkpoint> stage1, stage2_500, stage2_final;
  std::string train_error;
  const auto run_start = std::chrono::steady_clock::now();
  try {
    big = detail::make_scenario(opt.work_dir + "/affect_corpus", 64, 5, 1);
    auto t1 = Trainer::stage1(big->train, mc, detail::desk_train_config(16, 600));
    t1.run([&](const StepMetrics& m) {
      if (m.step % 200 == 0) detail::say(opt, "affect stage 1: step " + std::to_string(m.step) + " total " + detail::fmt("%.4f", m.total));
    });
    stage1 = t1.checkpoint();
    auto tc2 = detail::desk_train_config(16, 1500);
    tc2.warmup_steps = 20;
    tc2.checkpoint_interval = 500;
    auto t2 = Trainer::stage2(*stage1, big->train, tc2);
    t2.run(
        [&](const StepMetrics& m) {
          if (m.step % 500 == 0) detail::say(opt, "affect stage 2: step " + std::to_string(m.step) + " total " + detail::fmt("%.4f", m.total));
        },
        [&](const Checkpoint& c) {
          if (c.step == 500) stage2_500 = c;
        });
    stage2_final = t2.checkpoint();
  } catch (const std::exception& e) {
    train_error = e.what();
  }
  const double run_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start).count();

  out.push_back(detail::timed(3, "freeze contract", [&](Result& r) {
    if (!stage2_500) throw std::runtime_error("two-stage run failed: " + train_error);
    std::string which;
    const bool frozen = detail::backbone_identical(stage1->params, stage2_500->params, &which);
    const double da = max_abs_diff(stage1->params["pc.v_arousal"], stage2_500->params["pc.v_arousal"]);
    const double dv = max_abs_diff(stage1->params["pc.v_valence"], stage2_500->params["pc.v_valence"]);
    r.passed = frozen && da > 0 && dv > 0;
    r.detail = std::string("after 500 stage-2 steps: backbone ") + (frozen ? "bytewise identical" : "CHANGED at " + which) +
               "; max |dv_A| " + detail::fmt("%.3e", da) + ", max |dv_V| " + detail::fmt("%.3e", dv);
  }));

  out.push_back(detail::timed(5, "affect monotonicity", [&](Result& r) {
    if (!stage2_final) throw std::runtime_error("two-stage run failed: " + train_error);
    const auto model = stage2_final->build_model();
    const auto& u = big->held_out.at(0);
    std::vector<double> pitch;
    std::vector<long> frames;
    std::string detail_text;
    for (double a : {1.0, 4.0, 7.0}) {
      const auto s = synthesize(model, 2, stage2_final->stats, u.phoneme_ids, u.embedding, AffectPoint{a, 4.0});
      pitch.push_back(std::accumulate(s.pitch.begin(), s.pitch.end(), 0.0) / double(s.pitch.size()));
      frames.push_back(long(s.mel.frames));
      detail_text += (detail_text.empty() ? "" : ", ") + std::string("a=") + detail::fmt("%.0f", a) + ": pitch " +
                     detail::fmt("%+.3f", pitch.back()) + " frames " + std::to_string(frames.back());
    }
    r.passed = pitch[0] < pitch[1] && pitch[1] < pitch[2] && frames[0] > frames[1] && frames[1] > frames[2];
    r.detail = "held-out " + u.id + " (" + std::to_string(u.phoneme_ids.size()) + " phonemes): " + detail_text +
               "; shared 600+1500-step run took " + detail::fmt("%.0f", run_seconds) + " s";
  }));

  // 2: AV isolation under teacher forcing, on the trained model.
  out.push_back(detail::timed(2, "AV isolation", [&](Result& r) {
    if (!stage2_final) throw std::runtime_error("two-stage run failed: " + train_error);
    const auto model = stage2_final->build_model();
    const auto& u = big->held_out.at(0);
    std::vector<std::vector<float>> mels, pitches;
    for (double a : {1.0, 4.0, 7.0}) {
      const auto s = synthesize(model, 2, stage2_final->stats, u.phoneme_ids, u.embedding, AffectPoint{a, a}, &u);
      mels.push_back(s.mel.data);
      pitches.push_back(s.pitch);
    }
    const bool same = mels[0] == mels[1] && mels[1] == mels[2];
    r.passed = same;
    r.detail = std::string("teacher-forced mels for (1,1),(4,4),(7,7) ") + (same ? "bit-identical" : "DIFFER") +
               " (" + std::to_string(mels[0].size()) + " values); predicted pitch still moves by " +
               detail::fmt("%.3f", detail::max_abs_diff(pitches[0], pitches[2]));
  }));

  // 10: speaker conditioning.
  out.push_back(detail::timed(10, "speaker conditioning", [&](Result& r) {
    if (!stage2_final) throw std::runtime_error("two-stage run failed: " + train_error);
    const auto model = stage2_final->build_model();
    const auto& u = big->held_out.at(0);
    const AudioConfig cfg;
    std::vector<std::vector<float>> prints;
    for (const char* spk : {"spk0", "spk1", "spk0"}) {
      const auto wav = read_wav(big->dir + "/speakers/" + spk + ".wav", cfg.sample_rate);
      prints.push_back(speaker_fingerprint(wav, cfg));
    }
    auto mel = [&](const std::vector<float>& e) {
      return synthesize(model, 2, stage2_final->stats, u.phoneme_ids, e, AffectPoint{4, 4}, &u).mel.data;
    };
    const auto m0 = mel(prints[0]), m1 = mel(prints[1]), m0b = mel(prints[2]);
    const double diff = detail::max_abs_diff(m0, m1);
    r.passed = prints[0] != prints[1] && diff > 1e-4 && prints[0] == prints[2] && m0 == m0b;
    r.detail = "distinct fingerprints: max |dmel| " + detail::fmt("%.3e", diff) + " (need > 1e-4); identical: " +
               (m0 == m0b ? "bit-identical" : "DIFFER");
  }));
  return out;
}

// Runs the requested suite; results are sorted by criterion number.
inline std::vector<Result> run(Suite suite, const Options& opt) {
  fs::create_directories(opt.work_dir);
  std::vector<Result> out;
  const bool all = suite == Suite::all;
  if (all || suite == Suite::gradients) out.push_back(check_gradients_all(opt));
  if (all || suite == Suite::dsp) out.push_back(check_dsp(opt));
  if (all || suite == Suite::invariants) {
    out.push_back(check_length_regulator(opt));
    out.push_back(check_alignment(opt));
    for (auto& r : check_training(opt)) out.push_back(std::move(r));
  }
  std::sort(out.begin(), out.end(), [](const Result& a, const Result& b) { return a.id < b.id; });
  return out;
}

}  // namespace avtts::acceptance
