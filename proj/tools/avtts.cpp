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

// avtts: corpus generation, feature preparation, two-stage training,
// synthesis and the acceptance suite.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.

#ifdef AVTTS_CLI11_SINGLE_HEADER
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "avtts/acceptance.hpp"
#include "avtts/config.hpp"
#include "avtts/log.hpp"
#include "avtts/text.hpp"
#include "avtts/wav.hpp"

namespace {

namespace fs = std::filesystem;
using namespace avtts;

constexpr int kUsage = 1, kData = 2, kVerify = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigArgs {
  std::string path;
  std::vector<std::string> sets;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", path, "JSON run config")->check(CLI::ExistingFile);
    cmd->add_option("--set", sets, "override a config field, e.g. --set train.lr=1e-3");
  }
  RunConfig load() const { return load_run_config(path, sets); }
};

// Minimal .npy (v1.0, little-endian float32, C order).
void write_npy(const std::string& path, const MelSpectrogram& mel) {
  std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + std::to_string(mel.frames) + ", " +
                       std::to_string(mel.cols) + "), }";
  const std::size_t total = 10 + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header.push_back('\n');
  std::vector<unsigned char> out = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  out.push_back(static_cast<unsigned char>(header.size() & 0xff));
  out.push_back(static_cast<unsigned char>(header.size() >> 8));
  out.insert(out.end(), header.begin(), header.end());
  const auto* p = reinterpret_cast<const unsigned char*>(mel.data.data());
  out.insert(out.end(), p, p + mel.data.size() * sizeof(float));
  write_file_bytes(path, out);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

// ---- commands -----------------------------------------------------------------

struct GenCorpus {
  std::string out;
  std::size_t utts = 8, speakers = 2;
  std::uint64_t seed = 0;
  bool affect = false;
  ConfigArgs cfg;

  int run() const {
    if (utts == 0) throw UsageError("--utts must be at least 1");
    if (speakers == 0) throw UsageError("--speakers must be at least 1");
    const auto rc = cfg.load();
    SyntheticOptions o;
    o.utterances = utts;
    o.speakers = speakers;
    o.seed = seed;
    o.affect = affect;
    o.audio = rc.audio;
    write_synthetic_corpus(gen_synthetic_corpus(o), out, o.audio);
    log_info("wrote " + std::to_string(utts) + " utterances from " + std::to_string(speakers) + " speakers to " + out);
    return 0;
  }
};

struct Prepare {
  std::string manifest, out;
  ConfigArgs cfg;

  int run() const {
    const auto rc = cfg.load();
    const auto m = read_manifest(manifest);
    auto c = prepare_corpus(m, rc.audio, rc.per_speaker_stats);
    save_prepared(c, out);
    for (const auto& d : c.discards) log_warning("discarded " + d.id + ": " + d.reason);
    if (c.items.empty()) throw DataError("all " + std::to_string(m.utterances.size()) + " utterances were discarded");
    log_info("prepared " + std::to_string(c.items.size()) + " utterances (" + std::to_string(c.discards.size()) +
             " discarded) into " + out);
    return 0;
  }
};

struct Train {
  int stage = 1;
  std::string data, out, init, resume;
  ConfigArgs cfg;

  int run() const {
    if (stage == 2 && init.empty() && resume.empty()) throw UsageError("stage 2 needs --init <stage-1 checkpoint>");
    if (stage == 1 && !init.empty()) throw UsageError("--init only applies to stage 2");
    if (!fs::is_directory(data)) throw DataError("data directory not found: " + data);
    const auto rc = cfg.load();
    const auto corpus = load_prepared(data);
    TrainConfig tc = rc.stage_config(stage);

    std::optional<Trainer> tr;
    std::uint64_t resume_step = 0;
    if (!resume.empty()) {
      const auto ck = load_checkpoint(resume);
      if (ck.stage != stage) throw UsageError("--resume checkpoint is stage " + std::to_string(ck.stage));
      resume_step = ck.step;
      tr.emplace(Trainer::resume(ck, corpus, tc.steps));
    } else if (stage == 1) {
      tr.emplace(Trainer::stage1(corpus, rc.model, tc));
    } else {
      const auto ck = load_checkpoint(init);
      if (ck.stage != 1) log_warning("--init checkpoint is stage " + std::to_string(ck.stage) + ", expected 1");
      tr.emplace(Trainer::stage2(ck, corpus, tc));
    }

    fs::create_directories(out);
    auto effective = run_config_to_json(rc);
    effective["model"] = model_config_to_json(tr->model().config());
    effective["effective_stage"] = stage;
    effective["effective_train"] = train_config_to_json(tr->config());
    write_text_file((fs::path(out) / "config.json").string(), effective.dump(2) + "\n");

    MetricsCsv csv((fs::path(out) / "metrics.csv").string(), resume_step);
    const auto log_every = tr->config().log_interval;
    const std::string prefix = "stage" + std::to_string(stage);
    tr->run(
        [&](const StepMetrics& m) {
          csv.append(m);
          if (log_every && m.step % log_every == 0)
            log_info(prefix + " step " + std::to_string(m.step) + ": " + metrics_row(m));
        },
        [&](const Checkpoint& c) {
          char name[64];
          std::snprintf(name, sizeof name, "%s_step%06llu.ckpt", prefix.c_str(), static_cast<unsigned long long>(c.step));
          save_checkpoint(c, (fs::path(out) / name).string());
          save_checkpoint(c, (fs::path(out) / (prefix + "_last.ckpt")).string());
        });
    log_info(prefix + " finished at step " + std::to_string(tr->step_count()) + "; checkpoint " +
             (fs::path(out) / (prefix + "_last.ckpt")).string());
    return 0;
  }
};

struct Synthesize {
  std::string checkpoint, text, phonemes, speaker_wav, speaker_embedding, out, dump_mel, lexicon, teacher, data;
  double arousal = 4.0, valence = 4.0;
  std::uint64_t seed = 0;
  int gl_iters = 60;
  ConfigArgs cfg;

  int run() const {
    const auto rc = cfg.load();
    const auto ck = load_checkpoint(checkpoint);
    const auto model = ck.build_model();

    std::optional<PreparedUtterance> teacher_utt;
    if (!teacher.empty()) {
      if (data.empty()) throw UsageError("--teacher-force needs --data <prepared dir>");
      const auto corpus = load_prepared(data);
      for (const auto& u : corpus.items)
        if (u.id == teacher) teacher_utt = u;
      if (!teacher_utt) throw DataError("utterance '" + teacher + "' not found in " + data);
    }

    std::vector<int> ids;
    if (teacher_utt) {
      ids = teacher_utt->phoneme_ids;
    } else if (!phonemes.empty()) {
      const auto& inv = default_inventory();
      for (const auto& p : split_ws(phonemes)) {
        const int id = inv.id(p);
        if (id == kUnkId || id == kPadId) throw DataError("unknown phoneme '" + p + "'");
        ids.push_back(id);
      }
    } else {
      const auto lex = Lexicon::load(lexicon.empty() ? default_lexicon_path() : lexicon);
      ids = g2p(text, lex).ids;
    }
    if (ids.empty()) throw DataError("no phonemes to synthesize");

    std::vector<float> speaker;
    if (!speaker_embedding.empty()) {
      speaker = read_embedding(speaker_embedding);
    } else {
      speaker = speaker_fingerprint(read_wav(speaker_wav, rc.audio.sample_rate), rc.audio);
    }

    bool clamped = false;
    const auto av = AffectPoint::from_raw(arousal, valence, &clamped);
    if (clamped)
      log_warning("arousal/valence clamped to [1, 7]: (" + std::to_string(av.arousal) + ", " + std::to_string(av.valence) + ")");
    if (ck.stage == 1) log_warning("stage-1 checkpoint: arousal/valence are ignored");

    const auto r = synthesize(model, ck.stage, ck.stats, ids, speaker, av, teacher_utt ? &*teacher_utt : nullptr);
    if (!dump_mel.empty()) write_npy(dump_mel, r.mel);
    if (!out.empty()) write_wav(out, griffin_lim(r.mel, rc.audio, gl_iters, seed), rc.audio.sample_rate);
    long frames = 0;
    for (int d : r.durations) frames += d;
    log_info("synthesized " + std::to_string(ids.size()) + " phonemes, " + std::to_string(frames) + " frames");
    return 0;
  }
};

struct Verify {
  std::string suite = "all", work_dir;

  int run() const {
    acceptance::Suite s;
    try {
      s = acceptance::parse_suite(suite);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    acceptance::Options opt;
    opt.work_dir = work_dir.empty() ? (fs::temp_directory_path() / "avtts_verify").string() : work_dir;
    opt.progress = [](const std::string& m) { log_info(m); };
    bool ok = true;
    for (const auto& r : acceptance::run(s, opt)) {
      std::cout << acceptance::format_result(r) << std::endl;
      ok &= r.passed;
    }
    return ok ? 0 : kVerify;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"avtts: multi-speaker TTS with arousal/valence prosody control"};
  app.require_subcommand(1);
  std::string level = "info";
  app.add_option("--log-level", level, "debug, info, warning, error or off")
      ->check(CLI::IsMember({"debug", "info", "warning", "error", "off"}));

  GenCorpus gen;
  auto* c_gen = app.add_subcommand("gen-corpus", "write a synthetic corpus with ground truth");
  c_gen->add_option("--out", gen.out, "output directory")->required();
  c_gen->add_option("--utts", gen.utts, "number of utterances");
  c_gen->add_option("--speakers", gen.speakers, "number of speakers");
  c_gen->add_option("--seed", gen.seed, "random seed");
  c_gen->add_flag("--affect", gen.affect, "attach arousal/valence to every utterance");
  gen.cfg.attach(c_gen);

  Prepare prep;
  auto* c_prep = app.add_subcommand("prepare", "extract features and validate alignments");
  c_prep->add_option("--manifest", prep.manifest, "manifest.jsonl")->required()->check(CLI::ExistingFile);
  c_prep->add_option("--out", prep.out, "feature cache directory")->required();
  prep.cfg.attach(c_prep);

  Train train;
  auto* c_train = app.add_subcommand("train", "run training stage 1 or 2");
  c_train->add_option("--stage", train.stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  c_train->add_option("--data", train.data, "prepared feature directory")->required();
  c_train->add_option("--out", train.out, "run directory")->required();
  c_train->add_option("--init", train.init, "stage-1 checkpoint (stage 2)")->check(CLI::ExistingFile);
  c_train->add_option("--resume", train.resume, "continue from a checkpoint of the same stage")->check(CLI::ExistingFile);
  train.cfg.attach(c_train);

  Synthesize syn;
  auto* c_syn = app.add_subcommand("synthesize", "render text with a speaker and target emotion");
  c_syn->add_option("--checkpoint", syn.checkpoint, "trained checkpoint")->required()->check(CLI::ExistingFile);
  auto* o_text = c_syn->add_option("--text", syn.text, "input text");
  auto* o_ph = c_syn->add_option("--phonemes", syn.phonemes, "space-separated phoneme symbols");
  auto* o_tf = c_syn->add_option("--teacher-force", syn.teacher, "use ground-truth durations/pitch/energy of this id");
  o_text->excludes(o_ph)->excludes(o_tf);
  o_ph->excludes(o_tf);
  c_syn->add_option("--data", syn.data, "prepared feature directory (with --teacher-force)");
  c_syn->add_option("--lexicon", syn.lexicon, "pronunciation lexicon")->check(CLI::ExistingFile);
  auto* o_wav = c_syn->add_option("--speaker-wav", syn.speaker_wav, "reference recording of the target speaker");
  auto* o_emb = c_syn->add_option("--speaker-embedding", syn.speaker_embedding, "precomputed speaker embedding JSON");
  o_wav->excludes(o_emb);
  c_syn->add_option("--arousal", syn.arousal, "1 (calm) .. 7 (excited)");
  c_syn->add_option("--valence", syn.valence, "1 (negative) .. 7 (positive)");
  c_syn->add_option("--out", syn.out, "output WAV");
  c_syn->add_option("--dump-mel", syn.dump_mel, "write the predicted log-mel as .npy");
  c_syn->add_option("--seed", syn.seed, "Griffin-Lim phase seed");
  c_syn->add_option("--gl-iters", syn.gl_iters, "Griffin-Lim iterations")->check(CLI::PositiveNumber);
  syn.cfg.attach(c_syn);

  Verify ver;
  auto* c_ver = app.add_subcommand("verify", "run the acceptance suite");
  c_ver->add_option("--suite", ver.suite, "gradients, dsp, invariants or all");
  c_ver->add_option("--work-dir", ver.work_dir, "scratch directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }
  log_threshold() = level == "debug"     ? LogLevel::debug
                    : level == "warning" ? LogLevel::warning
                    : level == "error"   ? LogLevel::error
                    : level == "off"     ? LogLevel::off
                                         : LogLevel::info;
  try {
    if (c_syn->parsed()) {
      if (syn.text.empty() && syn.phonemes.empty() && syn.teacher.empty())
        throw UsageError("synthesize needs --text, --phonemes or --teacher-force");
      if (syn.speaker_wav.empty() && syn.speaker_embedding.empty())
        throw UsageError("synthesize needs --speaker-wav or --speaker-embedding");
      if (syn.out.empty() && syn.dump_mel.empty()) throw UsageError("synthesize needs --out and/or --dump-mel");
      return syn.run();
    }
    if (c_gen->parsed()) return gen.run();
    if (c_prep->parsed()) return prep.run();
    if (c_train->parsed()) return train.run();
    if (c_ver->parsed()) return ver.run();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
