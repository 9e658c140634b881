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

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "avtts/gradcheck.hpp"
#include "avtts/training.hpp"
#include "fixtures.hpp"

namespace avtts {
namespace {

namespace fs = std::filesystem;
using testing_fixtures::random_batch;
using testing_fixtures::random_corpus;
using testing_fixtures::tiny_config;

TrainConfig quick_config(std::uint64_t steps = 20) {
  TrainConfig t;
  t.batch_size = 3;
  t.lr = 3e-3;
  t.warmup_steps = 5;
  t.steps = steps;
  t.seed = 9;
  t.checkpoint_interval = 0;
  return t;
}

std::string temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("avtts_training_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d.string();
}

const std::vector<const PreparedUtterance*> ptrs(const std::vector<PreparedUtterance>& v) {
  std::vector<const PreparedUtterance*> out;
  for (const auto& u : v) out.push_back(&u);
  return out;
}

TEST(TrainConfigJson, RoundTripAndUnknownKeys) {
  auto c = quick_config();
  c.mel_mae = false;
  c.weights.pitch = 0.5;
  const auto back = train_config_from_json(train_config_to_json(c));
  EXPECT_EQ(train_config_to_json(back), train_config_to_json(c));
  EXPECT_THROW(train_config_from_json({{"batchsize", 3}}), TrainError);
  EXPECT_THROW(train_config_from_json({{"loss_weights", {{"mell", 1.0}}}}), TrainError);
  EXPECT_THROW(train_config_from_json({{"batch_size", 0}}), TrainError);
  EXPECT_THROW(train_config_from_json({{"steps", 0}}), TrainError);
  EXPECT_THROW(train_config_from_json({{"mel_loss", "l3"}}), TrainError);
}

TEST(Collate, ShapesMasksAndTargets) {
  const auto cfg = tiny_config();
  const auto c = random_corpus(cfg, 3, 1);
  const auto b = collate<float>(ptrs(c.items), c.stats, cfg, true);
  std::size_t longest = 0;
  for (const auto& u : c.items) longest = std::max(longest, u.frames());
  EXPECT_EQ(b.frames, longest);
  EXPECT_EQ(b.mel.shape(), (Shape{3, longest, cfg.mel_bins}));
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& u = c.items[i];
    for (std::size_t t = 0; t < longest; ++t) EXPECT_EQ(b.frame_mask[i * longest + t], t < u.frames() ? 1.0f : 0.0f);
    EXPECT_FLOAT_EQ(b.log_duration[i * b.length], std::log(u.durations[0] + 1.0f));
    EXPECT_FLOAT_EQ(b.arousal[i], float(u.affect->arousal_norm()));
    EXPECT_FLOAT_EQ(b.pitch[i * longest], c.stats.standardize_pitch(u)[0]);
  }
}

TEST(Collate, MissingAffectNamesUtterance) {
  const auto cfg = tiny_config();
  auto c = random_corpus(cfg, 3, 1);
  c.items[1].affect.reset();
  try {
    collate<float>(ptrs(c.items), c.stats, cfg, true);
    FAIL() << "expected TrainError";
  } catch (const TrainError& e) {
    EXPECT_NE(std::string(e.what()).find("utt1"), std::string::npos) << e.what();
  }
  EXPECT_FALSE(collate<float>(ptrs(c.items), c.stats, cfg, false).has_affect);
}

TEST(Collate, RejectsInconsistentItems) {
  const auto cfg = tiny_config();
  auto c = random_corpus(cfg, 2, 1);
  auto bad = c.items;
  bad[0].durations[0] += 1;
  EXPECT_THROW(collate<float>(ptrs(bad), c.stats, cfg, false), TrainError);
  bad = c.items;
  bad[0].embedding.pop_back();
  EXPECT_THROW(collate<float>(ptrs(bad), c.stats, cfg, false), TrainError);
  bad = c.items;
  bad[0].phoneme_ids[0] = int(cfg.vocab);
  EXPECT_THROW(collate<float>(ptrs(bad), c.stats, cfg, false), TrainError);
}

TEST(Loss, PerfectPredictionIsZero) {
  const auto cfg = tiny_config();
  const auto b = random_batch<float>(cfg, {4, 2}, 3);
  Graph<float> g;
  ForwardOutput<float> out;
  out.mel = g.constant(b.mel);
  out.pitch = g.constant(b.pitch);
  out.energy = g.constant(b.energy);
  out.log_duration = g.constant(b.log_duration);
  TrainConfig tc;
  EXPECT_EQ(total_loss(out, b, tc).total.value().item(), 0.0f);
  tc.mel_mae = false;
  EXPECT_EQ(total_loss(out, b, tc).total.value().item(), 0.0f);
}

TEST(Loss, FullyMaskedBatchIsZeroWithZeroGradients) {
  const auto cfg = tiny_config();
  Model<float> m(cfg, 1);
  auto b = random_batch<float>(cfg, {4, 3}, 3);
  Graph<float> g(&m.params());
  const auto out = m.forward(g, b, {Route::e2, true});
  b.frame_mask.fill(0.0f);
  b.phone_mask.fill(0.0f);
  const auto loss = total_loss(out, b, TrainConfig{});
  EXPECT_EQ(loss.total.value().item(), 0.0f);
  for (const auto& gr : g.backward(loss.total))
    for (float v : gr.values()) ASSERT_EQ(v, 0.0f);
}

TEST(Loss, ShapeMismatchThrows) {
  const auto cfg = tiny_config();
  const auto b = random_batch<float>(cfg, {4}, 3);
  Graph<float> g;
  ForwardOutput<float> out;
  out.mel = g.constant(Tensor<float>({1, b.frames + 1, cfg.mel_bins}));
  out.pitch = g.constant(b.pitch);
  out.energy = g.constant(b.energy);
  out.log_duration = g.constant(b.log_duration);
  EXPECT_THROW(total_loss(out, b, TrainConfig{}), ShapeError);
}

TEST(Loss, InvariantToPadding) {
  const auto cfg = tiny_config();
  Model<float> m(cfg, 2);
  const auto c = random_corpus(cfg, 1, 4);
  const auto ref = collate<float>(ptrs(c.items), c.stats, cfg, true);
  auto loss_of = [&](const Batch<float>& b) {
    Graph<float> g(&m.params());
    return total_loss(m.forward(g, b, {Route::e2, true}), b, TrainConfig{}).total.value().item();
  };
  const float base = loss_of(ref);
  for (std::size_t extra_l : {1u, 4u})
    for (std::size_t extra_t : {2u, 7u}) {
      // Re-pad the same content to a longer phoneme and frame length.
      Batch<float> b = ref;
      const std::size_t l = ref.length + extra_l, t = ref.frames + extra_t, mb = cfg.mel_bins;
      b.length = l;
      b.frames = t;
      b.ids.assign(l, 0);
      b.durations.assign(l, 0);
      b.phone_mask = Tensor<float>({1, l}, 0.0f);
      b.log_duration = Tensor<float>({1, l}, 0.0f);
      for (std::size_t j = 0; j < ref.length; ++j) {
        b.ids[j] = ref.ids[j];
        b.durations[j] = ref.durations[j];
        b.phone_mask[j] = 1.0f;
        b.log_duration[j] = ref.log_duration[j];
      }
      b.mel = Tensor<float>({1, t, mb}, 0.0f);
      b.pitch = Tensor<float>({1, t}, 0.0f);
      b.energy = Tensor<float>({1, t}, 0.0f);
      b.frame_mask = Tensor<float>({1, t}, 0.0f);
      for (std::size_t f = 0; f < ref.frames; ++f) {
        b.pitch[f] = ref.pitch[f];
        b.energy[f] = ref.energy[f];
        b.frame_mask[f] = 1.0f;
        for (std::size_t k = 0; k < mb; ++k) b.mel[f * mb + k] = ref.mel[f * mb + k];
      }
      EXPECT_NEAR(loss_of(b), base, 1e-5 * std::max(1.0f, std::abs(base))) << extra_l << "/" << extra_t;
    }
}

// Full-loss finite-difference checks in double precision.
void check_full_loss(int stage, bool mae) {
  const auto cfg = tiny_config();
  Model<float> mf(cfg, 3);
  mf.set_ranges({-2, 2, -2, 2});
  Model<double> m = mf.cast<double>();
  const auto b = random_batch<double>(cfg, {4, 3}, 8);
  TrainConfig tc;
  tc.mel_mae = mae;
  GradCheckOptions opt;
  opt.samples_per_tensor = 6;
  opt.training = true;  // dropout masks are a pure function of the graph seed
  opt.trainable = m.trainable_mask(stage);
  const auto res = check_gradients(
      m.params(),
      [&](Graph<double>& g) {
        const auto out = m.forward(g, b, {stage == 2 ? Route::e2 : Route::e1, true});
        return total_loss(out, b, tc).total;
      },
      opt);
  EXPECT_TRUE(res.passed(1e-4)) << "stage " << stage << " worst " << res.worst << " rel " << res.max_rel_error;
}

TEST(LossGradients, StageOneMse) { check_full_loss(1, false); }
TEST(LossGradients, StageOneMae) { check_full_loss(1, true); }
TEST(LossGradients, StageTwoMae) { check_full_loss(2, true); }

TEST(Trainer, StageOneDeterministicAndLeavesProsodyUntouched) {
  const auto cfg = tiny_config();
  const auto data = random_corpus(cfg, 5, 2, false);
  std::vector<double> a, b;
  auto t1 = Trainer::stage1(data, cfg, quick_config());
  const auto pc = t1.model().params().index("pc.v_arousal");
  const auto cw = t1.model().params().index("pc.condition.w");
  const Tensor<float> va0 = t1.model().params().entry(pc).value;
  t1.run([&](const StepMetrics& m) {
    a.push_back(m.total);
    for (auto i : {pc, cw})
      for (float g : t1.last_gradients()[i].values()) ASSERT_EQ(g, 0.0f);
  });
  auto t2 = Trainer::stage1(data, cfg, quick_config());
  t2.run([&](const StepMetrics& m) { b.push_back(m.total); });
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 20u);
  EXPECT_EQ(t1.model().params().entry(pc).value, va0);
  EXPECT_EQ(encode_checkpoint(t1.checkpoint()), encode_checkpoint(t2.checkpoint()));
}

TEST(Trainer, DifferentSeedDifferentRun) {
  const auto cfg = tiny_config();
  const auto data = random_corpus(cfg, 5, 2, false);
  auto tc = quick_config(5);
  auto t1 = Trainer::stage1(data, cfg, tc);
  tc.seed = 10;
  auto t2 = Trainer::stage1(data, cfg, tc);
  t1.run();
  t2.run();
  EXPECT_NE(encode_checkpoint(t1.checkpoint()), encode_checkpoint(t2.checkpoint()));
}

TEST(Trainer, EmptyDataRejected) {
  PreparedCorpus empty;
  EXPECT_THROW(Trainer::stage1(empty, tiny_config(), quick_config()), TrainError);
}

TEST(Trainer, StageTwoFreezesBackboneAndTrainsProsody) {
  const auto cfg = tiny_config();
  const auto data = random_corpus(cfg, 6, 2, true);
  auto s1 = Trainer::stage1(data, cfg, quick_config(10));
  s1.run();
  const auto ck1 = s1.checkpoint();
  auto s2 = Trainer::stage2(ck1, data, quick_config(15));
  int checkpoints = 0;
  s2.run({}, [&](const Checkpoint& c) {
    ++checkpoints;
    EXPECT_EQ(c.stage, 2);
  });
  EXPECT_EQ(checkpoints, 1);
  const auto ck2 = s2.checkpoint();
  std::size_t changed = 0;
  for (std::size_t i = 0; i < ck1.params.size(); ++i) {
    const auto& before = ck1.params.entry(i);
    const auto& after = ck2.params.entry(i).value;
    if (before.group == ParamGroup::backbone) {
      ASSERT_EQ(std::memcmp(before.value.data(), after.data(), after.size() * sizeof(float)), 0) << before.name;
    } else {
      changed += max_abs_diff(before.value, after) > 0.0;
    }
  }
  EXPECT_GT(max_abs_diff(ck1.params["pc.v_arousal"], ck2.params["pc.v_arousal"]), 0.0);
  EXPECT_GT(max_abs_diff(ck1.params["pc.v_valence"], ck2.params["pc.v_valence"]), 0.0);
  EXPECT_GT(changed, 20u);
}

TEST(Trainer, StageTwoRequiresAffectOnEveryUtterance) {
  const auto cfg = tiny_config();
  auto data = random_corpus(cfg, 4, 2, true);
  auto s1 = Trainer::stage1(data, cfg, quick_config(2));
  s1.run();
  data.items[2].affect.reset();
  try {
    Trainer::stage2(s1.checkpoint(), data, quick_config(2));
    FAIL() << "expected TrainError";
  } catch (const TrainError& e) {
    EXPECT_NE(std::string(e.what()).find("utt2"), std::string::npos) << e.what();
  }
}

TEST(Trainer, FreezeViolationDetected) {
  const auto cfg = tiny_config();
  const auto data = random_corpus(cfg, 4, 2, true);
  auto s1 = Trainer::stage1(data, cfg, quick_config(2));
  s1.run();
  auto ck = s1.checkpoint();
  auto s2 = Trainer::stage2(ck, data, quick_config(2));
  EXPECT_NO_THROW(s2.verify_frozen());
  const_cast<Model<float>&>(s2.model()).params()["decoder.0.ln1.g"][0] += 1.0f;
  EXPECT_THROW(s2.verify_frozen(), TrainError);
}

TEST(Trainer, ResumeMatchesUninterruptedRun) {
  const auto cfg = tiny_config();
  const auto data = random_corpus(cfg, 7, 5, true);
  for (int stage : {1, 2}) {
    Checkpoint start;
    if (stage == 2) {
      auto s1 = Trainer::stage1(data, cfg, quick_config(4));
      s1.run();
      start = s1.checkpoint();
    }
    auto make = [&](std::uint64_t steps) {
      return stage == 1 ? Trainer::stage1(data, cfg, quick_config(steps)) : Trainer::stage2(start, data, quick_config(steps));
    };
    auto full = make(13);
    full.run();
    auto part = make(6);
    part.run();
    // Pass through the serialized form, as a real resume would.
    const auto ck = decode_checkpoint(encode_checkpoint(part.checkpoint()));
    auto rest = Trainer::resume(ck, data, 13);
    EXPECT_EQ(rest.step_count(), 6u);
    rest.run();
    EXPECT_EQ(encode_checkpoint(rest.checkpoint()), encode_checkpoint(full.checkpoint())) << "stage " << stage;
  }
}

TEST(Trainer, BatchOrderCoversEachEpoch) {
  const auto cfg = tiny_config();
  const auto data = random_corpus(cfg, 7, 5, false);
  auto t = Trainer::stage1(data, cfg, quick_config());
  std::vector<int> seen(7, 0);
  for (std::uint64_t s = 0; s < 3; ++s)  // ceil(7/3) batches per epoch
    for (auto i : t.batch_indices(s)) ++seen[i];
  EXPECT_EQ(seen, std::vector<int>(7, 1));
}

TEST(Trainer, LossMovingAverageDecreasesOnTinyCorpus) {
  const auto cfg = tiny_config();
  const auto data = random_corpus(cfg, 4, 6, false);
  auto tc = quick_config(1000);
  tc.batch_size = 4;
  tc.lr = 2e-3;
  tc.warmup_steps = 20;
  auto t = Trainer::stage1(data, cfg, tc);
  std::vector<double> losses;
  t.run([&](const StepMetrics& m) { losses.push_back(m.total); });
  // 100-step moving averages, compared at 100-step spacing.
  std::vector<double> avg;
  for (std::size_t end = 100; end <= losses.size(); end += 100) {
    double s = 0;
    for (std::size_t i = end - 100; i < end; ++i) s += losses[i];
    avg.push_back(s / 100);
  }
  for (std::size_t i = 1; i < avg.size(); ++i) EXPECT_LT(avg[i], avg[i - 1]) << "window " << i;
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  const auto cfg = tiny_config();
  const auto data = random_corpus(cfg, 4, 2, true);
  auto t = Trainer::stage1(data, cfg, quick_config(3));
  t.run();
  const auto dir = temp_dir("roundtrip");
  const auto path = dir + "/a.ckpt";
  save_checkpoint(t.checkpoint(), path);
  const auto loaded = load_checkpoint(path);
  save_checkpoint(loaded, dir + "/b.ckpt");
  EXPECT_EQ(read_file_bytes(path), read_file_bytes(dir + "/b.ckpt"));
  EXPECT_EQ(loaded.stage, 1);
  EXPECT_EQ(loaded.step, 3u);
  EXPECT_EQ(loaded.adam_steps, 3u);
  auto s2 = Trainer::stage2(loaded, data, quick_config(1));
  s2.run();
  EXPECT_EQ(decode_checkpoint(encode_checkpoint(s2.checkpoint())).stage, 2);
  // groups survive
  for (std::size_t i = 0; i < loaded.params.size(); ++i)
    EXPECT_EQ(loaded.params.entry(i).group, t.model().params().entry(i).group);
}

TEST(Checkpoint, TruncationAndCorruptionAreCleanErrors) {
  const auto cfg = tiny_config();
  Trainer t = Trainer::stage1(random_corpus(cfg, 3, 2, false), cfg, quick_config(1));
  t.run();
  const auto bytes = encode_checkpoint(t.checkpoint());
  Rng rng(3);
  std::vector<std::size_t> cuts = {0, 3, 6, 10, 19, bytes.size() / 2, bytes.size() - 4, bytes.size() - 1};
  for (int i = 0; i < 40; ++i) cuts.push_back(std::size_t(rng.bits() % bytes.size()));
  for (auto n : cuts) {
    std::vector<unsigned char> cut(bytes.begin(), bytes.begin() + long(n));
    EXPECT_THROW(decode_checkpoint(cut), FormatError) << "cut at " << n;
  }
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad[6] = 9;  // version
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), std::runtime_error);
}

TEST(Metrics, CsvResumeDropsLaterRows) {
  const auto dir = temp_dir("metrics");
  const auto path = dir + "/metrics.csv";
  {
    MetricsCsv csv(path, 0);
    for (std::uint64_t s = 1; s <= 5; ++s) csv.append({s, 1.0, 2.0, 3.0, 4.0, 10.0});
  }
  {
    MetricsCsv csv(path, 3);
    csv.append({4, 0.5, 0.5, 0.5, 0.5, 2.0});
  }
  const auto text = read_text_file(path);
  EXPECT_EQ(text.substr(0, text.find('\n')), "step,L_mel,L_dur,L_pitch,L_energy,total");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
  EXPECT_NE(text.find("\n4,0.5,0.5,0.5,0.5,2\n"), std::string::npos);
  EXPECT_EQ(text.find("\n5,"), std::string::npos);
}

TEST(Synthesis, TeacherForcedMelIgnoresAffect) {
  const auto cfg = tiny_config();
  const auto data = random_corpus(cfg, 3, 2, true);
  Model<float> m(cfg, 5);
  m.set_ranges(ranges_from_stats(data.stats));
  const auto& u = data.items[0];
  std::vector<MelSpectrogram> mels;
  for (double a : {1.0, 4.0, 7.0}) {
    const auto r = synthesize(m, 2, data.stats, u.phoneme_ids, u.embedding, AffectPoint{a, a}, &u);
    EXPECT_EQ(r.mel.frames, u.frames());
    mels.push_back(r.mel);
  }
  EXPECT_EQ(mels[0].data, mels[1].data);
  EXPECT_EQ(mels[0].data, mels[2].data);
}

TEST(Synthesis, InferenceUsesPredictedDurations) {
  const auto cfg = tiny_config();
  const auto data = random_corpus(cfg, 3, 2, true);
  Model<float> m(cfg, 5);
  m.params()["duration_predictor.linear.b"][0] = 1.0f;
  const auto& u = data.items[0];
  const auto r = synthesize(m, 2, data.stats, u.phoneme_ids, u.embedding, AffectPoint{4, 4});
  long total = 0;
  for (int d : r.durations) total += d;
  EXPECT_EQ(r.mel.frames, std::size_t(total));
  EXPECT_EQ(r.mel.data.size(), r.mel.frames * cfg.mel_bins);
  const auto again = synthesize(m, 2, data.stats, u.phoneme_ids, u.embedding, AffectPoint{4, 4});
  EXPECT_EQ(r.mel.data, again.mel.data);
  EXPECT_THROW(synthesize(m, 2, data.stats, {}, u.embedding, std::nullopt), TrainError);
}

}  // namespace
}  // namespace avtts
