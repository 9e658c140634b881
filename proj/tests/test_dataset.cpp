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

#include <filesystem>
#include <set>
#include <sstream>

#include "avtts/dataset.hpp"

namespace avtts {
namespace {

const AudioConfig kCfg;

std::string temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("avtts_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

std::vector<AlignInterval> intervals(std::initializer_list<AlignInterval> xs) { return xs; }

TEST(Affect, ClampsAndNormalizes) {
  bool clamped = false;
  auto p = AffectPoint::from_raw(9.0, 0.0, &clamped);
  EXPECT_TRUE(clamped);
  EXPECT_EQ(p.arousal, 7.0);
  EXPECT_EQ(p.valence, 1.0);
  EXPECT_EQ(p.arousal_norm(), 1.0);
  EXPECT_EQ(p.valence_norm(), 0.0);
  p = AffectPoint::from_raw(4.0, 4.0, &clamped);
  EXPECT_FALSE(clamped);
  EXPECT_DOUBLE_EQ(p.arousal_norm(), 0.5);
}

TEST(Manifest, RoundTrip) {
  Utterance u;
  u.id = "a";
  u.wav = "x.wav";
  u.phonemes = {"K", "AE1", "T"};
  u.durations = {1, 2, 3};
  u.speaker = "s";
  u.affect = AffectPoint{2.5, 6};
  std::istringstream in(manifest_text({u}));
  const auto m = parse_manifest(in, "/data");
  ASSERT_EQ(m.utterances.size(), 1u);
  EXPECT_EQ(m.utterances[0].phonemes, u.phonemes);
  EXPECT_EQ(m.utterances[0].durations, u.durations);
  EXPECT_EQ(m.utterances[0].affect, u.affect);
  EXPECT_EQ(m.resolve("x.wav"), "/data/x.wav");
  EXPECT_EQ(m.resolve("/abs.wav"), "/abs.wav");
}

TEST(Manifest, RejectsBadLines) {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_manifest(in, ".");
  };
  EXPECT_THROW(parse(R"({"id":"a","wav":"w","phonemes":["K"],"bogus":1})"), DataError);
  EXPECT_THROW(parse(R"({"id":"a","wav":"w","phonemes":["K"],"arousal":3})"), DataError);
  EXPECT_THROW(parse(R"({"id":"a","wav":"w","phonemes":["K"],"durations":[1,2]})"), DataError);
  EXPECT_THROW(parse("{\"id\":\"a\",\"wav\":\"w\",\"phonemes\":[\"K\"]}\n{\"id\":\"a\",\"wav\":\"w\",\"phonemes\":[\"K\"]}"),
               DataError);
  EXPECT_THROW(parse("not json"), DataError);
}

TEST(Alignment, BoundaryRoundingExample) {
  const auto d = parse_alignment(intervals({{"K", 0, 0.1}, {"AE1", 0.1, 0.25}, {"T", 0.25, 0.5}}), {"K", "AE1", "T"}, kCfg);
  EXPECT_EQ(d, (std::vector<int>{9, 13, 21}));
  EXPECT_EQ(d[0] + d[1] + d[2], 43);
}

TEST(Alignment, SingleIntervalCoversFile) {
  const auto d = parse_alignment(intervals({{"AA1", 0, 1.0}}), {"AA1"}, kCfg);
  EXPECT_EQ(d, (std::vector<int>{86}));  // round(22050 / 256)
}

TEST(Alignment, MismatchOverlapAndRetrogradeDiscard) {
  EXPECT_THROW(parse_alignment(intervals({{"K", 0, .1}, {"AH1", .1, .2}, {"T", .2, .3}}), {"K", "AE1", "T"}, kCfg),
               DiscardError);
  EXPECT_THROW(parse_alignment(intervals({{"K", 0, .15}, {"AE1", .1, .2}, {"T", .2, .3}}), {"K", "AE1", "T"}, kCfg),
               DiscardError);
  EXPECT_THROW(parse_alignment(intervals({{"K", 0, .1}, {"AE1", .1, .05}, {"T", .2, .3}}), {"K", "AE1", "T"}, kCfg),
               DiscardError);
  EXPECT_THROW(parse_alignment(intervals({{"T", 0, .1}, {"K", .1, .2}}), {"K", "AE1", "T"}, kCfg), DiscardError);
  EXPECT_THROW(parse_alignment({}, {"K"}, kCfg), DiscardError);
}

TEST(Alignment, MissingPhonemeThreshold) {
  // 1 of 3 missing: over 10%.
  EXPECT_THROW(parse_alignment(intervals({{"K", 0, .1}, {"T", .1, .3}}), {"K", "AE1", "T"}, kCfg), DiscardError);
  // 1 of 10 missing: allowed, gets duration 0.
  std::vector<std::string> tr;
  std::vector<AlignInterval> iv;
  for (int i = 0; i < 10; ++i) {
    tr.push_back(i % 2 ? "AA1" : "K");
    if (i != 4) iv.push_back({tr.back(), 0.1 * iv.size(), 0.1 * (iv.size() + 1)});
  }
  const auto d = parse_alignment(iv, tr, kCfg);
  EXPECT_EQ(d[4], 0);
  EXPECT_EQ(std::accumulate(d.begin(), d.end(), 0), 78);  // round(0.9 * 22050 / 256)
}

TEST(Alignment, SilenceMergesUnlessTranscribed) {
  const auto merged = parse_alignment(intervals({{"sil", 0, .05}, {"K", .05, .1}, {"sp", .1, .12}, {"T", .12, .3}}),
                                      {"K", "T"}, kCfg);
  EXPECT_EQ(merged, (std::vector<int>{10, 16}));
  const auto kept = parse_alignment(intervals({{"K", 0, .1}, {"sil", .1, .2}, {"T", .2, .3}}), {"K", "SIL", "T"}, kCfg);
  EXPECT_EQ(kept, (std::vector<int>{9, 8, 9}));
}

TEST(Alignment, TextRoundTripProperty) {
  Rng rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    Utterance u;
    const int n = rng.uniform_int(1, 12);
    for (int i = 0; i < n; ++i) {
      u.phonemes.push_back(pseudo_phones()[static_cast<std::size_t>(rng.uniform_int(0, 9))].symbol);
      u.durations.push_back(rng.uniform_int(0, 40));
    }
    std::istringstream in(alignment_text(u, kCfg));
    EXPECT_EQ(parse_alignment(parse_alignment_text(in), u.phonemes, kCfg), u.durations);
  }
}

TEST(Alignment, MalformedLineIsDiscard) {
  std::istringstream in("K\t0\t0.1\nAE1 0.1 0.2\n");
  EXPECT_THROW(parse_alignment_text(in), DiscardError);
  std::istringstream in2("K\t0\tabc\n");
  EXPECT_THROW(parse_alignment_text(in2), DiscardError);
}

TEST(Reconcile, AbsorbsSmallDifferences) {
  std::vector<int> d{3, 4};
  reconcile_total(d, 9);
  EXPECT_EQ(d, (std::vector<int>{3, 6}));
  d = {3, 4};
  reconcile_total(d, 5);
  EXPECT_EQ(d, (std::vector<int>{3, 2}));
  d = {3, 4};
  EXPECT_THROW(reconcile_total(d, 10), DiscardError);
}

SyntheticOptions small_options(std::size_t n, bool affect) {
  SyntheticOptions o;
  o.utterances = n;
  o.speakers = 2;
  o.seed = 5;
  o.affect = affect;
  return o;
}

TEST(Synthetic, DeterministicPerSeed) {
  const auto a = gen_synthetic_corpus(small_options(3, true));
  const auto b = gen_synthetic_corpus(small_options(3, true));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a.utterances[i].render.samples, b.utterances[i].render.samples);
    EXPECT_EQ(utterance_to_json(a.utterances[i].meta), utterance_to_json(b.utterances[i].meta));
  }
  EXPECT_EQ(a.embeddings, b.embeddings);
}

TEST(Synthetic, ShapesAndRanges) {
  const auto c = gen_synthetic_corpus(small_options(12, false));
  for (const auto& u : c.utterances) {
    EXPECT_GE(u.meta.phonemes.size(), 3u);
    EXPECT_LE(u.meta.phonemes.size(), 8u);
    EXPECT_FALSE(u.meta.affect.has_value());
    const int total = std::accumulate(u.meta.durations.begin(), u.meta.durations.end(), 0);
    EXPECT_EQ(mel_spectrogram(u.render.samples, kCfg).frames, std::size_t(total));
    for (int d : u.meta.durations) {
      EXPECT_GE(d, 6);   // 80 ms
      EXPECT_LE(d, 22);  // 250 ms
    }
    for (float s : u.render.samples) EXPECT_LE(std::abs(s), 1.0f);
  }
  for (const auto& v : c.voices) {
    EXPECT_GE(v.base_f0, 100.0);
    EXPECT_LE(v.base_f0, 300.0);
  }
}

TEST(Synthetic, ArousalScalesMeanF0By1_3) {
  auto lo = small_options(6, true), hi = small_options(6, true);
  lo.fixed_affect = AffectPoint{1.0, 4.0};
  hi.fixed_affect = AffectPoint{7.0, 4.0};
  const auto a = gen_synthetic_corpus(lo), b = gen_synthetic_corpus(hi);
  for (std::size_t i = 0; i < 6; ++i) {
    auto mean = [](const std::vector<float>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); };
    EXPECT_NEAR(mean(b.utterances[i].render.f0) / mean(a.utterances[i].render.f0), 1.3, 0.013);
    // Measured on the audio as well, over frames stable in both renders.
    const auto fa = extract_f0(a.utterances[i].render.samples, kCfg);
    const auto fb = extract_f0(b.utterances[i].render.samples, kCfg);
    std::vector<float> sa, sb;
    for (std::size_t t = 0; t < fa.hz.size(); ++t)
      if (a.utterances[i].render.stable[t]) sa.push_back(fa.hz[t]);
    for (std::size_t t = 0; t < fb.hz.size(); ++t)
      if (b.utterances[i].render.stable[t]) sb.push_back(fb.hz[t]);
    ASSERT_FALSE(sa.empty());
    ASSERT_FALSE(sb.empty());
    EXPECT_NEAR(mean(sb) / mean(sa), 1.3, 0.04);
    // Durations shrink by 0.8 per phoneme (before frame rounding).
    const double da = std::accumulate(a.utterances[i].meta.durations.begin(), a.utterances[i].meta.durations.end(), 0);
    const double db = std::accumulate(b.utterances[i].meta.durations.begin(), b.utterances[i].meta.durations.end(), 0);
    EXPECT_LT(db, da);
  }
}

TEST(Synthetic, ExtractedPitchMatchesGroundTruth) {
  const auto c = gen_synthetic_corpus(small_options(8, true));
  std::size_t checked = 0;
  for (const auto& u : c.utterances) {
    const auto f0 = extract_f0(u.render.samples, kCfg);
    ASSERT_EQ(f0.hz.size(), u.render.f0.size());
    for (std::size_t t = 0; t < f0.hz.size(); ++t) {
      if (!u.render.stable[t] || !f0.voiced[t]) continue;
      EXPECT_NEAR(f0.hz[t], u.render.f0[t], 5.0) << u.meta.id << " frame " << t;
      ++checked;
    }
  }
  EXPECT_GT(checked, 50u);
}

TEST(Synthetic, DistinctVoicesHaveDistinctFingerprints) {
  const auto c = gen_synthetic_corpus(small_options(2, false));
  double dot = 0;
  for (std::size_t i = 0; i < c.embeddings[0].size(); ++i) dot += double(c.embeddings[0][i]) * c.embeddings[1][i];
  EXPECT_LT(dot, 0.99);
}

TEST(Prepare, SyntheticCorpusHasNoDiscardsAndIsIdempotent) {
  const auto dir = temp_dir("prepare");
  write_synthetic_corpus(gen_synthetic_corpus(small_options(5, true)), dir, kCfg);
  const auto m = read_manifest(dir + "/manifest.jsonl");
  const auto c = prepare_corpus(m, kCfg);
  EXPECT_TRUE(c.discards.empty());
  ASSERT_EQ(c.items.size(), 5u);
  for (std::size_t i = 0; i < c.items.size(); ++i) {
    EXPECT_EQ(c.items[i].durations, m.utterances[i].durations);
    EXPECT_TRUE(c.items[i].affect.has_value());
    EXPECT_EQ(c.items[i].embedding.size(), 256u);
  }
  save_prepared(c, dir + "/prep1");
  save_prepared(prepare_corpus(m, kCfg), dir + "/prep2");
  EXPECT_EQ(read_file_bytes(dir + "/prep1/features.bin"), read_file_bytes(dir + "/prep2/features.bin"));
  EXPECT_EQ(read_text_file(dir + "/prep1/stats.json"), read_text_file(dir + "/prep2/stats.json"));
  const auto loaded = load_prepared(dir + "/prep1");
  EXPECT_EQ(encode_prepared(loaded.items), encode_prepared(c.items));

  // Standardized pitch over the corpus has zero mean and unit variance.
  double s = 0, ss = 0, n = 0;
  for (const auto& u : c.items)
    for (float v : c.stats.standardize_pitch(u)) s += v, ss += double(v) * v, n += 1;
  EXPECT_NEAR(s / n, 0.0, 1e-4);
  EXPECT_NEAR(ss / n, 1.0, 1e-3);
}

TEST(Prepare, CorruptedAlignmentIsDiscardedAndLogged) {
  const auto dir = temp_dir("corrupt");
  write_synthetic_corpus(gen_synthetic_corpus(small_options(3, false)), dir, kCfg);
  const auto m = read_manifest(dir + "/manifest.jsonl");
  {
    std::ofstream f(m.resolve(m.utterances[1].alignment), std::ios::app);
    f << "ZZ\t9.0\t9.5\n";
  }
  const auto c = prepare_corpus(m, kCfg);
  ASSERT_EQ(c.discards.size(), 1u);
  EXPECT_EQ(c.discards[0].id, m.utterances[1].id);
  EXPECT_EQ(c.items.size(), 2u);
  save_prepared(c, dir + "/prep");
  EXPECT_NE(read_text_file(dir + "/prep/discards.tsv").find(m.utterances[1].id), std::string::npos);
}

TEST(Prepare, TruncatedCacheIsAnError) {
  auto bytes = encode_prepared({});
  bytes.pop_back();
  EXPECT_THROW(decode_prepared(bytes, "x"), FormatError);
}

TEST(Batches, SmallCorpusIsOneBatch) {
  const auto b = make_batches(std::vector<std::size_t>(10, 5), 16, 1, 0);
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0].size(), 10u);
}

TEST(Batches, DeterministicAndComplete) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> lengths(static_cast<std::size_t>(rng.uniform_int(1, 100)));
    for (auto& l : lengths) l = static_cast<std::size_t>(rng.uniform_int(1, 50));
    const auto bs = static_cast<std::size_t>(rng.uniform_int(1, 20));
    const auto a = make_batches(lengths, bs, 7, 3), b = make_batches(lengths, bs, 7, 3);
    EXPECT_EQ(a, b);
    std::multiset<std::size_t> seen;
    for (const auto& batch : a) {
      EXPECT_LE(batch.size(), bs);
      EXPECT_FALSE(batch.empty());
      seen.insert(batch.begin(), batch.end());
    }
    std::multiset<std::size_t> expect;
    for (std::size_t i = 0; i < lengths.size(); ++i) expect.insert(i);
    EXPECT_EQ(seen, expect);
  }
  const std::vector<std::size_t> lengths(40, 3);
  EXPECT_NE(make_batches(lengths, 4, 7, 0), make_batches(lengths, 4, 7, 1));
}

}  // namespace
}  // namespace avtts
