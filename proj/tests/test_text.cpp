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

#include <sstream>

#include "avtts/rng.hpp"
#include "avtts/text.hpp"

namespace avtts {
namespace {

const Lexicon& bundled() {
  static const Lexicon lex = Lexicon::load(default_lexicon_path());
  return lex;
}

std::vector<std::string> symbols_of(const PhonemeSequence& s) { return default_inventory().symbols(s.ids); }

TEST(Inventory, ReservedIds) {
  const auto& inv = default_inventory();
  EXPECT_EQ(inv.id("SIL"), kSilId);
  EXPECT_EQ(inv.symbol(kPadId), "<pad>");
  EXPECT_EQ(inv.id("NOT_A_PHONE"), kUnkId);
  EXPECT_EQ(inv.size(), 3u + 24u + 45u);
}

TEST(Inventory, RoundTripIsIdentity) {
  const auto& inv = default_inventory();
  for (std::size_t id = 1; id < inv.size(); ++id) EXPECT_EQ(inv.id(inv.symbol(int(id))), int(id));
}

TEST(Lexicon, BundledHasCat) {
  const auto* cat = bundled().find("CAT");
  ASSERT_NE(cat, nullptr);
  EXPECT_EQ(*cat, (std::vector<std::string>{"K", "AE1", "T"}));
}

TEST(Lexicon, ParsesCommentsAndRejectsUnknownPhones) {
  std::istringstream ok("# header\nDOG D AO1 G  # trailing\nDOG(2) D AA1 G\n\n");
  auto lex = Lexicon::parse(ok);
  EXPECT_EQ(lex.size(), 1u);
  std::istringstream bad("DOG D QQ G\n");
  EXPECT_THROW(Lexicon::parse(bad), TextError);
}

TEST(G2P, EmptyTextIsAnError) {
  EXPECT_THROW(g2p("", bundled()), TextError);
  EXPECT_THROW(g2p("  ... !! ", bundled()), TextError);
}

TEST(G2P, SingleWord) {
  EXPECT_EQ(symbols_of(g2p("cat", bundled())), (std::vector<std::string>{"K", "AE1", "T"}));
  EXPECT_EQ(symbols_of(g2p("CAT", bundled())), (std::vector<std::string>{"K", "AE1", "T"}));
}

TEST(G2P, RepeatedWordHasOneSilBetween) {
  EXPECT_EQ(symbols_of(g2p("cat cat", bundled())),
            (std::vector<std::string>{"K", "AE1", "T", "SIL", "K", "AE1", "T"}));
  EXPECT_EQ(symbols_of(g2p("cat,   cat", bundled())), symbols_of(g2p("cat cat", bundled())));
}

TEST(G2P, PunctuationBecomesSil) {
  EXPECT_EQ(symbols_of(g2p("cat.", bundled())), (std::vector<std::string>{"K", "AE1", "T", "SIL"}));
  EXPECT_EQ(symbols_of(g2p("\"cat\"", bundled())), (std::vector<std::string>{"K", "AE1", "T", "SIL"}));
}

TEST(G2P, OutOfVocabularySpellsLetters) {
  EXPECT_EQ(symbols_of(g2p("xb", bundled())), (std::vector<std::string>{"EH1", "K", "S", "B", "IY1"}));
}

TEST(G2P, MaskMatchesNonPadIds) {
  auto s = g2p("hello, happy world!", bundled());
  ASSERT_EQ(s.ids.size(), s.mask.size());
  for (std::size_t i = 0; i < s.ids.size(); ++i) {
    EXPECT_NE(s.ids[i], kPadId);
    EXPECT_EQ(s.mask[i], 1.0f);
  }
}

TEST(PadBatch, PadsToRequestedLength) {
  auto p = pad_batch({{5, 7}}, 4);
  EXPECT_EQ(p.ids, (std::vector<int>{5, 7, 0, 0}));
  EXPECT_EQ(p.mask, (std::vector<float>{1, 1, 0, 0}));
}

TEST(PadBatch, EqualLengthsUnchanged) {
  auto p = pad_batch({{3, 4, 5}, {6, 7, 8}});
  EXPECT_EQ(p.ids, (std::vector<int>{3, 4, 5, 6, 7, 8}));
  EXPECT_EQ(p.mask, std::vector<float>(6, 1.0f));
}

TEST(PadBatch, RowsPaddedToLongest) {
  auto p = pad_batch({{3, 4}, {5, 6, 7, 8, 9}});
  EXPECT_EQ(p.length, 5u);
  EXPECT_EQ(p.ids.size(), 10u);
}

TEST(PadBatch, PrefixPreservedAndMaskConsistent) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<int>> rows(static_cast<std::size_t>(rng.uniform_int(1, 6)));
    for (auto& r : rows) {
      r.resize(static_cast<std::size_t>(rng.uniform_int(1, 9)));
      for (auto& v : r) v = rng.uniform_int(1, 70);
    }
    auto p = pad_batch(rows, static_cast<std::size_t>(rng.uniform_int(0, 12)));
    for (std::size_t b = 0; b < rows.size(); ++b) {
      bool seen_pad = false;
      for (std::size_t i = 0; i < p.length; ++i) {
        const int id = p.ids[b * p.length + i];
        EXPECT_EQ(p.mask[b * p.length + i] == 1.0f, id != kPadId);
        if (i < rows[b].size()) {
          EXPECT_EQ(id, rows[b][i]);
        }
        if (id == kPadId) {
          seen_pad = true;
        } else {
          EXPECT_FALSE(seen_pad);
        }
      }
    }
  }
}

}  // namespace
}  // namespace avtts
