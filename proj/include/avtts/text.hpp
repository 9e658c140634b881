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

// Text to phoneme ids: a fixed ARPAbet inventory, a plain-text pronunciation
// lexicon, and batch padding.

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace avtts {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kSilId = 2;

class TextError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Symbol <-> id map. Ids 0..2 are PAD, UNK, SIL; the rest are ARPAbet
// consonants followed by stress-marked vowels.
class PhonemeInventory {
 public:
  PhonemeInventory() {
    symbols_ = {"<pad>", "<unk>", "SIL"};
    static constexpr std::array consonants = {"B",  "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L", "M",  "N",
                                              "NG", "P",  "R", "S",  "SH", "T", "TH", "V",  "W", "Y", "Z", "ZH"};
    static constexpr std::array vowels = {"AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER",
                                          "EY", "IH", "IY", "OW", "OY", "UH", "UW"};
    for (const char* c : consonants) symbols_.emplace_back(c);
    for (const char* v : vowels)
      for (char stress : {'0', '1', '2'}) symbols_.push_back(std::string(v) + stress);
    for (std::size_t i = 0; i < symbols_.size(); ++i) ids_.emplace(symbols_[i], static_cast<int>(i));
  }

  std::size_t size() const noexcept { return symbols_.size(); }

  bool contains(std::string_view s) const { return ids_.count(std::string(s)) != 0; }

  int id(std::string_view symbol) const {
    auto it = ids_.find(std::string(symbol));
    return it == ids_.end() ? kUnkId : it->second;
  }

  const std::string& symbol(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size())
      throw std::out_of_range("phoneme id " + std::to_string(id) + " outside inventory");
    return symbols_[id];
  }

  std::vector<int> ids(const std::vector<std::string>& symbols) const {
    std::vector<int> out;
    out.reserve(symbols.size());
    for (const auto& s : symbols) out.push_back(id(s));
    return out;
  }

  std::vector<std::string> symbols(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(symbol(i));
    return out;
  }

  const std::vector<std::string>& all() const noexcept { return symbols_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> ids_;
};

inline const PhonemeInventory& default_inventory() {
  static const PhonemeInventory inv;
  return inv;
}

// Uppercase WORD -> phoneme symbols. File format: `WORD PH1 PH2 ...` per
// line, `#` starts a comment. CMU-style variants `WORD(2)` are skipped.
class Lexicon {
 public:
  Lexicon() = default;

  static Lexicon parse(std::istream& in, const PhonemeInventory& inv = default_inventory()) {
    Lexicon lex;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      std::istringstream ls(line);
      std::string word;
      if (!(ls >> word)) continue;
      if (word.find('(') != std::string::npos) continue;
      std::vector<std::string> phones;
      for (std::string p; ls >> p;) {
        if (!inv.contains(p) || inv.id(p) == kPadId || inv.id(p) == kUnkId)
          throw TextError("lexicon line " + std::to_string(lineno) + ": unknown phoneme '" + p + "'");
        phones.push_back(p);
      }
      if (phones.empty()) throw TextError("lexicon line " + std::to_string(lineno) + ": no pronunciation");
      lex.entries_.emplace(word, std::move(phones));
    }
    return lex;
  }

  static Lexicon load(const std::string& path, const PhonemeInventory& inv = default_inventory()) {
    std::ifstream f(path);
    if (!f) throw TextError("cannot open lexicon: " + path);
    return parse(f, inv);
  }

  const std::vector<std::string>* find(const std::string& upper_word) const {
    auto it = entries_.find(upper_word);
    return it == entries_.end() ? nullptr : &it->second;
  }

  std::size_t size() const noexcept { return entries_.size(); }

 private:
  std::map<std::string, std::vector<std::string>> entries_;
};

#ifdef AVTTS_DATA_DIR
inline std::string default_lexicon_path() { return std::string(AVTTS_DATA_DIR) + "/lexicon.txt"; }
#endif

// Letter-name pronunciation used for words missing from the lexicon.
inline std::vector<std::string> spell_letter(char upper) {
  static const std::map<char, std::vector<std::string>> names = {
      {'A', {"EY1"}},       {'B', {"B", "IY1"}},  {'C', {"S", "IY1"}},  {'D', {"D", "IY1"}},
      {'E', {"IY1"}},       {'F', {"EH1", "F"}},  {'G', {"JH", "IY1"}}, {'H', {"EY1", "CH"}},
      {'I', {"AY1"}},       {'J', {"JH", "EY1"}}, {'K', {"K", "EY1"}},  {'L', {"EH1", "L"}},
      {'M', {"EH1", "M"}},  {'N', {"EH1", "N"}},  {'O', {"OW1"}},       {'P', {"P", "IY1"}},
      {'Q', {"K", "Y", "UW1"}},                   {'R', {"AA1", "R"}},  {'S', {"EH1", "S"}},
      {'T', {"T", "IY1"}},  {'U', {"Y", "UW1"}},  {'V', {"V", "IY1"}},
      {'W', {"D", "AH1", "B", "AH0", "L", "Y", "UW0"}},                 {'X', {"EH1", "K", "S"}},
      {'Y', {"W", "AY1"}},  {'Z', {"Z", "IY1"}}};
  auto it = names.find(upper);
  return it == names.end() ? std::vector<std::string>{} : it->second;
}

struct PhonemeSequence {
  std::vector<int> ids;
  std::vector<float> mask;
  std::string text;

  std::size_t length() const noexcept { return ids.size(); }
};

// Lowercases, splits on anything other than letters and apostrophes, and
// emits one SIL at every word boundary and after trailing punctuation.
inline PhonemeSequence g2p(const std::string& text, const Lexicon& lexicon,
                           const PhonemeInventory& inv = default_inventory()) {
  struct Token {
    std::string word;
    bool punct_after = false;
  };
  std::vector<Token> words;
  std::string cur;
  bool pending_punct = false;
  auto flush = [&] {
    if (!cur.empty()) words.push_back({cur, false});
    cur.clear();
  };
  for (char raw : text) {
    const unsigned char c = static_cast<unsigned char>(raw);
    if (std::isalpha(c) || (c == '\'' && !cur.empty())) {
      if (pending_punct && !words.empty()) words.back().punct_after = true;
      pending_punct = false;
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      if (!std::isspace(c)) pending_punct = true;
    }
  }
  flush();
  if (pending_punct && !words.empty()) words.back().punct_after = true;
  // Apostrophe-only leftovers such as "'" carry no letters.
  std::erase_if(words, [](const Token& t) {
    return std::none_of(t.word.begin(), t.word.end(), [](char ch) { return std::isalpha(static_cast<unsigned char>(ch)); });
  });
  if (words.empty()) throw TextError("no speakable content in text: \"" + text + "\"");

  PhonemeSequence seq;
  seq.text = text;
  for (std::size_t w = 0; w < words.size(); ++w) {
    std::string upper = words[w].word;
    std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char ch) { return std::toupper(ch); });
    if (const auto* pron = lexicon.find(upper)) {
      for (const auto& p : *pron) seq.ids.push_back(inv.id(p));
    } else {
      for (char ch : upper)
        for (const auto& p : spell_letter(ch)) seq.ids.push_back(inv.id(p));
    }
    if (w + 1 < words.size() || words[w].punct_after) seq.ids.push_back(kSilId);
  }
  seq.mask.assign(seq.ids.size(), 1.0f);
  return seq;
}

struct PaddedIds {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<int> ids;     // batch * length, row-major
  std::vector<float> mask;  // 1 for real tokens
};

// Pads every row to max(longest row, min_length) with PAD.
inline PaddedIds pad_batch(const std::vector<std::vector<int>>& rows, std::size_t min_length = 0) {
  if (rows.empty()) throw std::invalid_argument("pad_batch: empty batch");
  PaddedIds out;
  out.batch = rows.size();
  out.length = min_length;
  for (const auto& r : rows) out.length = std::max(out.length, r.size());
  out.ids.assign(out.batch * out.length, kPadId);
  out.mask.assign(out.batch * out.length, 0.0f);
  for (std::size_t b = 0; b < rows.size(); ++b)
    for (std::size_t i = 0; i < rows[b].size(); ++i) {
      out.ids[b * out.length + i] = rows[b][i];
      out.mask[b * out.length + i] = 1.0f;
    }
  return out;
}

}  // namespace avtts
