// phonespot/include/phonespot/phoneme.h
//
// Copyright 2026 The Phonespot Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "phonespot/common.h"

namespace phonespot {

// Token ids into a PhonemeInventory.  The blank id never appears in a
// keyword's target sequence.
using TokenSequence = std::vector<int>;

// Ordered phoneme label set.  Index 0 is reserved for the blank symbol in
// the default inventory.  Immutable after construction; safe to share.
struct PhonemeInventory {
  std::vector<std::string> symbols;
  int blank_id = 0;

  // Built-in 71-symbol set: "<blk>" plus 69 ARPABET labels (stress-marked
  // vowels) plus "SIL".
  static PhonemeInventory Default();

  // One label per line, UTF-8.  Line 1 must be the blank label "<blk>".
  // '#' comments and empty lines are ignored.
  static PhonemeInventory FromFile(const std::string &path);

  int Size() const { return static_cast<int>(symbols.size()); }
  // -1 when absent.
  int IndexOf(const std::string &label) const;
  const std::string &Label(int id) const;
  // Throws ConfigError on duplicate symbols or an invalid blank slot.
  void Validate() const;
};

// Word -> token ids, validated against an inventory at load time.
// Keys are normalized (lowercased, leading/trailing punctuation stripped).
struct Lexicon {
  std::map<std::string, TokenSequence> entries;

  bool Contains(const std::string &word) const;
  const TokenSequence &Lookup(const std::string &word) const;
};

// Lowercase ASCII and strip leading/trailing punctuation.
std::string NormalizeWord(const std::string &word);

// File format: one entry per line, `word<TAB>PH1 PH2 ...`; '#' comments
// ignored.  Unknown phoneme labels and malformed lines raise ConfigError
// with the offending line number.
Lexicon LoadLexicon(const std::string &path, const PhonemeInventory &inventory);

// Whitespace-split, normalize, look up each word and concatenate.  Raises
// ConfigError naming every out-of-vocabulary word; there is no fallback.
TokenSequence G2p(const std::string &text, const Lexicon &lexicon);

struct EditCounts {
  int sub = 0;
  int ins = 0;
  int del = 0;
  int Total() const { return sub + ins + del; }
};

// Unit-cost Levenshtein alignment of hyp against ref.  When total cost
// ties, the backtrace prefers substitution over insertion over deletion so
// the (S,I,D) split is deterministic.
EditCounts EditDistance(const TokenSequence &ref, const TokenSequence &hyp);

// Corpus phoneme error rate: (sum S + sum I + sum D) / (sum |ref|).
// Raises ConfigError when no pairs are given or total ref length is zero.
double PhonemeErrorRate(
    const std::vector<std::pair<TokenSequence, TokenSequence>> &pairs);

// Render ids as space-separated labels (debug / CSV output).
std::string TokensToLabels(const TokenSequence &tokens,
                           const PhonemeInventory &inventory);

// Parse space-separated labels back to ids.  ConfigError on unknown label.
TokenSequence LabelsToTokens(const std::string &labels,
                             const PhonemeInventory &inventory);

}  // namespace phonespot
