// phonespot/src/phoneme.cc
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

#include "phonespot/phoneme.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace phonespot {

namespace {

const char *kDefaultSymbols[] = {
    "<blk>",
    "AA0", "AA1", "AA2", "AE0", "AE1", "AE2", "AH0", "AH1", "AH2",
    "AO0", "AO1", "AO2", "AW0", "AW1", "AW2", "AY0", "AY1", "AY2",
    "B",   "CH",  "D",   "DH",
    "EH0", "EH1", "EH2", "ER0", "ER1", "ER2", "EY0", "EY1", "EY2",
    "F",   "G",   "HH",
    "IH0", "IH1", "IH2", "IY0", "IY1", "IY2",
    "JH",  "K",   "L",   "M",   "N",   "NG",
    "OW0", "OW1", "OW2", "OY0", "OY1", "OY2",
    "P",   "R",   "S",   "SH",  "SIL",
    "T",   "TH",
    "UH0", "UH1", "UH2", "UW0", "UW1", "UW2",
    "V",   "W",   "Y",   "Z",   "ZH",
};

constexpr const char kBlankLabel[] = "<blk>";

bool IsCommentOrEmpty(const std::string &line) {
  for (char c : line) {
    if (c == '#') return true;
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

std::string StripCr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::vector<std::string> SplitWhitespace(const std::string &s) {
  std::vector<std::string> out;
  std::istringstream iss(s);
  std::string tok;
  while (iss >> tok) out.push_back(tok);
  return out;
}

}  // namespace

PhonemeInventory PhonemeInventory::Default() {
  PhonemeInventory inv;
  for (const char *s : kDefaultSymbols) inv.symbols.emplace_back(s);
  inv.blank_id = 0;
  inv.Validate();
  return inv;
}

PhonemeInventory PhonemeInventory::FromFile(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open inventory file: " + path);
  PhonemeInventory inv;
  std::string line;
  while (std::getline(in, line)) {
    line = StripCr(line);
    if (IsCommentOrEmpty(line)) continue;
    std::vector<std::string> toks = SplitWhitespace(line);
    if (toks.size() != 1) {
      throw ConfigError("inventory file " + path +
                        ": expected one label per line, got '" + line + "'");
    }
    inv.symbols.push_back(toks[0]);
  }
  if (inv.symbols.empty() || inv.symbols[0] != kBlankLabel) {
    throw ConfigError("inventory file " + path + ": line 1 must be '" +
                      std::string(kBlankLabel) + "'");
  }
  inv.blank_id = 0;
  inv.Validate();
  return inv;
}

int PhonemeInventory::IndexOf(const std::string &label) const {
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (symbols[i] == label) return static_cast<int>(i);
  }
  return -1;
}

const std::string &PhonemeInventory::Label(int id) const {
  if (id < 0 || id >= Size()) {
    throw ConfigError("phoneme id " + std::to_string(id) +
                      " outside inventory of size " + std::to_string(Size()));
  }
  return symbols[id];
}

void PhonemeInventory::Validate() const {
  if (symbols.empty()) throw ConfigError("empty phoneme inventory");
  std::unordered_set<std::string> seen;
  for (const std::string &s : symbols) {
    if (!seen.insert(s).second) {
      throw ConfigError("duplicate phoneme label: " + s);
    }
  }
  if (blank_id < 0 || blank_id >= Size()) {
    throw ConfigError("blank id outside inventory");
  }
  if (symbols[blank_id] != kBlankLabel) {
    throw ConfigError("blank slot must carry the reserved label '" +
                      std::string(kBlankLabel) + "'");
  }
}

bool Lexicon::Contains(const std::string &word) const {
  return entries.count(NormalizeWord(word)) != 0;
}

const TokenSequence &Lexicon::Lookup(const std::string &word) const {
  auto it = entries.find(NormalizeWord(word));
  if (it == entries.end()) throw ConfigError("word not in lexicon: " + word);
  return it->second;
}

std::string NormalizeWord(const std::string &word) {
  std::size_t begin = 0;
  std::size_t end = word.size();
  while (begin < end && std::ispunct(static_cast<unsigned char>(word[begin]))) ++begin;
  while (end > begin && std::ispunct(static_cast<unsigned char>(word[end - 1]))) --end;
  std::string out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(word[i]))));
  }
  return out;
}

Lexicon LoadLexicon(const std::string &path, const PhonemeInventory &inventory) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open lexicon file: " + path);
  Lexicon lex;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = StripCr(line);
    if (IsCommentOrEmpty(line)) continue;
    std::size_t tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ConfigError("lexicon " + path + " line " + std::to_string(line_no) +
                        ": expected `word<TAB>phonemes`");
    }
    std::string word = NormalizeWord(line.substr(0, tab));
    if (word.empty()) {
      throw ConfigError("lexicon " + path + " line " + std::to_string(line_no) +
                        ": empty word");
    }
    std::vector<std::string> labels = SplitWhitespace(line.substr(tab + 1));
    if (labels.empty()) {
      throw ConfigError("lexicon " + path + " line " + std::to_string(line_no) +
                        ": no phonemes for word '" + word + "'");
    }
    TokenSequence ids;
    ids.reserve(labels.size());
    for (const std::string &lab : labels) {
      int id = inventory.IndexOf(lab);
      if (id < 0) {
        throw ConfigError("lexicon " + path + " line " + std::to_string(line_no) +
                          ": unknown phoneme label '" + lab + "'");
      }
      ids.push_back(id);
    }
    lex.entries[word] = std::move(ids);  // later entries replace earlier ones
  }
  return lex;
}

TokenSequence G2p(const std::string &text, const Lexicon &lexicon) {
  std::vector<std::string> words;
  for (const std::string &raw : SplitWhitespace(text)) {
    std::string w = NormalizeWord(raw);
    if (!w.empty()) words.push_back(w);
  }
  if (words.empty()) {
    throw ConfigError("text is empty after normalization: '" + text + "'");
  }
  std::vector<std::string> missing;
  for (const std::string &w : words) {
    if (lexicon.entries.find(w) == lexicon.entries.end()) missing.push_back(w);
  }
  if (!missing.empty()) {
    std::string msg = "words not in lexicon:";
    for (const std::string &w : missing) msg += " " + w;
    throw ConfigError(msg);
  }
  TokenSequence out;
  for (const std::string &w : words) {
    const TokenSequence &ids = lexicon.entries.at(w);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

EditCounts EditDistance(const TokenSequence &ref, const TokenSequence &hyp) {
  struct Cell {
    int cost;
    EditCounts counts;
  };
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  std::vector<Cell> table((n + 1) * (m + 1));
  auto cell = [&](std::size_t i, std::size_t j) -> Cell & {
    return table[i * (m + 1) + j];
  };
  cell(0, 0) = {0, {}};
  for (std::size_t j = 1; j <= m; ++j) {
    Cell c = cell(0, j - 1);
    c.cost += 1;
    c.counts.ins += 1;
    cell(0, j) = c;
  }
  for (std::size_t i = 1; i <= n; ++i) {
    Cell c = cell(i - 1, 0);
    c.cost += 1;
    c.counts.del += 1;
    cell(i, 0) = c;
    for (std::size_t j = 1; j <= m; ++j) {
      // Candidates in tie-break order: substitution/match, insertion, deletion.
      Cell diag = cell(i - 1, j - 1);
      if (ref[i - 1] != hyp[j - 1]) {
        diag.cost += 1;
        diag.counts.sub += 1;
      }
      Cell ins = cell(i, j - 1);
      ins.cost += 1;
      ins.counts.ins += 1;
      Cell del = cell(i - 1, j);
      del.cost += 1;
      del.counts.del += 1;
      Cell best = diag;
      if (ins.cost < best.cost) best = ins;
      if (del.cost < best.cost) best = del;
      cell(i, j) = best;
    }
  }
  return cell(n, m).counts;
}

double PhonemeErrorRate(
    const std::vector<std::pair<TokenSequence, TokenSequence>> &pairs) {
  if (pairs.empty()) throw ConfigError("no reference/hypothesis pairs given");
  long long edits = 0;
  long long ref_len = 0;
  for (const auto &[ref, hyp] : pairs) {
    EditCounts c = EditDistance(ref, hyp);
    edits += c.Total();
    ref_len += static_cast<long long>(ref.size());
  }
  if (ref_len == 0) throw ConfigError("total reference length is zero");
  return static_cast<double>(edits) / static_cast<double>(ref_len);
}

std::string TokensToLabels(const TokenSequence &tokens,
                           const PhonemeInventory &inventory) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += inventory.Label(tokens[i]);
  }
  return out;
}

TokenSequence LabelsToTokens(const std::string &labels,
                             const PhonemeInventory &inventory) {
  TokenSequence out;
  for (const std::string &lab : SplitWhitespace(labels)) {
    int id = inventory.IndexOf(lab);
    if (id < 0) throw ConfigError("unknown phoneme label '" + lab + "'");
    out.push_back(id);
  }
  return out;
}

}  // namespace phonespot
