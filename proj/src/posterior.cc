// phonespot/src/posterior.cc
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

#include "phonespot/posterior.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace phonespot {

namespace {

constexpr char kPosteriorMagic[4] = {'K', 'W', 'S', 'P'};
constexpr char kEmbeddingMagic[4] = {'K', 'W', 'S', 'E'};
constexpr std::uint32_t kFormatVersion = 1;

void WriteU32(std::ostream &out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char *>(b), 4);
}

std::uint32_t ReadU32(std::istream &in, const std::string &path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char *>(b), 4);
  if (!in) throw IoError("truncated file: " + path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void WriteF32(std::ostream &out, const std::vector<double> &values) {
  std::vector<float> buf(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) buf[i] = static_cast<float>(values[i]);
  out.write(reinterpret_cast<const char *>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

std::vector<double> ReadF32(std::istream &in, std::size_t count, const std::string &path) {
  std::vector<float> buf(count);
  in.read(reinterpret_cast<char *>(buf.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) throw IoError("truncated file: " + path);
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<double>(buf[i]);
  return out;
}

// Returns true when the file starts with the given magic (consumed on match).
bool SniffMagic(std::ifstream &in, const char magic[4]) {
  char head[4] = {0, 0, 0, 0};
  in.read(head, 4);
  if (in.gcount() == 4 && std::memcmp(head, magic, 4) == 0) return true;
  in.clear();
  in.seekg(0);
  return false;
}

// A leading "KW" marks a tensor file of the wrong (or corrupt) kind; CSV
// fixtures never start that way.
bool LooksBinary(std::ifstream &in) {
  char head[2] = {0, 0};
  in.read(head, 2);
  bool binary = in.gcount() == 2 && head[0] == 'K' && head[1] == 'W';
  in.clear();
  in.seekg(0);
  return binary;
}

struct CsvMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;
};

CsvMatrix LoadCsvMatrix(std::ifstream &in, const std::string &path) {
  CsvMatrix m;
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty CSV file: " + path);
  {
    std::istringstream head(line);
    char comma = 0;
    if (!(head >> m.rows >> comma >> m.cols) || comma != ',' || m.rows <= 0 || m.cols <= 0) {
      throw IoError("bad CSV header in " + path + " (expected `rows,cols`)");
    }
  }
  m.values.reserve(static_cast<std::size_t>(m.rows) * m.cols);
  int row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    std::istringstream ss(line);
    std::string cell;
    int col = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        m.values.push_back(std::stod(cell));
      } catch (const std::exception &) {
        throw IoError("bad CSV value '" + cell + "' in " + path);
      }
      ++col;
    }
    if (col != m.cols) {
      throw IoError("CSV row " + std::to_string(row) + " in " + path + " has " +
                    std::to_string(col) + " values, expected " + std::to_string(m.cols));
    }
  }
  if (row != m.rows) {
    throw IoError("CSV file " + path + " has " + std::to_string(row) +
                  " rows, header said " + std::to_string(m.rows));
  }
  return m;
}

void CheckFinite01(const std::vector<double> &values, const std::string &path) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    double v = values[i];
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      throw IoError("entry " + std::to_string(i) + " in " + path +
                    " outside [0,1]: " + std::to_string(v));
    }
  }
}

}  // namespace

void ValidatePosteriors(PosteriorGram &p) {
  if (p.frames <= 0 || p.vocab <= 0) throw IoError("posteriorgram has empty dimensions");
  for (int t = 1; t <= p.frames; ++t) {
    double sum = 0.0;
    for (int v = 0; v < p.vocab; ++v) {
      double x = p.At(t, v);
      if (!std::isfinite(x) || x < 0.0 || x > 1.0) {
        throw IoError("posterior entry out of [0,1] at frame " + std::to_string(t));
      }
      sum += x;
    }
    double err = std::abs(sum - 1.0);
    if (err <= 1e-6) continue;
    if (err <= 1e-4) {
      for (int v = 0; v < p.vocab; ++v) p.At(t, v) /= sum;
    } else {
      throw IoError("posterior row " + std::to_string(t) + " sums to " +
                    std::to_string(sum) + ", beyond tolerance");
    }
  }
}

PosteriorGram LoadPosteriors(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open posterior file: " + path);
  PosteriorGram p;
  if (SniffMagic(in, kPosteriorMagic)) {
    std::uint32_t version = ReadU32(in, path);
    if (version != kFormatVersion) {
      throw IoError("unsupported KWSP version " + std::to_string(version) + " in " + path);
    }
    std::uint32_t t = ReadU32(in, path);
    std::uint32_t v = ReadU32(in, path);
    if (t == 0 || v == 0) throw IoError("zero dimension in " + path);
    p.frames = static_cast<int>(t);
    p.vocab = static_cast<int>(v);
    p.probs = ReadF32(in, static_cast<std::size_t>(t) * v, path);
  } else {
    if (LooksBinary(in)) throw IoError("bad magic in " + path + " (expected KWSP)");
    CsvMatrix m = LoadCsvMatrix(in, path);
    p.frames = m.rows;
    p.vocab = m.cols;
    p.probs = std::move(m.values);
  }
  CheckFinite01(p.probs, path);
  ValidatePosteriors(p);
  return p;
}

void SavePosteriors(const std::string &path, const PosteriorGram &p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write posterior file: " + path);
  out.write(kPosteriorMagic, 4);
  WriteU32(out, kFormatVersion);
  WriteU32(out, static_cast<std::uint32_t>(p.frames));
  WriteU32(out, static_cast<std::uint32_t>(p.vocab));
  WriteF32(out, p.probs);
  if (!out) throw IoError("short write to " + path);
}

void SavePosteriorsCsv(const std::string &path, const PosteriorGram &p) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write posterior file: " + path);
  out << p.frames << "," << p.vocab << "\n";
  out.precision(9);
  for (int t = 1; t <= p.frames; ++t) {
    for (int v = 0; v < p.vocab; ++v) {
      if (v) out << ",";
      out << p.At(t, v);
    }
    out << "\n";
  }
  if (!out) throw IoError("short write to " + path);
}

EmbeddingMatrix LoadEmbeddings(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open embedding file: " + path);
  EmbeddingMatrix e;
  if (SniffMagic(in, kEmbeddingMagic)) {
    std::uint32_t version = ReadU32(in, path);
    if (version != kFormatVersion) {
      throw IoError("unsupported KWSE version " + std::to_string(version) + " in " + path);
    }
    std::uint32_t t = ReadU32(in, path);
    std::uint32_t d = ReadU32(in, path);
    if (t == 0 || d == 0) throw IoError("zero dimension in " + path);
    e.frames = static_cast<int>(t);
    e.dim = static_cast<int>(d);
    e.values = ReadF32(in, static_cast<std::size_t>(t) * d, path);
  } else {
    if (LooksBinary(in)) throw IoError("bad magic in " + path + " (expected KWSE)");
    CsvMatrix m = LoadCsvMatrix(in, path);
    e.frames = m.rows;
    e.dim = m.cols;
    e.values = std::move(m.values);
  }
  for (double v : e.values) {
    if (!std::isfinite(v)) throw IoError("non-finite embedding value in " + path);
  }
  return e;
}

void SaveEmbeddings(const std::string &path, const EmbeddingMatrix &e) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write embedding file: " + path);
  out.write(kEmbeddingMagic, 4);
  WriteU32(out, kFormatVersion);
  WriteU32(out, static_cast<std::uint32_t>(e.frames));
  WriteU32(out, static_cast<std::uint32_t>(e.dim));
  WriteF32(out, e.values);
  if (!out) throw IoError("short write to " + path);
}

void SaveEmbeddingsCsv(const std::string &path, const EmbeddingMatrix &e) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write embedding file: " + path);
  out << e.frames << "," << e.dim << "\n";
  out.precision(9);
  for (int t = 1; t <= e.frames; ++t) {
    for (int d = 0; d < e.dim; ++d) {
      if (d) out << ",";
      out << e.At(t, d);
    }
    out << "\n";
  }
  if (!out) throw IoError("short write to " + path);
}

std::pair<PosteriorGram, EmbeddingMatrix> Synthesize(
    const SynthSpec &spec, const PhonemeInventory &inventory) {
  if (spec.ids.empty()) throw ConfigError("synth spec has no tokens");
  if (spec.frames_per_token < 1) throw ConfigError("frames_per_token must be >= 1");
  if (spec.blank_frames < 0 || spec.lead_frames < 0 || spec.tail_frames < 0) {
    throw ConfigError("negative frame count in synth spec");
  }
  if (spec.alpha < 0.0 || spec.alpha > 1.0) throw ConfigError("alpha outside [0,1]");
  if (spec.embed_dim <= 0) throw ConfigError("embed_dim must be positive");
  const int vocab = inventory.Size();
  for (int id : spec.ids) {
    if (id < 0 || id >= vocab) throw ConfigError("token id outside inventory");
    if (id == inventory.blank_id) throw ConfigError("blank token in synth sequence");
  }

  // Frame plan: lead blanks, token runs with separators, tail blanks.
  std::vector<int> plan;
  for (int i = 0; i < spec.lead_frames; ++i) plan.push_back(inventory.blank_id);
  for (std::size_t k = 0; k < spec.ids.size(); ++k) {
    if (k > 0) {
      int sep = spec.blank_frames;
      if (sep == 0 && spec.ids[k] == spec.ids[k - 1]) sep = 1;
      for (int i = 0; i < sep; ++i) plan.push_back(inventory.blank_id);
    }
    for (int i = 0; i < spec.frames_per_token; ++i) plan.push_back(spec.ids[k]);
  }
  for (int i = 0; i < spec.tail_frames; ++i) plan.push_back(inventory.blank_id);

  const int frames = static_cast<int>(plan.size());
  PosteriorGram p(frames, vocab);
  p.frame_period = 0.01;
  const double off = spec.alpha / vocab;
  for (int t = 1; t <= frames; ++t) {
    int target = plan[t - 1];
    for (int v = 0; v < vocab; ++v) p.At(t, v) = off;
    p.At(t, target) += 1.0 - spec.alpha;
  }

  EmbeddingMatrix e(frames, spec.embed_dim);
  std::mt19937 rng(spec.seed);
  for (int t = 1; t <= frames; ++t) {
    int proto = plan[t - 1] % spec.embed_dim;
    for (int d = 0; d < spec.embed_dim; ++d) {
      double noise = spec.alpha * (2.0 * UniformUnit(rng) - 1.0);
      e.At(t, d) = (d == proto ? 1.0 : 0.0) + noise;
    }
  }
  return {std::move(p), std::move(e)};
}

PosteriorGram PerturbUniform(const PosteriorGram &p, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha outside [0,1]");
  PosteriorGram out = p;
  const double uniform = alpha / p.vocab;
  for (double &v : out.probs) v = (1.0 - alpha) * v + uniform;
  return out;
}

TokenSequence RandomKeywordTokens(std::mt19937 &rng, const PhonemeInventory &inventory,
                                  int length) {
  if (length < 1) throw ConfigError("keyword length must be >= 1");
  if (inventory.Size() < 3) throw ConfigError("inventory too small for random keywords");
  TokenSequence out;
  while (static_cast<int>(out.size()) < length) {
    int id = UniformInt(rng, inventory.Size());
    if (id == inventory.blank_id) continue;
    if (!out.empty() && out.back() == id) continue;
    out.push_back(id);
  }
  return out;
}

namespace {

// True when `needle` occurs inside `haystack` as a contiguous run.
bool ContainsRun(const TokenSequence &haystack, const TokenSequence &needle) {
  if (needle.size() > haystack.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    if (std::equal(needle.begin(), needle.end(), haystack.begin() + i)) return true;
  }
  return false;
}

}  // namespace

TokenSequence MakeEditVariant(std::mt19937 &rng, const TokenSequence &base,
                              const PhonemeInventory &inventory, int edits) {
  if (base.empty()) throw ConfigError("cannot build a variant of an empty sequence");
  if (edits < 1) throw ConfigError("edit count must be >= 1");
  for (int attempt = 0; attempt < 200; ++attempt) {
    TokenSequence cand = base;
    for (int e = 0; e < edits; ++e) {
      int op = UniformInt(rng, 3);
      if (op == 2 && cand.size() <= 1) op = UniformInt(rng, 2);
      if (op == 0) {  // substitute
        int pos = UniformInt(rng, static_cast<int>(cand.size()));
        int id;
        do {
          id = UniformInt(rng, inventory.Size());
        } while (id == inventory.blank_id || id == cand[pos]);
        cand[pos] = id;
      } else if (op == 1) {  // insert
        int pos = UniformInt(rng, static_cast<int>(cand.size()) + 1);
        int id;
        do {
          id = UniformInt(rng, inventory.Size());
        } while (id == inventory.blank_id);
        cand.insert(cand.begin() + pos, id);
      } else {  // delete
        cand.erase(cand.begin() + UniformInt(rng, static_cast<int>(cand.size())));
      }
    }
    if (cand.empty() || cand == base) continue;
    // A variant that still contains the base as a run is a genuine keyword
    // occurrence, not a confusable.
    if (ContainsRun(cand, base)) continue;
    if (EditDistance(base, cand).Total() == edits) return cand;
  }
  throw ConfigError("could not build an edit-distance-" + std::to_string(edits) + " variant");
}

TokenSequence GreedyDecode(const PosteriorGram &p, const PhonemeInventory &inventory) {
  if (p.vocab != inventory.Size()) {
    throw ConfigError("posterior vocab " + std::to_string(p.vocab) +
                      " does not match inventory size " + std::to_string(inventory.Size()));
  }
  TokenSequence out;
  int prev = -1;
  for (int t = 1; t <= p.frames; ++t) {
    std::span<const double> row = p.Row(t);
    int arg = 0;
    for (int v = 1; v < p.vocab; ++v) {
      if (row[v] > row[arg]) arg = v;  // ties keep the lowest index
    }
    if (arg != prev && arg != inventory.blank_id) out.push_back(arg);
    prev = arg;
  }
  return out;
}

}  // namespace phonespot
