// phonespot/include/phonespot/posterior.h
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

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "phonespot/common.h"
#include "phonespot/phoneme.h"

namespace phonespot {

// T x V row-stochastic matrix of per-frame phoneme probabilities.
// Frames are 1-based at the API boundary; Row(t) takes a 1-based index.
struct PosteriorGram {
  int frames = 0;
  int vocab = 0;
  std::vector<double> probs;  // row-major, frames*vocab
  double frame_period = 0.01;  // seconds per frame

  PosteriorGram() = default;
  PosteriorGram(int t, int v) : frames(t), vocab(v), probs(static_cast<std::size_t>(t) * v, 0.0) {}

  std::span<const double> Row(int t) const {
    return {probs.data() + static_cast<std::size_t>(t - 1) * vocab,
            static_cast<std::size_t>(vocab)};
  }
  double &At(int t, int v) { return probs[static_cast<std::size_t>(t - 1) * vocab + v]; }
  double At(int t, int v) const { return probs[static_cast<std::size_t>(t - 1) * vocab + v]; }
};

// T x d matrix of frame embeddings, paired with a PosteriorGram of equal T
// when both are present.
struct EmbeddingMatrix {
  int frames = 0;
  int dim = 0;
  std::vector<double> values;  // row-major, frames*dim

  EmbeddingMatrix() = default;
  EmbeddingMatrix(int t, int d) : frames(t), dim(d), values(static_cast<std::size_t>(t) * d, 0.0) {}

  std::span<const double> Row(int t) const {
    return {values.data() + static_cast<std::size_t>(t - 1) * dim,
            static_cast<std::size_t>(dim)};
  }
  double &At(int t, int d) { return values[static_cast<std::size_t>(t - 1) * dim + d]; }
  double At(int t, int d) const { return values[static_cast<std::size_t>(t - 1) * dim + d]; }
};

// Recipe for the deterministic synthetic oracle.  Every token gets
// `frames_per_token` frames dominated by that token; consecutive tokens are
// separated by `blank_frames` blank-dominated frames (one blank frame is
// forced between equal adjacent tokens so greedy decoding stays exact).
// `alpha` both flattens the posterior toward uniform and sets the embedding
// noise magnitude.
struct SynthSpec {
  TokenSequence ids;
  int frames_per_token = 2;
  int blank_frames = 0;
  int lead_frames = 0;   // blank-dominated frames before the first token
  int tail_frames = 0;   // and after the last token
  double alpha = 0.0;
  std::uint32_t seed = 0;
  int embed_dim = 16;
};

// Checks row sums and entry ranges.  Rows within 1e-6 of 1 are accepted
// as-is; rows within 1e-4 are renormalized in place; anything further off
// raises IoError naming the row.
void ValidatePosteriors(PosteriorGram &p);

// KWSP binary or CSV, detected by content.  Binary: magic "KWSP", u32
// version=1, u32 T, u32 V, then T*V float32 row-major.  CSV: first line
// `T,V`, then T comma-separated rows.
PosteriorGram LoadPosteriors(const std::string &path);
void SavePosteriors(const std::string &path, const PosteriorGram &p);
void SavePosteriorsCsv(const std::string &path, const PosteriorGram &p);

// KWSE binary or CSV with the same layout (dims `T,d`).
EmbeddingMatrix LoadEmbeddings(const std::string &path);
void SaveEmbeddings(const std::string &path, const EmbeddingMatrix &e);
void SaveEmbeddingsCsv(const std::string &path, const EmbeddingMatrix &e);

// Deterministic synthetic posterior/embedding pair.  Posterior rows put
// (1-alpha)+alpha/V on the active token and alpha/V elsewhere.  Embedding
// rows are the token's one-hot prototype at index (id mod d) plus seeded
// uniform noise in [-alpha, alpha].  Bit-identical for identical specs.
std::pair<PosteriorGram, EmbeddingMatrix> Synthesize(
    const SynthSpec &spec, const PhonemeInventory &inventory);

// Row-wise interpolation toward uniform: row := (1-alpha)*row + alpha/V.
PosteriorGram PerturbUniform(const PosteriorGram &p, double alpha);

// Per-frame argmax (ties to the lowest index), collapse repeats, drop
// blanks.
TokenSequence GreedyDecode(const PosteriorGram &p, const PhonemeInventory &inventory);

// Random blank-free token sequence without adjacent repeats.
TokenSequence RandomKeywordTokens(std::mt19937 &rng, const PhonemeInventory &inventory,
                                  int length);

// Confusable at exactly `edits` Levenshtein steps from `base` (random
// substitutions/insertions/deletions, re-drawn until the distance checks
// out).  Variants containing `base` as a contiguous run are rejected --
// those would be true keyword occurrences rather than negatives.  Throws
// ConfigError when no such variant can be built.
TokenSequence MakeEditVariant(std::mt19937 &rng, const TokenSequence &base,
                              const PhonemeInventory &inventory, int edits);

}  // namespace phonespot
