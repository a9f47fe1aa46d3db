// phonespot/include/phonespot/matcher.h
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
//
// Stage-2 verification: a small attention/GRU matcher over a cropped clip
// and an enrollment prototype, an analytic cosine-alignment scorer usable
// without trained weights, and low-rank adapter merging.
//
// The matcher forward pass is fixed exactly so that independent
// implementations agree bit-for-bit given identical weights:
//   - sequence = [clip frames + audio mark ; prototype vectors + text mark],
//     every position plus a sinusoidal positional encoding
//     (pe[2i] = sin(pos / 10000^(2i/d)), pe[2i+1] = cos(...));
//   - per attention block, single head:
//       X += softmax((X Wq)(X Wk)^T / sqrt(d)) (X Wv) Wo
//       X += relu(X F1 + b1) F2 + b2
//     with softmax computed after row-max subtraction;
//   - gated recurrent pooling over all rows, h_0 = 0:
//       r = sigmoid(Wr x + Ur h + br)
//       z = sigmoid(Wz x + Uz h + bz)
//       n = tanh(Wn x + r .* (Un h) + bn)
//       h = (1 - z) .* n + z .* h
//   - p_utt = sigmoid(w_utt . h_final + b_utt);
//     p_phon[j] = sigmoid(w_phon . X[N+j] + b_phon) at prototype positions.
//
// Models and prototypes are immutable once built and safe to share across
// concurrent verification calls; every operation here is a pure function.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "phonespot/common.h"
#include "phonespot/ctc_search.h"
#include "phonespot/phoneme.h"
#include "phonespot/posterior.h"

namespace phonespot {

struct AttentionBlock {
  Mat wq, wk, wv, wo;  // d x d
  Mat ff1;             // d x 4d
  Mat ff2;             // 4d x d
  Vec b1;              // 4d
  Vec b2;              // d
};

struct GruCell {
  Mat wr, wz, wn;  // d x d, input side
  Mat ur, uz, un;  // d x d, state side
  Vec br, bz, bn;  // d
};

struct AffineHead {
  Vec w;  // d
  double b = 0.0;
};

struct MatcherModel {
  int vocab = 0;
  int dim = 0;
  Mat embed;  // vocab x d phoneme embedding table
  std::vector<AttentionBlock> blocks;
  GruCell recur;
  AffineHead head_utt;
  AffineHead head_phon;
  Vec mark_audio;  // d
  Vec mark_text;   // d
  AttentionBlock xattn;  // dedicated cross-attention projections (wq/wk/wv/wo)

  void Validate() const;  // dimension consistency + finiteness
};

// All-zero weights (sigmoid outputs sit at 0.5).
MatcherModel MakeZeroModel(int vocab, int dim, int num_blocks = 2);
// Seeded uniform weights in [-scale, scale].
MatcherModel MakeRandomModel(int vocab, int dim, int num_blocks, std::uint32_t seed,
                             double scale = 0.5);
// Zero model whose embedding rows are folded one-hots (row k has a single
// 1 at index k mod d) -- the analytic counterpart of the synthetic
// embedding prototypes.
MatcherModel MakeFoldedOneHotModel(int vocab, int dim, int num_blocks = 2);

enum class EnrollMode { kText, kConcat, kCrossAttention };

const char *EnrollModeName(EnrollMode mode);
EnrollMode ParseEnrollMode(const std::string &name);

// The fused enrollment sequence a query clip is verified against.
struct EnrollmentPrototype {
  EnrollMode mode = EnrollMode::kText;
  TokenSequence tokens;
  std::vector<Vec> fused;  // length |tokens| (text, cross-attention) or |tokens|+T_ref (concat)
};

// Embedding-table rows for the given ids, in order.
std::vector<Vec> EmbedTokens(const TokenSequence &tokens, const MatcherModel &model);

// Frames [max(1, start-margin), min(T, end+margin)] inclusive.
EmbeddingMatrix CropEmbeddings(const EmbeddingMatrix &e, const CandidateSegment &segment,
                               int margin);

// Text mode ignores `ref`.  Concat appends the reference frames after the
// token embeddings, adding positional encodings and modality marks to every
// position.  Cross-attention runs one attention pass with token embeddings
// as queries and the reference frames as keys/values (no residual).
EnrollmentPrototype FuseEnrollment(EnrollMode mode, const TokenSequence &tokens,
                                   const EmbeddingMatrix *ref, const MatcherModel &model);

// Prototype built directly from folded one-hot rows; equivalent to text
// fusion under MakeFoldedOneHotModel but requires no model.
EnrollmentPrototype MakeFoldedOneHotPrototype(const TokenSequence &tokens, int dim);

struct ForwardTrace {
  std::vector<Mat> attention;  // post-softmax attention per block
};

struct MatcherOutput {
  double p_utt = 0.0;
  std::vector<double> p_phon;  // one value per prototype position
};

MatcherOutput MatcherForward(const EmbeddingMatrix &clip, const EnrollmentPrototype &proto,
                             const MatcherModel &model, ForwardTrace *trace = nullptr);

// Analytic stage-2 score without trained weights: monotone alignment DP
// with cell cost 1 - cosine(clip_i, fused_j) (zero-norm vectors count as
// similarity 0), moves advance clip / prototype / both, every position
// covered; score = 1 - path_cost / path_length, clamped to [0,1].
double PrototypeMatch(const EmbeddingMatrix &clip, const EnrollmentPrototype &proto);

struct JointLoss {
  double utt = 0.0;
  double phon = 0.0;
  double total = 0.0;
};

// utt = BCE(p_utt, y_utt); phon = mean over positions of BCE; total = sum.
JointLoss EvaluateJointLoss(double p_utt, const std::vector<double> &p_phon, int y_utt,
                            const std::vector<int> &y_phon);

// Low-rank additive update of one attention projection: W += scale * A * B.
struct LoraAdapter {
  std::string target;  // "blk{i}.wq|wk|wv" or "xattn.wq|wk|wv"
  Mat a;               // d x r
  Mat b;               // r x d
  double scale = 1.0;
};

// Returns a new model with every adapter folded in; the input is unchanged.
MatcherModel LoraMerge(const MatcherModel &model, const std::vector<LoraAdapter> &adapters);

// KWSW weight files: magic "KWSW", u32 version=1, u32 entry count, then per
// entry u16 name length, name bytes, u8 rank, u32 dims, float32 row-major
// data.  Canonical tensor names:
//   embed, blk{i}.wq|wk|wv|wo|ff1|ff2|b1|b2,
//   recur.wr|wz|wn|ur|uz|un|br|bz|bn,
//   head_utt.w|b, head_phon.w|b, mark.audio|text, xattn.wq|wk|wv|wo,
//   lora.{target}.A|B|scale.
MatcherModel LoadWeights(const std::string &path);
void SaveWeights(const std::string &path, const MatcherModel &model);
std::vector<LoraAdapter> LoadAdapters(const std::string &path);
void SaveAdapters(const std::string &path, const std::vector<LoraAdapter> &adapters);

}  // namespace phonespot
