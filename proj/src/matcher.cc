// phonespot/src/matcher.cc
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

#include "phonespot/matcher.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>

namespace phonespot {

namespace {

double Sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// out = x * m, x given as rows.
std::vector<Vec> MatMulRows(const std::vector<Vec> &x, const Mat &m) {
  std::vector<Vec> out(x.size(), Vec(m.cols, 0.0));
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t k = 0; k < m.rows; ++k) {
      double xv = x[i][k];
      if (xv == 0.0) continue;
      for (std::size_t j = 0; j < m.cols; ++j) out[i][j] += xv * m(k, j);
    }
  }
  return out;
}

double Dot(const Vec &a, const Vec &b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void SoftmaxRowInPlace(double *row, std::size_t n) {
  double m = row[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, row[i]);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    row[i] = std::exp(row[i] - m);
    sum += row[i];
  }
  for (std::size_t i = 0; i < n; ++i) row[i] /= sum;
}

Vec PositionalEncoding(std::size_t pos, int dim) {
  Vec pe(dim, 0.0);
  for (int i = 0; i < dim; i += 2) {
    double angle = static_cast<double>(pos) /
                   std::pow(10000.0, static_cast<double>(i) / dim);
    pe[i] = std::sin(angle);
    if (i + 1 < dim) pe[i + 1] = std::cos(angle);
  }
  return pe;
}

// Single-head attention: rows += softmax(Q K^T / sqrt(d)) V Wo, followed by
// the two-layer feed-forward, both with residuals.
void ApplyAttentionBlock(std::vector<Vec> &x, const AttentionBlock &block, int dim,
                         Mat *attention_out) {
  const std::size_t n = x.size();
  std::vector<Vec> q = MatMulRows(x, block.wq);
  std::vector<Vec> k = MatMulRows(x, block.wk);
  std::vector<Vec> v = MatMulRows(x, block.wv);
  Mat attn(n, n);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dim));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) attn(i, j) = Dot(q[i], k[j]) * inv_sqrt_d;
    SoftmaxRowInPlace(&attn.data[i * n], n);
  }
  std::vector<Vec> mixed(n, Vec(dim, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double a = attn(i, j);
      for (int d = 0; d < dim; ++d) mixed[i][d] += a * v[j][d];
    }
  }
  std::vector<Vec> proj = MatMulRows(mixed, block.wo);
  for (std::size_t i = 0; i < n; ++i) {
    for (int d = 0; d < dim; ++d) x[i][d] += proj[i][d];
  }
  std::vector<Vec> hidden = MatMulRows(x, block.ff1);
  for (Vec &h : hidden) {
    for (std::size_t j = 0; j < h.size(); ++j) h[j] = std::max(0.0, h[j] + block.b1[j]);
  }
  std::vector<Vec> ff = MatMulRows(hidden, block.ff2);
  for (std::size_t i = 0; i < n; ++i) {
    for (int d = 0; d < dim; ++d) x[i][d] += ff[i][d] + block.b2[d];
  }
  if (attention_out) *attention_out = std::move(attn);
}

Vec GruStep(const GruCell &g, const Vec &x, const Vec &h, int dim) {
  Vec out(dim, 0.0);
  for (int i = 0; i < dim; ++i) {
    double rx = g.br[i], zx = g.bz[i], nx = g.bn[i], uh = 0.0;
    for (int j = 0; j < dim; ++j) {
      rx += g.wr(i, j) * x[j] + g.ur(i, j) * h[j];
      zx += g.wz(i, j) * x[j] + g.uz(i, j) * h[j];
      nx += g.wn(i, j) * x[j];
      uh += g.un(i, j) * h[j];
    }
    double r = Sigmoid(rx);
    double z = Sigmoid(zx);
    double n = std::tanh(nx + r * uh);
    out[i] = (1.0 - z) * n + z * h[i];
  }
  return out;
}

void CheckFiniteMat(const Mat &m, const char *name) {
  for (double v : m.data) {
    if (!std::isfinite(v)) throw ConfigError(std::string("non-finite value in ") + name);
  }
}

void CheckFiniteVec(const Vec &v, const char *name) {
  for (double x : v) {
    if (!std::isfinite(x)) throw ConfigError(std::string("non-finite value in ") + name);
  }
}

void RequireShape(const Mat &m, std::size_t rows, std::size_t cols, const char *name) {
  if (m.rows != rows || m.cols != cols) {
    throw ConfigError(std::string(name) + " has shape " + std::to_string(m.rows) + "x" +
                      std::to_string(m.cols) + ", expected " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  }
}

void ValidateAttentionBlock(const AttentionBlock &b, int dim, const char *what,
                            bool projections_only) {
  const auto d = static_cast<std::size_t>(dim);
  RequireShape(b.wq, d, d, what);
  RequireShape(b.wk, d, d, what);
  RequireShape(b.wv, d, d, what);
  RequireShape(b.wo, d, d, what);
  CheckFiniteMat(b.wq, what);
  CheckFiniteMat(b.wk, what);
  CheckFiniteMat(b.wv, what);
  CheckFiniteMat(b.wo, what);
  if (projections_only) return;
  RequireShape(b.ff1, d, 4 * d, what);
  RequireShape(b.ff2, 4 * d, d, what);
  if (b.b1.size() != 4 * d || b.b2.size() != d) {
    throw ConfigError(std::string(what) + " has bad bias sizes");
  }
  CheckFiniteMat(b.ff1, what);
  CheckFiniteMat(b.ff2, what);
  CheckFiniteVec(b.b1, what);
  CheckFiniteVec(b.b2, what);
}

AttentionBlock ZeroAttentionBlock(int dim) {
  AttentionBlock b;
  const auto d = static_cast<std::size_t>(dim);
  b.wq = Mat(d, d);
  b.wk = Mat(d, d);
  b.wv = Mat(d, d);
  b.wo = Mat(d, d);
  b.ff1 = Mat(d, 4 * d);
  b.ff2 = Mat(4 * d, d);
  b.b1.assign(4 * d, 0.0);
  b.b2.assign(d, 0.0);
  return b;
}

void FillRandom(Mat &m, std::mt19937 &rng, double scale) {
  for (double &v : m.data) v = UniformRange(rng, -scale, scale);
}

void FillRandom(Vec &v, std::mt19937 &rng, double scale) {
  for (double &x : v) x = UniformRange(rng, -scale, scale);
}

}  // namespace

void MatcherModel::Validate() const {
  if (dim <= 0 || vocab <= 0) throw ConfigError("matcher model has empty dimensions");
  const auto d = static_cast<std::size_t>(dim);
  RequireShape(embed, static_cast<std::size_t>(vocab), d, "embed");
  CheckFiniteMat(embed, "embed");
  for (const AttentionBlock &b : blocks) ValidateAttentionBlock(b, dim, "attention block", false);
  RequireShape(recur.wr, d, d, "recur.wr");
  RequireShape(recur.wz, d, d, "recur.wz");
  RequireShape(recur.wn, d, d, "recur.wn");
  RequireShape(recur.ur, d, d, "recur.ur");
  RequireShape(recur.uz, d, d, "recur.uz");
  RequireShape(recur.un, d, d, "recur.un");
  if (recur.br.size() != d || recur.bz.size() != d || recur.bn.size() != d) {
    throw ConfigError("recurrent cell has bad bias sizes");
  }
  CheckFiniteMat(recur.wr, "recur.wr");
  CheckFiniteMat(recur.wz, "recur.wz");
  CheckFiniteMat(recur.wn, "recur.wn");
  CheckFiniteMat(recur.ur, "recur.ur");
  CheckFiniteMat(recur.uz, "recur.uz");
  CheckFiniteMat(recur.un, "recur.un");
  CheckFiniteVec(recur.br, "recur.br");
  CheckFiniteVec(recur.bz, "recur.bz");
  CheckFiniteVec(recur.bn, "recur.bn");
  if (head_utt.w.size() != d || head_phon.w.size() != d) {
    throw ConfigError("output heads have bad sizes");
  }
  CheckFiniteVec(head_utt.w, "head_utt");
  CheckFiniteVec(head_phon.w, "head_phon");
  if (!std::isfinite(head_utt.b) || !std::isfinite(head_phon.b)) {
    throw ConfigError("non-finite head bias");
  }
  if (mark_audio.size() != d || mark_text.size() != d) {
    throw ConfigError("modality marks have bad sizes");
  }
  CheckFiniteVec(mark_audio, "mark.audio");
  CheckFiniteVec(mark_text, "mark.text");
  ValidateAttentionBlock(xattn, dim, "xattn", true);
}

MatcherModel MakeZeroModel(int vocab, int dim, int num_blocks) {
  if (vocab <= 0 || dim <= 0 || num_blocks < 0) {
    throw ConfigError("bad matcher model dimensions");
  }
  MatcherModel m;
  m.vocab = vocab;
  m.dim = dim;
  const auto d = static_cast<std::size_t>(dim);
  m.embed = Mat(static_cast<std::size_t>(vocab), d);
  for (int i = 0; i < num_blocks; ++i) m.blocks.push_back(ZeroAttentionBlock(dim));
  m.recur.wr = Mat(d, d);
  m.recur.wz = Mat(d, d);
  m.recur.wn = Mat(d, d);
  m.recur.ur = Mat(d, d);
  m.recur.uz = Mat(d, d);
  m.recur.un = Mat(d, d);
  m.recur.br.assign(d, 0.0);
  m.recur.bz.assign(d, 0.0);
  m.recur.bn.assign(d, 0.0);
  m.head_utt.w.assign(d, 0.0);
  m.head_phon.w.assign(d, 0.0);
  m.mark_audio.assign(d, 0.0);
  m.mark_text.assign(d, 0.0);
  m.xattn = ZeroAttentionBlock(dim);
  return m;
}

MatcherModel MakeRandomModel(int vocab, int dim, int num_blocks, std::uint32_t seed,
                             double scale) {
  MatcherModel m = MakeZeroModel(vocab, dim, num_blocks);
  std::mt19937 rng(seed);
  FillRandom(m.embed, rng, scale);
  for (AttentionBlock &b : m.blocks) {
    FillRandom(b.wq, rng, scale);
    FillRandom(b.wk, rng, scale);
    FillRandom(b.wv, rng, scale);
    FillRandom(b.wo, rng, scale);
    FillRandom(b.ff1, rng, scale);
    FillRandom(b.ff2, rng, scale);
    FillRandom(b.b1, rng, scale);
    FillRandom(b.b2, rng, scale);
  }
  FillRandom(m.recur.wr, rng, scale);
  FillRandom(m.recur.wz, rng, scale);
  FillRandom(m.recur.wn, rng, scale);
  FillRandom(m.recur.ur, rng, scale);
  FillRandom(m.recur.uz, rng, scale);
  FillRandom(m.recur.un, rng, scale);
  FillRandom(m.recur.br, rng, scale);
  FillRandom(m.recur.bz, rng, scale);
  FillRandom(m.recur.bn, rng, scale);
  FillRandom(m.head_utt.w, rng, scale);
  m.head_utt.b = UniformRange(rng, -scale, scale);
  FillRandom(m.head_phon.w, rng, scale);
  m.head_phon.b = UniformRange(rng, -scale, scale);
  FillRandom(m.mark_audio, rng, scale);
  FillRandom(m.mark_text, rng, scale);
  FillRandom(m.xattn.wq, rng, scale);
  FillRandom(m.xattn.wk, rng, scale);
  FillRandom(m.xattn.wv, rng, scale);
  FillRandom(m.xattn.wo, rng, scale);
  return m;
}

MatcherModel MakeFoldedOneHotModel(int vocab, int dim, int num_blocks) {
  MatcherModel m = MakeZeroModel(vocab, dim, num_blocks);
  for (int k = 0; k < vocab; ++k) m.embed(k, k % dim) = 1.0;
  return m;
}

const char *EnrollModeName(EnrollMode mode) {
  switch (mode) {
    case EnrollMode::kText: return "text";
    case EnrollMode::kConcat: return "concat";
    case EnrollMode::kCrossAttention: return "cross_attention";
  }
  return "?";
}

EnrollMode ParseEnrollMode(const std::string &name) {
  if (name == "text") return EnrollMode::kText;
  if (name == "concat") return EnrollMode::kConcat;
  if (name == "cross_attention" || name == "cross-attention") {
    return EnrollMode::kCrossAttention;
  }
  throw ConfigError("unknown enrollment mode: " + name);
}

std::vector<Vec> EmbedTokens(const TokenSequence &tokens, const MatcherModel &model) {
  if (tokens.empty()) throw ConfigError("cannot embed an empty token sequence");
  std::vector<Vec> out;
  out.reserve(tokens.size());
  for (int id : tokens) {
    if (id < 0 || id >= model.vocab) {
      throw ConfigError("token id " + std::to_string(id) + " outside embedding table");
    }
    Vec row(model.dim);
    for (int d = 0; d < model.dim; ++d) row[d] = model.embed(id, d);
    out.push_back(std::move(row));
  }
  return out;
}

EmbeddingMatrix CropEmbeddings(const EmbeddingMatrix &e, const CandidateSegment &segment,
                               int margin) {
  if (segment.start_frame < 1 || segment.end_frame > e.frames ||
      segment.start_frame > segment.end_frame) {
    throw ConfigError("segment [" + std::to_string(segment.start_frame) + "," +
                      std::to_string(segment.end_frame) + "] invalid for " +
                      std::to_string(e.frames) + " frames");
  }
  if (margin < 0) throw ConfigError("negative crop margin");
  int lo = std::max(1, segment.start_frame - margin);
  int hi = std::min(e.frames, segment.end_frame + margin);
  EmbeddingMatrix out(hi - lo + 1, e.dim);
  for (int t = lo; t <= hi; ++t) {
    for (int d = 0; d < e.dim; ++d) out.At(t - lo + 1, d) = e.At(t, d);
  }
  return out;
}

EnrollmentPrototype FuseEnrollment(EnrollMode mode, const TokenSequence &tokens,
                                   const EmbeddingMatrix *ref, const MatcherModel &model) {
  EnrollmentPrototype proto;
  proto.mode = mode;
  proto.tokens = tokens;
  std::vector<Vec> text = EmbedTokens(tokens, model);
  switch (mode) {
    case EnrollMode::kText:
      proto.fused = std::move(text);
      break;
    case EnrollMode::kConcat: {
      if (!ref) throw ConfigError("concat enrollment requires reference embeddings");
      if (ref->dim != model.dim) throw ConfigError("reference embedding dim mismatch");
      proto.fused.reserve(text.size() + ref->frames);
      std::size_t pos = 0;
      for (Vec &v : text) {
        Vec pe = PositionalEncoding(pos, model.dim);
        for (int d = 0; d < model.dim; ++d) v[d] += model.mark_text[d] + pe[d];
        proto.fused.push_back(std::move(v));
        ++pos;
      }
      for (int t = 1; t <= ref->frames; ++t) {
        Vec v(model.dim);
        Vec pe = PositionalEncoding(pos, model.dim);
        for (int d = 0; d < model.dim; ++d) v[d] = ref->At(t, d) + model.mark_audio[d] + pe[d];
        proto.fused.push_back(std::move(v));
        ++pos;
      }
      break;
    }
    case EnrollMode::kCrossAttention: {
      if (!ref) throw ConfigError("cross-attention enrollment requires reference embeddings");
      if (ref->dim != model.dim) throw ConfigError("reference embedding dim mismatch");
      std::vector<Vec> keys_in(ref->frames, Vec(model.dim));
      for (int t = 1; t <= ref->frames; ++t) {
        for (int d = 0; d < model.dim; ++d) keys_in[t - 1][d] = ref->At(t, d);
      }
      std::vector<Vec> q = MatMulRows(text, model.xattn.wq);
      std::vector<Vec> k = MatMulRows(keys_in, model.xattn.wk);
      std::vector<Vec> v = MatMulRows(keys_in, model.xattn.wv);
      const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(model.dim));
      std::vector<Vec> mixed(text.size(), Vec(model.dim, 0.0));
      Vec logits(keys_in.size());
      for (std::size_t i = 0; i < text.size(); ++i) {
        for (std::size_t j = 0; j < keys_in.size(); ++j) logits[j] = Dot(q[i], k[j]) * inv_sqrt_d;
        SoftmaxRowInPlace(logits.data(), logits.size());
        for (std::size_t j = 0; j < keys_in.size(); ++j) {
          for (int d = 0; d < model.dim; ++d) mixed[i][d] += logits[j] * v[j][d];
        }
      }
      proto.fused = MatMulRows(mixed, model.xattn.wo);
      break;
    }
  }
  return proto;
}

EnrollmentPrototype MakeFoldedOneHotPrototype(const TokenSequence &tokens, int dim) {
  if (tokens.empty()) throw ConfigError("cannot build a prototype for an empty sequence");
  if (dim <= 0) throw ConfigError("prototype dim must be positive");
  EnrollmentPrototype proto;
  proto.mode = EnrollMode::kText;
  proto.tokens = tokens;
  for (int id : tokens) {
    Vec v(dim, 0.0);
    v[id % dim] = 1.0;
    proto.fused.push_back(std::move(v));
  }
  return proto;
}

MatcherOutput MatcherForward(const EmbeddingMatrix &clip, const EnrollmentPrototype &proto,
                             const MatcherModel &model, ForwardTrace *trace) {
  if (clip.frames < 1) throw ConfigError("empty clip");
  if (clip.dim != model.dim) {
    throw ConfigError("clip dim " + std::to_string(clip.dim) + " does not match model dim " +
                      std::to_string(model.dim));
  }
  if (proto.fused.empty()) throw ConfigError("empty enrollment prototype");
  for (const Vec &v : proto.fused) {
    if (static_cast<int>(v.size()) != model.dim) {
      throw ConfigError("prototype vector dim mismatch");
    }
  }
  const std::size_t n_clip = static_cast<std::size_t>(clip.frames);
  const std::size_t n_proto = proto.fused.size();
  std::vector<Vec> x;
  x.reserve(n_clip + n_proto);
  std::size_t pos = 0;
  for (int t = 1; t <= clip.frames; ++t) {
    Vec row(model.dim);
    Vec pe = PositionalEncoding(pos, model.dim);
    for (int d = 0; d < model.dim; ++d) row[d] = clip.At(t, d) + model.mark_audio[d] + pe[d];
    x.push_back(std::move(row));
    ++pos;
  }
  for (const Vec &p : proto.fused) {
    Vec row(model.dim);
    Vec pe = PositionalEncoding(pos, model.dim);
    for (int d = 0; d < model.dim; ++d) row[d] = p[d] + model.mark_text[d] + pe[d];
    x.push_back(std::move(row));
    ++pos;
  }
  if (trace) trace->attention.clear();
  for (const AttentionBlock &block : model.blocks) {
    Mat attn;
    ApplyAttentionBlock(x, block, model.dim, trace ? &attn : nullptr);
    if (trace) trace->attention.push_back(std::move(attn));
  }
  Vec h(model.dim, 0.0);
  for (const Vec &row : x) h = GruStep(model.recur, row, h, model.dim);
  MatcherOutput out;
  out.p_utt = Sigmoid(Dot(model.head_utt.w, h) + model.head_utt.b);
  out.p_phon.reserve(n_proto);
  for (std::size_t j = 0; j < n_proto; ++j) {
    out.p_phon.push_back(Sigmoid(Dot(model.head_phon.w, x[n_clip + j]) + model.head_phon.b));
  }
  return out;
}

double PrototypeMatch(const EmbeddingMatrix &clip, const EnrollmentPrototype &proto) {
  if (clip.frames < 1) throw ConfigError("empty clip");
  if (proto.fused.empty()) throw ConfigError("empty enrollment prototype");
  const int n = clip.frames;
  const int m = static_cast<int>(proto.fused.size());
  for (const Vec &v : proto.fused) {
    if (static_cast<int>(v.size()) != clip.dim) throw ConfigError("prototype dim mismatch");
  }
  std::vector<double> clip_norm(n);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int d = 0; d < clip.dim; ++d) s += clip.At(i + 1, d) * clip.At(i + 1, d);
    clip_norm[i] = std::sqrt(s);
  }
  std::vector<double> proto_norm(m);
  for (int j = 0; j < m; ++j) proto_norm[j] = std::sqrt(Dot(proto.fused[j], proto.fused[j]));

  auto cost = [&](int i, int j) {
    if (clip_norm[i] == 0.0 || proto_norm[j] == 0.0) return 1.0;
    double dot = 0.0;
    for (int d = 0; d < clip.dim; ++d) dot += clip.At(i + 1, d) * proto.fused[j][d];
    return 1.0 - dot / (clip_norm[i] * proto_norm[j]);
  };

  // dp over (clip index, prototype index); moves advance one or both.
  // Ties on cost prefer the diagonal, then advancing the clip, then the
  // prototype; remaining ties prefer the shorter path.
  std::vector<double> dp_cost(static_cast<std::size_t>(n) * m);
  std::vector<int> dp_len(static_cast<std::size_t>(n) * m);
  auto idx = [m](int i, int j) { return static_cast<std::size_t>(i) * m + j; };
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      double c = cost(i, j);
      if (i == 0 && j == 0) {
        dp_cost[idx(0, 0)] = c;
        dp_len[idx(0, 0)] = 1;
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      int best_len = 0;
      auto consider = [&](int pi, int pj) {
        if (pi < 0 || pj < 0) return;
        double cand = dp_cost[idx(pi, pj)];
        int cand_len = dp_len[idx(pi, pj)];
        if (cand < best || (cand == best && cand_len < best_len)) {
          best = cand;
          best_len = cand_len;
        }
      };
      consider(i - 1, j - 1);
      consider(i - 1, j);
      consider(i, j - 1);
      dp_cost[idx(i, j)] = best + c;
      dp_len[idx(i, j)] = best_len + 1;
    }
  }
  double total = dp_cost[idx(n - 1, m - 1)];
  int len = dp_len[idx(n - 1, m - 1)];
  return std::clamp(1.0 - total / len, 0.0, 1.0);
}

JointLoss EvaluateJointLoss(double p_utt, const std::vector<double> &p_phon, int y_utt,
                            const std::vector<int> &y_phon) {
  if (p_phon.size() != y_phon.size()) {
    throw ConfigError("phoneme prediction/label length mismatch");
  }
  auto bce = [](double p, int y) {
    if (p <= 0.0 || p >= 1.0) throw ConfigError("probability outside (0,1)");
    return y ? -std::log(p) : -std::log(1.0 - p);
  };
  JointLoss loss;
  loss.utt = bce(p_utt, y_utt);
  if (!p_phon.empty()) {
    double sum = 0.0;
    for (std::size_t i = 0; i < p_phon.size(); ++i) sum += bce(p_phon[i], y_phon[i]);
    loss.phon = sum / static_cast<double>(p_phon.size());
  }
  loss.total = loss.utt + loss.phon;
  return loss;
}

MatcherModel LoraMerge(const MatcherModel &model, const std::vector<LoraAdapter> &adapters) {
  MatcherModel merged = model;
  for (const LoraAdapter &ad : adapters) {
    Mat *target = nullptr;
    if (ad.target.rfind("blk", 0) == 0) {
      std::size_t dot = ad.target.find('.');
      if (dot == std::string::npos) throw ConfigError("bad adapter target: " + ad.target);
      int blk = -1;
      try {
        blk = std::stoi(ad.target.substr(3, dot - 3));
      } catch (const std::exception &) {
        throw ConfigError("bad adapter target: " + ad.target);
      }
      if (blk < 0 || blk >= static_cast<int>(merged.blocks.size())) {
        throw ConfigError("adapter targets missing block: " + ad.target);
      }
      std::string proj = ad.target.substr(dot + 1);
      AttentionBlock &b = merged.blocks[blk];
      if (proj == "wq") target = &b.wq;
      else if (proj == "wk") target = &b.wk;
      else if (proj == "wv") target = &b.wv;
      else throw ConfigError("adapter may only target wq/wk/wv: " + ad.target);
    } else if (ad.target.rfind("xattn.", 0) == 0) {
      std::string proj = ad.target.substr(6);
      if (proj == "wq") target = &merged.xattn.wq;
      else if (proj == "wk") target = &merged.xattn.wk;
      else if (proj == "wv") target = &merged.xattn.wv;
      else throw ConfigError("adapter may only target wq/wk/wv: " + ad.target);
    } else {
      throw ConfigError("unknown adapter target: " + ad.target);
    }
    const std::size_t d = target->rows;
    const std::size_t r = ad.a.cols;
    if (r < 1 || r > d) throw ConfigError("adapter rank outside [1, d]: " + ad.target);
    if (ad.a.rows != d || ad.b.rows != r || ad.b.cols != d) {
      throw ConfigError("adapter shapes do not conform for " + ad.target);
    }
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < r; ++k) acc += ad.a(i, k) * ad.b(k, j);
        (*target)(i, j) += ad.scale * acc;
      }
    }
  }
  return merged;
}

// --- KWSW weight files ------------------------------------------------

namespace {

constexpr char kWeightsMagic[4] = {'K', 'W', 'S', 'W'};
constexpr std::uint32_t kWeightsVersion = 1;

struct RawEntry {
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
};

void WriteU16(std::ostream &out, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  out.write(reinterpret_cast<const char *>(b), 2);
}

void WriteU32(std::ostream &out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char *>(b), 4);
}

std::uint16_t ReadU16(std::istream &in, const std::string &path) {
  unsigned char b[2];
  in.read(reinterpret_cast<char *>(b), 2);
  if (!in) throw IoError("truncated weight file: " + path);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t ReadU32(std::istream &in, const std::string &path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char *>(b), 4);
  if (!in) throw IoError("truncated weight file: " + path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

class WeightWriter {
 public:
  explicit WeightWriter(const std::string &path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot write weight file: " + path);
  }
  void Add(const std::string &name, std::vector<std::uint32_t> dims, const double *data) {
    names_.push_back(name);
    dims_.push_back(std::move(dims));
    std::size_t count = 1;
    for (std::uint32_t d : dims_.back()) count *= d;
    values_.emplace_back(data, data + count);
  }
  void AddMat(const std::string &name, const Mat &m) {
    Add(name, {static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)},
        m.data.data());
  }
  void AddVec(const std::string &name, const Vec &v) {
    Add(name, {static_cast<std::uint32_t>(v.size())}, v.data());
  }
  void AddScalar(const std::string &name, double v) { Add(name, {1u}, &v); }
  void Finish() {
    out_.write(kWeightsMagic, 4);
    WriteU32(out_, kWeightsVersion);
    WriteU32(out_, static_cast<std::uint32_t>(names_.size()));
    for (std::size_t e = 0; e < names_.size(); ++e) {
      WriteU16(out_, static_cast<std::uint16_t>(names_[e].size()));
      out_.write(names_[e].data(), static_cast<std::streamsize>(names_[e].size()));
      out_.put(static_cast<char>(dims_[e].size()));
      for (std::uint32_t d : dims_[e]) WriteU32(out_, d);
      std::vector<float> buf(values_[e].size());
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(values_[e][i]);
      out_.write(reinterpret_cast<const char *>(buf.data()),
                 static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out_) throw IoError("short write to " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
  std::vector<std::string> names_;
  std::vector<std::vector<std::uint32_t>> dims_;
  std::vector<std::vector<double>> values_;
};

std::map<std::string, RawEntry> ReadEntries(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weight file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kWeightsMagic, 4) != 0) {
    throw IoError("bad magic in " + path + " (expected KWSW)");
  }
  std::uint32_t version = ReadU32(in, path);
  if (version != kWeightsVersion) {
    throw IoError("unsupported KWSW version " + std::to_string(version) + " in " + path);
  }
  std::uint32_t count = ReadU32(in, path);
  std::map<std::string, RawEntry> entries;
  for (std::uint32_t e = 0; e < count; ++e) {
    std::uint16_t name_len = ReadU16(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw IoError("truncated weight file: " + path);
    int rank = in.get();
    if (rank < 0) throw IoError("truncated weight file: " + path);
    RawEntry entry;
    std::size_t total = 1;
    for (int r = 0; r < rank; ++r) {
      std::uint32_t d = ReadU32(in, path);
      if (d == 0) throw IoError("zero dimension for tensor " + name + " in " + path);
      entry.dims.push_back(d);
      total *= d;
    }
    std::vector<float> buf(total);
    in.read(reinterpret_cast<char *>(buf.data()),
            static_cast<std::streamsize>(total * sizeof(float)));
    if (!in) throw IoError("truncated weight file: " + path);
    entry.values.assign(buf.begin(), buf.end());
    if (!entries.emplace(name, std::move(entry)).second) {
      throw IoError("duplicate tensor '" + name + "' in " + path);
    }
  }
  return entries;
}

Mat TakeMat(std::map<std::string, RawEntry> &entries, const std::string &name,
            const std::string &path) {
  auto it = entries.find(name);
  if (it == entries.end()) throw IoError("missing tensor '" + name + "' in " + path);
  if (it->second.dims.size() != 2) {
    throw IoError("tensor '" + name + "' in " + path + " is not a matrix");
  }
  Mat m(it->second.dims[0], it->second.dims[1]);
  m.data = std::move(it->second.values);
  entries.erase(it);
  return m;
}

Vec TakeVec(std::map<std::string, RawEntry> &entries, const std::string &name,
            const std::string &path) {
  auto it = entries.find(name);
  if (it == entries.end()) throw IoError("missing tensor '" + name + "' in " + path);
  if (it->second.dims.size() != 1) {
    throw IoError("tensor '" + name + "' in " + path + " is not a vector");
  }
  Vec v = std::move(it->second.values);
  entries.erase(it);
  return v;
}

double TakeScalar(std::map<std::string, RawEntry> &entries, const std::string &name,
                  const std::string &path) {
  Vec v = TakeVec(entries, name, path);
  if (v.size() != 1) throw IoError("tensor '" + name + "' in " + path + " is not a scalar");
  return v[0];
}

}  // namespace

void SaveWeights(const std::string &path, const MatcherModel &model) {
  model.Validate();
  WeightWriter w(path);
  w.AddMat("embed", model.embed);
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    const std::string p = "blk" + std::to_string(i) + ".";
    const AttentionBlock &b = model.blocks[i];
    w.AddMat(p + "wq", b.wq);
    w.AddMat(p + "wk", b.wk);
    w.AddMat(p + "wv", b.wv);
    w.AddMat(p + "wo", b.wo);
    w.AddMat(p + "ff1", b.ff1);
    w.AddMat(p + "ff2", b.ff2);
    w.AddVec(p + "b1", b.b1);
    w.AddVec(p + "b2", b.b2);
  }
  w.AddMat("recur.wr", model.recur.wr);
  w.AddMat("recur.wz", model.recur.wz);
  w.AddMat("recur.wn", model.recur.wn);
  w.AddMat("recur.ur", model.recur.ur);
  w.AddMat("recur.uz", model.recur.uz);
  w.AddMat("recur.un", model.recur.un);
  w.AddVec("recur.br", model.recur.br);
  w.AddVec("recur.bz", model.recur.bz);
  w.AddVec("recur.bn", model.recur.bn);
  w.AddVec("head_utt.w", model.head_utt.w);
  w.AddScalar("head_utt.b", model.head_utt.b);
  w.AddVec("head_phon.w", model.head_phon.w);
  w.AddScalar("head_phon.b", model.head_phon.b);
  w.AddVec("mark.audio", model.mark_audio);
  w.AddVec("mark.text", model.mark_text);
  w.AddMat("xattn.wq", model.xattn.wq);
  w.AddMat("xattn.wk", model.xattn.wk);
  w.AddMat("xattn.wv", model.xattn.wv);
  w.AddMat("xattn.wo", model.xattn.wo);
  w.Finish();
}

MatcherModel LoadWeights(const std::string &path) {
  std::map<std::string, RawEntry> entries = ReadEntries(path);
  MatcherModel m;
  m.embed = TakeMat(entries, "embed", path);
  m.vocab = static_cast<int>(m.embed.rows);
  m.dim = static_cast<int>(m.embed.cols);
  for (int i = 0;; ++i) {
    const std::string p = "blk" + std::to_string(i) + ".";
    if (entries.find(p + "wq") == entries.end()) break;
    AttentionBlock b;
    b.wq = TakeMat(entries, p + "wq", path);
    b.wk = TakeMat(entries, p + "wk", path);
    b.wv = TakeMat(entries, p + "wv", path);
    b.wo = TakeMat(entries, p + "wo", path);
    b.ff1 = TakeMat(entries, p + "ff1", path);
    b.ff2 = TakeMat(entries, p + "ff2", path);
    b.b1 = TakeVec(entries, p + "b1", path);
    b.b2 = TakeVec(entries, p + "b2", path);
    m.blocks.push_back(std::move(b));
  }
  m.recur.wr = TakeMat(entries, "recur.wr", path);
  m.recur.wz = TakeMat(entries, "recur.wz", path);
  m.recur.wn = TakeMat(entries, "recur.wn", path);
  m.recur.ur = TakeMat(entries, "recur.ur", path);
  m.recur.uz = TakeMat(entries, "recur.uz", path);
  m.recur.un = TakeMat(entries, "recur.un", path);
  m.recur.br = TakeVec(entries, "recur.br", path);
  m.recur.bz = TakeVec(entries, "recur.bz", path);
  m.recur.bn = TakeVec(entries, "recur.bn", path);
  m.head_utt.w = TakeVec(entries, "head_utt.w", path);
  m.head_utt.b = TakeScalar(entries, "head_utt.b", path);
  m.head_phon.w = TakeVec(entries, "head_phon.w", path);
  m.head_phon.b = TakeScalar(entries, "head_phon.b", path);
  m.mark_audio = TakeVec(entries, "mark.audio", path);
  m.mark_text = TakeVec(entries, "mark.text", path);
  m.xattn.wq = TakeMat(entries, "xattn.wq", path);
  m.xattn.wk = TakeMat(entries, "xattn.wk", path);
  m.xattn.wv = TakeMat(entries, "xattn.wv", path);
  m.xattn.wo = TakeMat(entries, "xattn.wo", path);
  // Cross-attention feed-forward is unused; keep zero placeholders.
  const auto d = static_cast<std::size_t>(m.dim);
  m.xattn.ff1 = Mat(d, 4 * d);
  m.xattn.ff2 = Mat(4 * d, d);
  m.xattn.b1.assign(4 * d, 0.0);
  m.xattn.b2.assign(d, 0.0);
  if (!entries.empty()) {
    throw IoError("unexpected tensor '" + entries.begin()->first + "' in " + path);
  }
  m.Validate();
  return m;
}

void SaveAdapters(const std::string &path, const std::vector<LoraAdapter> &adapters) {
  WeightWriter w(path);
  for (const LoraAdapter &ad : adapters) {
    w.AddMat("lora." + ad.target + ".A", ad.a);
    w.AddMat("lora." + ad.target + ".B", ad.b);
    w.AddScalar("lora." + ad.target + ".scale", ad.scale);
  }
  w.Finish();
}

std::vector<LoraAdapter> LoadAdapters(const std::string &path) {
  std::map<std::string, RawEntry> entries = ReadEntries(path);
  std::vector<std::string> targets;
  for (const auto &[name, entry] : entries) {
    if (name.rfind("lora.", 0) != 0) {
      throw IoError("unexpected tensor '" + name + "' in adapter file " + path);
    }
    if (name.size() > 2 && name.compare(name.size() - 2, 2, ".A") == 0) {
      targets.push_back(name.substr(5, name.size() - 7));
    }
  }
  std::vector<LoraAdapter> adapters;
  for (const std::string &target : targets) {
    LoraAdapter ad;
    ad.target = target;
    ad.a = TakeMat(entries, "lora." + target + ".A", path);
    ad.b = TakeMat(entries, "lora." + target + ".B", path);
    auto it = entries.find("lora." + target + ".scale");
    ad.scale = (it != entries.end()) ? TakeScalar(entries, "lora." + target + ".scale", path) : 1.0;
    adapters.push_back(std::move(ad));
  }
  if (!entries.empty()) {
    throw IoError("dangling tensor '" + entries.begin()->first + "' in adapter file " + path);
  }
  return adapters;
}

}  // namespace phonespot
