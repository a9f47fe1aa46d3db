// phonespot/src/ctc_search.cc
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

#include "phonespot/ctc_search.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace phonespot {

namespace {

constexpr double kLogZero = -std::numeric_limits<double>::infinity();

double LogSumExp2(double a, double b) {
  if (a == kLogZero) return b;
  if (b == kLogZero) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace

std::vector<int> ExpandWithBlanks(const TokenSequence &tokens, int blank_id) {
  if (tokens.empty()) throw ConfigError("keyword has an empty phoneme sequence");
  std::vector<int> out;
  out.reserve(2 * tokens.size() + 1);
  out.push_back(blank_id);
  for (int id : tokens) {
    if (id == blank_id) throw ConfigError("blank token inside a keyword sequence");
    out.push_back(id);
    out.push_back(blank_id);
  }
  return out;
}

KeywordSpec MakeKeywordSpec(const std::string &text, const TokenSequence &tokens,
                            int blank_id, double tau1) {
  if (tau1 < 0.0 || tau1 > 1.0) throw ConfigError("tau1 outside [0,1] for keyword '" + text + "'");
  KeywordSpec kw;
  kw.text = text;
  kw.tokens = tokens;
  kw.interleaved = ExpandWithBlanks(tokens, blank_id);
  kw.blank_id = blank_id;
  kw.tau1 = tau1;
  return kw;
}

DecodeSession::DecodeSession(const KeywordSpec &keyword, int vocab)
    : interleaved_(keyword.interleaved),
      blank_id_(keyword.blank_id),
      repeat_guard_(keyword.repeat_guard),
      vocab_(vocab),
      t_(1) {
  if (interleaved_.size() < 3) throw ConfigError("keyword spec not expanded");
  for (int id : interleaved_) {
    if (id < 0 || id >= vocab_) throw ConfigError("keyword token outside vocabulary");
  }
  delta_.assign(interleaved_.size(), kLogZero);
  next_delta_.assign(interleaved_.size(), kLogZero);
  origin_.assign(interleaved_.size(), 1);
  next_origin_.assign(interleaved_.size(), 1);
  Reset();
}

void DecodeSession::Reset() {
  std::fill(delta_.begin(), delta_.end(), kLogZero);
  delta_[0] = 0.0;  // log 1
  delta_[1] = 0.0;
  std::fill(origin_.begin(), origin_.end(), 1);
  t_ = 1;
  history_size_ = 0;
  history_head_ = 0;
}

double DecodeSession::Step(std::span<const double> frame) {
  if (static_cast<int>(frame.size()) != vocab_) {
    throw ConfigError("frame has " + std::to_string(frame.size()) +
                      " entries, session vocabulary is " + std::to_string(vocab_));
  }
  ++t_;
  const int n = static_cast<int>(interleaved_.size());
  for (int u = 0; u < n; ++u) {
    const int label = interleaved_[u];
    const bool is_blank = (label == blank_id_);
    // Predecessors in tie-break order (smaller index first).
    double best = kLogZero;
    int best_u = -1;
    auto consider = [&](int pu) {
      if (best_u < 0 || delta_[pu] > best) {
        best = delta_[pu];
        best_u = pu;
      }
    };
    if (!is_blank && u >= 2 &&
        (!repeat_guard_ || interleaved_[u] != interleaved_[u - 2])) {
      consider(u - 2);
    }
    if (u >= 1) consider(u - 1);
    consider(u);
    next_delta_[u] = std::log(frame[label]) + best;
    // Entering the first token from the idle blank starts a fresh match at
    // the current frame; everything else inherits its predecessor's start.
    next_origin_[u] = (u == 1 && best_u == 0) ? t_ : origin_[best_u];
  }
  delta_.swap(next_delta_);
  origin_.swap(next_origin_);
  origin_[0] = t_;  // initial blank row: a future match starts no earlier than now
  double score = CurrentScore();
  if (history_capacity_ > 0) {
    history_[history_head_] = score;
    history_head_ = (history_head_ + 1) % history_capacity_;
    history_size_ = std::min(history_size_ + 1, history_capacity_);
  }
  return score;
}

double DecodeSession::CurrentScore() const {
  const std::size_t n = interleaved_.size();
  return std::exp(std::max(delta_[n - 2], delta_[n - 1]));
}

int DecodeSession::CurrentOrigin() const {
  const std::size_t n = interleaved_.size();
  // Ties prefer the smaller index, matching the trellis rule.
  return delta_[n - 1] > delta_[n - 2] ? origin_[n - 1] : origin_[n - 2];
}

void DecodeSession::EnableHistory(std::size_t capacity) {
  history_capacity_ = capacity;
  history_.assign(capacity, 0.0);
  history_size_ = 0;
  history_head_ = 0;
}

std::vector<double> DecodeSession::History() const {
  std::vector<double> out;
  out.reserve(history_size_);
  std::size_t start = (history_head_ + history_capacity_ - history_size_) % history_capacity_;
  for (std::size_t i = 0; i < history_size_; ++i) {
    out.push_back(history_[(start + i) % history_capacity_]);
  }
  return out;
}

ScoreTrack ComputeScoreSequence(const PosteriorGram &p, const KeywordSpec &keyword) {
  if (p.frames < 1) throw ConfigError("posteriorgram has no frames");
  DecodeSession session(keyword, p.vocab);
  ScoreTrack track;
  track.scores.reserve(p.frames);
  track.origins.reserve(p.frames);
  track.scores.push_back(session.CurrentScore());
  track.origins.push_back(session.CurrentOrigin());
  for (int t = 2; t <= p.frames; ++t) {
    track.scores.push_back(session.Step(p.Row(t)));
    track.origins.push_back(session.CurrentOrigin());
  }
  return track;
}

CtcForwardResult CtcForwardLogProb(const PosteriorGram &p, const TokenSequence &tokens,
                                   int blank_id) {
  if (tokens.empty()) throw ConfigError("empty token sequence");
  if (p.frames < static_cast<int>(tokens.size())) {
    return {kLogZero, false};
  }
  std::vector<int> w = ExpandWithBlanks(tokens, blank_id);
  const int n = static_cast<int>(w.size());
  std::vector<double> alpha(n, kLogZero), next(n, kLogZero);
  alpha[0] = std::log(p.At(1, blank_id));
  alpha[1] = std::log(p.At(1, w[1]));
  for (int t = 2; t <= p.frames; ++t) {
    for (int u = 0; u < n; ++u) {
      double acc = alpha[u];
      if (u >= 1) acc = LogSumExp2(acc, alpha[u - 1]);
      if (u >= 2 && w[u] != blank_id && w[u] != w[u - 2]) {
        acc = LogSumExp2(acc, alpha[u - 2]);
      }
      next[u] = std::log(p.At(t, w[u])) + acc;
    }
    alpha.swap(next);
  }
  return {LogSumExp2(alpha[n - 1], alpha[n - 2]), true};
}

std::vector<CandidateSegment> ExtractCandidates(
    const std::vector<double> &scores, const std::vector<int> &origins, double tau1,
    int min_gap, int max_run, std::vector<int> *decision_frames) {
  if (scores.size() != origins.size()) {
    throw ConfigError("scores and origins have different lengths");
  }
  if (min_gap < 0) throw ConfigError("min_gap must be >= 0");
  if (max_run < 1) throw ConfigError("max_run must be >= 1");
  std::vector<CandidateSegment> out;
  if (decision_frames) decision_frames->clear();

  const int total = static_cast<int>(scores.size());
  bool tracking = false;
  int run_start = 0, last_hit = 0, best_frame = 0;
  double best_score = 0.0;

  auto close = [&](int decision) {
    CandidateSegment seg;
    seg.start_frame = origins[best_frame - 1];
    seg.end_frame = best_frame;
    seg.s1 = best_score;
    out.push_back(seg);
    if (decision_frames) decision_frames->push_back(decision);
    tracking = false;
  };

  for (int t = 1; t <= total; ++t) {
    double s = scores[t - 1];
    if (!tracking) {
      if (s < tau1) continue;
      tracking = true;
      run_start = t;
      last_hit = t;
      best_frame = t;
      best_score = s;
    } else {
      if (s > best_score) {
        best_score = s;
        best_frame = t;
      }
      if (s >= tau1) last_hit = t;
    }
    if (t - run_start + 1 >= max_run) {
      close(t);
    } else if (s < tau1 && t - last_hit >= min_gap) {
      close(t);
    }
  }
  if (tracking) close(total);
  return out;
}

std::vector<bool> SuppressPrefixKeepMask(const std::vector<SuppressEntry> &entries) {
  auto is_proper_prefix = [](const TokenSequence &a, const TokenSequence &b) {
    if (a.size() >= b.size()) return false;
    return std::equal(a.begin(), a.end(), b.begin());
  };
  const std::size_t n = entries.size();
  std::vector<bool> keep(n, true);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const SuppressEntry &shorter = entries[i];
      const SuppressEntry &longer = entries[j];
      if (!shorter.tokens || !longer.tokens) continue;
      if (!is_proper_prefix(*shorter.tokens, *longer.tokens)) continue;
      bool overlap = shorter.start_frame <= longer.end_frame &&
                     longer.start_frame <= shorter.end_frame;
      if (overlap && longer.score > shorter.score) keep[i] = false;
    }
  }
  return keep;
}

CandidateSegment PerturbTimestamps(const CandidateSegment &segment, double fraction,
                                   int total_frames, std::uint32_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw ConfigError("fraction outside [0,1]");
  std::mt19937 rng(seed);
  const double len = segment.end_frame - segment.start_frame + 1;
  const double d_start = UniformRange(rng, -fraction * len, fraction * len);
  const double d_end = UniformRange(rng, -fraction * len, fraction * len);
  auto clamp_frame = [total_frames](double v) {
    int f = static_cast<int>(std::lround(v));
    return std::clamp(f, 1, total_frames);
  };
  CandidateSegment out = segment;
  out.start_frame = clamp_frame(segment.start_frame + d_start);
  out.end_frame = clamp_frame(segment.end_frame + d_end);
  if (out.start_frame > out.end_frame) out.start_frame = out.end_frame;
  return out;
}

}  // namespace phonespot
