// phonespot/include/phonespot/ctc_search.h
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
// Stage-1 streaming keyword search over phoneme posteriorgrams.
//
// A keyword's phoneme sequence w = [w_1 .. w_U] is interleaved with blanks
// into w~ = [phi, w_1, phi, ..., phi, w_U, phi] of length 2U+1.  A max-product
// trellis delta(t, u) over (frame, interleaved position) is advanced one
// frame at a time:
//
//   blank row:      delta(t,u) = p_t(phi)    * max{delta(t-1,u-1), delta(t-1,u)}
//   non-blank row:  delta(t,u) = p_t(w~_u)   * max{delta(t-1,u-2),
//                                                  delta(t-1,u-1), delta(t-1,u)}
//   frame score:    Score[t] = max{delta(t, 2U), delta(t, 2U+1)}   (1-based u)
//
// Initialization sets delta(1,1) = delta(1,2) = 1; the first frame's
// emission probabilities are not multiplied in, so frame 1 of a stream is
// consumed by session construction.  Out-of-range predecessors contribute
// probability zero.  Arithmetic is log-domain internally; scores cross the
// API boundary in linear domain.
//
// Each trellis node carries an origin frame: entering the first token row
// from the idle blank stamps the current frame, the idle blank row is
// restamped every step, and all other rows inherit the origin of their
// argmax predecessor (ties to the smaller predecessor index).  The origin
// surviving at the terminal rows is the predicted keyword start frame.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "phonespot/common.h"
#include "phonespot/phoneme.h"
#include "phonespot/posterior.h"

namespace phonespot {

inline constexpr double kDefaultTau1 = 0.04;

// Interleave blanks: [a, b] -> [phi, a, phi, b, phi].  Rejects empty input
// and sequences containing the blank id.
std::vector<int> ExpandWithBlanks(const TokenSequence &tokens, int blank_id);

struct KeywordSpec {
  std::string text;
  TokenSequence tokens;          // length U, blank-free
  std::vector<int> interleaved;  // length 2U+1, blanks at even indices
  int blank_id = 0;
  double tau1 = kDefaultTau1;
  // When set, the u-2 skip is blocked where w~_u equals w~_{u-2}
  // (standard-CTC semantics).  Off by default for stage-1 search.
  bool repeat_guard = false;
};

KeywordSpec MakeKeywordSpec(const std::string &text, const TokenSequence &tokens,
                            int blank_id, double tau1 = kDefaultTau1);

// (start, end, stage-1 score) of a candidate keyword occurrence.  Frames
// are 1-based and inclusive; s1 is linear-domain in [0,1].
struct CandidateSegment {
  int start_frame = 0;
  int end_frame = 0;
  double s1 = 0.0;
};

// Per-keyword streaming trellis state.  One logical execution context per
// session; distinct sessions are independent.
class DecodeSession {
 public:
  // Construction initializes the trellis at t=1 (frame 1 is consumed here
  // and its probabilities are never read).
  DecodeSession(const KeywordSpec &keyword, int vocab);

  // Advance by one frame; returns the linear-domain Score[t].
  double Step(std::span<const double> frame);

  // Re-initialize to the t=1 state.
  void Reset();

  int CurrentFrame() const { return t_; }
  // Score and origin read from the current trellis state.
  double CurrentScore() const;
  int CurrentOrigin() const;
  std::span<const double> LogDelta() const { return delta_; }

  // Optional ring buffer of recent frame scores (disabled when capacity 0).
  void EnableHistory(std::size_t capacity);
  std::vector<double> History() const;  // oldest first

 private:
  std::vector<int> interleaved_;
  int blank_id_;
  bool repeat_guard_;
  int vocab_;
  int t_;
  std::vector<double> delta_, next_delta_;  // log domain
  std::vector<int> origin_, next_origin_;
  std::vector<double> history_;
  std::size_t history_capacity_ = 0;
  std::size_t history_size_ = 0;
  std::size_t history_head_ = 0;
};

struct ScoreTrack {
  std::vector<double> scores;  // scores[t-1] = linear Score[t], t = 1..T
  std::vector<int> origins;    // origins[t-1] = start frame of the best terminal path
};

// Batch equivalent of construction plus Step over frames 2..T.
ScoreTrack ComputeScoreSequence(const PosteriorGram &p, const KeywordSpec &keyword);

struct CtcForwardResult {
  double log_prob = 0.0;
  bool feasible = true;  // false when T < |tokens|
};

// Standard sum-over-alignments CTC forward probability of `tokens` given
// the posteriorgram (repeat-guarded skip, first frame emission included).
CtcForwardResult CtcForwardLogProb(const PosteriorGram &p, const TokenSequence &tokens,
                                   int blank_id);

// One-pass candidate extraction over a score track.  While tracking a run:
//   - frames with score >= tau1 extend it;
//   - the peak frame (ties earliest) becomes end_frame, its origin the
//     start_frame;
//   - min_gap consecutive sub-threshold frames close the run (runs closer
//     than min_gap therefore merge);
//   - a run spanning max_run frames closes immediately;
//   - end of input closes any open run.
// `decision_frames`, when given, receives the frame at which each candidate
// closed -- the emission latency a streaming consumer observes.
std::vector<CandidateSegment> ExtractCandidates(
    const std::vector<double> &scores, const std::vector<int> &origins, double tau1,
    int min_gap, int max_run = 400, std::vector<int> *decision_frames = nullptr);

// One detection as seen by prefix suppression: the keyword's phoneme
// sequence, its segment, and the final confidence.
struct SuppressEntry {
  const TokenSequence *tokens = nullptr;
  int start_frame = 0;
  int end_frame = 0;
  double score = 0.0;
};

// Where two detections overlap in time and one phoneme sequence is a
// proper prefix of the other, the shorter keyword is dropped iff the
// longer keyword scored strictly higher.  Returns a keep mask aligned with
// the input; idempotent.
std::vector<bool> SuppressPrefixKeepMask(const std::vector<SuppressEntry> &entries);

// Shift both segment ends by independent seeded uniform draws in
// [-fraction*len, +fraction*len] (len = inclusive frame count), round to
// the nearest frame, clamp to [1, total_frames], and clamp start up to end.
CandidateSegment PerturbTimestamps(const CandidateSegment &segment, double fraction,
                                   int total_frames, std::uint32_t seed);

}  // namespace phonespot
