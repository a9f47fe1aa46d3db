// phonespot/include/phonespot/cascade.h
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
// Two-stage detection pipeline: stage-1 trellis search gates candidate
// segments at tau1; stage-2 re-scores the cropped embedding clip (learned
// matcher or analytic prototype scorer) and decides at tau2.  Batch and
// streaming drivers share identical closure semantics and produce
// byte-identical detections.
//
// One pipeline instance serves one audio stream; instances share no
// mutable state and may run in parallel.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "phonespot/ctc_search.h"
#include "phonespot/matcher.h"
#include "phonespot/posterior.h"

namespace phonespot {

enum class Stage2Mode { kOff, kPrototype, kLearned };

const char *Stage2ModeName(Stage2Mode mode);
Stage2Mode ParseStage2Mode(const std::string &name);

struct PipelineConfig {
  std::vector<KeywordSpec> keywords;
  double tau2 = 0.5;
  // Per-keyword overrides, aligned with `keywords`; empty means "use tau2".
  std::vector<std::optional<double>> keyword_tau2;
  Stage2Mode stage2_mode = Stage2Mode::kOff;
  EnrollMode enroll_mode = EnrollMode::kText;
  int crop_margin = 2;
  int min_gap = 10;
  int max_run = 400;
  bool suppress_prefixes = false;
  // When on and stage 2 ran, the decision score is sqrt(s1*s2) instead of s2.
  bool fuse_geometric = false;

  double Tau2For(std::size_t keyword_index) const;
  void Validate() const;
};

struct Detection {
  std::string keyword;
  int keyword_index = 0;
  CandidateSegment segment;
  double s1 = 0.0;
  std::optional<double> s2;
  double final_score = 0.0;
  int decision_frame = 0;
};

struct CascadeStats {
  std::int64_t frames = 0;
  std::int64_t stage2_activations = 0;
  std::int64_t detections = 0;
};

struct PipelineResult {
  std::vector<Detection> detections;
  CascadeStats stats;
};

// Batch driver.  `embeddings` may be null when stage 2 is off; `model` is
// required in learned mode; `protos` (aligned with cfg.keywords) is
// required whenever stage 2 runs.
PipelineResult RunPipeline(const PosteriorGram &p, const EmbeddingMatrix *embeddings,
                           const PipelineConfig &cfg, const MatcherModel *model,
                           const std::vector<EnrollmentPrototype> *protos);

// Incremental driver.  Feed posterior/embedding rows in temporal order;
// closed candidates surface through TakeEvents() as soon as their crop
// window is complete.  Finalize() closes open runs, applies prefix
// suppression, and returns detections in the batch driver's canonical
// order (keyword-major, then by end frame).
class StreamingPipeline {
 public:
  StreamingPipeline(const PipelineConfig &cfg, const MatcherModel *model,
                    const std::vector<EnrollmentPrototype> *protos);

  void AcceptFrame(std::span<const double> posterior_row,
                   std::span<const double> embedding_row = {});

  // Accepted detections closed since the last call, in decision order.
  std::vector<Detection> TakeEvents();

  PipelineResult Finalize();

 private:
  struct KeywordState {
    std::optional<DecodeSession> session;
    bool tracking = false;
    int run_start = 0;
    int last_hit = 0;
    int best_frame = 0;
    int best_origin = 0;
    double best_score = 0.0;
  };
  struct PendingCandidate {
    std::size_t keyword_index;
    CandidateSegment segment;
    int decision_frame;
    int need_frame;  // highest embedding frame the crop wants
  };

  void CloseRun(std::size_t k, int decision_frame);
  void FlushPending(bool at_end);
  void ScoreAndEmit(const PendingCandidate &cand, int clip_hi);

  PipelineConfig cfg_;
  const MatcherModel *model_;
  const std::vector<EnrollmentPrototype> *protos_;
  int vocab_ = -1;
  int embed_dim_ = -1;
  int t_ = 0;
  std::vector<KeywordState> states_;
  std::vector<double> embed_rows_;  // row-major buffer, stage 2 only
  std::vector<PendingCandidate> pending_;
  std::vector<Detection> events_;
  std::vector<Detection> accepted_;
  CascadeStats stats_;
  bool finalized_ = false;
};

// JSON-lines serialization used by the CLI and the equivalence tests.
// Keys: keyword, start_frame, end_frame, start_s, end_s, s1, s2 (only when
// stage 2 ran), final.
std::string DetectionToJson(const Detection &d, double frame_period);
std::string StatsToJson(const CascadeStats &stats);

}  // namespace phonespot
