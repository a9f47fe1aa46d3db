// phonespot/src/cascade.cc
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

#include "phonespot/cascade.h"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace phonespot {

namespace {

double Stage2Score(const EmbeddingMatrix &clip, const EnrollmentPrototype &proto,
                   Stage2Mode mode, const MatcherModel *model) {
  if (mode == Stage2Mode::kPrototype) return PrototypeMatch(clip, proto);
  return MatcherForward(clip, proto, *model).p_utt;
}

void ApplySuppression(std::vector<Detection> &detections, const PipelineConfig &cfg) {
  std::vector<SuppressEntry> entries;
  entries.reserve(detections.size());
  for (const Detection &d : detections) {
    entries.push_back({&cfg.keywords[d.keyword_index].tokens, d.segment.start_frame,
                       d.segment.end_frame, d.final_score});
  }
  std::vector<bool> keep = SuppressPrefixKeepMask(entries);
  std::vector<Detection> kept;
  kept.reserve(detections.size());
  for (std::size_t i = 0; i < detections.size(); ++i) {
    if (keep[i]) kept.push_back(std::move(detections[i]));
  }
  detections = std::move(kept);
}

void RequireStage2Inputs(const PipelineConfig &cfg, const MatcherModel *model,
                         const std::vector<EnrollmentPrototype> *protos) {
  if (cfg.stage2_mode == Stage2Mode::kOff) return;
  if (!protos || protos->size() != cfg.keywords.size()) {
    throw ConfigError("stage 2 requires one enrollment prototype per keyword");
  }
  if (cfg.stage2_mode == Stage2Mode::kLearned && !model) {
    throw ConfigError("learned stage 2 requires matcher weights");
  }
}

}  // namespace

const char *Stage2ModeName(Stage2Mode mode) {
  switch (mode) {
    case Stage2Mode::kOff: return "off";
    case Stage2Mode::kPrototype: return "prototype";
    case Stage2Mode::kLearned: return "learned";
  }
  return "?";
}

Stage2Mode ParseStage2Mode(const std::string &name) {
  if (name == "off") return Stage2Mode::kOff;
  if (name == "prototype") return Stage2Mode::kPrototype;
  if (name == "learned") return Stage2Mode::kLearned;
  throw ConfigError("unknown stage-2 mode: " + name);
}

double PipelineConfig::Tau2For(std::size_t keyword_index) const {
  if (keyword_index < keyword_tau2.size() && keyword_tau2[keyword_index]) {
    return *keyword_tau2[keyword_index];
  }
  return tau2;
}

void PipelineConfig::Validate() const {
  if (keywords.empty()) throw ConfigError("pipeline needs at least one keyword");
  if (tau2 < 0.0 || tau2 > 1.0) throw ConfigError("tau2 outside [0,1]");
  if (!keyword_tau2.empty() && keyword_tau2.size() != keywords.size()) {
    throw ConfigError("keyword tau2 overrides misaligned with keywords");
  }
  for (const auto &o : keyword_tau2) {
    if (o && (*o < 0.0 || *o > 1.0)) throw ConfigError("per-keyword tau2 outside [0,1]");
  }
  if (crop_margin < 0) throw ConfigError("crop_margin must be >= 0");
  if (min_gap < 0) throw ConfigError("min_gap must be >= 0");
  if (max_run < 1) throw ConfigError("max_run must be >= 1");
}

PipelineResult RunPipeline(const PosteriorGram &p, const EmbeddingMatrix *embeddings,
                           const PipelineConfig &cfg, const MatcherModel *model,
                           const std::vector<EnrollmentPrototype> *protos) {
  cfg.Validate();
  RequireStage2Inputs(cfg, model, protos);
  if (cfg.stage2_mode != Stage2Mode::kOff) {
    if (!embeddings) throw ConfigError("stage 2 requires frame embeddings");
    if (embeddings->frames != p.frames) {
      throw ConfigError("embedding frame count does not match posteriorgram");
    }
  }
  PipelineResult result;
  result.stats.frames = p.frames;
  for (std::size_t k = 0; k < cfg.keywords.size(); ++k) {
    const KeywordSpec &kw = cfg.keywords[k];
    ScoreTrack track = ComputeScoreSequence(p, kw);
    std::vector<int> decisions;
    std::vector<CandidateSegment> candidates = ExtractCandidates(
        track.scores, track.origins, kw.tau1, cfg.min_gap, cfg.max_run, &decisions);
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const CandidateSegment &seg = candidates[i];
      Detection d;
      d.keyword = kw.text;
      d.keyword_index = static_cast<int>(k);
      d.segment = seg;
      d.s1 = seg.s1;
      d.final_score = seg.s1;
      d.decision_frame = decisions[i];
      if (cfg.stage2_mode != Stage2Mode::kOff) {
        EmbeddingMatrix clip = CropEmbeddings(*embeddings, seg, cfg.crop_margin);
        double s2 = Stage2Score(clip, (*protos)[k], cfg.stage2_mode, model);
        ++result.stats.stage2_activations;
        d.s2 = s2;
        d.final_score = cfg.fuse_geometric ? std::sqrt(seg.s1 * s2) : s2;
        if (s2 < cfg.Tau2For(k)) continue;
      }
      result.detections.push_back(std::move(d));
    }
  }
  if (cfg.suppress_prefixes) ApplySuppression(result.detections, cfg);
  result.stats.detections = static_cast<std::int64_t>(result.detections.size());
  return result;
}

StreamingPipeline::StreamingPipeline(const PipelineConfig &cfg, const MatcherModel *model,
                                     const std::vector<EnrollmentPrototype> *protos)
    : cfg_(cfg), model_(model), protos_(protos) {
  cfg_.Validate();
  RequireStage2Inputs(cfg_, model_, protos_);
  states_.resize(cfg_.keywords.size());
}

void StreamingPipeline::AcceptFrame(std::span<const double> posterior_row,
                                    std::span<const double> embedding_row) {
  if (finalized_) throw ConfigError("stream already finalized");
  const bool wants_embeddings = cfg_.stage2_mode != Stage2Mode::kOff;
  if (t_ == 0) {
    vocab_ = static_cast<int>(posterior_row.size());
    if (vocab_ < 1) throw ConfigError("empty posterior row");
    if (wants_embeddings) {
      embed_dim_ = static_cast<int>(embedding_row.size());
      if (embed_dim_ < 1) {
        throw ConfigError("stage 2 requires an embedding row per frame");
      }
    }
  } else {
    if (static_cast<int>(posterior_row.size()) != vocab_) {
      throw ConfigError("posterior row size changed at frame " + std::to_string(t_ + 1));
    }
    if (wants_embeddings && static_cast<int>(embedding_row.size()) != embed_dim_) {
      throw ConfigError("embedding row size changed at frame " + std::to_string(t_ + 1));
    }
  }
  ++t_;
  if (wants_embeddings) {
    embed_rows_.insert(embed_rows_.end(), embedding_row.begin(), embedding_row.end());
  }
  for (std::size_t k = 0; k < cfg_.keywords.size(); ++k) {
    KeywordState &st = states_[k];
    double score;
    if (t_ == 1) {
      st.session.emplace(cfg_.keywords[k], vocab_);
      score = st.session->CurrentScore();
    } else {
      score = st.session->Step(posterior_row);
    }
    const int origin = st.session->CurrentOrigin();
    const double tau1 = cfg_.keywords[k].tau1;
    if (!st.tracking) {
      if (score < tau1) continue;
      st.tracking = true;
      st.run_start = t_;
      st.last_hit = t_;
      st.best_frame = t_;
      st.best_origin = origin;
      st.best_score = score;
    } else {
      if (score > st.best_score) {
        st.best_score = score;
        st.best_frame = t_;
        st.best_origin = origin;
      }
      if (score >= tau1) st.last_hit = t_;
    }
    if (t_ - st.run_start + 1 >= cfg_.max_run) {
      CloseRun(k, t_);
    } else if (score < tau1 && t_ - st.last_hit >= cfg_.min_gap) {
      CloseRun(k, t_);
    }
  }
  FlushPending(false);
}

void StreamingPipeline::CloseRun(std::size_t k, int decision_frame) {
  KeywordState &st = states_[k];
  st.tracking = false;
  CandidateSegment seg;
  seg.start_frame = st.best_origin;
  seg.end_frame = st.best_frame;
  seg.s1 = st.best_score;
  if (cfg_.stage2_mode == Stage2Mode::kOff) {
    Detection d;
    d.keyword = cfg_.keywords[k].text;
    d.keyword_index = static_cast<int>(k);
    d.segment = seg;
    d.s1 = seg.s1;
    d.final_score = seg.s1;
    d.decision_frame = decision_frame;
    events_.push_back(d);
    accepted_.push_back(std::move(d));
    return;
  }
  PendingCandidate cand;
  cand.keyword_index = k;
  cand.segment = seg;
  cand.decision_frame = decision_frame;
  cand.need_frame = seg.end_frame + cfg_.crop_margin;
  pending_.push_back(cand);
}

void StreamingPipeline::FlushPending(bool at_end) {
  std::vector<PendingCandidate> still_waiting;
  for (const PendingCandidate &cand : pending_) {
    if (cand.need_frame <= t_ || at_end) {
      ScoreAndEmit(cand, std::min(cand.need_frame, t_));
    } else {
      still_waiting.push_back(cand);
    }
  }
  pending_ = std::move(still_waiting);
}

void StreamingPipeline::ScoreAndEmit(const PendingCandidate &cand, int clip_hi) {
  const int lo = std::max(1, cand.segment.start_frame - cfg_.crop_margin);
  EmbeddingMatrix clip(clip_hi - lo + 1, embed_dim_);
  for (int t = lo; t <= clip_hi; ++t) {
    for (int d = 0; d < embed_dim_; ++d) {
      clip.At(t - lo + 1, d) = embed_rows_[static_cast<std::size_t>(t - 1) * embed_dim_ + d];
    }
  }
  double s2 = Stage2Score(clip, (*protos_)[cand.keyword_index], cfg_.stage2_mode, model_);
  ++stats_.stage2_activations;
  Detection d;
  d.keyword = cfg_.keywords[cand.keyword_index].text;
  d.keyword_index = static_cast<int>(cand.keyword_index);
  d.segment = cand.segment;
  d.s1 = cand.segment.s1;
  d.s2 = s2;
  d.final_score = cfg_.fuse_geometric ? std::sqrt(cand.segment.s1 * s2) : s2;
  d.decision_frame = cand.decision_frame;
  if (s2 >= cfg_.Tau2For(cand.keyword_index)) {
    events_.push_back(d);
    accepted_.push_back(std::move(d));
  }
}

std::vector<Detection> StreamingPipeline::TakeEvents() {
  std::vector<Detection> out;
  out.swap(events_);
  return out;
}

PipelineResult StreamingPipeline::Finalize() {
  if (!finalized_) {
    for (std::size_t k = 0; k < states_.size(); ++k) {
      if (states_[k].tracking) CloseRun(k, t_);
    }
    FlushPending(true);
    finalized_ = true;
  }
  PipelineResult result;
  result.detections = accepted_;
  std::stable_sort(result.detections.begin(), result.detections.end(),
                   [](const Detection &a, const Detection &b) {
                     if (a.keyword_index != b.keyword_index) {
                       return a.keyword_index < b.keyword_index;
                     }
                     return a.segment.end_frame < b.segment.end_frame;
                   });
  if (cfg_.suppress_prefixes) ApplySuppression(result.detections, cfg_);
  result.stats = stats_;
  result.stats.frames = t_;
  result.stats.detections = static_cast<std::int64_t>(result.detections.size());
  return result;
}

std::string DetectionToJson(const Detection &d, double frame_period) {
  nlohmann::ordered_json j;
  j["keyword"] = d.keyword;
  j["start_frame"] = d.segment.start_frame;
  j["end_frame"] = d.segment.end_frame;
  j["start_s"] = (d.segment.start_frame - 1) * frame_period;
  j["end_s"] = d.segment.end_frame * frame_period;
  j["s1"] = d.s1;
  if (d.s2) j["s2"] = *d.s2;
  j["final"] = d.final_score;
  return j.dump();
}

std::string StatsToJson(const CascadeStats &stats) {
  nlohmann::ordered_json j;
  j["frames"] = stats.frames;
  j["stage2_activations"] = stats.stage2_activations;
  j["detections"] = stats.detections;
  return j.dump();
}

}  // namespace phonespot
