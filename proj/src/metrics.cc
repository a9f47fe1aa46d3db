// phonespot/src/metrics.cc
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

#include "phonespot/metrics.h"

#include <algorithm>
#include <cmath>
#include <limits>

namespace phonespot {

namespace {

void SplitTrials(const std::vector<Trial> &trials, std::vector<double> *pos,
                 std::vector<double> *neg) {
  for (const Trial &t : trials) {
    if (!std::isfinite(t.score)) throw ConfigError("non-finite trial score");
    (t.positive ? pos : neg)->push_back(t.score);
  }
  if (pos->empty()) throw ConfigError("no positive trials");
  if (neg->empty()) throw ConfigError("no negative trials");
}

struct OperatingPoint {
  double threshold;
  double far;  // false accepts / negatives
  double frr;  // false rejects / positives
};

// Points for every distinct score, plus a sentinel above the maximum
// (nothing accepted), ordered by threshold descending.
std::vector<OperatingPoint> SweepOperatingPoints(std::vector<double> pos,
                                                 std::vector<double> neg) {
  std::vector<double> thresholds;
  thresholds.reserve(pos.size() + neg.size());
  thresholds.insert(thresholds.end(), pos.begin(), pos.end());
  thresholds.insert(thresholds.end(), neg.begin(), neg.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  std::sort(pos.begin(), pos.end(), std::greater<>());
  std::sort(neg.begin(), neg.end(), std::greater<>());
  std::vector<OperatingPoint> points;
  points.reserve(thresholds.size() + 1);
  points.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  std::size_t np = 0, nn = 0;
  for (double tau : thresholds) {
    while (np < pos.size() && pos[np] >= tau) ++np;
    while (nn < neg.size() && neg[nn] >= tau) ++nn;
    OperatingPoint pt;
    pt.threshold = tau;
    pt.far = static_cast<double>(nn) / static_cast<double>(neg.size());
    pt.frr = static_cast<double>(pos.size() - np) / static_cast<double>(pos.size());
    points.push_back(pt);
  }
  return points;
}

}  // namespace

double Auroc(const std::vector<Trial> &trials) {
  std::vector<double> pos, neg;
  SplitTrials(trials, &pos, &neg);
  // Rank-sum form: sort everything, give tied scores their average rank.
  struct Scored {
    double score;
    bool positive;
  };
  std::vector<Scored> all;
  all.reserve(trials.size());
  for (double s : pos) all.push_back({s, true});
  for (double s : neg) all.push_back({s, false});
  std::sort(all.begin(), all.end(),
            [](const Scored &a, const Scored &b) { return a.score < b.score; });
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].positive) pos_rank_sum += avg_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos.size());
  const double n = static_cast<double>(neg.size());
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double Eer(const std::vector<Trial> &trials) {
  std::vector<double> pos, neg;
  SplitTrials(trials, &pos, &neg);
  std::vector<OperatingPoint> points = SweepOperatingPoints(pos, neg);
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    const OperatingPoint &a = points[i];
    const OperatingPoint &b = points[i + 1];
    double da = a.far - a.frr;
    double db = b.far - b.frr;
    if (da == 0.0) return a.far;
    if (db == 0.0) return b.far;
    if (da < 0.0 && db > 0.0) {
      // Linear crossing between the two operating points.
      double t = (a.frr - a.far) / ((b.far - a.far) - (b.frr - a.frr));
      return a.far + t * (b.far - a.far);
    }
  }
  // FAR ends at 1 and FRR at 0, so a crossing always exists; the last
  // point is the degenerate fall-through.
  return points.back().far;
}

std::vector<std::pair<double, double>> RecallAtFar(const std::vector<double> &pos_scores,
                                                   const std::vector<double> &neg_scores,
                                                   double negative_hours,
                                                   const std::vector<double> &far_targets) {
  if (pos_scores.empty()) throw ConfigError("no positive scores");
  if (!(negative_hours > 0.0)) throw ConfigError("negative_hours must be positive");
  std::vector<double> neg = neg_scores;
  std::sort(neg.begin(), neg.end(), std::greater<>());
  std::vector<std::pair<double, double>> out;
  out.reserve(far_targets.size());
  for (double target : far_targets) {
    if (target < 0.0) throw ConfigError("negative FAR target");
    auto allowed = static_cast<std::size_t>(std::floor(target * negative_hours));
    std::size_t hits = 0;
    if (allowed >= neg.size()) {
      hits = pos_scores.size();  // no bound: every positive passes
    } else {
      double bar = neg[allowed];  // threshold sits just above this score
      for (double s : pos_scores) {
        if (s > bar) ++hits;
      }
    }
    out.emplace_back(target, static_cast<double>(hits) / static_cast<double>(pos_scores.size()));
  }
  return out;
}

std::vector<DetPoint> DetCurve(const std::vector<double> &pos_scores,
                               const std::vector<double> &neg_scores, double negative_hours) {
  if (pos_scores.empty() || neg_scores.empty()) {
    throw ConfigError("DET curve needs positive and negative scores");
  }
  if (!(negative_hours > 0.0)) throw ConfigError("negative_hours must be positive");
  std::vector<Trial> trials;
  for (double s : pos_scores) trials.push_back({true, s});
  for (double s : neg_scores) trials.push_back({false, s});
  std::vector<double> pos, neg;
  SplitTrials(trials, &pos, &neg);
  std::vector<OperatingPoint> points = SweepOperatingPoints(pos, neg);
  std::vector<DetPoint> out;
  out.reserve(points.size() - 1);
  for (std::size_t i = 1; i < points.size(); ++i) {  // skip the sentinel
    DetPoint pt;
    pt.threshold = points[i].threshold;
    pt.fpr = points[i].far;
    pt.fnr = points[i].frr;
    pt.recall = 1.0 - points[i].frr;
    pt.far_per_hour = points[i].far * static_cast<double>(neg.size()) / negative_hours;
    out.push_back(pt);
  }
  return out;
}

}  // namespace phonespot
