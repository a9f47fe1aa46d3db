// phonespot/include/phonespot/metrics.h
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
// Detection-quality metrics.  The accept rule is `score >= threshold`
// everywhere (boundary inclusive).

#pragma once

#include <vector>

#include "phonespot/common.h"

namespace phonespot {

struct Trial {
  bool positive = false;
  double score = 0.0;
};

// Probability a random positive outscores a random negative; ties count
// one half (Mann-Whitney).  Requires at least one trial of each class.
double Auroc(const std::vector<Trial> &trials);

// FAR/FRR crossing over the threshold sweep of all distinct scores,
// linearly interpolated between adjacent operating points when they do not
// coincide.
double Eer(const std::vector<Trial> &trials);

// For each target rate f (per hour): allow floor(f * negative_hours) false
// alarms, place the threshold just above the (allowed+1)-th highest
// negative score, and report the fraction of positives above it.
std::vector<std::pair<double, double>> RecallAtFar(const std::vector<double> &pos_scores,
                                                   const std::vector<double> &neg_scores,
                                                   double negative_hours,
                                                   const std::vector<double> &far_targets);

struct DetPoint {
  double threshold = 0.0;
  double far_per_hour = 0.0;
  double recall = 0.0;
  double fpr = 0.0;
  double fnr = 0.0;
};

// One point per distinct observed score, sorted by threshold descending.
std::vector<DetPoint> DetCurve(const std::vector<double> &pos_scores,
                               const std::vector<double> &neg_scores, double negative_hours);

}  // namespace phonespot
