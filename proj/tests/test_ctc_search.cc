// phonespot/tests/test_ctc_search.cc
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

#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.h"
#include "phonespot/ctc_search.h"

using namespace phonespot;

namespace {

// Three-frame fixture: vocabulary {blank, a, b}, keyword [a].  Frame 1 is
// consumed by initialization; frames 2 and 3 drive the recurrence.
PosteriorGram WorkedFixture() {
  PosteriorGram p(3, 3);
  p.At(1, 0) = 0.3; p.At(1, 1) = 0.4; p.At(1, 2) = 0.3;
  p.At(2, 0) = 0.7; p.At(2, 1) = 0.2; p.At(2, 2) = 0.1;
  p.At(3, 0) = 0.1; p.At(3, 1) = 0.8; p.At(3, 2) = 0.1;
  return p;
}

KeywordSpec Keyword(const TokenSequence &tokens, double tau1 = 0.5, bool guard = false) {
  KeywordSpec kw = MakeKeywordSpec("kw", tokens, 0, tau1);
  kw.repeat_guard = guard;
  return kw;
}

}  // namespace

TEST_CASE("blank interleaving") {
  CHECK(ExpandWithBlanks({1}, 0) == std::vector<int>{0, 1, 0});
  CHECK(ExpandWithBlanks({1, 2}, 0) == std::vector<int>{0, 1, 0, 2, 0});
  CHECK(ExpandWithBlanks({1, 1}, 0) == std::vector<int>{0, 1, 0, 1, 0});
  CHECK_THROWS_AS(ExpandWithBlanks({}, 0), ConfigError);
  CHECK_THROWS_AS(ExpandWithBlanks({0, 1}, 0), ConfigError);
}

TEST_CASE("worked three-frame trellis") {
  PosteriorGram p = WorkedFixture();
  KeywordSpec kw = Keyword({1});
  DecodeSession session(kw, 3);

  // Initialization state: delta(1,1)=delta(1,2)=1.
  CHECK(std::exp(session.LogDelta()[0]) == 1.0);
  CHECK(std::exp(session.LogDelta()[1]) == 1.0);
  CHECK(session.LogDelta()[2] == -std::numeric_limits<double>::infinity());

  double s2 = session.Step(p.Row(2));
  CHECK(std::exp(session.LogDelta()[0]) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(std::exp(session.LogDelta()[1]) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(std::exp(session.LogDelta()[2]) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(s2 == doctest::Approx(0.7).epsilon(1e-12));

  double s3 = session.Step(p.Row(3));
  CHECK(std::exp(session.LogDelta()[0]) == doctest::Approx(0.07).epsilon(1e-12));
  CHECK(std::exp(session.LogDelta()[1]) == doctest::Approx(0.56).epsilon(1e-12));
  CHECK(std::exp(session.LogDelta()[2]) == doctest::Approx(0.07).epsilon(1e-12));
  CHECK(s3 == doctest::Approx(0.56).epsilon(1e-12));

  // Exactly the enumeration oracle, state by state.
  testing::TrellisEnumeration oracle = testing::EnumerateTrellis(p, kw.interleaved, 0, false);
  ScoreTrack track = ComputeScoreSequence(p, kw);
  REQUIRE(track.scores.size() == 3);
  for (int t = 2; t <= 3; ++t) {
    CHECK(track.scores[t - 1] == oracle.scores_linear[t - 1]);
  }
}

TEST_CASE("vocab mismatch is rejected") {
  KeywordSpec kw = Keyword({1});
  DecodeSession session(kw, 3);
  std::vector<double> frame{0.5, 0.5};
  CHECK_THROWS_AS(session.Step(frame), ConfigError);
}

TEST_CASE("trellis equals the chain enumeration oracle on random instances") {
  std::mt19937 rng(101);
  for (int trial = 0; trial < 120; ++trial) {
    int vocab = 2 + UniformInt(rng, 3);
    int frames = 1 + UniformInt(rng, 6);
    int keyword_len = 1 + UniformInt(rng, 3);
    bool guard = UniformInt(rng, 2) == 1;
    PosteriorGram p = testing::RandomPosteriors(rng, frames, vocab);
    TokenSequence tokens = testing::RandomTokenSequence(rng, vocab, keyword_len, 0);
    KeywordSpec kw = Keyword(tokens, 0.5, guard);

    testing::TrellisEnumeration oracle =
        testing::EnumerateTrellis(p, kw.interleaved, 0, guard);
    ScoreTrack track = ComputeScoreSequence(p, kw);

    DecodeSession session(kw, vocab);
    for (int t = 1; t <= frames; ++t) {
      if (t > 1) session.Step(p.Row(t));
      // Exact in linear domain, and 1e-9 relative in log domain.
      double lin = std::exp(oracle.scores_log[t - 1]);
      CHECK(session.CurrentScore() == lin);
      CHECK(track.scores[t - 1] == lin);
      std::span<const double> delta = session.LogDelta();
      for (std::size_t u = 0; u < delta.size(); ++u) {
        double want = oracle.delta_log[t - 1][u];
        if (std::isinf(want)) {
          CHECK(std::isinf(delta[u]));
        } else {
          CHECK(delta[u] == doctest::Approx(want).epsilon(1e-9));
          CHECK(std::exp(delta[u]) == std::exp(want));
        }
      }
    }
  }
}

TEST_CASE("score stays in [0,1] and origins stay in [1,t]") {
  std::mt19937 rng(202);
  for (int trial = 0; trial < 50; ++trial) {
    int vocab = 2 + UniformInt(rng, 5);
    int frames = 2 + UniformInt(rng, 30);
    PosteriorGram p = testing::RandomPosteriors(rng, frames, vocab);
    TokenSequence tokens = testing::RandomTokenSequence(rng, vocab, 1 + UniformInt(rng, 3), 0);
    ScoreTrack track = ComputeScoreSequence(p, Keyword(tokens));
    for (int t = 1; t <= frames; ++t) {
      CHECK(track.scores[t - 1] >= 0.0);
      CHECK(track.scores[t - 1] <= 1.0);
      CHECK(track.origins[t - 1] >= 1);
      CHECK(track.origins[t - 1] <= t);
    }
  }
}

TEST_CASE("keyword-absent posteriors never cross a 0.5 threshold") {
  PhonemeInventory inv = PhonemeInventory::Default();
  SynthSpec spec;
  spec.ids = {5, 9, 14};  // content disjoint from the keyword below
  spec.frames_per_token = 3;
  spec.lead_frames = 4;
  spec.tail_frames = 4;
  spec.alpha = 0.0;
  auto [p, e] = Synthesize(spec, inv);
  (void)e;
  KeywordSpec kw = Keyword({20, 25});
  ScoreTrack track = ComputeScoreSequence(p, kw);
  double best = 0.0;
  for (double s : track.scores) best = std::max(best, s);
  CHECK(best == 0.0);  // alpha=0: the missing tokens have zero mass

  // With mild flattening the score is bounded by the tiny off-target mass.
  ScoreTrack noisy = ComputeScoreSequence(PerturbUniform(p, 0.1), kw);
  best = 0.0;
  for (double s : noisy.scores) best = std::max(best, s);
  CHECK(best < 0.5);
}

TEST_CASE("zero token mass keeps the score on the blank path") {
  KeywordSpec kw = Keyword({1});
  DecodeSession session(kw, 3);
  std::vector<double> frame{1.0, 0.0, 0.0};
  for (int t = 0; t < 20; ++t) {
    double s = session.Step(frame);
    CHECK(s == 1.0);  // pure blank self-loop from the initialized state
  }
}

TEST_CASE("forward log-probability worked cases") {
  SUBCASE("single frame, single token") {
    PosteriorGram p(1, 3);
    p.At(1, 0) = 0.1; p.At(1, 1) = 0.8; p.At(1, 2) = 0.1;
    CtcForwardResult r = CtcForwardLogProb(p, {1}, 0);
    CHECK(r.feasible);
    CHECK(std::exp(r.log_prob) == doctest::Approx(0.8).epsilon(1e-12));
  }
  SUBCASE("two frames sum three alignments") {
    PosteriorGram p(2, 3);
    p.At(1, 0) = 0.5; p.At(1, 1) = 0.5; p.At(1, 2) = 0.0;
    p.At(2, 0) = 0.5; p.At(2, 1) = 0.5; p.At(2, 2) = 0.0;
    CtcForwardResult r = CtcForwardLogProb(p, {1}, 0);
    CHECK(std::exp(r.log_prob) == doctest::Approx(0.75).epsilon(1e-12));
  }
  SUBCASE("more tokens than frames is infeasible") {
    PosteriorGram p(1, 3);
    p.At(1, 0) = 1.0;
    CtcForwardResult r = CtcForwardLogProb(p, {1, 2}, 0);
    CHECK_FALSE(r.feasible);
    CHECK(std::isinf(r.log_prob));
  }
}

TEST_CASE("forward log-probability equals exhaustive path enumeration") {
  std::mt19937 rng(303);
  for (int trial = 0; trial < 60; ++trial) {
    int vocab = 2 + UniformInt(rng, 3);
    int frames = 1 + UniformInt(rng, 5);
    int len = 1 + UniformInt(rng, 3);
    PosteriorGram p = testing::RandomPosteriors(rng, frames, vocab);
    TokenSequence tokens = testing::RandomTokenSequence(rng, vocab, len, 0);
    double want = testing::EnumerateForwardLinear(p, tokens, 0);
    CtcForwardResult r = CtcForwardLogProb(p, tokens, 0);
    if (frames < len) {
      CHECK_FALSE(r.feasible);
    } else {
      CHECK(std::abs(std::exp(r.log_prob) - want) < 1e-12);
    }
  }
}

TEST_CASE("candidate extraction") {
  SUBCASE("single run takes the peak and its origin") {
    std::vector<double> scores{0.1, 0.7, 0.9, 0.3};
    std::vector<int> origins{1, 1, 1, 3};
    std::vector<int> decisions;
    auto segs = ExtractCandidates(scores, origins, 0.5, 1, 400, &decisions);
    REQUIRE(segs.size() == 1);
    CHECK(segs[0].start_frame == 1);
    CHECK(segs[0].end_frame == 3);
    CHECK(segs[0].s1 == 0.9);
    CHECK(decisions[0] == 4);
  }
  SUBCASE("nothing crosses the threshold") {
    CHECK(ExtractCandidates({0.1, 0.2}, {1, 1}, 0.5, 1).empty());
  }
  SUBCASE("runs separated by at least min_gap stay separate") {
    std::vector<double> scores{0.8, 0.1, 0.1, 0.1, 0.9};
    std::vector<int> origins{1, 1, 1, 1, 4};
    auto segs = ExtractCandidates(scores, origins, 0.5, 3);
    REQUIRE(segs.size() == 2);
    CHECK(segs[0].end_frame == 1);
    CHECK(segs[1].end_frame == 5);
  }
  SUBCASE("closer runs merge") {
    std::vector<double> scores{0.8, 0.1, 0.1, 0.1, 0.9};
    std::vector<int> origins{1, 1, 1, 1, 4};
    auto segs = ExtractCandidates(scores, origins, 0.5, 4);
    REQUIRE(segs.size() == 1);
    CHECK(segs[0].end_frame == 5);  // peak of the merged run
    CHECK(segs[0].s1 == 0.9);
  }
  SUBCASE("length cap splits long runs") {
    std::vector<double> scores(10, 0.8);
    scores[2] = 0.95;
    scores[7] = 0.9;
    std::vector<int> origins(10, 1);
    std::vector<int> decisions;
    auto segs = ExtractCandidates(scores, origins, 0.5, 2, 4, &decisions);
    REQUIRE(segs.size() == 3);
    CHECK(segs[0].end_frame == 3);
    CHECK(decisions[0] == 4);
    CHECK(segs[1].end_frame == 8);
    CHECK(decisions[1] == 8);
    CHECK(segs[2].end_frame == 9);
    CHECK(decisions[2] == 10);  // stream end closes the remainder
  }
  SUBCASE("open run closes at end of input") {
    std::vector<double> scores{0.1, 0.8, 0.9};
    std::vector<int> origins{1, 2, 2};
    std::vector<int> decisions;
    auto segs = ExtractCandidates(scores, origins, 0.5, 5, 400, &decisions);
    REQUIRE(segs.size() == 1);
    CHECK(segs[0].end_frame == 3);
    CHECK(decisions[0] == 3);
  }
}

TEST_CASE("prefix suppression") {
  TokenSequence rain{1, 2, 3};
  TokenSequence rainbow{1, 2, 3, 4, 5};

  SUBCASE("longer and stronger suppresses the prefix") {
    std::vector<SuppressEntry> entries{
        {&rain, 10, 40, 0.8},
        {&rainbow, 10, 70, 0.9},
    };
    std::vector<bool> keep = SuppressPrefixKeepMask(entries);
    CHECK_FALSE(keep[0]);
    CHECK(keep[1]);
  }
  SUBCASE("higher-scoring prefix survives") {
    std::vector<SuppressEntry> entries{
        {&rain, 10, 40, 0.95},
        {&rainbow, 10, 70, 0.9},
    };
    std::vector<bool> keep = SuppressPrefixKeepMask(entries);
    CHECK(keep[0]);
    CHECK(keep[1]);
  }
  SUBCASE("no temporal overlap keeps both") {
    std::vector<SuppressEntry> entries{
        {&rain, 10, 40, 0.8},
        {&rainbow, 50, 90, 0.9},
    };
    std::vector<bool> keep = SuppressPrefixKeepMask(entries);
    CHECK(keep[0]);
    CHECK(keep[1]);
  }
  SUBCASE("idempotent on random inputs") {
    std::mt19937 rng(404);
    std::vector<TokenSequence> pool;
    pool.push_back({1, 2});
    pool.push_back({1, 2, 3});
    pool.push_back({1, 2, 3, 4});
    pool.push_back({7, 8});
    for (int trial = 0; trial < 40; ++trial) {
      std::vector<SuppressEntry> entries;
      int n = 2 + UniformInt(rng, 5);
      for (int i = 0; i < n; ++i) {
        int start = 1 + UniformInt(rng, 50);
        entries.push_back({&pool[UniformInt(rng, 4)], start, start + UniformInt(rng, 30),
                           UniformUnit(rng)});
      }
      std::vector<bool> keep = SuppressPrefixKeepMask(entries);
      std::vector<SuppressEntry> survivors;
      for (int i = 0; i < n; ++i) {
        if (keep[i]) survivors.push_back(entries[i]);
      }
      std::vector<bool> again = SuppressPrefixKeepMask(survivors);
      for (bool k : again) CHECK(k);
    }
  }
}

TEST_CASE("timestamp perturbation") {
  CandidateSegment seg{20, 29, 0.8};

  SUBCASE("fraction zero is the identity") {
    CandidateSegment out = PerturbTimestamps(seg, 0.0, 100, 7);
    CHECK(out.start_frame == 20);
    CHECK(out.end_frame == 29);
  }
  SUBCASE("deterministic per seed") {
    CandidateSegment a = PerturbTimestamps(seg, 0.3, 100, 7);
    CandidateSegment b = PerturbTimestamps(seg, 0.3, 100, 7);
    CHECK(a.start_frame == b.start_frame);
    CHECK(a.end_frame == b.end_frame);
  }
  SUBCASE("bounded shifts, clamped and ordered") {
    for (std::uint32_t seed = 0; seed < 200; ++seed) {
      CandidateSegment out = PerturbTimestamps(seg, 1.0, 40, seed);
      CHECK(out.start_frame >= 1);
      CHECK(out.end_frame <= 40);
      CHECK(out.start_frame <= out.end_frame);
      CHECK(std::abs(out.start_frame - seg.start_frame) <= 10);
      CHECK(std::abs(out.end_frame - seg.end_frame) <= 11);  // rounding slack
    }
  }
  SUBCASE("fraction out of range") {
    CHECK_THROWS_AS(PerturbTimestamps(seg, 1.5, 100, 0), ConfigError);
  }
}

TEST_CASE("flattening the posterior lowers peak scores on synthetic keywords") {
  PhonemeInventory inv = PhonemeInventory::Default();
  std::mt19937 rng(550);
  int non_increasing = 0;
  const int runs = 100;
  for (int s = 0; s < runs; ++s) {
    SynthSpec spec;
    spec.ids = RandomKeywordTokens(rng, inv, 2 + UniformInt(rng, 4));
    spec.frames_per_token = 2;
    spec.lead_frames = 2 + UniformInt(rng, 4);
    spec.tail_frames = 2 + UniformInt(rng, 4);
    spec.alpha = 0.0;
    spec.seed = rng();
    auto [p, e] = Synthesize(spec, inv);
    (void)e;
    KeywordSpec kw = Keyword(spec.ids);
    double prev = 2.0;
    bool ok = true;
    for (double alpha : {0.0, 0.2, 0.4}) {
      ScoreTrack track = ComputeScoreSequence(PerturbUniform(p, alpha), kw);
      double best = 0.0;
      for (double v : track.scores) best = std::max(best, v);
      if (best > prev) ok = false;
      prev = best;
    }
    if (ok) ++non_increasing;
  }
  CHECK(non_increasing >= 95);
}

TEST_CASE("score history ring buffer") {
  KeywordSpec kw = Keyword({1});
  DecodeSession session(kw, 3);
  session.EnableHistory(3);
  std::vector<double> frame{0.6, 0.3, 0.1};
  std::vector<double> want;
  for (int i = 0; i < 5; ++i) want.push_back(session.Step(frame));
  std::vector<double> history = session.History();
  REQUIRE(history.size() == 3);
  CHECK(history[0] == want[2]);
  CHECK(history[2] == want[4]);
}
