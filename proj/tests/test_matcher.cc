// phonespot/tests/test_matcher.cc
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
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "oracles.h"
#include "phonespot/matcher.h"

using namespace phonespot;
namespace fs = std::filesystem;

namespace {

EmbeddingMatrix RandomClip(std::mt19937 &rng, int frames, int dim) {
  EmbeddingMatrix e(frames, dim);
  for (double &v : e.values) v = UniformRange(rng, -1.0, 1.0);
  return e;
}

std::string FileBytes(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("token embedding lookup") {
  MatcherModel m = MakeRandomModel(10, 4, 1, 5);
  std::vector<Vec> rows = EmbedTokens({3}, m);
  REQUIRE(rows.size() == 1);
  for (int d = 0; d < 4; ++d) CHECK(rows[0][d] == m.embed(3, d));
  std::vector<Vec> twice = EmbedTokens({3, 3}, m);
  CHECK(twice[0] == twice[1]);
  CHECK_THROWS_AS(EmbedTokens({}, m), ConfigError);
  CHECK_THROWS_AS(EmbedTokens({10}, m), ConfigError);
}

TEST_CASE("clip cropping") {
  EmbeddingMatrix e(5, 2);
  for (int t = 1; t <= 5; ++t) e.At(t, 0) = t;

  EmbeddingMatrix a = CropEmbeddings(e, {2, 4, 0.0}, 0);
  CHECK(a.frames == 3);
  CHECK(a.At(1, 0) == 2.0);
  CHECK(a.At(3, 0) == 4.0);

  EmbeddingMatrix b = CropEmbeddings(e, {1, 5, 0.0}, 3);
  CHECK(b.frames == 5);  // clamped at both ends

  EmbeddingMatrix c = CropEmbeddings(e, {3, 3, 0.0}, 0);
  CHECK(c.frames == 1);
  CHECK(c.At(1, 0) == 3.0);

  CHECK_THROWS_AS(CropEmbeddings(e, {0, 3, 0.0}, 0), ConfigError);
}

TEST_CASE("enrollment fusion") {
  const int dim = 4;
  MatcherModel m = MakeRandomModel(8, dim, 1, 17);
  TokenSequence tokens{1, 2, 3};
  std::mt19937 rng(18);
  EmbeddingMatrix ref = RandomClip(rng, 5, dim);

  SUBCASE("text mode keeps token count") {
    EnrollmentPrototype proto = FuseEnrollment(EnrollMode::kText, tokens, nullptr, m);
    CHECK(proto.fused.size() == 3);
    CHECK(proto.fused[0] == EmbedTokens(tokens, m)[0]);
  }
  SUBCASE("concat mode appends reference frames") {
    EnrollmentPrototype proto = FuseEnrollment(EnrollMode::kConcat, tokens, &ref, m);
    CHECK(proto.fused.size() == 8);
  }
  SUBCASE("concat length additivity holds for random sizes") {
    for (int trial = 0; trial < 20; ++trial) {
      int n_tok = 1 + UniformInt(rng, 6);
      int n_ref = 1 + UniformInt(rng, 9);
      TokenSequence toks = testing::RandomTokenSequence(rng, 8, n_tok, -1);
      EmbeddingMatrix r = RandomClip(rng, n_ref, dim);
      EnrollmentPrototype proto = FuseEnrollment(EnrollMode::kConcat, toks, &r, m);
      CHECK(proto.fused.size() == static_cast<std::size_t>(n_tok + n_ref));
    }
  }
  SUBCASE("cross-attention keeps token count") {
    EnrollmentPrototype proto = FuseEnrollment(EnrollMode::kCrossAttention, tokens, &ref, m);
    CHECK(proto.fused.size() == 3);
  }
  SUBCASE("zero query/key projections average the value-projected frames") {
    MatcherModel z = MakeRandomModel(8, dim, 1, 19);
    for (double &v : z.xattn.wq.data) v = 0.0;
    for (double &v : z.xattn.wk.data) v = 0.0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(dim); ++i) {
      for (std::size_t j = 0; j < static_cast<std::size_t>(dim); ++j) {
        z.xattn.wo(i, j) = i == j ? 1.0 : 0.0;
      }
    }
    EnrollmentPrototype proto = FuseEnrollment(EnrollMode::kCrossAttention, tokens, &ref, z);
    Vec mean(dim, 0.0);
    for (int t = 1; t <= ref.frames; ++t) {
      for (int i = 0; i < dim; ++i) {
        for (int j = 0; j < dim; ++j) mean[j] += ref.At(t, i) * z.xattn.wv(i, j);
      }
    }
    for (double &v : mean) v /= ref.frames;
    for (const Vec &f : proto.fused) {
      for (int d = 0; d < dim; ++d) CHECK(f[d] == doctest::Approx(mean[d]).epsilon(1e-9));
    }
  }
  SUBCASE("missing reference is rejected") {
    CHECK_THROWS_AS(FuseEnrollment(EnrollMode::kConcat, tokens, nullptr, m), ConfigError);
    CHECK_THROWS_AS(FuseEnrollment(EnrollMode::kCrossAttention, tokens, nullptr, m),
                    ConfigError);
  }
}

TEST_CASE("matcher forward pass") {
  const int dim = 6;
  std::mt19937 rng(23);

  SUBCASE("all-zero weights sit at one half") {
    MatcherModel z = MakeZeroModel(9, dim, 2);
    EmbeddingMatrix clip = RandomClip(rng, 4, dim);
    EnrollmentPrototype proto = FuseEnrollment(EnrollMode::kText, {1, 2}, nullptr, z);
    MatcherOutput out = MatcherForward(clip, proto, z);
    CHECK(out.p_utt == 0.5);
    REQUIRE(out.p_phon.size() == 2);
    for (double v : out.p_phon) CHECK(v == 0.5);
  }
  SUBCASE("outputs are strict probabilities for random weights") {
    for (int trial = 0; trial < 100; ++trial) {
      MatcherModel m = MakeRandomModel(9, dim, 2, 1000 + trial);
      EmbeddingMatrix clip = RandomClip(rng, 1 + UniformInt(rng, 6), dim);
      EnrollmentPrototype proto =
          FuseEnrollment(EnrollMode::kText, {1 + UniformInt(rng, 7)}, nullptr, m);
      MatcherOutput out = MatcherForward(clip, proto, m);
      CHECK(out.p_utt > 0.0);
      CHECK(out.p_utt < 1.0);
      for (double v : out.p_phon) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
      }
    }
  }
  SUBCASE("bit-identical across calls") {
    MatcherModel m = MakeRandomModel(9, dim, 2, 77);
    EmbeddingMatrix clip = RandomClip(rng, 5, dim);
    EnrollmentPrototype proto = FuseEnrollment(EnrollMode::kText, {1, 4, 2}, nullptr, m);
    MatcherOutput a = MatcherForward(clip, proto, m);
    MatcherOutput b = MatcherForward(clip, proto, m);
    CHECK(a.p_utt == b.p_utt);
    CHECK(a.p_phon == b.p_phon);
  }
  SUBCASE("positional encodings break frame-permutation invariance") {
    MatcherModel m = MakeRandomModel(9, dim, 2, 78);
    EmbeddingMatrix clip = RandomClip(rng, 4, dim);
    EnrollmentPrototype proto = FuseEnrollment(EnrollMode::kText, {1, 4}, nullptr, m);
    EmbeddingMatrix swapped = clip;
    for (int d = 0; d < dim; ++d) std::swap(swapped.At(1, d), swapped.At(2, d));
    double a = MatcherForward(clip, proto, m).p_utt;
    double b = MatcherForward(swapped, proto, m).p_utt;
    CHECK(a != b);
  }
  SUBCASE("attention rows are stochastic") {
    MatcherModel m = MakeRandomModel(9, dim, 2, 79);
    EmbeddingMatrix clip = RandomClip(rng, 5, dim);
    EnrollmentPrototype proto = FuseEnrollment(EnrollMode::kText, {2, 3}, nullptr, m);
    ForwardTrace trace;
    MatcherForward(clip, proto, m, &trace);
    REQUIRE(trace.attention.size() == 2);
    for (const Mat &attn : trace.attention) {
      for (std::size_t i = 0; i < attn.rows; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < attn.cols; ++j) sum += attn(i, j);
        CHECK(std::abs(sum - 1.0) < 1e-9);
      }
    }
  }
  SUBCASE("dimension mismatch is rejected") {
    MatcherModel m = MakeRandomModel(9, dim, 1, 80);
    EmbeddingMatrix clip = RandomClip(rng, 3, dim + 1);
    EnrollmentPrototype proto = FuseEnrollment(EnrollMode::kText, {1}, nullptr, m);
    CHECK_THROWS_AS(MatcherForward(clip, proto, m), ConfigError);
  }
}

TEST_CASE("prototype matching") {
  SUBCASE("identical sequences score 1") {
    EnrollmentPrototype proto = MakeFoldedOneHotPrototype({1, 2, 3}, 8);
    EmbeddingMatrix clip(3, 8);
    for (int t = 1; t <= 3; ++t) clip.At(t, t % 8) = 1.0;
    CHECK(PrototypeMatch(clip, proto) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("orthogonal clip scores 0") {
    EnrollmentPrototype proto = MakeFoldedOneHotPrototype({1, 2}, 8);
    EmbeddingMatrix clip(3, 8);
    for (int t = 1; t <= 3; ++t) clip.At(t, 5) = 1.0;
    CHECK(PrototypeMatch(clip, proto) == 0.0);
  }
  SUBCASE("zero-norm frames count as zero similarity") {
    EnrollmentPrototype proto = MakeFoldedOneHotPrototype({1}, 4);
    EmbeddingMatrix clip(1, 4);  // all-zero frame
    CHECK(PrototypeMatch(clip, proto) == 0.0);
  }
  SUBCASE("scale invariance in the clip") {
    std::mt19937 rng(31);
    for (int trial = 0; trial < 30; ++trial) {
      int dim = 4 + UniformInt(rng, 8);
      EmbeddingMatrix clip = RandomClip(rng, 2 + UniformInt(rng, 6), dim);
      EnrollmentPrototype proto = MakeFoldedOneHotPrototype(
          testing::RandomTokenSequence(rng, dim, 1 + UniformInt(rng, 4), -1), dim);
      double base = PrototypeMatch(clip, proto);
      double lambda = 0.1 + 5.0 * UniformUnit(rng);
      EmbeddingMatrix scaled = clip;
      for (double &v : scaled.values) v *= lambda;
      CHECK(PrototypeMatch(scaled, proto) == doctest::Approx(base).epsilon(1e-9));
    }
  }
  SUBCASE("positives outscore edit-distance-1 confusables") {
    PhonemeInventory inv = PhonemeInventory::Default();
    std::mt19937 rng(32);
    int wins = 0;
    const int trials = 200;
    for (int trial = 0; trial < trials; ++trial) {
      TokenSequence tokens = RandomKeywordTokens(rng, inv, 3 + UniformInt(rng, 3));
      TokenSequence confusable = MakeEditVariant(rng, tokens, inv, 1);
      SynthSpec spec;
      spec.ids = tokens;
      spec.frames_per_token = 2;
      spec.alpha = 0.1;
      spec.embed_dim = inv.Size();
      spec.seed = rng();
      auto [pp, pe] = Synthesize(spec, inv);
      (void)pp;
      spec.ids = confusable;
      spec.seed = rng();
      auto [np, ne] = Synthesize(spec, inv);
      (void)np;
      EnrollmentPrototype proto = MakeFoldedOneHotPrototype(tokens, inv.Size());
      if (PrototypeMatch(pe, proto) > PrototypeMatch(ne, proto)) ++wins;
    }
    CHECK(wins >= trials * 95 / 100);
  }
}

TEST_CASE("joint loss evaluation") {
  CHECK(EvaluateJointLoss(0.5, {}, 1, {}).utt == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(EvaluateJointLoss(1.0 - 1e-12, {}, 1, {}).utt == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));
  JointLoss loss = EvaluateJointLoss(0.5, {0.5, 0.5}, 1, {1, 0});
  CHECK(loss.phon == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(loss.total == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(EvaluateJointLoss(0.5, {0.5}, 1, {1, 0}), ConfigError);
  CHECK_THROWS_AS(EvaluateJointLoss(0.0, {}, 1, {}), ConfigError);

  std::mt19937 rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    double p = 1e-6 + (1 - 2e-6) * UniformUnit(rng);
    JointLoss l = EvaluateJointLoss(p, {p}, UniformInt(rng, 2), {UniformInt(rng, 2)});
    CHECK(l.utt >= 0.0);
    CHECK(l.phon >= 0.0);
    CHECK(l.total == l.utt + l.phon);
  }
}

TEST_CASE("low-rank merge") {
  SUBCASE("zero adapter leaves the model untouched") {
    MatcherModel m = MakeRandomModel(6, 4, 2, 50);
    LoraAdapter ad;
    ad.target = "blk0.wq";
    ad.a = Mat(4, 2);
    ad.b = Mat(2, 4);
    MatcherModel merged = LoraMerge(m, {ad});
    CHECK(merged.blocks[0].wq.data == m.blocks[0].wq.data);
  }
  SUBCASE("worked rank-1 case") {
    MatcherModel m = MakeZeroModel(3, 2, 1);
    m.blocks[0].wq(0, 0) = 1.0;
    m.blocks[0].wq(1, 1) = 1.0;
    LoraAdapter ad;
    ad.target = "blk0.wq";
    ad.a = Mat(2, 1);
    ad.a(0, 0) = 1.0;
    ad.b = Mat(1, 2);
    ad.b(0, 1) = 1.0;
    MatcherModel merged = LoraMerge(m, {ad});
    CHECK(merged.blocks[0].wq(0, 0) == 1.0);
    CHECK(merged.blocks[0].wq(0, 1) == 1.0);
    CHECK(merged.blocks[0].wq(1, 0) == 0.0);
    CHECK(merged.blocks[0].wq(1, 1) == 1.0);
    // Original untouched.
    CHECK(m.blocks[0].wq(0, 1) == 0.0);
  }
  SUBCASE("matches the dense-addition oracle") {
    std::mt19937 rng(51);
    for (int trial = 0; trial < 50; ++trial) {
      int dim = 2 + UniformInt(rng, 31);
      int rank = 1 + UniformInt(rng, std::min(dim, 8));
      MatcherModel m = MakeRandomModel(4, dim, 1, 600 + trial);
      LoraAdapter ad;
      ad.target = "blk0.wv";
      ad.a = Mat(dim, rank);
      ad.b = Mat(rank, dim);
      for (double &v : ad.a.data) v = UniformRange(rng, -1.0, 1.0);
      for (double &v : ad.b.data) v = UniformRange(rng, -1.0, 1.0);
      ad.scale = UniformRange(rng, 0.1, 2.0);
      Mat want = testing::DenseLoraAdd(m.blocks[0].wv, ad.a, ad.b, ad.scale);
      MatcherModel merged = LoraMerge(m, {ad});
      for (std::size_t i = 0; i < want.data.size(); ++i) {
        CHECK(std::abs(merged.blocks[0].wv.data[i] - want.data[i]) < 1e-12);
      }
    }
  }
  SUBCASE("two adapters on one target compose additively") {
    std::mt19937 rng(52);
    MatcherModel m = MakeRandomModel(4, 6, 1, 53);
    LoraAdapter a1, a2;
    a1.target = a2.target = "blk0.wk";
    a1.a = Mat(6, 2);
    a1.b = Mat(2, 6);
    a2.a = Mat(6, 3);
    a2.b = Mat(3, 6);
    for (double &v : a1.a.data) v = UniformRange(rng, -1.0, 1.0);
    for (double &v : a1.b.data) v = UniformRange(rng, -1.0, 1.0);
    for (double &v : a2.a.data) v = UniformRange(rng, -1.0, 1.0);
    for (double &v : a2.b.data) v = UniformRange(rng, -1.0, 1.0);
    Mat step1 = testing::DenseLoraAdd(m.blocks[0].wk, a1.a, a1.b, 1.0);
    Mat want = testing::DenseLoraAdd(step1, a2.a, a2.b, 1.0);
    MatcherModel merged = LoraMerge(m, {a1, a2});
    for (std::size_t i = 0; i < want.data.size(); ++i) {
      CHECK(std::abs(merged.blocks[0].wk.data[i] - want.data[i]) < 1e-12);
    }
  }
  SUBCASE("bad targets and shapes are rejected") {
    MatcherModel m = MakeRandomModel(4, 4, 1, 54);
    LoraAdapter ad;
    ad.target = "blk0.wo";  // only q/k/v may be patched
    ad.a = Mat(4, 1);
    ad.b = Mat(1, 4);
    CHECK_THROWS_AS(LoraMerge(m, {ad}), ConfigError);
    ad.target = "blk7.wq";
    CHECK_THROWS_AS(LoraMerge(m, {ad}), ConfigError);
    ad.target = "blk0.wq";
    ad.b = Mat(2, 4);  // rank mismatch against a
    CHECK_THROWS_AS(LoraMerge(m, {ad}), ConfigError);
  }
}

TEST_CASE("merged adapters change the forward pass like dense updates") {
  std::mt19937 rng(55);
  MatcherModel m = MakeRandomModel(8, 6, 2, 56);
  LoraAdapter ad;
  ad.target = "blk1.wq";
  ad.a = Mat(6, 2);
  ad.b = Mat(2, 6);
  for (double &v : ad.a.data) v = UniformRange(rng, -0.5, 0.5);
  for (double &v : ad.b.data) v = UniformRange(rng, -0.5, 0.5);
  ad.scale = 0.7;
  MatcherModel merged = LoraMerge(m, {ad});
  MatcherModel dense = m;
  dense.blocks[1].wq = testing::DenseLoraAdd(m.blocks[1].wq, ad.a, ad.b, ad.scale);

  EmbeddingMatrix clip = RandomClip(rng, 5, 6);
  EnrollmentPrototype proto = FuseEnrollment(EnrollMode::kText, {1, 3}, nullptr, m);
  double base_out = MatcherForward(clip, proto, m).p_utt;
  double merged_out = MatcherForward(clip, proto, merged).p_utt;
  double dense_out = MatcherForward(clip, proto, dense).p_utt;
  CHECK(merged_out != base_out);  // the update is live
  CHECK(merged_out == doctest::Approx(dense_out).epsilon(1e-12));
}

TEST_CASE("weight file round trip") {
  fs::path dir = fs::temp_directory_path();
  MatcherModel m = MakeRandomModel(7, 5, 2, 60);
  fs::path a = dir / "ps_model_a.kwsw";
  fs::path b = dir / "ps_model_b.kwsw";
  SaveWeights(a.string(), m);
  MatcherModel loaded = LoadWeights(a.string());
  CHECK(loaded.vocab == 7);
  CHECK(loaded.dim == 5);
  CHECK(loaded.blocks.size() == 2);
  SaveWeights(b.string(), loaded);
  CHECK(FileBytes(a) == FileBytes(b));

  // Loaded values are the float32-rounded originals.
  for (std::size_t i = 0; i < m.embed.data.size(); ++i) {
    CHECK(loaded.embed.data[i] == static_cast<double>(static_cast<float>(m.embed.data[i])));
  }

  SUBCASE("bad magic") {
    fs::path bad = dir / "ps_model_bad.kwsw";
    std::ofstream(bad, std::ios::binary) << "NOPE";
    CHECK_THROWS_AS(LoadWeights(bad.string()), IoError);
  }
  SUBCASE("adapter files round trip with scale") {
    LoraAdapter ad;
    ad.target = "blk1.wq";
    ad.a = Mat(5, 2);
    ad.b = Mat(2, 5);
    ad.a(0, 0) = 0.25;
    ad.b(1, 4) = -0.5;
    ad.scale = 0.125;
    fs::path path = dir / "ps_adapter.kwsw";
    SaveAdapters(path.string(), {ad});
    std::vector<LoraAdapter> back = LoadAdapters(path.string());
    REQUIRE(back.size() == 1);
    CHECK(back[0].target == "blk1.wq");
    CHECK(back[0].scale == 0.125);
    CHECK(back[0].a(0, 0) == 0.25);
    CHECK(back[0].b(1, 4) == -0.5);
  }
}
