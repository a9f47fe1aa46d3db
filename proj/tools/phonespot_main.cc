// phonespot/tools/phonespot_main.cc
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
// Command-line surface: spot, eval, synth, decode, perturb, merge-lora.
// Exit codes: 0 success, 2 usage/config error, 3 I/O error.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "phonespot/cascade.h"
#include "phonespot/common.h"
#include "phonespot/ctc_search.h"
#include "phonespot/matcher.h"
#include "phonespot/metrics.h"
#include "phonespot/phoneme.h"
#include "phonespot/posterior.h"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace phonespot {
namespace {

struct GlobalOpts {
  std::uint32_t seed = 0;
  std::string inventory_path;
  std::string lexicon_path;
  std::string out_dir;
};

PhonemeInventory LoadInventoryOrDefault(const GlobalOpts &g) {
  if (g.inventory_path.empty()) return PhonemeInventory::Default();
  return PhonemeInventory::FromFile(g.inventory_path);
}

Lexicon RequireLexicon(const GlobalOpts &g, const PhonemeInventory &inv) {
  if (g.lexicon_path.empty()) {
    throw ConfigError("this command needs --lexicon");
  }
  return LoadLexicon(g.lexicon_path, inv);
}

std::string Stem(const std::string &path) { return fs::path(path).stem().string(); }

void EnsureOutDir(const std::string &dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

void WriteManifest(const GlobalOpts &g, const std::string &command, ordered_json args,
                   const std::vector<std::string> &inputs,
                   const std::vector<std::string> &outputs) {
  if (g.out_dir.empty()) return;
  ordered_json m;
  m["tool"] = "phonespot";
  m["version"] = kVersion;
  m["command"] = command;
  m["seed"] = g.seed;
  if (!g.inventory_path.empty()) m["inventory"] = g.inventory_path;
  if (!g.lexicon_path.empty()) m["lexicon"] = g.lexicon_path;
  m["args"] = std::move(args);
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  std::ofstream out(fs::path(g.out_dir) / "manifest.json");
  if (!out) throw IoError("cannot write manifest in " + g.out_dir);
  out << m.dump(2) << "\n";
}

// Keyword config: one `text<TAB>tau1` per line, tau1 optional.
std::vector<KeywordSpec> LoadKeywordConfig(const std::string &path, const Lexicon &lexicon,
                                           const PhonemeInventory &inv) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open keyword config: " + path);
  std::vector<KeywordSpec> keywords;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    bool blank = true;
    for (char c : line) {
      if (!std::isspace(static_cast<unsigned char>(c))) { blank = false; break; }
    }
    if (blank || line[0] == '#') continue;
    std::string text = line;
    double tau1 = kDefaultTau1;
    std::size_t tab = line.find('\t');
    if (tab != std::string::npos) {
      text = line.substr(0, tab);
      std::string tail = line.substr(tab + 1);
      if (!tail.empty()) {
        try {
          tau1 = std::stod(tail);
        } catch (const std::exception &) {
          throw ConfigError("keyword config " + path + " line " + std::to_string(line_no) +
                            ": bad tau1 '" + tail + "'");
        }
      }
    }
    keywords.push_back(MakeKeywordSpec(text, G2p(text, lexicon), inv.blank_id, tau1));
  }
  if (keywords.empty()) throw ConfigError("keyword config " + path + " has no keywords");
  return keywords;
}

std::string KeywordSlug(const std::string &text) {
  std::string slug;
  for (char c : text) slug.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
  return slug;
}

// ---- spot ----------------------------------------------------------------

struct SpotOpts {
  std::vector<std::string> posteriors;
  std::string keywords_path;
  std::string stage2 = "off";
  std::string enroll_mode = "text";
  std::string weights_path;
  std::string ref_embeddings_path;
  std::string embeddings_path;
  std::string trace_dir;
  double tau2 = 0.5;
  int crop_margin = 2;
  int min_gap = 10;
  int max_run = 400;
  bool suppress_prefixes = false;
  bool fuse_geometric = false;
};

std::string SiblingEmbeddingPath(const std::string &posterior_path) {
  fs::path p(posterior_path);
  p.replace_extension(".kwse");
  return p.string();
}

int RunSpot(const GlobalOpts &g, const SpotOpts &o) {
  PhonemeInventory inv = LoadInventoryOrDefault(g);
  Lexicon lexicon = RequireLexicon(g, inv);
  PipelineConfig cfg;
  cfg.keywords = LoadKeywordConfig(o.keywords_path, lexicon, inv);
  cfg.tau2 = o.tau2;
  cfg.stage2_mode = ParseStage2Mode(o.stage2);
  cfg.enroll_mode = ParseEnrollMode(o.enroll_mode);
  cfg.crop_margin = o.crop_margin;
  cfg.min_gap = o.min_gap;
  cfg.max_run = o.max_run;
  cfg.suppress_prefixes = o.suppress_prefixes;
  cfg.fuse_geometric = o.fuse_geometric;
  cfg.Validate();

  std::optional<MatcherModel> model;
  std::optional<EmbeddingMatrix> ref;
  if (cfg.stage2_mode == Stage2Mode::kLearned) {
    if (o.weights_path.empty()) throw ConfigError("--stage2 learned needs --weights");
    model = LoadWeights(o.weights_path);
    if (cfg.enroll_mode != EnrollMode::kText) {
      if (o.ref_embeddings_path.empty()) {
        throw ConfigError("audio enrollment needs --ref-embeddings");
      }
      ref = LoadEmbeddings(o.ref_embeddings_path);
    }
  }
  if (o.posteriors.size() > 1 && !o.embeddings_path.empty()) {
    throw ConfigError("--embeddings only applies to a single posterior input");
  }
  if (!g.out_dir.empty()) EnsureOutDir(g.out_dir);
  if (!o.trace_dir.empty()) EnsureOutDir(o.trace_dir);

  CascadeStats total;
  std::vector<std::string> outputs;
  for (const std::string &path : o.posteriors) {
    PosteriorGram p = LoadPosteriors(path);
    if (p.vocab != inv.Size()) {
      throw ConfigError("posterior vocabulary " + std::to_string(p.vocab) +
                        " does not match inventory size " + std::to_string(inv.Size()));
    }
    std::optional<EmbeddingMatrix> e;
    std::vector<EnrollmentPrototype> protos;
    if (cfg.stage2_mode != Stage2Mode::kOff) {
      std::string epath = o.embeddings_path.empty() ? SiblingEmbeddingPath(path)
                                                    : o.embeddings_path;
      if (!fs::exists(epath)) {
        throw ConfigError("stage 2 needs embeddings; not found: " + epath);
      }
      e = LoadEmbeddings(epath);
      for (const KeywordSpec &kw : cfg.keywords) {
        if (cfg.stage2_mode == Stage2Mode::kPrototype) {
          protos.push_back(MakeFoldedOneHotPrototype(kw.tokens, e->dim));
        } else {
          protos.push_back(FuseEnrollment(cfg.enroll_mode, kw.tokens,
                                          ref ? &*ref : nullptr, *model));
        }
      }
    }
    PipelineResult result = RunPipeline(p, e ? &*e : nullptr, cfg,
                                        model ? &*model : nullptr,
                                        protos.empty() ? nullptr : &protos);
    total.frames += result.stats.frames;
    total.stage2_activations += result.stats.stage2_activations;
    total.detections += result.stats.detections;

    if (!o.trace_dir.empty()) {
      for (const KeywordSpec &kw : cfg.keywords) {
        ScoreTrack track = ComputeScoreSequence(p, kw);
        fs::path tp = fs::path(o.trace_dir) / (Stem(path) + "." + KeywordSlug(kw.text) + ".csv");
        std::ofstream ts(tp);
        if (!ts) throw IoError("cannot write trace " + tp.string());
        ts << "frame,score,origin\n";
        ts.precision(12);
        for (std::size_t t = 0; t < track.scores.size(); ++t) {
          ts << (t + 1) << "," << track.scores[t] << "," << track.origins[t] << "\n";
        }
      }
    }

    std::ostringstream lines;
    for (const Detection &d : result.detections) {
      lines << DetectionToJson(d, p.frame_period) << "\n";
    }
    if (g.out_dir.empty()) {
      std::cout << lines.str();
    } else {
      fs::path out_path = fs::path(g.out_dir) / (Stem(path) + ".detections.jsonl");
      std::ofstream out(out_path);
      if (!out) throw IoError("cannot write " + out_path.string());
      out << lines.str();
      outputs.push_back(out_path.string());
    }
  }
  if (g.out_dir.empty()) {
    std::cerr << StatsToJson(total) << "\n";
  } else {
    fs::path stats_path = fs::path(g.out_dir) / "stats.json";
    std::ofstream out(stats_path);
    if (!out) throw IoError("cannot write " + stats_path.string());
    out << StatsToJson(total) << "\n";
    outputs.push_back(stats_path.string());
    ordered_json args;
    args["keywords"] = o.keywords_path;
    args["stage2"] = o.stage2;
    args["enroll_mode"] = o.enroll_mode;
    args["tau2"] = o.tau2;
    args["crop_margin"] = o.crop_margin;
    args["min_gap"] = o.min_gap;
    args["max_run"] = o.max_run;
    args["suppress_prefixes"] = o.suppress_prefixes;
    args["fuse_geometric"] = o.fuse_geometric;
    if (!o.weights_path.empty()) args["weights"] = o.weights_path;
    if (!o.ref_embeddings_path.empty()) args["ref_embeddings"] = o.ref_embeddings_path;
    WriteManifest(g, "spot", std::move(args), o.posteriors, outputs);
  }
  return 0;
}

// ---- eval ----------------------------------------------------------------

struct EvalOpts {
  std::string trials_path;
  std::string detections_dir;
  std::string labels_path;
  std::string det_out;
  double hours = 1.0;
  std::vector<double> far_targets = {0.05, 0.5, 1.0};
};

struct LabelRow {
  std::string stem;
  int label = 0;
  std::string keyword;
  std::string phonemes;
};

std::vector<LabelRow> LoadLabels(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open labels file: " + path);
  std::vector<LabelRow> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first && line.rfind("stem,", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    std::vector<std::string> fields;
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) fields.push_back(cell);
    if (fields.size() < 3) throw ConfigError("bad labels row: " + line);
    LabelRow row;
    row.stem = fields[0];
    try {
      row.label = std::stoi(fields[1]);
    } catch (const std::exception &) {
      throw ConfigError("bad label in row: " + line);
    }
    row.keyword = fields[2];
    if (fields.size() > 3) row.phonemes = fields[3];
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError("labels file " + path + " is empty");
  return rows;
}

std::vector<Trial> LoadTrialsCsv(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trials file: " + path);
  std::vector<Trial> trials;
  std::string line;
  bool first = true;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first && line == "label,score") {
      first = false;
      continue;
    }
    first = false;
    std::size_t comma = line.find(',');
    if (comma == std::string::npos) {
      throw ConfigError("trials " + path + " line " + std::to_string(line_no) +
                        ": expected `label,score`");
    }
    std::string label = line.substr(0, comma);
    Trial t;
    if (label == "1") t.positive = true;
    else if (label == "0") t.positive = false;
    else throw ConfigError("trials " + path + " line " + std::to_string(line_no) +
                           ": label must be 0 or 1");
    try {
      t.score = std::stod(line.substr(comma + 1));
    } catch (const std::exception &) {
      throw ConfigError("trials " + path + " line " + std::to_string(line_no) + ": bad score");
    }
    trials.push_back(t);
  }
  return trials;
}

double MaxFinalScore(const std::string &jsonl_path, const std::string &keyword) {
  std::ifstream in(jsonl_path);
  if (!in) throw IoError("cannot open detections file: " + jsonl_path);
  double best = 0.0;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception &) {
      throw IoError("bad JSON line in " + jsonl_path);
    }
    if (j.value("keyword", "") != keyword) continue;
    best = std::max(best, j.value("final", 0.0));
  }
  return best;
}

int RunEval(const GlobalOpts &g, const EvalOpts &o) {
  std::vector<Trial> trials;
  if (!o.trials_path.empty()) {
    trials = LoadTrialsCsv(o.trials_path);
  } else if (!o.detections_dir.empty() && !o.labels_path.empty()) {
    for (const LabelRow &row : LoadLabels(o.labels_path)) {
      fs::path jsonl = fs::path(o.detections_dir) / (row.stem + ".detections.jsonl");
      trials.push_back({row.label == 1, MaxFinalScore(jsonl.string(), row.keyword)});
    }
  } else {
    throw ConfigError("eval needs --trials or (--detections-dir and --labels)");
  }
  std::vector<double> pos, neg;
  for (const Trial &t : trials) (t.positive ? pos : neg).push_back(t.score);
  if (pos.empty()) throw ConfigError("no positive trials");
  if (neg.empty()) throw ConfigError("no negative trials");

  double auroc = Auroc(trials);
  double eer = Eer(trials);
  std::printf("trials      %zu (%zu pos, %zu neg)\n", trials.size(), pos.size(), neg.size());
  std::printf("AUROC       %.2f\n", 100.0 * auroc);
  std::printf("EER         %.2f\n", 100.0 * eer);
  std::printf("Recall @ FAR/h over %.2f h:\n", o.hours);
  for (const auto &[target, recall] : RecallAtFar(pos, neg, o.hours, o.far_targets)) {
    std::printf("  %-8.3g  %.2f\n", target, 100.0 * recall);
  }
  std::string det_out = o.det_out;
  if (det_out.empty() && !g.out_dir.empty()) {
    EnsureOutDir(g.out_dir);
    det_out = (fs::path(g.out_dir) / "det.csv").string();
  }
  if (!det_out.empty()) {
    std::ofstream out(det_out);
    if (!out) throw IoError("cannot write DET curve to " + det_out);
    out << "threshold,far_per_hour,recall\n";
    out.precision(12);
    for (const DetPoint &pt : DetCurve(pos, neg, o.hours)) {
      out << pt.threshold << "," << pt.far_per_hour << "," << pt.recall << "\n";
    }
    std::printf("DET curve written to %s\n", det_out.c_str());
  }
  if (!g.out_dir.empty()) {
    ordered_json args;
    if (!o.trials_path.empty()) args["trials"] = o.trials_path;
    if (!o.detections_dir.empty()) args["detections_dir"] = o.detections_dir;
    if (!o.labels_path.empty()) args["labels"] = o.labels_path;
    args["hours"] = o.hours;
    args["far_targets"] = o.far_targets;
    WriteManifest(g, "eval", std::move(args), {}, {});
  }
  return 0;
}

// ---- synth ---------------------------------------------------------------

struct SynthOpts {
  std::string keyword;
  int pos = 5;
  int neg = 5;
  int hard_negatives = 0;  // 0: random negatives; k>0: exact edit distance k
  double alpha = 0.1;
  int frames_per_token = 2;
  int blank_frames = 0;
  int lead = 5;
  int tail = 5;
  int dim = 16;
  bool csv = false;
};

int RunSynth(const GlobalOpts &g, const SynthOpts &o) {
  if (g.out_dir.empty()) throw ConfigError("synth needs --out-dir");
  if (o.keyword.empty()) throw ConfigError("synth needs --keyword");
  PhonemeInventory inv = LoadInventoryOrDefault(g);
  Lexicon lexicon = RequireLexicon(g, inv);
  TokenSequence tokens = G2p(o.keyword, lexicon);
  EnsureOutDir(g.out_dir);
  std::mt19937 rng(g.seed);

  std::ostringstream labels;
  labels << "stem,label,keyword,phonemes\n";
  std::vector<std::string> outputs;

  auto emit = [&](const std::string &stem, const TokenSequence &ids, int label) {
    SynthSpec spec;
    spec.ids = ids;
    spec.frames_per_token = o.frames_per_token + UniformInt(rng, 2);
    spec.blank_frames = o.blank_frames;
    spec.lead_frames = 1 + UniformInt(rng, std::max(o.lead, 1));
    spec.tail_frames = 1 + UniformInt(rng, std::max(o.tail, 1));
    spec.alpha = o.alpha;
    spec.seed = rng();
    spec.embed_dim = o.dim;
    auto [p, e] = Synthesize(spec, inv);
    fs::path base = fs::path(g.out_dir) / stem;
    if (o.csv) {
      SavePosteriorsCsv(base.string() + ".kwsp", p);
      SaveEmbeddingsCsv(base.string() + ".kwse", e);
    } else {
      SavePosteriors(base.string() + ".kwsp", p);
      SaveEmbeddings(base.string() + ".kwse", e);
    }
    outputs.push_back(base.string() + ".kwsp");
    outputs.push_back(base.string() + ".kwse");
    labels << stem << "," << label << "," << o.keyword << "," << TokensToLabels(ids, inv)
           << "\n";
  };

  char stem[64];
  for (int i = 0; i < o.pos; ++i) {
    std::snprintf(stem, sizeof(stem), "pos_%03d", i);
    emit(stem, tokens, 1);
  }
  for (int i = 0; i < o.neg; ++i) {
    std::snprintf(stem, sizeof(stem), "neg_%03d", i);
    TokenSequence ids;
    if (o.hard_negatives > 0) {
      ids = MakeEditVariant(rng, tokens, inv, o.hard_negatives);
    } else {
      do {
        ids = RandomKeywordTokens(rng, inv, static_cast<int>(tokens.size()));
      } while (ids == tokens);
    }
    emit(stem, ids, 0);
  }

  fs::path labels_path = fs::path(g.out_dir) / "labels.csv";
  std::ofstream out(labels_path);
  if (!out) throw IoError("cannot write " + labels_path.string());
  out << labels.str();
  outputs.push_back(labels_path.string());

  ordered_json args;
  args["keyword"] = o.keyword;
  args["pos"] = o.pos;
  args["neg"] = o.neg;
  args["hard_negatives"] = o.hard_negatives;
  args["alpha"] = o.alpha;
  args["frames_per_token"] = o.frames_per_token;
  args["blank_frames"] = o.blank_frames;
  args["lead"] = o.lead;
  args["tail"] = o.tail;
  args["dim"] = o.dim;
  args["csv"] = o.csv;
  WriteManifest(g, "synth", std::move(args), {}, outputs);
  std::printf("wrote %d positive and %d negative pairs to %s\n", o.pos, o.neg,
              g.out_dir.c_str());
  return 0;
}

// ---- decode --------------------------------------------------------------

struct DecodeOpts {
  std::string posteriors;
  std::string ref_text;
  std::string labels_path;
  std::string dir;
};

int RunDecode(const GlobalOpts &g, const DecodeOpts &o) {
  PhonemeInventory inv = LoadInventoryOrDefault(g);
  if (!o.labels_path.empty()) {
    if (o.dir.empty()) throw ConfigError("decode --labels needs --dir");
    std::vector<std::pair<TokenSequence, TokenSequence>> pairs;
    for (const LabelRow &row : LoadLabels(o.labels_path)) {
      if (row.phonemes.empty()) {
        throw ConfigError("labels row for " + row.stem + " has no phoneme column");
      }
      PosteriorGram p = LoadPosteriors((fs::path(o.dir) / (row.stem + ".kwsp")).string());
      pairs.emplace_back(LabelsToTokens(row.phonemes, inv), GreedyDecode(p, inv));
    }
    std::printf("pairs  %zu\n", pairs.size());
    std::printf("P-WER  %.2f\n", 100.0 * PhonemeErrorRate(pairs));
    return 0;
  }
  if (o.posteriors.empty()) throw ConfigError("decode needs --posteriors or --labels");
  PosteriorGram p = LoadPosteriors(o.posteriors);
  TokenSequence hyp = GreedyDecode(p, inv);
  std::printf("%s\n", TokensToLabels(hyp, inv).c_str());
  if (!o.ref_text.empty()) {
    Lexicon lexicon = RequireLexicon(g, inv);
    TokenSequence ref = G2p(o.ref_text, lexicon);
    EditCounts c = EditDistance(ref, hyp);
    std::printf("ref    %s\n", TokensToLabels(ref, inv).c_str());
    std::printf("S=%d I=%d D=%d\n", c.sub, c.ins, c.del);
    std::printf("P-WER  %.2f\n", 100.0 * PhonemeErrorRate({{ref, hyp}}));
  }
  return 0;
}

// ---- perturb ---------------------------------------------------------------

struct PerturbOpts {
  std::string posteriors;
  std::string detections;
  std::string out;
  double alpha = -1.0;
  double fraction = -1.0;
  int total_frames = 0;
  double frame_period = 0.01;
};

int RunPerturb(const GlobalOpts &g, const PerturbOpts &o) {
  if (o.out.empty()) throw ConfigError("perturb needs --out");
  if (!o.posteriors.empty()) {
    if (o.alpha < 0.0) throw ConfigError("posterior perturbation needs --alpha");
    PosteriorGram p = LoadPosteriors(o.posteriors);
    SavePosteriors(o.out, PerturbUniform(p, o.alpha));
    std::printf("wrote %s\n", o.out.c_str());
    return 0;
  }
  if (!o.detections.empty()) {
    if (o.fraction < 0.0) throw ConfigError("timestamp perturbation needs --fraction");
    if (o.total_frames < 1) throw ConfigError("timestamp perturbation needs --total-frames");
    std::ifstream in(o.detections);
    if (!in) throw IoError("cannot open detections file: " + o.detections);
    std::ofstream out(o.out);
    if (!out) throw IoError("cannot write " + o.out);
    std::string line;
    std::uint32_t line_index = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::ordered_json j;
      try {
        j = nlohmann::ordered_json::parse(line);
      } catch (const std::exception &) {
        throw IoError("bad JSON line in " + o.detections);
      }
      CandidateSegment seg;
      seg.start_frame = j.value("start_frame", 0);
      seg.end_frame = j.value("end_frame", 0);
      seg.s1 = j.value("s1", 0.0);
      CandidateSegment shifted =
          PerturbTimestamps(seg, o.fraction, o.total_frames, g.seed + line_index);
      j["start_frame"] = shifted.start_frame;
      j["end_frame"] = shifted.end_frame;
      j["start_s"] = (shifted.start_frame - 1) * o.frame_period;
      j["end_s"] = shifted.end_frame * o.frame_period;
      out << j.dump() << "\n";
      ++line_index;
    }
    std::printf("wrote %s\n", o.out.c_str());
    return 0;
  }
  throw ConfigError("perturb needs --posteriors or --detections");
}

// ---- merge-lora ------------------------------------------------------------

struct MergeOpts {
  std::string base;
  std::string adapter;
  std::string out;
};

int RunMergeLora(const GlobalOpts &, const MergeOpts &o) {
  MatcherModel model = LoadWeights(o.base);
  std::vector<LoraAdapter> adapters = LoadAdapters(o.adapter);
  MatcherModel merged = LoraMerge(model, adapters);
  SaveWeights(o.out, merged);
  std::printf("merged %zu adapter(s) into %s\n", adapters.size(), o.out.c_str());
  return 0;
}

}  // namespace
}  // namespace phonespot

int main(int argc, char **argv) {
  using namespace phonespot;
  CLI::App app{"phonespot: streaming keyword spotting on phoneme posteriorgrams"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(kVersion));

  GlobalOpts g;
  app.add_option("--seed", g.seed, "seed for all randomized steps");
  app.add_option("--inventory", g.inventory_path, "phoneme inventory file (default built-in)");
  app.add_option("--lexicon", g.lexicon_path, "pronunciation lexicon (word<TAB>phonemes)");
  app.add_option("--out-dir", g.out_dir, "output directory (manifest written here)");

  SpotOpts spot;
  CLI::App *spot_cmd = app.add_subcommand("spot", "run the two-stage detector");
  spot_cmd->add_option("--posteriors", spot.posteriors, "posterior file(s)")->required();
  spot_cmd->add_option("--keywords", spot.keywords_path, "keyword config file")->required();
  spot_cmd->add_option("--stage2", spot.stage2, "off|prototype|learned");
  spot_cmd->add_option("--enroll-mode", spot.enroll_mode, "text|concat|cross_attention");
  spot_cmd->add_option("--weights", spot.weights_path, "matcher weights (KWSW)");
  spot_cmd->add_option("--ref-embeddings", spot.ref_embeddings_path,
                       "enrollment audio embeddings (KWSE)");
  spot_cmd->add_option("--embeddings", spot.embeddings_path,
                       "embedding file (default: posterior path with .kwse)");
  spot_cmd->add_option("--tau2", spot.tau2, "stage-2 decision threshold");
  spot_cmd->add_option("--crop-margin", spot.crop_margin, "frames around the candidate");
  spot_cmd->add_option("--min-gap", spot.min_gap, "frames below tau1 that close a run");
  spot_cmd->add_option("--max-run", spot.max_run, "candidate length cap in frames");
  spot_cmd->add_flag("--suppress-prefixes", spot.suppress_prefixes,
                     "drop prefix keywords beaten by a longer match");
  spot_cmd->add_flag("--fuse-geometric", spot.fuse_geometric,
                     "decision score sqrt(s1*s2) instead of s2");
  spot_cmd->add_option("--trace-dir", spot.trace_dir, "write frame,score,origin CSVs here");

  EvalOpts eval;
  CLI::App *eval_cmd = app.add_subcommand("eval", "score trials (AUROC/EER/Recall@FAR/DET)");
  eval_cmd->add_option("--trials", eval.trials_path, "CSV of label,score");
  eval_cmd->add_option("--detections-dir", eval.detections_dir,
                       "directory of <stem>.detections.jsonl");
  eval_cmd->add_option("--labels", eval.labels_path, "labels.csv from synth");
  eval_cmd->add_option("--hours", eval.hours, "negative audio hours");
  eval_cmd->add_option("--far-targets", eval.far_targets, "false alarms per hour");
  eval_cmd->add_option("--det-out", eval.det_out, "DET curve CSV path");

  SynthOpts synth;
  CLI::App *synth_cmd = app.add_subcommand("synth", "generate a synthetic eval corpus");
  synth_cmd->add_option("--keyword", synth.keyword, "keyword text")->required();
  synth_cmd->add_option("--pos", synth.pos, "positive utterances");
  synth_cmd->add_option("--neg", synth.neg, "negative utterances");
  synth_cmd->add_option("--hard-negatives", synth.hard_negatives,
                        "edit distance of confusable negatives (0: random)");
  synth_cmd->add_option("--alpha", synth.alpha, "posterior flattening / embedding noise");
  synth_cmd->add_option("--frames-per-token", synth.frames_per_token, "nominal frames per token");
  synth_cmd->add_option("--blank-frames", synth.blank_frames, "separator frames between tokens");
  synth_cmd->add_option("--lead", synth.lead, "max leading blank frames");
  synth_cmd->add_option("--tail", synth.tail, "max trailing blank frames");
  synth_cmd->add_option("--dim", synth.dim, "embedding dimension");
  synth_cmd->add_flag("--csv", synth.csv, "write CSV instead of binary files");

  DecodeOpts decode;
  CLI::App *decode_cmd = app.add_subcommand("decode", "greedy decode / P-WER");
  decode_cmd->add_option("--posteriors", decode.posteriors, "posterior file");
  decode_cmd->add_option("--ref", decode.ref_text, "reference text (needs --lexicon)");
  decode_cmd->add_option("--labels", decode.labels_path, "labels.csv for corpus P-WER");
  decode_cmd->add_option("--dir", decode.dir, "directory holding <stem>.kwsp");

  PerturbOpts perturb;
  CLI::App *perturb_cmd = app.add_subcommand("perturb", "perturb posteriors or timestamps");
  perturb_cmd->add_option("--posteriors", perturb.posteriors, "posterior file to flatten");
  perturb_cmd->add_option("--alpha", perturb.alpha, "uniform interpolation weight");
  perturb_cmd->add_option("--detections", perturb.detections, "detections JSONL to shift");
  perturb_cmd->add_option("--fraction", perturb.fraction, "timestamp shift fraction");
  perturb_cmd->add_option("--total-frames", perturb.total_frames, "stream length in frames");
  perturb_cmd->add_option("--frame-period", perturb.frame_period, "seconds per frame");
  perturb_cmd->add_option("--out", perturb.out, "output path")->required();

  MergeOpts merge;
  CLI::App *merge_cmd = app.add_subcommand("merge-lora", "fold low-rank adapters into weights");
  merge_cmd->add_option("--base", merge.base, "base weights (KWSW)")->required();
  merge_cmd->add_option("--adapter", merge.adapter, "adapter file (KWSW)")->required();
  merge_cmd->add_option("--out", merge.out, "merged output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (spot_cmd->parsed()) return RunSpot(g, spot);
    if (eval_cmd->parsed()) return RunEval(g, eval);
    if (synth_cmd->parsed()) return RunSynth(g, synth);
    if (decode_cmd->parsed()) return RunDecode(g, decode);
    if (perturb_cmd->parsed()) return RunPerturb(g, perturb);
    if (merge_cmd->parsed()) return RunMergeLora(g, merge);
  } catch (const IoError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
