#pragma once

// Glue shared by the command-line tool, the acceptance harness and the
// Python bindings: dataset construction and persistence, batch scoring.

#include "impchat/config.hpp"
#include "impchat/corpus.hpp"
#include "impchat/lexindex.hpp"
#include "impchat/metrics.hpp"
#include "impchat/model.hpp"
#include "impchat/trainer.hpp"

#include <map>
#include <string>
#include <vector>

namespace impchat {

struct Dataset {
  Splits splits;
  Vocab vocab;
  std::vector<PersonaManifest> personas;
  LexIndex index;
  BuildStats build_stats;
  SampleStats sample_stats;
  std::string config_hash;
};

/// Histories -> index over the response pool -> samples -> user split ->
/// vocabulary (built from the training split).  Training users contribute
/// their `queries_per_user` most recent queries, validation and test users
/// their `eval_queries_per_user` most recent.
Dataset build_dataset(const std::vector<DialoguePair>& raw, const RunConfig& cfg);

/// Synthetic corpus generated from cfg.synth and cfg.seed, then build_dataset.
Dataset build_synthetic_dataset(const RunConfig& cfg, const std::vector<PersonaManifest>& pinned = {});

/// Writes train/valid/test.jsonl, vocab.txt, index.bin, personas.json and
/// manifest.json into dir.
void save_dataset(const std::string& dir, const Dataset& ds, const RunConfig& cfg);

struct LoadedDataset {
  std::vector<Sample> train, valid, test;
  Vocab vocab;
  std::string config_hash;
  std::string vocab_hash;
  std::map<std::string, std::string> config;  // RunConfig that built the dataset
};

/// Throws std::runtime_error when files are missing or the vocab does not
/// match the recorded hash.
LoadedDataset load_dataset(const std::string& dir);

/// Scores every candidate of every sample.  With workers > 1 samples are
/// split across threads; output order and values do not depend on workers.
std::vector<RankedSample> score_samples(Model& model, const std::vector<EncodedSample>& samples, int workers = 1);

/// Uniform random scores.
std::vector<RankedSample> random_scores(const std::vector<Sample>& samples, std::uint64_t seed);
/// BM25 of each candidate against the query, using an index over the candidates.
std::vector<RankedSample> bm25_scores(const std::vector<Sample>& samples);

std::vector<std::string> sample_ids(const std::vector<Sample>& samples);

/// Model-config variants compared by the ablation: "full", "no-style",
/// "no-pref", "no-multihop".
const std::vector<std::string>& ablation_variants();
/// Applies a variant name to a config; throws on unknown names.
ModelConfig variant_config(ModelConfig base, const std::string& variant);

struct VariantResult {
  std::string variant;
  TrainResult training;
  RankReport report;
};

/// Trains a fresh model (seeded with `seed`) on train/valid and evaluates it on test.
VariantResult train_and_evaluate(const ModelConfig& cfg, const std::string& variant, const Vocab& vocab,
                                 const std::vector<Sample>& train_set, const std::vector<Sample>& valid_set,
                                 const std::vector<Sample>& test_set, std::uint64_t seed, int workers = 1);

struct SweepRow {
  int history = 0;
  RankReport report;
  double seconds_per_1k = 0;  // scoring wall clock, best of the repeats
};

/// Re-scores `samples` keeping only the last t history pairs for every t.
/// Throws std::invalid_argument when t is outside [1, model history].
std::vector<SweepRow> sweep_history(Model& model, const std::vector<Sample>& samples, const Vocab& vocab,
                                    const std::vector<int>& lengths, int workers = 1, int repeats = 1);

}  // namespace impchat
