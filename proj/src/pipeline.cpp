#include "impchat/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <algorithm>
#include <chrono>
#include <limits>
#include <functional>
#include <map>
#include <thread>

namespace impchat {

using nlohmann::json;

Dataset build_dataset(const std::vector<DialoguePair>& raw, const RunConfig& cfg) {
  Dataset ds;
  ds.config_hash = cfg.hash();
  auto histories = build_histories(raw, cfg.min_history, cfg.max_words, &ds.build_stats);
  ds.index = LexIndex::build(response_pool(histories));

  SampleOptions opts;
  opts.n_candidates = cfg.candidates;
  opts.history = cfg.model.history;
  opts.queries_per_user = std::max({1, cfg.queries_per_user, cfg.eval_queries_per_user});
  opts.seed = cfg.seed;
  auto samples = make_samples(histories, ds.index, opts, &ds.sample_stats);
  Splits split = split_by_user(samples, 0.8, 0.1, cfg.seed);

  // Keeps each user's `keep` most recent queries.
  auto most_recent = [](const std::vector<Sample>& in, int keep) {
    std::map<std::string, std::vector<std::int64_t>> stamps;
    for (const auto& s : in) stamps[s.user_id].push_back(s.query.timestamp);
    for (auto& [u, ts] : stamps) std::sort(ts.begin(), ts.end(), std::greater<>());
    std::vector<Sample> out;
    for (const auto& s : in) {
      const auto& ts = stamps[s.user_id];
      const size_t k = std::min(ts.size(), static_cast<size_t>(std::max(keep, 1)));
      if (s.query.timestamp >= ts[k - 1]) out.push_back(s);
    }
    return out;
  };
  ds.splits.train = most_recent(split.train, cfg.queries_per_user);
  ds.splits.valid = most_recent(split.valid, cfg.eval_queries_per_user);
  ds.splits.test = most_recent(split.test, cfg.eval_queries_per_user);

  std::vector<const Utterance*> utts;
  for (const auto& s : ds.splits.train) {
    utts.push_back(&s.query);
    for (const auto& c : s.candidates) utts.push_back(&c.response);
    for (const auto& p : s.history) {
      utts.push_back(&p.post);
      utts.push_back(&p.response);
    }
  }
  ds.vocab = Vocab::build(utts, cfg.min_freq);
  return ds;
}

Dataset build_synthetic_dataset(const RunConfig& cfg, const std::vector<PersonaManifest>& pinned) {
  auto corpus = generate_synthetic_corpus(cfg.synth, cfg.seed, pinned);
  Dataset ds = build_dataset(corpus.pairs, cfg);
  ds.personas = std::move(corpus.personas);
  return ds;
}

void save_dataset(const std::string& dir, const Dataset& ds, const RunConfig& cfg) {
  std::filesystem::create_directories(dir);
  write_samples_jsonl(dir + "/train.jsonl", ds.splits.train);
  write_samples_jsonl(dir + "/valid.jsonl", ds.splits.valid);
  write_samples_jsonl(dir + "/test.jsonl", ds.splits.test);
  ds.vocab.save(dir + "/vocab.txt");
  ds.index.save(dir + "/index.bin");
  if (!ds.personas.empty()) {
    std::ofstream p(dir + "/personas.json");
    p << personas_to_json(ds.personas).dump(2) << '\n';
  }
  json manifest = {{"config_hash", ds.config_hash},
                   {"vocab_hash", ds.vocab.hash()},
                   {"vocab_size", ds.vocab.size()},
                   {"config", cfg.to_map()},
                   {"counts", {{"train", ds.splits.train.size()}, {"valid", ds.splits.valid.size()}, {"test", ds.splits.test.size()}}},
                   {"dropped",
                    {{"short_retrieval", ds.sample_stats.dropped_short_retrieval},
                     {"no_history", ds.sample_stats.dropped_no_history},
                     {"filtered_users", ds.build_stats.filtered_users},
                     {"missing_user", ds.build_stats.skipped_missing_user}}},
                   {"mean_non_personalized", ds.sample_stats.mean_non_personalized},
                   {"mean_retrieved", ds.sample_stats.mean_retrieved}};
  std::ofstream m(dir + "/manifest.json");
  m << manifest.dump(2) << '\n';
}

LoadedDataset load_dataset(const std::string& dir) {
  for (const char* f : {"train.jsonl", "valid.jsonl", "test.jsonl", "vocab.txt", "manifest.json"})
    if (!std::filesystem::exists(dir + "/" + f)) throw std::runtime_error("dataset: missing " + dir + "/" + f);
  LoadedDataset out;
  std::ifstream m(dir + "/manifest.json");
  const json manifest = json::parse(m);
  out.config_hash = manifest.at("config_hash").get<std::string>();
  out.vocab_hash = manifest.at("vocab_hash").get<std::string>();
  if (manifest.contains("config")) out.config = manifest.at("config").get<std::map<std::string, std::string>>();
  out.vocab = Vocab::load(dir + "/vocab.txt");
  if (out.vocab.hash() != out.vocab_hash) throw std::runtime_error("dataset: vocab.txt does not match manifest hash");
  out.train = read_samples_jsonl(dir + "/train.jsonl");
  out.valid = read_samples_jsonl(dir + "/valid.jsonl");
  out.test = read_samples_jsonl(dir + "/test.jsonl");
  return out;
}

std::vector<RankedSample> score_samples(Model& model, const std::vector<EncodedSample>& samples, int workers) {
  std::vector<RankedSample> out(samples.size());
  auto run = [&](size_t begin, size_t step) {
    for (size_t i = begin; i < samples.size(); i += step) out[i] = {model.score(samples[i]), samples[i].labels};
  };
  const size_t n = static_cast<size_t>(std::clamp(workers, 1, 256));
  if (n == 1) {
    run(0, 1);
    return out;
  }
  // Scoring only reads parameters; every thread owns its graphs.
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> threads;
  for (size_t w = 0; w < n; ++w)
    threads.emplace_back([&, w] {
      try {
        run(w, n);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::vector<RankedSample> random_scores(const std::vector<Sample>& samples, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<RankedSample> out;
  for (const auto& s : samples) {
    RankedSample rs;
    for (const auto& c : s.candidates) {
      rs.scores.push_back(rng.uniform());
      rs.labels.push_back(static_cast<int>(c.label));
    }
    out.push_back(std::move(rs));
  }
  return out;
}

std::vector<RankedSample> bm25_scores(const std::vector<Sample>& samples) {
  std::vector<RankedSample> out;
  for (const auto& s : samples) {
    std::vector<std::pair<Utterance, std::string>> docs;
    for (const auto& c : s.candidates) docs.emplace_back(c.response, c.response.user_id);
    const LexIndex idx = LexIndex::build(docs);
    RankedSample rs;
    for (size_t i = 0; i < s.candidates.size(); ++i) {
      rs.scores.push_back(idx.score(s.query.words, static_cast<int>(i)));
      rs.labels.push_back(static_cast<int>(s.candidates[i].label));
    }
    out.push_back(std::move(rs));
  }
  return out;
}

std::vector<std::string> sample_ids(const std::vector<Sample>& samples) {
  std::vector<std::string> ids;
  std::map<std::string, int> seen;
  for (const auto& s : samples) ids.push_back(s.user_id + "#" + std::to_string(seen[s.user_id]++));
  return ids;
}

const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> names{"full", "no-style", "no-pref", "no-multihop"};
  return names;
}

ModelConfig variant_config(ModelConfig base, const std::string& variant) {
  if (variant == "no-style") base.use_style = false;
  else if (variant == "no-pref") base.use_pref = false;
  else if (variant == "no-multihop") base.use_multihop = false;
  else if (variant != "full") throw std::invalid_argument("unknown variant '" + variant + "'");
  return base;
}

VariantResult train_and_evaluate(const ModelConfig& cfg, const std::string& variant, const Vocab& vocab,
                                 const std::vector<Sample>& train_set, const std::vector<Sample>& valid_set,
                                 const std::vector<Sample>& test_set, std::uint64_t seed, int workers) {
  const ModelConfig mc = variant_config(cfg, variant);
  Model model(mc, vocab.size(), seed);
  VariantResult r;
  r.variant = variant;
  r.training = train(model, encode_samples(train_set, vocab, mc.max_len, mc.history),
                     encode_samples(valid_set, vocab, mc.max_len, mc.history), seed);
  r.report = evaluate(score_samples(model, encode_samples(test_set, vocab, mc.max_len, mc.history), workers),
                      sample_ids(test_set));
  return r;
}

std::vector<SweepRow> sweep_history(Model& model, const std::vector<Sample>& samples, const Vocab& vocab,
                                    const std::vector<int>& lengths, int workers, int repeats) {
  std::vector<SweepRow> rows;
  for (int t : lengths) {
    if (t < 1 || t > model.cfg.history)
      throw std::invalid_argument("sweep: history length " + std::to_string(t) + " outside [1, " +
                                  std::to_string(model.cfg.history) + "] supported by the model");
    const auto encoded = encode_samples(samples, vocab, model.cfg.max_len, t);
    SweepRow row;
    row.history = t;
    double best = std::numeric_limits<double>::infinity();
    std::vector<RankedSample> scored;
    for (int r = 0; r < std::max(repeats, 1); ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      scored = score_samples(model, encoded, workers);
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    row.report = evaluate(scored, sample_ids(samples));
    row.seconds_per_1k = samples.empty() ? 0.0 : best * 1000.0 / static_cast<double>(samples.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace impchat
