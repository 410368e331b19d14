#include "impchat/cli.hpp"

#include "impchat/pipeline.hpp"
#include "impchat/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

namespace impchat {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CliError : std::runtime_error {
  int code;
  CliError(int c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

// Options shared by every subcommand.
struct Common {
  std::string config_file;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  int workers = 1;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* workers_opt = nullptr;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_file, "key = value config file");
  sub->add_option("--set", c.sets, "override one config key (key=value), repeatable");
  c.seed_opt = sub->add_option("--seed", c.seed, "random seed (falls back to IMPCHAT_SEED)");
  c.workers_opt = sub->add_option("--workers", c.workers, "threads for scoring (default 1)")->check(CLI::PositiveNumber);
}

// Precedence: base map < config file < --set < explicit flags (applied by callers).
// The seed falls back to IMPCHAT_SEED when neither --seed nor a config key set it.
RunConfig resolve_config(const std::map<std::string, std::string>& base, const Common& c) {
  RunConfig cfg;
  try {
    for (const auto& [k, v] : base) cfg.set(k, v);
    bool seed_set = false;
    if (!c.config_file.empty()) {
      if (!fs::exists(c.config_file)) throw CliError(exit_bad_input, "config file not found: " + c.config_file);
      // A sentinel tells whether the file assigned the seed.
      RunConfig probe;
      probe.seed = ~std::uint64_t{0};
      load_config_file(c.config_file, probe);
      seed_set = probe.seed != ~std::uint64_t{0};
      load_config_file(c.config_file, cfg);
    }
    for (const auto& kv : c.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw CliError(exit_bad_input, "--set expects key=value, got '" + kv + "'");
      const std::string key = kv.substr(0, eq);
      cfg.set(key, kv.substr(eq + 1));
      if (key == "seed") seed_set = true;
    }
    if (c.seed_opt->count() > 0) {
      cfg.seed = c.seed;
    } else if (!seed_set) {
      if (const char* env = std::getenv("IMPCHAT_SEED"); env && *env) cfg.set("seed", env);
    }
    if (c.workers_opt->count() > 0) cfg.workers = c.workers;
  } catch (const std::invalid_argument& e) {
    throw CliError(exit_bad_input, e.what());
  }
  return cfg;
}

LoadedDataset open_dataset(const std::string& dir) {
  if (dir.empty() || !fs::is_directory(dir)) throw CliError(exit_bad_input, "dataset directory not found: " + dir);
  try {
    return load_dataset(dir);
  } catch (const std::exception& e) {
    throw CliError(exit_bad_input, e.what());
  }
}

Model open_checkpoint(const std::string& dir, CheckpointInfo& info) {
  if (dir.empty() || !fs::is_directory(dir)) throw CliError(exit_bad_input, "checkpoint directory not found: " + dir);
  try {
    return load_checkpoint(dir, &info);
  } catch (const std::exception& e) {
    throw CliError(exit_bad_input, e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream f(path);
  if (!f) throw CliError(exit_failure, "cannot write " + path);
  f << text;
}

std::string config_text(const RunConfig& cfg) {
  std::string s;
  for (const auto& [k, v] : cfg.to_map()) s += k + " = " + v + '\n';
  return s;
}

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw CliError(exit_bad_input, what + ": '" + item + "' is not an integer");
    }
  }
  if (out.empty()) throw CliError(exit_bad_input, what + ": empty list");
  return out;
}

const std::vector<Sample>& pick_split(const LoadedDataset& ds, const std::string& split) {
  if (split == "test") return ds.test;
  if (split == "valid") return ds.valid;
  if (split == "train") return ds.train;
  throw CliError(exit_bad_input, "unknown split '" + split + "'");
}

std::string metrics_csv_header() {
  std::string h;
  for (const auto& m : metric_names()) h += "," + m;
  return h;
}

std::string metrics_csv_values(const RankReport& r) {
  std::ostringstream os;
  os << std::setprecision(10);
  for (double v : r.means) os << ',' << v;
  return os.str();
}

// ---------------------------------------------------------------------------

struct BuildArgs {
  Common common;
  bool synthetic = false;
  std::string input, out;
  int users = 0, t = 0, vocab = 0, pairs = 0, queries = 0, eval_queries = 0;
};

int cmd_build_data(const BuildArgs& a, std::ostream& out, std::ostream& err) {
  if (a.synthetic == !a.input.empty()) throw CliError(exit_bad_input, "build-data needs exactly one of --synthetic or --input");
  RunConfig cfg = resolve_config({}, a.common);
  try {
    if (a.users) cfg.synth.users = a.users;
    if (a.t) cfg.model.history = a.t;
    if (a.vocab) cfg.synth.vocab = a.vocab;
    if (a.pairs) cfg.synth.pairs_per_user = a.pairs;
    if (a.queries) cfg.queries_per_user = a.queries;
    if (a.eval_queries) cfg.eval_queries_per_user = a.eval_queries;
    cfg.model.validate();
    cfg.synth.validate();
  } catch (const std::invalid_argument& e) {
    throw CliError(exit_bad_input, e.what());
  }

  Dataset ds;
  TsvStats tsv;
  try {
    if (a.synthetic) {
      ds = build_synthetic_dataset(cfg);
    } else {
      std::ifstream in(a.input);
      if (!in) throw CliError(exit_bad_input, "input not found: " + a.input);
      ds = build_dataset(read_raw_tsv(in, &tsv), cfg);
    }
  } catch (const std::invalid_argument& e) {
    throw CliError(exit_bad_input, e.what());
  }
  save_dataset(a.out, ds, cfg);
  write_text(a.out + "/config.txt", config_text(cfg));

  out << "dataset " << a.out << ": train " << ds.splits.train.size() << ", valid " << ds.splits.valid.size()
      << ", test " << ds.splits.test.size() << " samples; vocab " << ds.vocab.size() << "; config " << ds.config_hash
      << '\n';
  if (ds.build_stats.filtered_users) err << "filtered " << ds.build_stats.filtered_users << " users below min_history\n";
  if (ds.build_stats.skipped_missing_user)
    err << "skipped " << ds.build_stats.skipped_missing_user << " pairs without a user id\n";
  if (ds.sample_stats.dropped_short_retrieval)
    err << "dropped " << ds.sample_stats.dropped_short_retrieval << " samples with too few candidates\n";
  if (!a.synthetic) {
    err << "read " << tsv.lines << " lines, skipped " << tsv.skipped << " malformed\n";
    if (tsv.lines > 0 && tsv.skipped * 100 > tsv.lines) {
      err << "error: more than 1% of input lines were malformed\n";
      return exit_bad_input;
    }
  }
  return exit_ok;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string data, out;
  bool no_style = false, no_pref = false, no_multihop = false, blind = false;
  int epochs = -1, batch = 0;
  double lr = -1;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  if (a.no_style && a.no_pref)
    throw CliError(exit_degenerate, "--no-style with --no-pref leaves a constant scorer; refusing to train");
  const LoadedDataset ds = open_dataset(a.data);
  RunConfig cfg = resolve_config(ds.config, a.common);
  try {
    if (a.no_style) cfg.model.use_style = false;
    if (a.no_pref) cfg.model.use_pref = false;
    if (a.no_multihop) cfg.model.use_multihop = false;
    if (a.blind) cfg.model.blind_history = true;
    if (a.epochs >= 0) cfg.model.epochs = a.epochs;
    if (a.lr >= 0) cfg.model.lr = a.lr;
    if (a.batch > 0) cfg.model.batch = a.batch;
    cfg.model.validate();
  } catch (const std::invalid_argument& e) {
    throw CliError(exit_bad_input, e.what());
  }
  if (!cfg.model.use_style && !cfg.model.use_pref)
    throw CliError(exit_degenerate, "both branches disabled leaves a constant scorer; refusing to train");
  if (ds.train.empty()) throw CliError(exit_bad_input, "dataset has no training samples");

  const auto& mc = cfg.model;
  Model model(mc, ds.vocab.size(), cfg.seed);
  const auto train_set = encode_samples(ds.train, ds.vocab, mc.max_len, mc.history);
  const auto valid_set = encode_samples(ds.valid, ds.vocab, mc.max_len, mc.history);
  err << "training " << model.num_values() << " parameters on " << train_set.size() << " samples\n";
  TrainResult result;
  try {
    result = train(model, train_set, valid_set, cfg.seed, [&](const EpochLog& e) {
      err << "epoch " << e.epoch << " train " << e.train_loss << " valid " << e.valid_loss << " lr " << e.lr << " ("
          << std::fixed << std::setprecision(1) << e.wall_seconds << "s)\n"
          << std::defaultfloat << std::setprecision(6);
    });
  } catch (const TrainingDiverged& e) {
    err << "error: " << e.what() << '\n';
    return exit_failure;
  }

  CheckpointInfo info;
  info.config_hash = ds.config_hash;
  info.vocab_hash = ds.vocab_hash;
  info.vocab_size = ds.vocab.size();
  info.epoch = result.best_epoch;
  if (!result.log.empty()) {
    info.train_loss = result.log[static_cast<size_t>(result.best_epoch > 0 ? result.best_epoch - 1 : 0)].train_loss;
    info.valid_loss = result.best_valid;
  }
  info.rng_state = result.rng_state;
  save_checkpoint(a.out, model, info);
  ds.vocab.save(a.out + "/vocab.txt");
  write_train_log(a.out + "/train_log.csv", result.log);
  write_text(a.out + "/config.txt", config_text(cfg));
  out << "checkpoint " << a.out << " (best epoch " << result.best_epoch << ", valid loss " << result.best_valid << ")\n";
  return exit_ok;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string data, checkpoint, out, split = "test", baseline, sweep, sweep_out, gain = "exp";
  bool per_sample = false;
  int limit = 0;
  int repeats = 1;
};

int cmd_evaluate(const EvalArgs& a, std::ostream& out, std::ostream& err) {
  const LoadedDataset ds = open_dataset(a.data);
  RunConfig cfg = resolve_config({}, a.common);
  std::vector<Sample> samples = pick_split(ds, a.split);
  if (a.limit > 0 && static_cast<size_t>(a.limit) < samples.size()) samples.resize(static_cast<size_t>(a.limit));
  if (samples.empty()) throw CliError(exit_bad_input, "split '" + a.split + "' is empty");
  if (a.gain != "exp" && a.gain != "linear") throw CliError(exit_bad_input, "--gain must be exp or linear");
  const DcgGain gain = a.gain == "exp" ? DcgGain::exponential : DcgGain::linear;

  json meta = {{"split", a.split}, {"dataset_config_hash", ds.config_hash}, {"vocab_hash", ds.vocab_hash}};
  std::string label;
  std::vector<RankedSample> scored;
  std::optional<Model> model;
  if (!a.baseline.empty()) {
    if (!a.sweep.empty()) throw CliError(exit_bad_input, "--sweep-history needs a checkpoint, not a baseline");
    if (a.baseline == "random") scored = random_scores(samples, cfg.seed);
    else if (a.baseline == "bm25") scored = bm25_scores(samples);
    else throw CliError(exit_bad_input, "--baseline must be random or bm25");
    label = a.baseline;
    meta["baseline"] = a.baseline;
    meta["seed"] = cfg.seed;
  } else {
    if (a.checkpoint.empty()) throw CliError(exit_bad_input, "evaluate needs --checkpoint or --baseline");
    CheckpointInfo info;
    model.emplace(open_checkpoint(a.checkpoint, info));
    if (info.vocab_hash != ds.vocab_hash || info.config_hash != ds.config_hash)
      throw CliError(exit_mismatch, "checkpoint " + a.checkpoint + " was trained on dataset config " + info.config_hash +
                                        " / vocab " + info.vocab_hash + ", but " + a.data + " has " + ds.config_hash +
                                        " / " + ds.vocab_hash);
    label = "model";
    meta["checkpoint"] = {{"model_hash", model->cfg.hash()}, {"epoch", info.epoch}};
    if (a.sweep.empty())
      scored = score_samples(*model, encode_samples(samples, ds.vocab, model->cfg.max_len, model->cfg.history),
                             cfg.workers);
  }

  if (!a.sweep.empty()) {
    std::vector<SweepRow> rows;
    try {
      rows = sweep_history(*model, samples, ds.vocab, parse_int_list(a.sweep, "--sweep-history"), cfg.workers, a.repeats);
    } catch (const std::invalid_argument& e) {
      throw CliError(exit_bad_input, e.what());
    }
    std::ostringstream csv;
    csv << "history,n_samples" << metrics_csv_header() << ",seconds_per_1k\n";
    for (const auto& r : rows)
      csv << r.history << ',' << r.report.n_samples << metrics_csv_values(r.report) << ',' << std::setprecision(6)
          << r.seconds_per_1k << '\n';
    if (a.sweep_out.empty()) out << csv.str();
    else write_text(a.sweep_out, csv.str());
    std::vector<std::pair<std::string, RankReport>> table;
    for (const auto& r : rows) table.emplace_back("t=" + std::to_string(r.history), r.report);
    (a.sweep_out.empty() ? err : out) << report_table(table);
    return exit_ok;
  }

  RankReport report = evaluate(scored, sample_ids(samples), a.per_sample, gain);
  report.config_hash = ds.config_hash;
  json j = report.to_json(a.per_sample);
  for (const auto& [k, v] : meta.items()) j[k] = v;
  j["gain"] = a.gain;
  if (!a.out.empty()) write_text(a.out, j.dump(2) + '\n');
  out << report.table(label);
  return exit_ok;
}

// ---------------------------------------------------------------------------

struct RankArgs {
  Common common;
  std::string checkpoint, request = "-";
};

std::string json_text(const json& v, const char* what) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_object() && v.contains("text") && v.at("text").is_string()) return v.at("text").get<std::string>();
  throw CliError(exit_bad_input, std::string("request: ") + what + " must be a string or {\"text\": ...}");
}

int cmd_rank(const RankArgs& a, std::ostream& out, std::ostream& err) {
  json req;
  try {
    if (a.request == "-") {
      req = json::parse(std::cin);
    } else {
      std::ifstream f(a.request);
      if (!f) throw CliError(exit_bad_input, "request not found: " + a.request);
      req = json::parse(f);
    }
  } catch (const json::exception& e) {
    throw CliError(exit_bad_input, std::string("request is not valid JSON: ") + e.what());
  }
  if (!req.is_object() || !req.contains("candidates") || !req.at("candidates").is_array())
    throw CliError(exit_bad_input, "request needs a candidates array");
  if (req.at("candidates").empty()) throw CliError(exit_bad_input, "request has no candidates");

  CheckpointInfo info;
  Model model = open_checkpoint(a.checkpoint, info);
  Vocab vocab;
  try {
    vocab = Vocab::load(a.checkpoint + "/vocab.txt");
  } catch (const std::exception& e) {
    throw CliError(exit_bad_input, e.what());
  }
  if (vocab.hash() != info.vocab_hash)
    throw CliError(exit_mismatch, "vocab.txt in " + a.checkpoint + " does not match the checkpoint's vocab hash");

  const int len = model.cfg.max_len;
  auto enc = [&](const std::string& text) { return vocab.encode(default_tokenize(text), len); };
  EncodedSample s;
  s.user_id = req.value("user_id", "request");
  s.query = enc(json_text(req.value("query", json("")), "query"));
  if (req.contains("history")) {
    const auto& hist = req.at("history");
    const size_t keep = std::min(hist.size(), static_cast<size_t>(model.cfg.history));
    for (size_t i = hist.size() - keep; i < hist.size(); ++i) {
      const auto& p = hist[i];
      if (!p.is_object() || !p.contains("post") || !p.contains("response"))
        throw CliError(exit_bad_input, "request: history entries need post and response");
      s.history.emplace_back(enc(json_text(p.at("post"), "post")), enc(json_text(p.at("response"), "response")));
    }
  }
  std::vector<std::string> texts;
  for (const auto& c : req.at("candidates")) {
    texts.push_back(json_text(c, "candidate"));
    s.candidates.push_back(enc(texts.back()));
    s.labels.push_back(0);
  }
  std::vector<double> scores;
  try {
    scores = model.score(s);
  } catch (const std::invalid_argument& e) {
    throw CliError(exit_bad_input, e.what());
  }
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t x, size_t y) { return scores[x] > scores[y]; });
  for (size_t r = 0; r < order.size(); ++r)
    out << json{{"rank", r + 1}, {"index", order[r]}, {"text", texts[order[r]]}, {"score", scores[order[r]]}}.dump()
        << '\n';
  (void)err;
  return exit_ok;
}

// ---------------------------------------------------------------------------

struct AblateArgs {
  Common common;
  std::string data, out, seeds;
  int epochs = -1;
};

int cmd_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err) {
  const LoadedDataset ds = open_dataset(a.data);
  RunConfig cfg = resolve_config(ds.config, a.common);
  if (a.epochs >= 0) cfg.model.epochs = a.epochs;
  try {
    cfg.model.validate();
  } catch (const std::invalid_argument& e) {
    throw CliError(exit_bad_input, e.what());
  }
  std::vector<std::uint64_t> seeds;
  if (a.seeds.empty()) seeds.push_back(cfg.seed);
  else
    for (int s : parse_int_list(a.seeds, "--seeds")) seeds.push_back(static_cast<std::uint64_t>(s));

  std::ostringstream csv;
  csv << "seed,variant" << metrics_csv_header() << '\n';
  json runs = json::array();
  std::map<std::string, std::vector<double>> sums;
  for (auto seed : seeds)
    for (const auto& variant : ablation_variants()) {
      err << "seed " << seed << ": training " << variant << '\n';
      VariantResult r;
      try {
        r = train_and_evaluate(cfg.model, variant, ds.vocab, ds.train, ds.valid, ds.test, seed, cfg.workers);
      } catch (const TrainingDiverged& e) {
        err << "error: " << e.what() << '\n';
        return exit_failure;
      }
      csv << seed << ',' << variant << metrics_csv_values(r.report) << '\n';
      auto& acc = sums[variant];
      acc.resize(r.report.means.size(), 0.0);
      for (size_t i = 0; i < acc.size(); ++i) acc[i] += r.report.means[i];
      json row = r.report.to_json();
      row["seed"] = seed;
      row["variant"] = variant;
      row["best_epoch"] = r.training.best_epoch;
      runs.push_back(row);
    }
  std::vector<std::pair<std::string, RankReport>> table;
  for (const auto& variant : ablation_variants()) {
    RankReport mean;
    mean.means = sums[variant];
    for (double& v : mean.means) v /= static_cast<double>(seeds.size());
    table.emplace_back(variant, mean);
  }
  const std::string text = report_table(table);
  if (!a.out.empty()) {
    write_text(a.out + "/ablation.csv", csv.str());
    write_text(a.out + "/ablation.json",
               json{{"dataset_config_hash", ds.config_hash}, {"model_hash", cfg.model.hash()}, {"runs", runs}}.dump(2) + '\n');
    write_text(a.out + "/ablation.txt", text);
  }
  out << text;
  return exit_ok;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"impchat: personalized response selection from implicit user profiles"};
  app.require_subcommand(1);

  BuildArgs build;
  auto* b = app.add_subcommand("build-data", "build train/valid/test splits from a TSV corpus or synthetic personas");
  add_common(b, build.common);
  b->add_flag("--synthetic", build.synthetic, "generate a synthetic persona corpus");
  b->add_option("--input", build.input, "raw TSV: post, post_user, post_ts, response, resp_user, resp_ts");
  b->add_option("--out", build.out, "output directory")->required();
  b->add_option("--users", build.users, "synthetic users");
  b->add_option("--vocab", build.vocab, "synthetic vocabulary size");
  b->add_option("--pairs", build.pairs, "synthetic pairs per user");
  b->add_option("--t", build.t, "history pairs per sample");
  b->add_option("--queries-per-user", build.queries, "training queries per user");
  b->add_option("--eval-queries-per-user", build.eval_queries, "valid/test queries per user");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model on a dataset directory");
  add_common(t, tr.common);
  t->add_option("--data", tr.data, "dataset directory")->required();
  t->add_option("--out", tr.out, "checkpoint directory")->required();
  t->add_flag("--no-style", tr.no_style, "disable the style branch");
  t->add_flag("--no-pref", tr.no_pref, "disable the preference branch");
  t->add_flag("--no-multihop", tr.no_multihop, "score relevance with a single hop");
  t->add_flag("--blind-history", tr.blind, "zero every history embedding");
  t->add_option("--epochs", tr.epochs, "training epochs");
  t->add_option("--lr", tr.lr, "initial learning rate");
  t->add_option("--batch", tr.batch, "candidate pairs per step");

  EvalArgs ev;
  auto* e = app.add_subcommand("evaluate", "rank a split and report metrics");
  add_common(e, ev.common);
  e->add_option("--data", ev.data, "dataset directory")->required();
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint directory");
  e->add_option("--split", ev.split, "test (default), valid or train");
  e->add_option("--out", ev.out, "report JSON path");
  e->add_option("--baseline", ev.baseline, "random or bm25 instead of a checkpoint");
  e->add_option("--sweep-history", ev.sweep, "comma-separated history lengths, e.g. 4,8,16,32");
  e->add_option("--sweep-out", ev.sweep_out, "CSV path for the sweep (default stdout)");
  e->add_option("--repeats", ev.repeats, "timing repeats per sweep row (best is kept)")->check(CLI::PositiveNumber);
  e->add_option("--limit", ev.limit, "evaluate only the first N samples");
  e->add_option("--gain", ev.gain, "DCG gain: exp (default) or linear");
  e->add_flag("--per-sample", ev.per_sample, "include per-sample metrics in the report");

  RankArgs rk;
  auto* r = app.add_subcommand("rank", "score the candidates of a JSON request");
  add_common(r, rk.common);
  r->add_option("--checkpoint", rk.checkpoint, "checkpoint directory")->required();
  r->add_option("--request", rk.request, "request JSON file, - for stdin");

  AblateArgs ab;
  auto* a = app.add_subcommand("ablate", "train the full model and each ablation, compare on test");
  add_common(a, ab.common);
  a->add_option("--data", ab.data, "dataset directory")->required();
  a->add_option("--out", ab.out, "directory for ablation.csv/json/txt");
  a->add_option("--seeds", ab.seeds, "comma-separated seeds (default: the config seed)");
  a->add_option("--epochs", ab.epochs, "training epochs");

  std::vector<std::string> argv_store{"impchat"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::ParseError& ex) {
    // Subcommand help arrives as CallForHelp from the subcommand itself.
    if (ex.get_exit_code() == 0) {
      out << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
      return exit_ok;
    }
    err << "error: " << ex.what() << '\n';
    return exit_bad_input;
  }

  try {
    if (b->parsed()) return cmd_build_data(build, out, err);
    if (t->parsed()) return cmd_train(tr, out, err);
    if (e->parsed()) return cmd_evaluate(ev, out, err);
    if (r->parsed()) return cmd_rank(rk, out, err);
    if (a->parsed()) return cmd_ablate(ab, out, err);
  } catch (const CliError& ex) {
    err << "error: " << ex.what() << '\n';
    return ex.code;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return exit_failure;
  }
  return exit_failure;
}

}  // namespace impchat
