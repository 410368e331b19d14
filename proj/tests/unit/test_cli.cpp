#include "impchat/cli.hpp"
#include "impchat/corpus.hpp"
#include "impchat/model.hpp"
#include "impchat/pipeline.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

using namespace impchat;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("impchat_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

// Tiny model settings so training runs in well under a second per epoch.
const std::vector<std::string> kSmallModel = {"--set", "d=4",        "--set", "L=8",     "--set", "t=4",
                                              "--set", "gru_hidden=4", "--set", "cnn=2,3,2,2", "--set", "levels=1",
                                              "--set", "epochs=1",   "--set", "batch=20"};

std::vector<std::string> build_args(const fs::path& out, const std::string& seed, std::vector<std::string> extra = {}) {
  std::vector<std::string> a = {"build-data", "--synthetic", "--users", "20", "--pairs", "16", "--vocab", "150",
                                "--out",      out.string(),  "--seed",  seed, "--set", "min_history=6"};
  a.insert(a.end(), kSmallModel.begin(), kSmallModel.end());
  a.insert(a.end(), extra.begin(), extra.end());
  return a;
}

// One dataset and one trained checkpoint shared by the tests below.
const fs::path& small_dataset() {
  static const fs::path dir = [] {
    auto d = scratch("data");
    auto r = cli(build_args(d, "3"));
    REQUIRE_MESSAGE(r.code == 0, r.err);
    return d;
  }();
  return dir;
}

const fs::path& small_checkpoint() {
  static const fs::path dir = [] {
    auto d = scratch("ckpt");
    auto r = cli({"train", "--data", small_dataset().string(), "--out", d.string(), "--epochs", "2"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    return d;
  }();
  return dir;
}

fs::path write_request(const std::string& name, const json& req) {
  const fs::path p = scratch("req_" + name) / "request.json";
  std::ofstream(p) << req.dump();
  return p;
}

std::vector<json> jsonl(const std::string& text) {
  std::vector<json> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

}  // namespace

TEST_CASE("cli: usage errors") {
  CHECK(cli({}).code == exit_bad_input);
  CHECK(cli({"frobnicate"}).code == exit_bad_input);
  CHECK(cli({"--help"}).code == exit_ok);
  CHECK(cli({"build-data", "--out", scratch("neither").string()}).code == exit_bad_input);
  CHECK(cli({"train", "--data", "/nonexistent/impchat", "--out", scratch("x").string()}).code == exit_bad_input);
  CHECK(cli({"evaluate", "--data", "/nonexistent/impchat", "--baseline", "random"}).code == exit_bad_input);
  auto unknown = cli(build_args(scratch("unknown"), "1", {"--set", "no_such_key=1"}));
  CHECK(unknown.code == exit_bad_input);
  CHECK(unknown.err.find("no_such_key") != std::string::npos);
}

TEST_CASE("cli: build-data is deterministic and respects the history window") {
  const auto a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
  REQUIRE(cli(build_args(a, "7")).code == 0);
  REQUIRE(cli(build_args(b, "7")).code == 0);
  REQUIRE(cli(build_args(c, "8")).code == 0);
  for (const char* f : {"train.jsonl", "valid.jsonl", "test.jsonl", "vocab.txt", "manifest.json", "personas.json", "index.bin"}) {
    CAPTURE(f);
    CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK(slurp(a / "train.jsonl") != slurp(c / "train.jsonl"));

  const auto t2 = scratch("t2");
  REQUIRE(cli(build_args(t2, "7", {"--t", "2"})).code == 0);
  auto ds = load_dataset(t2.string());
  REQUIRE(!ds.train.empty());
  for (const auto* split : {&ds.train, &ds.valid, &ds.test})
    for (const auto& s : *split) CHECK(s.history.size() <= 2);

  // Users never cross splits.
  std::set<std::string> train_users;
  for (const auto& s : ds.train) train_users.insert(s.user_id);
  for (const auto& s : ds.test) CHECK(!train_users.count(s.user_id));
}

TEST_CASE("cli: IMPCHAT_SEED is the fallback seed") {
  const auto flag = scratch("seed_flag"), env = scratch("seed_env"), both = scratch("seed_both");
  REQUIRE(cli(build_args(flag, "11")).code == 0);
  auto args = build_args(env, "0");
  // Drop "--seed 0" so only the environment supplies it.
  auto it = std::find(args.begin(), args.end(), "--seed");
  args.erase(it, it + 2);
  ::setenv("IMPCHAT_SEED", "11", 1);
  REQUIRE(cli(args).code == 0);
  REQUIRE(cli(build_args(both, "12")).code == 0);  // flag beats the environment
  ::unsetenv("IMPCHAT_SEED");
  CHECK(slurp(flag / "train.jsonl") == slurp(env / "train.jsonl"));
  CHECK(slurp(flag / "train.jsonl") != slurp(both / "train.jsonl"));
}

TEST_CASE("cli: TSV input drops short users and fails on malformed lines") {
  SynthConfig sc;
  sc.users = 20;
  sc.vocab = 150;
  sc.pairs_per_user = 20;
  sc.topics = 4;
  auto corpus = generate_synthetic_corpus(sc, 5);
  // One extra user with 14 replies to existing posts.
  for (int i = 0; i < 14; ++i) {
    DialoguePair p = corpus.pairs[static_cast<size_t>(i * 3)];
    p.response = Utterance::from_text("short history reply " + std::to_string(i), "shorty", p.post.timestamp + 5);
    corpus.pairs.push_back(p);
  }
  const auto dir = scratch("tsv");
  {
    std::ofstream f(dir / "raw.tsv");
    write_raw_tsv(f, corpus.pairs);
  }
  auto r = cli({"build-data", "--input", (dir / "raw.tsv").string(), "--out", (dir / "ds").string(), "--seed", "1"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  auto ds = load_dataset((dir / "ds").string());
  CHECK(ds.train.size() + ds.valid.size() + ds.test.size() > 0);
  for (const auto* split : {&ds.train, &ds.valid, &ds.test})
    for (const auto& s : *split) CHECK(s.user_id != "shorty");

  // 414 good lines: 2 bad ones stay under 1% and are only reported, 6 fail the build.
  {
    std::ofstream f(dir / "raw.tsv", std::ios::app);
    f << "broken line\n" << "another\tbroken\n";
  }
  r = cli({"build-data", "--input", (dir / "raw.tsv").string(), "--out", (dir / "ds2").string()});
  CHECK(r.code == exit_ok);
  CHECK(r.err.find("skipped 2 malformed") != std::string::npos);
  {
    std::ofstream f(dir / "raw.tsv", std::ios::app);
    for (int i = 0; i < 4; ++i) f << "bad\t" << i << "\n";
  }
  r = cli({"build-data", "--input", (dir / "raw.tsv").string(), "--out", (dir / "ds2").string()});
  CHECK(r.code == exit_bad_input);
  CHECK(r.err.find("skipped 6 malformed") != std::string::npos);
  CHECK(cli({"build-data", "--input", (dir / "missing.tsv").string(), "--out", (dir / "ds3").string()}).code ==
        exit_bad_input);
}

TEST_CASE("cli: train refuses the constant scorer and writes its artifacts") {
  const auto out = scratch("refuse");
  auto r = cli({"train", "--data", small_dataset().string(), "--out", out.string(), "--no-pref", "--no-style"});
  CHECK(r.code == exit_degenerate);
  CHECK(!fs::exists(out / "manifest.json"));

  const auto& ckpt = small_checkpoint();
  for (const char* f : {"manifest.json", "params.bin", "vocab.txt", "train_log.csv", "config.txt"}) CHECK(fs::exists(ckpt / f));
  // Header plus one row per epoch.
  std::ifstream log(ckpt / "train_log.csv");
  int rows = 0;
  for (std::string line; std::getline(log, line);) rows += !line.empty();
  CHECK(rows == 3);
}

TEST_CASE("cli: one epoch at lr 0 keeps the initial parameters") {
  const auto out = scratch("lr0");
  auto r = cli({"train", "--data", small_dataset().string(), "--out", out.string(), "--epochs", "1", "--lr", "0",
                "--seed", "21"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CheckpointInfo info;
  Model trained = load_checkpoint(out.string(), &info);
  Model fresh(trained.cfg, info.vocab_size, 21);
  auto a = trained.params(), b = fresh.params();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CAPTURE(a[i]->name);
    CHECK(a[i]->value == b[i]->value);
  }
}

TEST_CASE("cli: evaluate is deterministic; mismatched artifacts exit 4") {
  const auto dir = scratch("eval");
  const auto& ckpt = small_checkpoint();
  auto run = [&](const std::string& name) {
    return cli({"evaluate", "--data", small_dataset().string(), "--checkpoint", ckpt.string(), "--out",
                (dir / name).string(), "--split", "train"});
  };
  REQUIRE(run("a.json").code == 0);
  REQUIRE(run("b.json").code == 0);
  CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
  auto report = json::parse(slurp(dir / "a.json"));
  CHECK(report.contains("R10@1"));
  CHECK(report["config_hash"] == json::parse(slurp(small_dataset() / "manifest.json"))["config_hash"]);

  auto workers = cli({"evaluate", "--data", small_dataset().string(), "--checkpoint", ckpt.string(), "--out",
                      (dir / "w.json").string(), "--split", "train", "--workers", "3"});
  REQUIRE(workers.code == 0);
  CHECK(slurp(dir / "a.json") == slurp(dir / "w.json"));

  const auto other = scratch("other_data");
  REQUIRE(cli(build_args(other, "4")).code == 0);
  auto mismatch = cli({"evaluate", "--data", other.string(), "--checkpoint", ckpt.string()});
  CHECK(mismatch.code == exit_mismatch);
  CHECK(cli({"evaluate", "--data", small_dataset().string()}).code == exit_bad_input);
  CHECK(cli({"evaluate", "--data", small_dataset().string(), "--baseline", "oracle"}).code == exit_bad_input);
}

TEST_CASE("cli: history sweep emits one row per length") {
  const auto dir = scratch("sweep");
  auto r = cli({"evaluate", "--data", small_dataset().string(), "--checkpoint", small_checkpoint().string(),
                "--sweep-history", "1,2,4", "--sweep-out", (dir / "sweep.csv").string(), "--split", "train"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::ifstream f(dir / "sweep.csv");
  std::vector<std::string> lines;
  for (std::string line; std::getline(f, line);) lines.push_back(line);
  REQUIRE(lines.size() == 4);
  CHECK(lines[0].rfind("history,n_samples,", 0) == 0);
  CHECK(lines[0].find("seconds_per_1k") != std::string::npos);
  CHECK(lines[1].rfind("1,", 0) == 0);
  CHECK(lines[3].rfind("4,", 0) == 0);
  // t beyond the model's window is an input error.
  CHECK(cli({"evaluate", "--data", small_dataset().string(), "--checkpoint", small_checkpoint().string(),
             "--sweep-history", "4,8"})
            .code == exit_bad_input);
}

TEST_CASE("cli: random baseline calibration on 1000 samples") {
  const auto dir = scratch("calib");
  auto r = cli({"build-data", "--synthetic", "--users", "120", "--pairs", "20", "--queries-per-user", "12", "--out",
                dir.string(), "--seed", "2", "--set", "min_history=6"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  r = cli({"evaluate", "--data", dir.string(), "--baseline", "random", "--seed", "1", "--split", "train", "--limit",
           "1000", "--out", (dir / "random.json").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  auto report = json::parse(slurp(dir / "random.json"));
  REQUIRE(report["n_samples"] == 1000);
  CHECK(std::abs(report["R10@1"].get<double>() - 0.10) <= 0.03);
}

TEST_CASE("cli: rank output order and errors") {
  const auto& ckpt = small_checkpoint();
  json history = json::array({{{"post", "tennis final today"}, {"response", "nadal wins"}}});
  auto single = write_request("single", {{"query", "who wins the final"}, {"history", history}, {"candidates", {"nadal"}}});
  auto r = cli({"rank", "--checkpoint", ckpt.string(), "--request", single.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  auto rows = jsonl(r.out);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0]["text"] == "nadal");
  CHECK(rows[0]["score"].get<double>() > 0.0);
  CHECK(rows[0]["score"].get<double>() < 1.0);

  auto dup = write_request("dup", {{"query", "who wins the final"},
                                   {"history", history},
                                   {"candidates", {"same words", "other words here", "same words"}}});
  r = cli({"rank", "--checkpoint", ckpt.string(), "--request", dup.string()});
  REQUIRE(r.code == 0);
  rows = jsonl(r.out);
  REQUIRE(rows.size() == 3);
  std::vector<int> same_positions;
  for (const auto& row : rows)
    if (row["text"] == "same words") same_positions.push_back(row["index"].get<int>());
  REQUIRE(same_positions.size() == 2);
  CHECK(same_positions[0] == 0);
  CHECK(same_positions[1] == 2);
  std::map<int, double> by_index;
  for (const auto& row : rows) by_index[row["index"].get<int>()] = row["score"].get<double>();
  CHECK(by_index[0] == by_index[2]);

  auto empty = write_request("empty", {{"query", "x"}, {"candidates", json::array()}});
  CHECK(cli({"rank", "--checkpoint", ckpt.string(), "--request", empty.string()}).code == exit_bad_input);
  CHECK(cli({"rank", "--checkpoint", ckpt.string(), "--request", "/nonexistent.json"}).code == exit_bad_input);
}

TEST_CASE("cli binary: exit codes reach the shell") {
  auto status = [](const std::string& args) {
    const int raw = std::system((std::string(IMPCHAT_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  CHECK(status("--help") == exit_ok);
  CHECK(status("train --data /nonexistent/impchat --out /tmp/impchat_unused") == exit_bad_input);
  CHECK(status("train --data " + small_dataset().string() + " --out " + scratch("bin").string() + " --no-style --no-pref") ==
        exit_degenerate);
}
