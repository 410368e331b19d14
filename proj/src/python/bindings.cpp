// Python module impchat._core.  Samples cross the boundary as JSON text;
// the pure-Python package wraps them in dicts.

#include "impchat/cli.hpp"
#include "impchat/pipeline.hpp"
#include "impchat/trainer.hpp"

#include <nlohmann/json.hpp>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace impchat;
using nlohmann::json;

namespace {

RunConfig run_config(const std::map<std::string, std::string>& kv) {
  RunConfig cfg;
  for (const auto& [k, v] : kv) cfg.set(k, v);
  return cfg;
}

std::vector<Sample> samples_from_json(const std::string& text) {
  std::vector<Sample> out;
  for (const auto& j : json::parse(text)) out.push_back(sample_from_json(j));
  return out;
}

std::string samples_to_json(const std::vector<Sample>& samples) {
  json arr = json::array();
  for (const auto& s : samples) arr.push_back(sample_to_json(s));
  return arr.dump();
}

RankedSample ranked(const std::vector<double>& scores, const std::vector<int>& labels) {
  RankedSample rs{scores, labels};
  rs.validate();
  return rs;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "impchat core: corpus building, BM25, the matching model, training and ranking metrics";

  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<TrainingDiverged>(m, "TrainingDiverged", PyExc_RuntimeError);

  m.def("tokenize", [](const std::string& text) { return default_tokenize(text); });

  m.def("default_config", [] { return RunConfig{}.to_map(); });
  m.def("config_hash", [](const std::map<std::string, std::string>& kv) { return run_config(kv).hash(); });

  py::class_<Vocab>(m, "Vocab")
      .def(py::init<>())
      .def_static("from_words", &Vocab::from_words)
      .def_static("load", &Vocab::load)
      .def("save", &Vocab::save)
      .def("__len__", &Vocab::size)
      .def("id", &Vocab::id)
      .def("word", &Vocab::word)
      .def("encode", &Vocab::encode, py::arg("words"), py::arg("max_len"))
      .def("decode", &Vocab::decode)
      .def("hash", &Vocab::hash);

  py::class_<Dataset>(m, "Dataset")
      .def_property_readonly("vocab", [](const Dataset& d) { return d.vocab; })
      .def_property_readonly("config_hash", [](const Dataset& d) { return d.config_hash; })
      .def("split_json", [](const Dataset& d, const std::string& name) {
        if (name == "train") return samples_to_json(d.splits.train);
        if (name == "valid") return samples_to_json(d.splits.valid);
        if (name == "test") return samples_to_json(d.splits.test);
        throw py::value_error("unknown split '" + name + "'");
      })
      .def("personas_json", [](const Dataset& d) { return personas_to_json(d.personas).dump(); })
      .def("save", [](const Dataset& d, const std::string& dir, const std::map<std::string, std::string>& kv) {
        save_dataset(dir, d, run_config(kv));
      });

  m.def("build_synthetic_dataset", [](const std::map<std::string, std::string>& kv) {
    return build_synthetic_dataset(run_config(kv));
  });

  py::class_<LexIndex>(m, "LexIndex")
      .def_static("build",
                  [](const std::vector<std::pair<std::string, std::string>>& docs) {
                    std::vector<std::pair<Utterance, std::string>> in;
                    for (const auto& [text, user] : docs) in.emplace_back(Utterance::from_text(text, user, 0), user);
                    return LexIndex::build(in);
                  },
                  py::arg("docs"), "docs: list of (text, author)")
      .def_static("load", &LexIndex::load)
      .def("save", &LexIndex::save)
      .def("__len__", &LexIndex::size)
      .def_property_readonly("avg_len", &LexIndex::avg_len)
      .def(
          "search",
          [](const LexIndex& idx, const std::string& query, int top_k, const std::string& exclude_user) {
            std::vector<std::pair<int, double>> out;
            for (const auto& h : idx.search(default_tokenize(query), top_k, exclude_user)) out.emplace_back(h.doc_id, h.score);
            return out;
          },
          py::arg("query"), py::arg("top_k"), py::arg("exclude_user") = "");

  m.def("recall_at_k", [](const std::vector<double>& s, const std::vector<int>& l, int k) {
    return recall_at_k(ranked(s, l), k);
  });
  m.def("mrr", [](const std::vector<double>& s, const std::vector<int>& l) { return mrr(ranked(s, l)); });
  m.def(
      "ndcg5",
      [](const std::vector<double>& s, const std::vector<int>& l, bool linear) {
        return ndcg5(ranked(s, l), linear ? DcgGain::linear : DcgGain::exponential);
      },
      py::arg("scores"), py::arg("labels"), py::arg("linear") = false);
  m.def("rp_at_k", [](const std::vector<double>& s, const std::vector<int>& l, int k) { return rp_at_k(ranked(s, l), k); });
  m.def("evaluate", [](const std::vector<std::vector<double>>& scores, const std::vector<std::vector<int>>& labels) {
    if (scores.size() != labels.size()) throw py::value_error("scores and labels differ in length");
    std::vector<RankedSample> rs;
    for (size_t i = 0; i < scores.size(); ++i) rs.push_back({scores[i], labels[i]});
    const auto report = evaluate(rs);
    std::map<std::string, double> out;
    for (size_t i = 0; i < metric_names().size(); ++i) out[metric_names()[i]] = report.means[i];
    return out;
  });

  py::class_<EpochLog>(m, "EpochLog")
      .def_readonly("epoch", &EpochLog::epoch)
      .def_readonly("train_loss", &EpochLog::train_loss)
      .def_readonly("valid_loss", &EpochLog::valid_loss)
      .def_readonly("lr", &EpochLog::lr)
      .def_readonly("wall_seconds", &EpochLog::wall_seconds);

  py::class_<Model>(m, "Model")
      .def(py::init([](const std::map<std::string, std::string>& kv, int vocab_size, std::uint64_t seed) {
             ModelConfig cfg;
             for (const auto& [k, v] : kv) cfg.set(k, v);
             return Model(cfg, vocab_size, seed);
           }),
           py::arg("config"), py::arg("vocab_size"), py::arg("seed") = 0)
      .def_static("load", [](const std::string& dir) { return load_checkpoint(dir); })
      .def("save",
           [](Model& model, const std::string& dir, const Vocab& vocab) {
             CheckpointInfo info;
             info.vocab_hash = vocab.hash();
             info.vocab_size = vocab.size();
             save_checkpoint(dir, model, info);
             vocab.save(dir + "/vocab.txt");
           })
      .def_property_readonly("config", [](const Model& model) { return model.cfg.to_map(); })
      .def_property_readonly("num_values", [](Model& model) { return model.num_values(); })
      .def("score_json",
           [](Model& model, const std::string& samples, const Vocab& vocab) {
             const auto enc = encode_samples(samples_from_json(samples), vocab, model.cfg.max_len, model.cfg.history);
             std::vector<std::vector<double>> out;
             py::gil_scoped_release release;
             for (const auto& rs : score_samples(model, enc)) out.push_back(rs.scores);
             return out;
           })
      .def(
          "train_json",
          [](Model& model, const std::string& train_set, const std::string& valid_set, const Vocab& vocab,
             std::uint64_t seed) {
            const int len = model.cfg.max_len, t = model.cfg.history;
            const auto tr = encode_samples(samples_from_json(train_set), vocab, len, t);
            const auto va = encode_samples(samples_from_json(valid_set), vocab, len, t);
            py::gil_scoped_release release;
            return train(model, tr, va, seed).log;
          },
          py::arg("train"), py::arg("valid"), py::arg("vocab"), py::arg("seed") = 0);

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return py::make_tuple(code, out.str(), err.str());
  });
}
