#include "impchat/model.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace impchat {

using nlohmann::json;

namespace {

TokenSeq encode_utterance(const Utterance& u, const Vocab& vocab, int max_len) {
  return vocab.encode(u.words, max_len);
}

}  // namespace

EncodedSample encode_sample(const Sample& s, const Vocab& vocab, int max_len, int history) {
  EncodedSample e;
  e.user_id = s.user_id;
  e.query = encode_utterance(s.query, vocab, max_len);
  const size_t keep = std::min(s.history.size(), static_cast<size_t>(std::max(history, 0)));
  for (size_t i = s.history.size() - keep; i < s.history.size(); ++i)
    e.history.emplace_back(encode_utterance(s.history[i].post, vocab, max_len),
                           encode_utterance(s.history[i].response, vocab, max_len));
  for (const auto& c : s.candidates) {
    e.candidates.push_back(encode_utterance(c.response, vocab, max_len));
    e.labels.push_back(static_cast<int>(c.label));
  }
  return e;
}

std::vector<EncodedSample> encode_samples(const std::vector<Sample>& samples, const Vocab& vocab, int max_len,
                                          int history) {
  std::vector<EncodedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(encode_sample(s, vocab, max_len, history));
  return out;
}

double label_target(int label) { return label == static_cast<int>(Label::personalized) ? 1.0 : 0.0; }

Model::Model(const ModelConfig& c, int vocab_size, std::uint64_t seed) : cfg(c) {
  cfg.validate();
  if (vocab_size < 2) throw std::invalid_argument("model: vocab must hold at least PAD and UNK");
  Rng rng(seed);
  Matrix table = gaussian(rng, vocab_size, cfg.d, std::pow(static_cast<double>(cfg.d), -0.25));
  table.row(0).setZero();
  embedding = Param("embedding", std::move(table));
  style = StyleParams(cfg, rng);
  pref = PrefParams(cfg, rng);
  const int fused = cfg.d + cfg.gru_hidden;
  fuse_hidden = Linear("fusion.hidden", fused, cfg.effective_fusion_hidden(), rng);
  fuse_out = Linear("fusion.out", cfg.effective_fusion_hidden(), 1, rng);
}

void Model::visit(const ParamVisitor& fn) {
  fn(embedding);
  style.visit(fn);
  pref.visit(fn);
  fuse_hidden.visit(fn);
  fuse_out.visit(fn);
}

std::vector<Param*> Model::params() {
  std::vector<Param*> out;
  visit([&](Param& p) { out.push_back(&p); });
  return out;
}

std::size_t Model::num_values() {
  std::size_t n = 0;
  visit([&](Param& p) { n += static_cast<std::size_t>(p.value.size()); });
  return n;
}

void Model::zero_grad() {
  visit([](Param& p) { p.zero_grad(); });
}

EmbSeq Model::embed_tokens(Graph& g, const TokenSeq& tokens, Rng* dropout_rng) {
  for (int id : tokens)
    if (id < 0 || id >= embedding.value.rows())
      throw std::out_of_range("embed: token id " + std::to_string(id) + " outside vocab of " +
                              std::to_string(embedding.value.rows()));
  EmbSeq e = embed(g, tokens, embedding);
  if (cfg.positional)
    e.values = ad::mask_rows(ad::add(e.values, g.constant(positional_encoding(static_cast<int>(tokens.size()), cfg.d))),
                             e.mask);
  if (dropout_rng && cfg.dropout > 0) {
    Matrix keep(e.length(), e.width());
    const double scale = 1.0 / (1.0 - cfg.dropout);
    for (Eigen::Index j = 0; j < keep.cols(); ++j)
      for (Eigen::Index i = 0; i < keep.rows(); ++i) keep(i, j) = dropout_rng->bernoulli(cfg.dropout) ? 0.0 : scale;
    e.values = ad::mul(e.values, g.constant(std::move(keep)));
  }
  return e;
}

Var Model::fuse(Graph& g, const Var& style_feat, const Var& pref_feat) {
  Var h = ad::relu(fuse_hidden(g, ad::concat_cols({style_feat, pref_feat})));
  return ad::sigmoid(fuse_out(g, h));
}

Model::Forward Model::forward(Graph& g, const EncodedSample& s, Rng* dropout_rng) {
  if (s.history.empty()) throw std::invalid_argument("score: history must hold at least one pair");
  if (s.candidates.empty()) throw std::invalid_argument("score: no candidates");
  EmbSeq query = embed_tokens(g, s.query, dropout_rng);
  std::vector<std::pair<EmbSeq, EmbSeq>> history;
  for (const auto& [post, resp] : s.history) {
    EmbSeq p = embed_tokens(g, post, dropout_rng);
    EmbSeq r = embed_tokens(g, resp, dropout_rng);
    if (cfg.blind_history) {
      p.values = g.constant(Matrix::Zero(p.length(), p.width()));
      r.values = g.constant(Matrix::Zero(r.length(), r.width()));
    }
    history.emplace_back(std::move(p), std::move(r));
  }

  StyleContext sctx;
  PrefContext pctx;
  if (cfg.use_style) sctx = style_context(g, query, history, style);
  if (cfg.use_pref) pctx = pref_context(g, query, history, pref, cfg.use_multihop);

  std::vector<EmbSeq> cands;
  for (const auto& tokens : s.candidates) cands.push_back(embed_tokens(g, tokens, dropout_rng));
  std::vector<StyleOutput> so;
  std::vector<PrefOutput> po;
  if (cfg.use_style) so = style_features(g, sctx, cands, style);
  if (cfg.use_pref) po = pref_features(g, pctx, cands, pref);

  Forward out;
  for (size_t c = 0; c < cands.size(); ++c) {
    Var gs = cfg.use_style ? so[c].feature : g.constant(Matrix::Zero(1, cfg.d));
    Var gp = cfg.use_pref ? po[c].feature : g.constant(Matrix::Zero(1, cfg.gru_hidden));
    out.probs.push_back(fuse(g, gs, gp));
    out.style.push_back(gs);
    out.pref.push_back(gp);
  }
  return out;
}

std::vector<double> Model::score(const EncodedSample& s) {
  Graph g(false);
  auto f = forward(g, s);
  std::vector<double> out;
  for (const auto& p : f.probs) out.push_back(p->value(0, 0));
  return out;
}

Var Model::sample_loss(Graph& g, const EncodedSample& s, Rng* dropout_rng) {
  if (s.labels.size() != s.candidates.size()) throw std::invalid_argument("sample_loss: labels and candidates differ");
  auto f = forward(g, s, dropout_rng);
  Var total;
  for (size_t i = 0; i < f.probs.size(); ++i) {
    Var l = ad::binary_cross_entropy(f.probs[i], label_target(s.labels[i]), cfg.prob_clip);
    total = total ? ad::add(total, l) : l;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void write_doubles(std::ostream& out, const Matrix& m) {
  // Row-major, little-endian, independent of host byte order.
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const auto bits = std::bit_cast<std::uint64_t>(m(i, j));
      unsigned char b[8];
      for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
      out.write(reinterpret_cast<const char*>(b), 8);
    }
}

void read_doubles(std::istream& in, Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      unsigned char b[8];
      if (!in.read(reinterpret_cast<char*>(b), 8)) throw CheckpointError("checkpoint: params.bin is truncated");
      std::uint64_t bits = 0;
      for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
      m(i, j) = std::bit_cast<double>(bits);
    }
}

}  // namespace

void save_checkpoint(const std::string& dir, Model& model, const CheckpointInfo& info) {
  std::filesystem::create_directories(dir);
  std::ofstream bin(dir + "/params.bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + dir + "/params.bin");
  json shapes = json::array();
  model.visit([&](Param& p) {
    write_doubles(bin, p.value);
    shapes.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}});
  });
  bin.close();
  json manifest = {{"format", "impchat-checkpoint-1"},
                   {"model", model.cfg.to_map()},
                   {"config_hash", info.config_hash.empty() ? model.cfg.hash() : info.config_hash},
                   {"model_hash", model.cfg.hash()},
                   {"vocab_hash", info.vocab_hash},
                   {"vocab_size", model.embedding.value.rows()},
                   {"epoch", info.epoch},
                   {"train_loss", info.train_loss},
                   {"valid_loss", info.valid_loss},
                   {"rng_state", info.rng_state},
                   {"params", shapes}};
  std::ofstream mf(dir + "/manifest.json");
  if (!mf) throw std::runtime_error("cannot write " + dir + "/manifest.json");
  mf << manifest.dump(2) << '\n';
}

Model load_checkpoint(const std::string& dir, CheckpointInfo* info) {
  std::ifstream mf(dir + "/manifest.json");
  if (!mf) throw CheckpointError("checkpoint: missing " + dir + "/manifest.json");
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const std::exception& e) {
    throw CheckpointError("checkpoint: unreadable manifest: " + std::string(e.what()));
  }
  ModelConfig cfg;
  for (const auto& [k, v] : manifest.at("model").items()) cfg.set(k, v.get<std::string>());
  if (cfg.hash() != manifest.at("model_hash").get<std::string>())
    throw CheckpointError("checkpoint: model config does not match its recorded hash");
  Model model(cfg, manifest.at("vocab_size").get<int>(), 0);
  const auto& shapes = manifest.at("params");
  std::ifstream bin(dir + "/params.bin", std::ios::binary);
  if (!bin) throw CheckpointError("checkpoint: missing " + dir + "/params.bin");
  size_t idx = 0;
  model.visit([&](Param& p) {
    if (idx >= shapes.size()) throw CheckpointError("checkpoint: fewer parameters recorded than the model has");
    const auto& s = shapes[idx++];
    if (s.at("name").get<std::string>() != p.name || s.at("rows").get<Eigen::Index>() != p.value.rows() ||
        s.at("cols").get<Eigen::Index>() != p.value.cols())
      throw CheckpointError("checkpoint: parameter " + p.name + " does not match the recorded layout");
    read_doubles(bin, p.value);
  });
  if (idx != shapes.size()) throw CheckpointError("checkpoint: more parameters recorded than the model has");
  if (bin.peek() != std::char_traits<char>::eof()) throw CheckpointError("checkpoint: trailing bytes in params.bin");
  if (info) {
    info->config_hash = manifest.at("config_hash").get<std::string>();
    info->vocab_hash = manifest.at("vocab_hash").get<std::string>();
    info->vocab_size = manifest.at("vocab_size").get<int>();
    info->epoch = manifest.at("epoch").get<int>();
    info->train_loss = manifest.at("train_loss").get<double>();
    info->valid_loss = manifest.at("valid_loss").get<double>();
    info->rng_state = manifest.at("rng_state").get<std::string>();
  }
  return model;
}

}  // namespace impchat
