#include "impchat/corpus.hpp"

#include "impchat/lexindex.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace impchat {

using nlohmann::json;

std::vector<std::string> default_tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (c < 0x80 && std::ispunct(c)) {
      continue;
    } else {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Utterance Utterance::from_text(std::string text, std::string user_id, std::int64_t timestamp, const Tokenizer& tok) {
  Utterance u;
  u.words = tok(text);
  u.text = std::move(text);
  u.user_id = std::move(user_id);
  u.timestamp = timestamp;
  return u;
}

// ---------------------------------------------------------------------------
// Vocab

Vocab::Vocab() : words_{"<pad>", "<unk>"} {
  index_[words_[0]] = pad_id;
  index_[words_[1]] = unk_id;
}

Vocab Vocab::build(const std::vector<const Utterance*>& corpus, int min_freq) {
  std::map<std::string, long> counts;
  for (const Utterance* u : corpus)
    for (const auto& w : u->words) ++counts[w];
  std::vector<std::pair<std::string, long>> ordered(counts.begin(), counts.end());
  // std::map iteration is lexicographic, so a stable sort by count keeps
  // the lexicographic tie-break.
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (const auto& [w, c] : ordered)
    if (c >= min_freq) words.push_back(w);
  return from_words(words);
}

Vocab Vocab::from_words(const std::vector<std::string>& words) {
  Vocab v;
  for (const auto& w : words) {
    if (v.index_.count(w)) throw std::invalid_argument("vocab: duplicate word '" + w + "'");
    v.index_[w] = static_cast<int>(v.words_.size());
    v.words_.push_back(w);
  }
  return v;
}

int Vocab::id(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? unk_id : it->second;
}

const std::string& Vocab::word(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocab: id " + std::to_string(id));
  return words_[static_cast<size_t>(id)];
}

TokenSeq Vocab::encode(const std::vector<std::string>& words, int max_len) const {
  TokenSeq out(static_cast<size_t>(max_len), pad_id);
  const size_t n = std::min(words.size(), static_cast<size_t>(max_len));
  for (size_t i = 0; i < n; ++i) out[i] = id(words[i]);
  return out;
}

std::vector<std::string> Vocab::decode(const TokenSeq& ids) const {
  std::vector<std::string> out;
  for (int id : ids) {
    if (id == pad_id) break;
    out.push_back(word(id));
  }
  return out;
}

void Vocab::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write vocab " + path);
  for (size_t i = 2; i < words_.size(); ++i) f << words_[i] << '\n';
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read vocab " + path);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) words.push_back(line);
  }
  return from_words(words);
}

std::string Vocab::hash() const {
  std::string canon;
  for (const auto& w : words_) canon += w + '\n';
  return fnv1a_hex(canon);
}

// ---------------------------------------------------------------------------
// Histories and samples

std::vector<UserHistory> build_histories(const std::vector<DialoguePair>& raw_pairs, int min_history, int max_words,
                                         BuildStats* stats) {
  if (min_history < 1) throw std::invalid_argument("build_histories: min_history must be >= 1");
  BuildStats local;
  std::map<std::string, std::vector<DialoguePair>> by_user;
  for (const auto& p : raw_pairs) {
    if (p.response.user_id.empty()) {
      ++local.skipped_missing_user;
      continue;
    }
    DialoguePair q = p;
    for (Utterance* u : {&q.post, &q.response}) {
      if (max_words > 0 && static_cast<int>(u->words.size()) > max_words) {
        u->words.resize(static_cast<size_t>(max_words));
        ++local.truncated_utterances;
      }
    }
    by_user[p.response.user_id].push_back(std::move(q));
  }
  std::vector<UserHistory> out;
  for (auto& [user, pairs] : by_user) {
    if (static_cast<int>(pairs.size()) < min_history) {
      ++local.filtered_users;
      continue;
    }
    std::stable_sort(pairs.begin(), pairs.end(), [](const DialoguePair& a, const DialoguePair& b) {
      return a.response.timestamp < b.response.timestamp;
    });
    out.push_back({user, std::move(pairs)});
  }
  if (stats) *stats = local;
  return out;
}

std::vector<std::pair<Utterance, std::string>> response_pool(const std::vector<UserHistory>& histories) {
  std::vector<std::pair<Utterance, std::string>> out;
  for (const auto& h : histories)
    for (const auto& p : h.pairs) out.emplace_back(p.response, p.response.user_id);
  return out;
}

namespace {

std::string post_key(const Utterance& post) {
  return post.user_id + '\x1f' + std::to_string(post.timestamp) + '\x1f' + post.text;
}

std::string response_key(const Utterance& r) {
  return r.user_id + '\x1f' + std::to_string(r.timestamp) + '\x1f' + r.text;
}

std::uint64_t mix_seed(std::uint64_t seed, const std::string& user, int query_index) {
  std::uint64_t h = std::stoull(fnv1a_hex(user + '#' + std::to_string(query_index)), nullptr, 16);
  return seed ^ (h + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
}

}  // namespace

std::vector<Sample> make_samples(const std::vector<UserHistory>& histories, const LexIndex& index,
                                 const SampleOptions& opts, SampleStats* stats) {
  if (opts.n_candidates < 1) throw std::invalid_argument("make_samples: n_candidates must be >= 1");
  if (opts.history < 1) throw std::invalid_argument("make_samples: history must be >= 1");
  SampleStats local;
  std::unordered_map<std::string, std::vector<const Utterance*>> responses_by_post;
  for (const auto& h : histories)
    for (const auto& p : h.pairs) responses_by_post[post_key(p.post)].push_back(&p.response);

  std::vector<const UserHistory*> ordered;
  for (const auto& h : histories) ordered.push_back(&h);
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->user_id < b->user_id; });

  long total_np = 0, total_rt = 0;
  std::vector<Sample> out;
  for (const UserHistory* h : ordered) {
    const int n_pairs = static_cast<int>(h->pairs.size());
    for (int qi = 0; qi < opts.queries_per_user && qi < n_pairs; ++qi) {
      const int pos = n_pairs - 1 - qi;
      const DialoguePair& target = h->pairs[static_cast<size_t>(pos)];
      Sample s;
      s.user_id = h->user_id;
      s.query = target.post;

      std::vector<DialoguePair> earlier;
      for (int j = 0; j < pos; ++j)
        if (h->pairs[static_cast<size_t>(j)].response.timestamp < s.query.timestamp)
          earlier.push_back(h->pairs[static_cast<size_t>(j)]);
      if (earlier.empty()) {
        ++local.dropped_no_history;
        continue;
      }
      const size_t keep = std::min(earlier.size(), static_cast<size_t>(opts.history));
      s.history.assign(earlier.end() - static_cast<std::ptrdiff_t>(keep), earlier.end());

      std::unordered_set<std::string> seen_text;
      s.candidates.push_back({target.response, Label::personalized});
      seen_text.insert(target.response.text);

      const auto& co = responses_by_post[post_key(target.post)];
      std::unordered_set<std::string> co_keys;
      for (const Utterance* r : co) co_keys.insert(response_key(*r));
      int n_np = 0;
      for (const Utterance* r : co) {
        if (static_cast<int>(s.candidates.size()) >= opts.n_candidates) break;
        if (r->user_id == h->user_id) continue;
        if (!seen_text.insert(r->text).second) continue;
        s.candidates.push_back({*r, Label::non_personalized});
        ++n_np;
      }

      int needed = opts.n_candidates - static_cast<int>(s.candidates.size());
      int n_rt = 0;
      if (needed > 0) {
        int top_k = needed * 4 + static_cast<int>(co.size()) + 8;
        while (true) {
          auto hits = index.search(s.query.words, top_k, h->user_id);
          std::vector<Candidate> picked;
          std::unordered_set<std::string> taken = seen_text;
          for (const auto& hit : hits) {
            if (static_cast<int>(picked.size()) >= needed) break;
            const auto& doc = index.doc(hit.doc_id);
            if (co_keys.count(response_key(doc.response))) continue;
            if (!taken.insert(doc.response.text).second) continue;
            picked.push_back({doc.response, Label::retrieved});
          }
          if (static_cast<int>(picked.size()) >= needed || static_cast<int>(hits.size()) < top_k) {
            n_rt = static_cast<int>(picked.size());
            for (auto& c : picked) s.candidates.push_back(std::move(c));
            break;
          }
          top_k *= 2;
        }
      }
      if (static_cast<int>(s.candidates.size()) < opts.n_candidates) {
        ++local.dropped_short_retrieval;
        continue;
      }
      Rng rng(mix_seed(opts.seed, h->user_id, qi));
      rng.shuffle(s.candidates);
      total_np += n_np;
      total_rt += n_rt;
      out.push_back(std::move(s));
    }
  }
  if (!out.empty()) {
    local.mean_non_personalized = static_cast<double>(total_np) / static_cast<double>(out.size());
    local.mean_retrieved = static_cast<double>(total_rt) / static_cast<double>(out.size());
  }
  if (stats) *stats = local;
  return out;
}

Splits split_by_user(const std::vector<Sample>& samples, double train_frac, double valid_frac, std::uint64_t seed) {
  std::set<std::string> user_set;
  for (const auto& s : samples) user_set.insert(s.user_id);
  std::vector<std::string> users(user_set.begin(), user_set.end());
  Rng rng(seed ^ 0x5eed5b1175ULL);
  rng.shuffle(users);
  const auto n = users.size();
  const auto n_train = static_cast<size_t>(static_cast<double>(n) * train_frac + 0.5);
  const auto n_valid = std::min(n - n_train, static_cast<size_t>(static_cast<double>(n) * valid_frac + 0.5));
  std::unordered_map<std::string, int> which;
  for (size_t i = 0; i < n; ++i) which[users[i]] = i < n_train ? 0 : (i < n_train + n_valid ? 1 : 2);
  Splits out;
  for (const auto& s : samples) {
    switch (which[s.user_id]) {
      case 0: out.train.push_back(s); break;
      case 1: out.valid.push_back(s); break;
      default: out.test.push_back(s); break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

json sample_to_json(const Sample& s) {
  json cands = json::array();
  for (const auto& c : s.candidates) cands.push_back({{"text", c.response.text}, {"label", static_cast<int>(c.label)}});
  json hist = json::array();
  for (const auto& p : s.history) hist.push_back({{"post", p.post.text}, {"response", p.response.text}});
  return {{"user_id", s.user_id}, {"query", s.query.text}, {"candidates", std::move(cands)}, {"history", std::move(hist)}};
}

Sample sample_from_json(const json& j, const Tokenizer& tok) {
  Sample s;
  s.user_id = j.at("user_id").get<std::string>();
  // Timestamps are not serialized; reconstruct a consistent order.
  const auto& hist = j.at("history");
  std::int64_t ts = 0;
  for (const auto& p : hist) {
    DialoguePair pair;
    pair.post = Utterance::from_text(p.at("post").get<std::string>(), "", ts++, tok);
    pair.response = Utterance::from_text(p.at("response").get<std::string>(), s.user_id, ts++, tok);
    s.history.push_back(std::move(pair));
  }
  s.query = Utterance::from_text(j.at("query").get<std::string>(), "", ts++, tok);
  for (const auto& c : j.at("candidates")) {
    const int label = c.at("label").get<int>();
    if (label < 0 || label > 2) throw std::invalid_argument("sample: label must be 0, 1 or 2");
    s.candidates.push_back({Utterance::from_text(c.at("text").get<std::string>(), "", ts, tok), static_cast<Label>(label)});
  }
  return s;
}

void write_samples_jsonl(const std::string& path, const std::vector<Sample>& samples) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  for (const auto& s : samples) f << sample_to_json(s).dump() << '\n';
}

std::vector<Sample> read_samples_jsonl(const std::string& path, const Tokenizer& tok) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::vector<Sample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_json(json::parse(line), tok));
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

json personas_to_json(const std::vector<PersonaManifest>& personas) {
  json out = json::object();
  for (const auto& p : personas) out[p.user_id] = {{"style_tokens", p.style_tokens}, {"topic_prefs", p.topic_prefs}};
  return out;
}

std::vector<DialoguePair> read_raw_tsv(std::istream& in, TsvStats* stats, const Tokenizer& tok) {
  TsvStats local;
  std::vector<DialoguePair> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++local.lines;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) f.push_back(field);
    if (f.size() != 6) {
      ++local.skipped;
      continue;
    }
    try {
      size_t used = 0;
      const std::int64_t pts = std::stoll(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument(f[2]);
      const std::int64_t rts = std::stoll(f[5], &used);
      if (used != f[5].size()) throw std::invalid_argument(f[5]);
      DialoguePair p{Utterance::from_text(f[0], f[1], pts, tok), Utterance::from_text(f[3], f[4], rts, tok)};
      if (p.post.words.empty() || p.response.words.empty() || rts < pts) {
        ++local.skipped;
        continue;
      }
      out.push_back(std::move(p));
    } catch (const std::exception&) {
      ++local.skipped;
    }
  }
  if (stats) *stats = local;
  return out;
}

void write_raw_tsv(std::ostream& out, const std::vector<DialoguePair>& pairs) {
  for (const auto& p : pairs)
    out << p.post.text << '\t' << p.post.user_id << '\t' << p.post.timestamp << '\t' << p.response.text << '\t'
        << p.response.user_id << '\t' << p.response.timestamp << '\n';
}

}  // namespace impchat
