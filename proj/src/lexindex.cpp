#include "impchat/lexindex.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

namespace impchat {

namespace {

constexpr char kMagic[8] = {'I', 'M', 'P', 'L', 'E', 'X', '0', '1'};
constexpr int kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_i64(std::ostream& out, std::int64_t v) {
  const auto u = static_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_str(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("index: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::int64_t get_i64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("index: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return static_cast<std::int64_t>(v);
}

std::string get_str(std::istream& in) {
  const auto n = get_u32(in);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw std::runtime_error("index: truncated file");
  return s;
}

}  // namespace

LexIndex LexIndex::build(const std::vector<std::pair<Utterance, std::string>>& docs) {
  LexIndex idx;
  for (size_t i = 0; i < docs.size(); ++i) idx.add(static_cast<int>(i), docs[i].first, docs[i].second);
  return idx;
}

void LexIndex::add(int doc_id, const Utterance& response, const std::string& author) {
  if (doc_id < 0) throw std::invalid_argument("index: negative doc id");
  if (docs_.count(doc_id)) throw std::invalid_argument("index: duplicate doc id " + std::to_string(doc_id));
  std::map<std::string, int> tf;
  for (const auto& w : response.words) ++tf[w];
  for (const auto& [term, n] : tf) {
    auto& list = postings_[term];
    const Posting p{doc_id, n};
    auto pos = std::lower_bound(list.begin(), list.end(), doc_id,
                                [](const Posting& a, int id) { return a.doc_id < id; });
    list.insert(pos, p);
  }
  docs_[doc_id] = {{response, author}, static_cast<int>(response.words.size())};
  doc_order_.push_back(doc_id);
  total_len_ += static_cast<long long>(response.words.size());
}

const IndexedDoc& LexIndex::doc(int doc_id) const {
  auto it = docs_.find(doc_id);
  if (it == docs_.end()) throw std::out_of_range("index: unknown doc id " + std::to_string(doc_id));
  return it->second.doc;
}

int LexIndex::doc_len(int doc_id) const {
  auto it = docs_.find(doc_id);
  if (it == docs_.end()) throw std::out_of_range("index: unknown doc id " + std::to_string(doc_id));
  return it->second.len;
}

const std::vector<Posting>* LexIndex::postings(const std::string& term) const {
  auto it = postings_.find(term);
  return it == postings_.end() ? nullptr : &it->second;
}

double LexIndex::idf(const std::string& term) const {
  const auto* list = postings(term);
  const double df = list ? static_cast<double>(list->size()) : 0.0;
  const double n = static_cast<double>(docs_.size());
  return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

double LexIndex::score(const std::vector<std::string>& query, int doc_id) const {
  const std::set<std::string> terms(query.begin(), query.end());
  const double avg = avg_len();
  const double len = doc_len(doc_id);
  double s = 0.0;
  for (const auto& t : terms) {
    const auto* list = postings(t);
    if (!list) continue;
    auto pos = std::lower_bound(list->begin(), list->end(), doc_id,
                                [](const Posting& a, int id) { return a.doc_id < id; });
    if (pos == list->end() || pos->doc_id != doc_id) continue;
    const double tf = pos->tf;
    s += idf(t) * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg));
  }
  return s;
}

std::vector<SearchHit> LexIndex::search(const std::vector<std::string>& query, int top_k,
                                        const std::string& exclude_user) const {
  if (top_k < 1) throw std::invalid_argument("index: top_k must be >= 1");
  const std::set<std::string> terms(query.begin(), query.end());
  const double avg = avg_len();
  std::map<int, double> acc;
  for (const auto& t : terms) {
    const auto* list = postings(t);
    if (!list) continue;
    const double w = idf(t);
    for (const auto& p : *list) {
      const double len = docs_.at(p.doc_id).len;
      const double tf = p.tf;
      acc[p.doc_id] += w * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg));
    }
  }
  std::vector<SearchHit> hits;
  hits.reserve(acc.size());
  for (const auto& [id, s] : acc) {
    if (!exclude_user.empty() && docs_.at(id).doc.author == exclude_user) continue;
    hits.push_back({id, s});
  }
  auto better = [](const SearchHit& a, const SearchHit& b) {
    return a.score != b.score ? a.score > b.score : a.doc_id < b.doc_id;
  };
  if (static_cast<int>(hits.size()) > top_k) {
    std::partial_sort(hits.begin(), hits.begin() + top_k, hits.end(), better);
    hits.resize(static_cast<size_t>(top_k));
  } else {
    std::sort(hits.begin(), hits.end(), better);
  }
  return hits;
}

// Layout: magic, u32 header length, JSON header, then per document (in
// insertion order) id, timestamp, author, text, words; all integers
// little-endian.  Postings are rebuilt on load.
void LexIndex::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write index " + path);
  const nlohmann::json header = {{"version", kVersion}, {"N", size()}, {"avg_len", avg_len()}};
  const std::string hs = header.dump();
  out.write(kMagic, sizeof kMagic);
  put_str(out, hs);
  for (int id : doc_order_) {
    const auto& slot = docs_.at(id);
    put_u32(out, static_cast<std::uint32_t>(id));
    put_i64(out, slot.doc.response.timestamp);
    put_str(out, slot.doc.author);
    put_str(out, slot.doc.response.user_id);
    put_str(out, slot.doc.response.text);
    put_u32(out, static_cast<std::uint32_t>(slot.doc.response.words.size()));
    for (const auto& w : slot.doc.response.words) put_str(out, w);
  }
  if (!out) throw std::runtime_error("index: write failed for " + path);
}

LexIndex LexIndex::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read index " + path);
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw std::runtime_error("index: bad magic in " + path);
  const auto header = nlohmann::json::parse(get_str(in));
  if (header.at("version").get<int>() != kVersion) throw std::runtime_error("index: unsupported version");
  const int n = header.at("N").get<int>();
  LexIndex idx;
  for (int i = 0; i < n; ++i) {
    const int id = static_cast<int>(get_u32(in));
    Utterance u;
    u.timestamp = get_i64(in);
    const std::string author = get_str(in);
    u.user_id = get_str(in);
    u.text = get_str(in);
    const auto nw = get_u32(in);
    for (std::uint32_t k = 0; k < nw; ++k) u.words.push_back(get_str(in));
    idx.add(id, u, author);
  }
  if (std::abs(idx.avg_len() - header.at("avg_len").get<double>()) > 1e-9 * std::max(1.0, idx.avg_len()))
    throw std::runtime_error("index: header statistics do not match the stored documents");
  return idx;
}

}  // namespace impchat
