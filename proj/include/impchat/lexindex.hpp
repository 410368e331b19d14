#pragma once

#include "impchat/corpus.hpp"

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace impchat {

struct Posting {
  std::int32_t doc_id;
  std::int32_t tf;
};

struct SearchHit {
  int doc_id;
  double score;
};

struct IndexedDoc {
  Utterance response;
  std::string author;
};

/// Okapi BM25 inverted index over tokenized responses.
class LexIndex {
 public:
  static constexpr double k1 = 1.2;
  static constexpr double b = 0.75;

  LexIndex() = default;

  /// Doc ids are assigned in input order.
  static LexIndex build(const std::vector<std::pair<Utterance, std::string>>& docs);

  /// Appends a document under an explicit id; throws on a duplicate id.
  void add(int doc_id, const Utterance& response, const std::string& author);

  /// BM25 over the unique query terms.  Descending score, ties by ascending
  /// doc id; documents by exclude_user are skipped (empty = no filter).
  std::vector<SearchHit> search(const std::vector<std::string>& query, int top_k,
                                const std::string& exclude_user = "") const;

  /// Score of a single document, computed from the stored statistics.
  double score(const std::vector<std::string>& query, int doc_id) const;

  int size() const { return static_cast<int>(docs_.size()); }
  double avg_len() const { return docs_.empty() ? 0.0 : static_cast<double>(total_len_) / static_cast<double>(docs_.size()); }
  const IndexedDoc& doc(int doc_id) const;
  int doc_len(int doc_id) const;
  const std::vector<Posting>* postings(const std::string& term) const;
  /// Inverse document frequency ln((N - df + 0.5) / (df + 0.5) + 1).
  double idf(const std::string& term) const;

  void save(const std::string& path) const;
  static LexIndex load(const std::string& path);

 private:
  struct Slot {
    IndexedDoc doc;
    int len = 0;
  };
  std::unordered_map<int, Slot> docs_;
  std::vector<int> doc_order_;
  std::unordered_map<std::string, std::vector<Posting>> postings_;
  long long total_len_ = 0;
};

}  // namespace impchat
