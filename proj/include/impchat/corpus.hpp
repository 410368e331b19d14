#pragma once

#include "impchat/config.hpp"
#include "impchat/nnblocks.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace impchat {

class LexIndex;

using Tokenizer = std::function<std::vector<std::string>(const std::string&)>;

/// Lowercases, strips punctuation and splits on whitespace.
std::vector<std::string> default_tokenize(const std::string& text);

struct Utterance {
  std::string text;
  std::vector<std::string> words;  // tokenized, at most max_words
  std::string user_id;
  std::int64_t timestamp = 0;

  static Utterance from_text(std::string text, std::string user_id, std::int64_t timestamp,
                             const Tokenizer& tok = default_tokenize);
};

struct DialoguePair {
  Utterance post;
  Utterance response;  // authored by the history owner
};

struct UserHistory {
  std::string user_id;
  std::vector<DialoguePair> pairs;  // ascending response timestamp
};

enum class Label : int { retrieved = 0, non_personalized = 1, personalized = 2 };

struct Candidate {
  Utterance response;
  Label label = Label::retrieved;
};

struct Sample {
  std::string user_id;
  Utterance query;
  std::vector<Candidate> candidates;
  std::vector<DialoguePair> history;  // oldest first, all before query.timestamp
};

struct PersonaManifest {
  std::string user_id;
  std::vector<std::string> style_tokens;
  std::map<std::string, std::string> topic_prefs;  // topic name -> preferred stance token
};

/// Word <-> id map.  Id 0 is PAD, id 1 is UNK; the rest are ordered by
/// descending frequency with ties broken lexicographically.
class Vocab {
 public:
  static constexpr int pad_id = 0;
  static constexpr int unk_id = 1;

  Vocab();
  static Vocab build(const std::vector<const Utterance*>& corpus, int min_freq);
  static Vocab from_words(const std::vector<std::string>& words_after_specials);

  int size() const { return static_cast<int>(words_.size()); }
  int id(const std::string& word) const;
  const std::string& word(int id) const;
  bool contains(const std::string& word) const { return index_.count(word) != 0; }

  /// Maps words to ids, truncated to max_len and right-padded with PAD.
  TokenSeq encode(const std::vector<std::string>& words, int max_len) const;
  /// Ids back to words, stopping at PAD.
  std::vector<std::string> decode(const TokenSeq& ids) const;

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);
  std::string hash() const;

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
};

struct BuildStats {
  int skipped_missing_user = 0;
  int filtered_users = 0;
  int truncated_utterances = 0;
};

/// Groups pairs by response author, sorts each history by response
/// timestamp (stable), truncates utterances to max_words and drops users
/// with fewer than min_history pairs.  Output is ordered by user id.
std::vector<UserHistory> build_histories(const std::vector<DialoguePair>& raw_pairs, int min_history, int max_words,
                                         BuildStats* stats = nullptr);

struct SampleOptions {
  int n_candidates = 10;
  int history = 10;          // t
  int queries_per_user = 1;  // 1 = latest post only
  std::uint64_t seed = 0;
};

struct SampleStats {
  int dropped_short_retrieval = 0;
  int dropped_no_history = 0;
  double mean_non_personalized = 0;
  double mean_retrieved = 0;
};

/// Builds labeled candidate lists.  Per query: the owner's response
/// (label 2), other users' responses to the same post (label 1), then
/// lexical retrieval hits not authored by the owner (label 0) until
/// n_candidates are filled; order is shuffled with a per-sample seed.
std::vector<Sample> make_samples(const std::vector<UserHistory>& histories, const LexIndex& index,
                                 const SampleOptions& opts, SampleStats* stats = nullptr);

/// Every response in the histories, in (user, time) order, as index input.
std::vector<std::pair<Utterance, std::string>> response_pool(const std::vector<UserHistory>& histories);

struct SyntheticCorpus {
  std::vector<DialoguePair> pairs;
  std::vector<PersonaManifest> personas;
  std::vector<std::string> topic_names;
};

/// Deterministic persona corpus: users with planted style tokens and topic
/// stances replying to a shared pool of topical posts.  `pinned` personas
/// replace the generated ones for the first users.
SyntheticCorpus generate_synthetic_corpus(const SynthConfig& cfg, std::uint64_t seed,
                                          const std::vector<PersonaManifest>& pinned = {});

/// Stance token pair (preferred-by-some, preferred-by-others) of a topic.
struct TopicLexicon {
  std::string name;
  std::vector<std::string> topic_words;
  std::pair<std::string, std::string> stances;
};
std::vector<TopicLexicon> synthetic_topics(const SynthConfig& cfg);

/// Deterministic per-user split (fractions of users for train/valid).
struct Splits {
  std::vector<Sample> train, valid, test;
};
Splits split_by_user(const std::vector<Sample>& samples, double train_frac, double valid_frac, std::uint64_t seed);

// Serialization.
nlohmann::json sample_to_json(const Sample& s);
Sample sample_from_json(const nlohmann::json& j, const Tokenizer& tok = default_tokenize);
void write_samples_jsonl(const std::string& path, const std::vector<Sample>& samples);
std::vector<Sample> read_samples_jsonl(const std::string& path, const Tokenizer& tok = default_tokenize);
nlohmann::json personas_to_json(const std::vector<PersonaManifest>& personas);

struct TsvStats {
  int lines = 0;
  int skipped = 0;
};
/// Reads `post_text \t post_user \t post_ts \t resp_text \t resp_user \t resp_ts`.
std::vector<DialoguePair> read_raw_tsv(std::istream& in, TsvStats* stats = nullptr,
                                       const Tokenizer& tok = default_tokenize);
void write_raw_tsv(std::ostream& out, const std::vector<DialoguePair>& pairs);

}  // namespace impchat
