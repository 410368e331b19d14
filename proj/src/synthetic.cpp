// Synthetic persona corpus.  Users reply to a shared pool of topical posts;
// each reply carries the author's style tokens (with some probability) and
// the author's stance word for the post's topic.

#include "impchat/corpus.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>
#include <unordered_map>

namespace impchat {

namespace {

const std::vector<TopicLexicon>& named_topics() {
  static const std::vector<TopicLexicon> topics = {
      {"tennis", {"tennis", "open", "final"}, {"nadal", "federer"}},
      {"computers", {"college", "students", "laptop"}, {"mac", "pc"}},
      {"programming", {"programming", "language", "code"}, {"java", "python"}},
      {"exams", {"exam", "failed", "study"}, {"sad", "proud"}},
      {"football", {"football", "goal", "league"}, {"messi", "ronaldo"}},
      {"music", {"music", "album", "concert"}, {"rock", "jazz"}},
      {"food", {"food", "dinner", "restaurant"}, {"pizza", "sushi"}},
      {"movies", {"movie", "film", "cinema"}, {"marvel", "dc"}},
  };
  return topics;
}

const std::vector<std::string>& named_style_words() {
  static const std::vector<std::string> words = {"vamos", "bravo", "lol",  "haha",  "neat",   "omg",
                                                 "yay",   "dude",  "cheers", "wow", "indeed", "yikes",
                                                 "hehe",  "alas",  "nope", "yep",   "meh",    "whoa"};
  return words;
}

int style_pool_size(const SynthConfig& cfg) {
  return std::max(1, static_cast<int>(cfg.style_pool * cfg.vocab));
}

std::vector<std::string> style_pool(const SynthConfig& cfg) {
  const int n = style_pool_size(cfg);
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) {
    if (i < static_cast<int>(named_style_words().size()))
      out.push_back(named_style_words()[static_cast<size_t>(i)]);
    else
      out.push_back("style" + std::to_string(i));
  }
  return out;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace

std::vector<TopicLexicon> synthetic_topics(const SynthConfig& cfg) {
  std::vector<TopicLexicon> out;
  for (int i = 0; i < cfg.topics; ++i) {
    if (i < static_cast<int>(named_topics().size())) {
      out.push_back(named_topics()[static_cast<size_t>(i)]);
    } else {
      const std::string p = "topic" + std::to_string(i);
      out.push_back({p, {p + "a", p + "b", p + "c"}, {p + "x", p + "y"}});
    }
  }
  return out;
}

SyntheticCorpus generate_synthetic_corpus(const SynthConfig& cfg, std::uint64_t seed,
                                          const std::vector<PersonaManifest>& pinned) {
  cfg.validate();
  if (static_cast<int>(pinned.size()) > cfg.users) throw std::invalid_argument("synthetic corpus: more pinned personas than users");
  const auto topics = synthetic_topics(cfg);
  const auto styles = style_pool(cfg);
  if (cfg.style_tokens > static_cast<int>(styles.size()))
    throw std::invalid_argument("synthetic corpus: style_tokens exceeds the style pool");
  const int lexicon_words = static_cast<int>(topics.size()) * 5 + static_cast<int>(styles.size());
  const int n_filler = cfg.vocab - lexicon_words;
  if (n_filler < 1)
    throw std::invalid_argument("synthetic corpus: vocab " + std::to_string(cfg.vocab) + " too small for " +
                                std::to_string(lexicon_words) + " topic and style words");

  Rng rng(seed);
  auto filler = [&](std::vector<std::string>& words) {
    const int n = cfg.filler_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.filler_max - cfg.filler_min + 1)));
    for (int i = 0; i < n; ++i) words.push_back("w" + std::to_string(rng.below(static_cast<std::uint64_t>(n_filler))));
  };

  // Shared post pool, spaced so every reply lands before the next post.
  struct Post {
    Utterance utt;
    int topic;
  };
  const int n_posts = cfg.post_pool > 0 ? cfg.post_pool : std::max(1, cfg.users * cfg.pairs_per_user / 5);
  const std::int64_t base_ts = 1'600'000'000;
  std::vector<Post> posts;
  for (int j = 0; j < n_posts; ++j) {
    const int topic = static_cast<int>(rng.below(topics.size()));
    const auto& lex = topics[static_cast<size_t>(topic)];
    std::vector<std::string> words;
    std::vector<std::string> tw = lex.topic_words;
    rng.shuffle(tw);
    words.push_back(tw[0]);
    words.push_back(tw[1]);
    if (rng.bernoulli(0.5)) {
      words.push_back(lex.stances.first);
      words.push_back(lex.stances.second);
    }
    filler(words);
    rng.shuffle(words);
    Utterance u;
    u.text = join(words);
    u.words = words;
    u.user_id = "poster" + std::to_string(j);
    u.timestamp = base_ts + static_cast<std::int64_t>(j) * 7200;
    posts.push_back({std::move(u), topic});
  }

  SyntheticCorpus out;
  for (const auto& t : topics) out.topic_names.push_back(t.name);
  std::set<std::string> pinned_ids;
  for (const auto& p : pinned) pinned_ids.insert(p.user_id);

  const int n_pairs = std::min(cfg.pairs_per_user, n_posts);
  for (int u = 0; u < cfg.users; ++u) {
    PersonaManifest persona;
    if (u < static_cast<int>(pinned.size())) {
      persona = pinned[static_cast<size_t>(u)];
    } else {
      std::string uid = "u" + std::to_string(u);
      while (pinned_ids.count(uid)) uid += "_";
      persona.user_id = uid;
    }
    // Draw the generated persona even for pinned users so the stream for
    // later users does not depend on how many were pinned.
    std::vector<std::string> pool = styles;
    rng.shuffle(pool);
    std::vector<std::string> drawn(pool.begin(), pool.begin() + cfg.style_tokens);
    std::map<std::string, std::string> prefs;
    for (const auto& t : topics) prefs[t.name] = rng.bernoulli(0.5) ? t.stances.first : t.stances.second;
    if (u >= static_cast<int>(pinned.size())) {
      persona.style_tokens = drawn;
      persona.topic_prefs = prefs;
    } else {
      for (const auto& [k, v] : prefs)
        if (!persona.topic_prefs.count(k)) persona.topic_prefs[k] = v;
    }

    std::vector<int> chosen(static_cast<size_t>(n_posts));
    for (int j = 0; j < n_posts; ++j) chosen[static_cast<size_t>(j)] = j;
    rng.shuffle(chosen);
    chosen.resize(static_cast<size_t>(n_pairs));
    std::sort(chosen.begin(), chosen.end());
    for (int pj : chosen) {
      const Post& post = posts[static_cast<size_t>(pj)];
      const auto& lex = topics[static_cast<size_t>(post.topic)];
      std::vector<std::string> words;
      words.push_back(persona.topic_prefs.at(lex.name));
      for (const auto& s : persona.style_tokens)
        if (rng.bernoulli(cfg.style_prob)) words.push_back(s);
      filler(words);
      if (rng.bernoulli(0.3)) words.push_back(lex.topic_words[rng.below(lex.topic_words.size())]);
      rng.shuffle(words);
      Utterance r;
      r.text = join(words);
      r.words = words;
      r.user_id = persona.user_id;
      r.timestamp = post.utt.timestamp + 1 + static_cast<std::int64_t>(rng.below(3600));
      out.pairs.push_back({post.utt, std::move(r)});
    }
    out.personas.push_back(std::move(persona));
  }
  return out;
}

}  // namespace impchat
