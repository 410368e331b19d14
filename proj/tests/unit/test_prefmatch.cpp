#include "fixtures.hpp"
#include "impchat/corpus.hpp"
#include "impchat/prefmatch.hpp"

#include <doctest.h>

#include <set>

using namespace impchat;
using namespace impchat::testing;

namespace {

EmbSeq const_seq(Graph& g, Rng& rng, int len, int d, double pad_prob = 0.3) {
  Mask m = random_mask(rng, static_cast<size_t>(len), pad_prob);
  Matrix v = random_matrix(rng, len, d);
  for (int i = 0; i < len; ++i)
    if (!m[static_cast<size_t>(i)]) v.row(i).setZero();
  return {g.constant(std::move(v)), std::move(m)};
}

std::vector<EmbSeq> const_posts(Graph& g, Rng& rng, int n, int len, int d) {
  std::vector<EmbSeq> out;
  for (int i = 0; i < n; ++i) out.push_back(const_seq(g, rng, len, d));
  return out;
}

Matrix naive_mean(const EmbSeq& s) {
  Matrix sum = Matrix::Zero(1, s.width());
  int n = 0;
  for (Eigen::Index i = 0; i < s.length(); ++i)
    if (s.mask[static_cast<size_t>(i)]) {
      sum += s.values->value.row(i);
      ++n;
    }
  return sum / n;
}

double naive_cosine(const Matrix& a, const Matrix& b) {
  double dot = 0, na = 0, nb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    dot += a(i) * b(i);
    na += a(i) * a(i);
    nb += b(i) * b(i);
  }
  return na == 0 || nb == 0 ? 0.0 : dot / std::sqrt(na * nb);
}

// One-token sequence padded to length len.
EmbSeq single_token(Graph& g, const Matrix& row, int len) {
  Matrix v = Matrix::Zero(len, row.cols());
  v.row(0) = row;
  Mask m(static_cast<size_t>(len), false);
  m[0] = true;
  return {g.constant(std::move(v)), std::move(m)};
}

}  // namespace

TEST_CASE("word-level relevance: singleton, normalization, all-masked error") {
  Rng rng(1);
  PrefParams p(tiny_config(), rng);
  Graph g(false);
  RelevanceInputs one{{const_seq(g, rng, 3, 4)}};
  CHECK(word_level_relevance(g, one, p)->value(0, 0) == 1.0);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(seed);
    PrefParams ps(tiny_config(), r);
    Graph g(false);
    RelevanceInputs reps{const_posts(g, r, 3, 3, 4)};
    const Matrix s1 = word_level_relevance(g, reps, ps)->value;
    REQUIRE(s1.rows() == 3);
    CHECK((s1.array() >= 0).all());
    CHECK(std::abs(s1.sum() - 1.0) < 1e-6);
  }

  EmbSeq blank{g.constant(Matrix::Zero(3, 4)), {false, false, false}};
  RelevanceInputs none{{blank, blank}};
  CHECK_THROWS_AS(word_level_relevance(g, none, p), std::invalid_argument);
  RelevanceInputs too_many{const_posts(g, rng, 4, 3, 4)};
  CHECK_THROWS_AS(word_level_relevance(g, too_many, p), std::invalid_argument);
}

TEST_CASE("word-level relevance ignores whatever sits in pad positions") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 20);
    PrefParams p(tiny_config(), rng);
    Graph g(false);
    RelevanceInputs reps{const_posts(g, rng, 3, 3, 4)};
    RelevanceInputs garbled = reps;
    for (auto& e : garbled.posts) {
      Matrix v = e.values->value;
      std::vector<Eigen::Index> pads;
      for (Eigen::Index i = 0; i < v.rows(); ++i)
        if (!e.mask[static_cast<size_t>(i)]) pads.push_back(i);
      for (auto i : pads) v.row(i) = random_matrix(rng, 1, 4, 10.0);
      e.values = g.constant(std::move(v));
    }
    CHECK(word_level_relevance(g, reps, p)->value == word_level_relevance(g, garbled, p)->value);
  }
}

TEST_CASE("word-level relevance gradient at d=4, L=3, t=2") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 40);
    PrefParams p(tiny_config(), rng);
    std::vector<Leaf> leaves;
    for (int i = 0; i < 3; ++i) leaves.emplace_back(rng, "post" + std::to_string(i), 3, 4);
    std::vector<Param*> ps{&p.bilinear, &p.channel_mix};
    p.word_score.visit([&](Param& x) { ps.push_back(&x); });
    for (auto& l : leaves) ps.push_back(&l.values);
    auto res = gradcheck(ps, [&](Graph& g) {
      RelevanceInputs reps;
      for (auto& l : leaves) reps.posts.push_back(l.seq(g));
      return probe(g, word_level_relevance(g, reps, p), seed);
    }, rng, 0, 1e-6, 1e-5);
    INFO("seed ", seed, ": ", res.worst);
    CHECK(res.max_rel_err < 1e-3);
  }
}

TEST_CASE("context-level relevance: self, antipodal, naive oracle") {
  Graph g(false);
  Rng rng(2);
  EmbSeq q = const_seq(g, rng, 3, 4);
  EmbSeq neg{ad::scale(q.values, -1.0), q.mask};
  const Matrix s2 = context_level_relevance({{neg, q}})->value;
  CHECK(s2(1, 0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s2(0, 0) == doctest::Approx(-1.0).epsilon(1e-15));

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(seed + 60);
    RelevanceInputs reps{const_posts(g, r, 4, 5, 6)};
    const Matrix got = context_level_relevance(reps)->value;
    const Matrix qm = naive_mean(reps.posts.back());
    for (size_t i = 0; i < reps.posts.size(); ++i) {
      const double want = naive_cosine(naive_mean(reps.posts[i]), qm);
      CHECK(std::abs(got(static_cast<Eigen::Index>(i), 0) - want) < 1e-10);
      CHECK(std::abs(got(static_cast<Eigen::Index>(i), 0)) <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("combine_relevance") {
  Graph g(false);
  Matrix a(2, 1), b(2, 1);
  a << 0.2, 0.8;
  b << 0.6, 0.4;
  Var s1 = g.constant(a), s2 = g.constant(b);
  const Matrix half = combine_relevance(s1, s2, g.constant(Matrix::Constant(1, 1, 0.5)))->value;
  CHECK(half(0, 0) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(half(1, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(combine_relevance(s1, s2, g.constant(Matrix::Ones(1, 1)))->value == a);
  CHECK(combine_relevance(s1, s2, g.constant(Matrix::Zero(1, 1)))->value == b);
  CHECK_THROWS_AS(combine_relevance(s1, g.constant(Matrix::Zero(3, 1)), g.constant(Matrix::Zero(1, 1))),
                  std::invalid_argument);
}

TEST_CASE("multi_hop: one hop scales the single score vector") {
  Rng rng(3);
  PrefParams p(tiny_config(), rng);
  p.hop_mix.value(0, 0) = 0.7;
  Graph g(false);
  EmbSeq q = const_seq(g, rng, 3, 4);
  auto trace = multi_hop(g, q, const_posts(g, rng, 2, 3, 4), 1, p);
  CHECK(trace.popped.empty());
  REQUIRE(trace.scores.size() == 1);
  CHECK(trace.combined->value == (0.7 * trace.scores[0]->value).eval());
}

TEST_CASE("multi_hop pops the highest-scoring buffered post") {
  // One-token posts at cosines 0.1, 0.7, 0.2 to the query; with alpha = 0 and
  // a bare attentive module the hop-1 scores are exactly those cosines.
  auto cfg = tiny_config();
  cfg.history = 3;
  Rng rng(4);
  PrefParams p(cfg, rng);
  p.relevance.bypass_norm = p.relevance.bypass_ffn = true;
  p.alpha.value(0, 0) = 0.0;
  Graph g(false);
  auto unit = [](double c) {
    Matrix m = Matrix::Zero(1, 4);
    m(0, 0) = c;
    m(0, 1) = std::sqrt(1 - c * c);
    return m;
  };
  EmbSeq q = single_token(g, unit(1.0), 3);
  std::vector<EmbSeq> posts{single_token(g, unit(0.1), 3), single_token(g, unit(0.7), 3), single_token(g, unit(0.2), 3)};
  auto trace = multi_hop(g, q, posts, 2, p);
  const Matrix s = trace.scores[0]->value;
  CHECK(s(0, 0) == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(s(1, 0) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(s(2, 0) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(s(3, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(trace.popped == std::vector<int>{1});

  // Ties go to the lowest index.
  std::vector<EmbSeq> tied{single_token(g, unit(0.5), 3), single_token(g, unit(0.5), 3), single_token(g, unit(0.2), 3)};
  CHECK(multi_hop(g, q, tied, 2, p).popped == std::vector<int>{0});
}

TEST_CASE("multi_hop pops are distinct argmaxes and deterministic") {
  auto cfg = tiny_config();
  cfg.history = 4;
  cfg.hops = 4;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 80);
    PrefParams p(cfg, rng);
    Graph g(false);
    EmbSeq q = const_seq(g, rng, 3, 4);
    auto posts = const_posts(g, rng, 4, 3, 4);
    auto trace = multi_hop(g, q, posts, 4, p);
    REQUIRE(trace.popped.size() == 3);
    REQUIRE(trace.scores.size() == 4);
    CHECK(std::set<int>(trace.popped.begin(), trace.popped.end()).size() == 3);
    std::set<int> buffer{0, 1, 2, 3};
    for (size_t h = 0; h < trace.popped.size(); ++h) {
      int best = -1;
      for (int j : buffer)
        if (best < 0 || trace.scores[h]->value(j, 0) > trace.scores[h]->value(best, 0)) best = j;
      CHECK(trace.popped[h] == best);
      buffer.erase(best);
    }
    auto again = multi_hop(g, q, posts, 4, p);
    CHECK(again.popped == trace.popped);
    CHECK(again.combined->value == trace.combined->value);
  }
}

TEST_CASE("multi_hop rejects bad hop counts and empty history") {
  Rng rng(5);
  PrefParams p(tiny_config(), rng);
  Graph g(false);
  EmbSeq q = const_seq(g, rng, 3, 4);
  auto posts = const_posts(g, rng, 2, 3, 4);
  CHECK_THROWS_AS(multi_hop(g, q, posts, 3, p), std::invalid_argument);  // more hops than mixing weights
  auto cfg = tiny_config();
  cfg.hops = 4;
  PrefParams deep(cfg, rng);
  CHECK_NOTHROW(multi_hop(g, q, posts, 3, deep));
  CHECK_THROWS_AS(multi_hop(g, q, posts, 4, deep), std::invalid_argument);
  CHECK_THROWS_AS(multi_hop(g, q, posts, 0, p), std::invalid_argument);
  CHECK_THROWS_AS(multi_hop(g, q, {}, 1, p), std::invalid_argument);
}

TEST_CASE("multi_hop scores permute with the history") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 100);
    auto cfg = tiny_config();
    cfg.history = 3;
    PrefParams p(cfg, rng);
    Graph g(false);
    EmbSeq q = const_seq(g, rng, 3, 4);
    auto posts = const_posts(g, rng, 3, 3, 4);
    std::vector<size_t> perm{0, 1, 2};
    rng.shuffle(perm);
    std::vector<EmbSeq> permuted;
    for (size_t i : perm) permuted.push_back(posts[i]);
    const Matrix a = multi_hop(g, q, posts, 2, p).combined->value;
    const Matrix b = multi_hop(g, q, permuted, 2, p).combined->value;
    for (size_t i = 0; i < 3; ++i)
      CHECK(std::abs(b(static_cast<Eigen::Index>(i), 0) - a(static_cast<Eigen::Index>(perm[i]), 0)) < 1e-10);
    CHECK(std::abs(b(3, 0) - a(3, 0)) < 1e-10);
  }
}

TEST_CASE("scaling a profile pair scales the dot channel and keeps the cosine channel") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 120);
    Graph g(false);
    Var a = g.constant(random_matrix(rng, 3, 4));
    Var b = g.constant(random_matrix(rng, 6, 4));
    Var m = g.constant(random_matrix(rng, 4, 4));
    const double c = rng.uniform(0.1, 3.0);
    auto base = pref_match_channels(a, b, m);
    auto scaled = pref_match_channels(a, ad::scale(b, c), m);
    CHECK(max_abs_diff(scaled[0]->value, c * base[0]->value) < 1e-12);
    CHECK(max_abs_diff(scaled[1]->value, base[1]->value) < 1e-12);
  }
}

TEST_CASE("zero relevance gives a zero profile and a finite preference feature") {
  Rng rng(6);
  PrefParams p(tiny_config(), rng);
  p.hop_mix.value.setZero();
  Graph g(false);
  EmbSeq q = const_seq(g, rng, 3, 4, 0.0);
  std::vector<std::pair<EmbSeq, EmbSeq>> hist;
  for (int j = 0; j < 2; ++j) hist.emplace_back(const_seq(g, rng, 3, 4, 0.0), const_seq(g, rng, 3, 4, 0.0));
  auto ctx = pref_context(g, q, hist, p);
  EmbSeq cand = const_seq(g, rng, 3, 4);
  for (const auto& d_j : ctx.profile) {
    CHECK(d_j.values->value.isZero(0));
    for (const auto& ch : pref_match_channels(cand.values, d_j.values, g.param(p.match_raw))) CHECK(ch->value.isZero(0));
  }
  auto out = pref_feature(g, ctx, cand, p);
  CHECK(out.pair_feats[0]->value == out.pair_feats[1]->value);
  CHECK(out.feature->value.allFinite());
}

TEST_CASE("one history pair: the feature is a single GRU step") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 140);
    PrefParams p(tiny_config(), rng);
    Graph g(false);
    EmbSeq q = const_seq(g, rng, 3, 4);
    std::vector<std::pair<EmbSeq, EmbSeq>> hist{{const_seq(g, rng, 3, 4), const_seq(g, rng, 3, 4)}};
    auto out = pref_feature(g, pref_context(g, q, hist, p, false), const_seq(g, rng, 3, 4), p);
    REQUIRE(out.pair_feats.size() == 1);
    CHECK(out.feature->value == p.gru.step(g, out.pair_feats[0], g.constant(Matrix::Zero(1, 4)))->value);
  }
}

TEST_CASE("preference branch gradient at d=4, L=3, t=2, k=2, GRU 4") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 160);
    PrefParams p(tiny_config(), rng);
    Leaf q(rng, "query", 3, 4), c(rng, "cand", 3, 4);
    LeafHistory hist(rng, 2, 3, 4);
    auto ps = params_of(p);
    ps.push_back(&q.values);
    ps.push_back(&c.values);
    hist.add_params(ps);
    jitter(ps, rng);
    auto res = gradcheck(ps, [&](Graph& g) {
      auto ctx = pref_context(g, q.seq(g), hist.pairs(g), p);
      return probe(g, pref_feature(g, ctx, c.seq(g), p).feature, seed);
    }, rng, 0, 1e-6, 1e-5);
    INFO("seed ", seed, ": ", res.worst);
    CHECK(res.max_rel_err < 1e-3);
  }
}

TEST_CASE("ambiguous query pops the post that shares its key word") {
  // The query "Do you like MAC?" against a five-pair history.  One-hot word
  // vectors make the context-level score a bag-of-words cosine, so the post
  // that repeats "mac" should be the one popped at hop 2.
  const std::vector<std::string> posts_text{
      "What's your favorite programming language?", "Rafa wins his 1000 match!",
      "PC or MAC for college students?", "I failed an exam again and feel like a loser.",
      "Australian Open Final Nadal vs Federer!"};
  const std::string query_text = "Do you like MAC?";
  std::vector<std::string> words;
  std::vector<std::vector<std::string>> tokenized;
  for (const auto& t : posts_text) tokenized.push_back(default_tokenize(t));
  tokenized.push_back(default_tokenize(query_text));
  for (const auto& ws : tokenized)
    for (const auto& w : ws)
      if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(w);
  const Vocab vocab = Vocab::from_words(words);

  auto cfg = tiny_config();
  cfg.d = vocab.size();
  cfg.max_len = 12;
  cfg.history = 5;
  cfg.cnn = {{2, 3, 2, 2}};
  Rng rng(7);
  PrefParams p(cfg, rng);
  p.relevance.bypass_norm = p.relevance.bypass_ffn = true;
  p.alpha.value(0, 0) = 0.0;
  Param table("onehot", Matrix::Identity(vocab.size(), vocab.size()));
  table.value(0, 0) = 0.0;

  Graph g(false);
  std::vector<EmbSeq> seqs;
  for (const auto& ws : tokenized) seqs.push_back(embed(g, vocab.encode(ws, cfg.max_len), table));
  EmbSeq query = seqs.back();
  seqs.pop_back();
  auto trace = multi_hop(g, query, seqs, 2, p);

  // Direct score: cosine between bag-of-words count vectors.
  auto bag = [&](const std::vector<std::string>& ws) {
    Matrix v = Matrix::Zero(1, vocab.size());
    for (const auto& w : ws) v(0, vocab.id(w)) += 1;
    return v;
  };
  int best = -1;
  double best_score = -1;
  for (size_t j = 0; j < posts_text.size(); ++j) {
    const double want = naive_cosine(bag(tokenized[j]), bag(tokenized.back()));
    CHECK(std::abs(trace.scores[0]->value(static_cast<Eigen::Index>(j), 0) - want) < 1e-12);
    if (want > best_score) {
      best_score = want;
      best = static_cast<int>(j);
    }
  }
  CHECK(best == 2);
  CHECK(trace.popped == std::vector<int>{2});
}
