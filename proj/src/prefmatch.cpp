#include "impchat/prefmatch.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace impchat {

PrefParams::PrefParams(const ModelConfig& cfg, Rng& rng)
    : d(cfg.d), max_len(cfg.max_len), hops(cfg.hops), channels(cfg.history + 1) {
  const int d_ff = cfg.ffn_mult * cfg.d;
  relevance = AttentiveModule("pref.relevance", cfg.d, d_ff, cfg.ln_eps, rng);
  bilinear = Param("pref.bilinear", gaussian(rng, cfg.d, static_cast<Eigen::Index>(channels) * cfg.d, 1.0 / cfg.d));
  channel_mix = Param("pref.channel_mix", xavier(rng, channels, 1));
  word_score = Linear("pref.word_score", 2 * cfg.max_len, 1, rng);
  alpha = Param("pref.alpha", Matrix::Constant(1, 1, 0.5));
  hop_mix = Param("pref.hop_mix", Matrix::Constant(cfg.hops, 1, 1.0 / cfg.hops));
  self_att = AttentiveModule("pref.self", cfg.d, d_ff, cfg.ln_eps, rng);
  cross_att = AttentiveModule("pref.cross", cfg.d, d_ff, cfg.ln_eps, rng);
  const double s = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  match_raw = Param("pref.match_raw", gaussian(rng, cfg.d, cfg.d, s));
  match_self = Param("pref.match_self", gaussian(rng, cfg.d, cfg.d, s));
  match_cross = Param("pref.match_cross", gaussian(rng, cfg.d, cfg.d, s));
  conv = ConvStack("pref.cnn", 6, cfg.cnn, cfg.padding, rng);
  gru = GruCell("pref.gru", conv.output_size(cfg.max_len, 2 * cfg.max_len), cfg.gru_hidden, rng);
}

void PrefParams::visit(const ParamVisitor& fn) {
  relevance.visit(fn);
  fn(bilinear);
  fn(channel_mix);
  word_score.visit(fn);
  fn(alpha);
  fn(hop_mix);
  self_att.visit(fn);
  cross_att.visit(fn);
  fn(match_raw);
  fn(match_self);
  fn(match_cross);
  conv.visit(fn);
  gru.visit(fn);
}

Var word_level_relevance(Graph& g, const RelevanceInputs& reps, PrefParams& p) {
  if (reps.posts.empty()) throw std::invalid_argument("word_level_relevance: no posts");
  if (static_cast<int>(reps.posts.size()) > p.channels)
    throw std::invalid_argument("word_level_relevance: " + std::to_string(reps.posts.size() - 1) +
                                " history posts exceed the configured history " + std::to_string(p.channels - 1));
  if (std::none_of(reps.posts.begin(), reps.posts.end(), [](const EmbSeq& e) { return e.any(); }))
    throw std::invalid_argument("word_level_relevance: every post is fully masked");
  const EmbSeq& query = reps.posts.back();
  const Eigen::Index len = query.length();

  std::vector<Var> all;
  for (const auto& e : reps.posts) all.push_back(e.values);
  // Row (i, b) x column (c, a) holds post_i[b] W_c query[a]; the channel
  // mix then collapses c, leaving one L x L map per post.
  Var per_channel = ad::blocks_to_rows(ad::matmul(query.values, g.param(p.bilinear)), p.d);
  Var t = ad::tanh(ad::matmul_nt(ad::concat_rows(all), per_channel));
  Var maps = ad::weighted_col_blocks(t, g.param(p.channel_mix), len);

  std::vector<Var> feats;
  for (size_t i = 0; i < reps.posts.size(); ++i) {
    Var m = ad::slice_rows(maps, static_cast<Eigen::Index>(i) * len, len);
    Var best_per_post_word = ad::max_over_cols(m, reps.posts[i].mask, query.mask);
    Var best_per_query_word = ad::max_over_rows(m, reps.posts[i].mask, query.mask);
    feats.push_back(ad::concat_cols({ad::transpose(best_per_post_word), best_per_query_word}));
  }
  return ad::softmax_cols(p.word_score(g, ad::concat_rows(feats)));
}

Var context_level_relevance(const RelevanceInputs& reps) {
  std::vector<Var> means;
  for (const auto& e : reps.posts) means.push_back(masked_mean(e));
  return ad::cosine_matrix(ad::concat_rows(means), means.back());
}

Var combine_relevance(const Var& s1, const Var& s2, const Var& alpha) {
  if (s1->rows() != s2->rows() || s1->cols() != s2->cols())
    throw std::invalid_argument("combine_relevance: length mismatch");
  return ad::add(ad::scale_by(s1, alpha), ad::scale_by(s2, ad::affine(alpha, -1.0, 1.0)));
}

HopTrace multi_hop(Graph& g, const EmbSeq& query, const std::vector<EmbSeq>& posts, int hops, PrefParams& p,
                   bool use_multihop) {
  if (hops < 1) throw std::invalid_argument("multi_hop: hops must be >= 1");
  if (hops > p.hop_mix.value.rows())
    throw std::invalid_argument("multi_hop: " + std::to_string(hops) + " hops but only " +
                                std::to_string(p.hop_mix.value.rows()) + " hop weights");
  if (posts.empty()) throw std::invalid_argument("multi_hop: history is empty");
  if (hops - 1 > static_cast<int>(posts.size()))
    throw std::invalid_argument("multi_hop: " + std::to_string(hops) + " hops exhaust a buffer of " +
                                std::to_string(posts.size()) + " posts");
  const int n_hops = use_multihop ? hops : 1;

  RelevanceInputs reps;
  std::vector<AttentiveModule::Call> calls;
  for (const auto& e : posts) calls.push_back({&e, &e, &e});
  reps.posts = p.relevance.apply_many(g, calls);
  reps.posts.push_back({});

  HopTrace trace;
  std::vector<bool> buffered(posts.size(), true);
  EmbSeq current = query;
  Var alpha = g.param(p.alpha);
  for (int h = 0; h < n_hops; ++h) {
    reps.posts.back() = p.relevance(g, current, current, current);
    Var s = combine_relevance(word_level_relevance(g, reps, p), context_level_relevance(reps), alpha);
    trace.scores.push_back(s);
    if (h + 1 == n_hops) break;

    // The pop is a hard choice: gradients flow through the scores only.
    int best = -1;
    for (size_t j = 0; j < posts.size(); ++j)
      if (buffered[j] && (best < 0 || s->value(static_cast<Eigen::Index>(j), 0) > s->value(best, 0)))
        best = static_cast<int>(j);
    buffered[static_cast<size_t>(best)] = false;
    trace.popped.push_back(best);

    std::vector<Var> stack{query.values};
    Mask mask = query.mask;
    for (int j : trace.popped) {
      stack.push_back(posts[static_cast<size_t>(j)].values);
      for (size_t a = 0; a < mask.size(); ++a) mask[a] = mask[a] || posts[static_cast<size_t>(j)].mask[a];
    }
    current = {ad::mean_of(stack), mask};
  }

  Var mix = g.param(p.hop_mix);
  std::vector<Var> terms;
  for (size_t h = 0; h < trace.scores.size(); ++h)
    terms.push_back(ad::scale_by(trace.scores[h], ad::element(mix, static_cast<Eigen::Index>(h), 0)));
  Var combined = terms[0];
  for (size_t h = 1; h < terms.size(); ++h) combined = ad::add(combined, terms[h]);
  trace.combined = combined;
  return trace;
}

PrefContext pref_context(Graph& g, const EmbSeq& query, const std::vector<std::pair<EmbSeq, EmbSeq>>& history,
                         PrefParams& p, bool use_multihop) {
  std::vector<EmbSeq> posts;
  for (const auto& pr : history) posts.push_back(pr.first);
  PrefContext ctx;
  ctx.hops = multi_hop(g, query, posts, p.hops, p, use_multihop);
  for (size_t j = 0; j < history.size(); ++j) {
    const auto& [post, resp] = history[j];
    Mask mask = post.mask;
    mask.insert(mask.end(), resp.mask.begin(), resp.mask.end());
    Var weight = ad::element(ctx.hops.combined, static_cast<Eigen::Index>(j), 0);
    ctx.profile.push_back({ad::scale_by(ad::concat_rows({post.values, resp.values}), weight), std::move(mask)});
  }
  std::vector<AttentiveModule::Call> calls;
  for (const auto& d_j : ctx.profile) calls.push_back({&d_j, &d_j, &d_j});
  ctx.profile_self = p.self_att.apply_many(g, calls);
  return ctx;
}

std::vector<Var> pref_match_channels(const Var& a, const Var& b, const Var& bilinear) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(a->cols()));
  Var dot = ad::scale(ad::matmul_nt(ad::matmul(a, bilinear), b), inv);
  return {ad::flatten_row_major(dot), ad::flatten_row_major(ad::cosine_matrix(a, b))};
}

PrefOutput pref_feature(Graph& g, const PrefContext& ctx, const EmbSeq& candidate, PrefParams& p) {
  return pref_features(g, ctx, {candidate}, p).front();
}

std::vector<PrefOutput> pref_features(Graph& g, const PrefContext& ctx, const std::vector<EmbSeq>& candidates,
                                      PrefParams& p) {
  if (ctx.profile.empty()) throw std::invalid_argument("pref_feature: history is empty");
  const size_t t = ctx.profile.size();
  std::vector<AttentiveModule::Call> self_calls;
  for (const auto& c : candidates) self_calls.push_back({&c, &c, &c});
  const auto cand_self = p.self_att.apply_many(g, self_calls);

  // Both cross directions for every (candidate, pair) in two batched calls.
  std::vector<AttentiveModule::Call> to_profile, to_candidate;
  for (const auto& cs : cand_self)
    for (const auto& dj_self : ctx.profile_self) {
      to_profile.push_back({&cs, &dj_self, &dj_self});
      to_candidate.push_back({&dj_self, &cs, &cs});
    }
  const auto cand_cross = p.cross_att.apply_many(g, to_profile);
  const auto dj_cross = p.cross_att.apply_many(g, to_candidate);

  Var a_raw = g.param(p.match_raw);
  Var a_self = g.param(p.match_self);
  Var a_cross = g.param(p.match_cross);
  std::vector<PrefOutput> outs;
  for (size_t c = 0; c < candidates.size(); ++c) {
    PrefOutput out;
    for (size_t j = 0; j < t; ++j) {
      const size_t k = c * t + j;
      std::vector<Var> ch = pref_match_channels(candidates[c].values, ctx.profile[j].values, a_raw);
      for (const auto& v : pref_match_channels(cand_self[c].values, ctx.profile_self[j].values, a_self)) ch.push_back(v);
      for (const auto& v : pref_match_channels(cand_cross[k].values, dj_cross[k].values, a_cross)) ch.push_back(v);
      FeatureMap map{ad::concat_rows(ch), static_cast<int>(candidates[c].length()),
                     static_cast<int>(ctx.profile[j].length())};
      out.pair_feats.push_back(p.conv(g, map));
    }
    out.feature = gru_run(g, p.gru, out.pair_feats);
    outs.push_back(std::move(out));
  }
  return outs;
}

}  // namespace impchat
