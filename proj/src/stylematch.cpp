#include "impchat/stylematch.hpp"

#include <cmath>
#include <stdexcept>

namespace impchat {

StyleParams::StyleParams(const ModelConfig& cfg, Rng& rng) : levels(cfg.levels), d(cfg.d), max_len(cfg.max_len) {
  const int d_ff = cfg.ffn_mult * cfg.d;
  const int n_self = cfg.share_levels ? std::min(cfg.levels, 1) : cfg.levels;
  const int n_cross = cfg.share_levels ? 1 : cfg.levels + 1;
  for (int l = 0; l < n_self; ++l)
    self_levels.emplace_back("style.self" + std::to_string(l + 1), cfg.d, d_ff, cfg.ln_eps, rng);
  for (int l = 0; l < n_cross; ++l)
    cross_levels.emplace_back("style.cross" + std::to_string(l), cfg.d, d_ff, cfg.ln_eps, rng);
  conv = ConvStack("style.cnn", 2 * (cfg.levels + 1), cfg.cnn, cfg.padding, rng);
  project = Linear("style.project", conv.output_size(cfg.max_len, cfg.max_len), cfg.d, rng);
  att_hidden = Linear("style.att_hidden", cfg.d, cfg.d, rng);
  att_out = Linear("style.att_out", cfg.d, cfg.d, rng);
}

void StyleParams::visit(const ParamVisitor& fn) {
  for (auto& m : self_levels) m.visit(fn);
  for (auto& m : cross_levels) m.visit(fn);
  conv.visit(fn);
  project.visit(fn);
  att_hidden.visit(fn);
  att_out.visit(fn);
}

AttentiveModule& StyleParams::self_module(int level) {
  if (self_levels.size() == 1) return self_levels[0];
  return self_levels.at(static_cast<size_t>(level - 1));
}

AttentiveModule& StyleParams::cross_module(int level) {
  if (cross_levels.size() == 1) return cross_levels[0];
  return cross_levels.at(static_cast<size_t>(level));
}

MultiGrainRep encode_multigrain(Graph& g, const EmbSeq& seq, StyleParams& p) {
  return encode_multigrain_many(g, {&seq}, p).front();
}

std::vector<MultiGrainRep> encode_multigrain_many(Graph& g, const std::vector<const EmbSeq*>& seqs, StyleParams& p) {
  std::vector<MultiGrainRep> reps(seqs.size());
  for (size_t i = 0; i < seqs.size(); ++i) reps[i].levels.push_back(*seqs[i]);
  for (int l = 1; l <= p.levels; ++l) {
    std::vector<AttentiveModule::Call> calls;
    for (const auto& r : reps) {
      const EmbSeq* prev = &r.levels.back();
      calls.push_back({prev, prev, prev});
    }
    auto next = p.self_module(l).apply_many(g, calls);
    for (size_t i = 0; i < reps.size(); ++i) reps[i].levels.push_back(std::move(next[i]));
  }
  return reps;
}

MultiGrainRep cross_rep(Graph& g, const MultiGrainRep& resp, const MultiGrainRep& post, StyleParams& p) {
  return cross_rep_many(g, {{&resp, &post}}, p).front();
}

std::vector<MultiGrainRep> cross_rep_many(Graph& g,
                                          const std::vector<std::pair<const MultiGrainRep*, const MultiGrainRep*>>& pairs,
                                          StyleParams& p) {
  std::vector<MultiGrainRep> reps(pairs.size());
  if (pairs.empty()) return reps;
  for (const auto& [resp, post] : pairs)
    if (resp->levels.size() != post->levels.size()) throw std::invalid_argument("cross_rep: level count mismatch");
  const size_t n_levels = pairs.front().first->levels.size();
  for (size_t l = 0; l < n_levels; ++l) {
    std::vector<AttentiveModule::Call> calls;
    for (const auto& [resp, post] : pairs) calls.push_back({&resp->levels[l], &post->levels[l], &post->levels[l]});
    auto out = p.cross_module(static_cast<int>(l)).apply_many(g, calls);
    for (size_t i = 0; i < pairs.size(); ++i) reps[i].levels.push_back(std::move(out[i]));
  }
  return reps;
}

StyleContext style_context(Graph& g, const EmbSeq& query, const std::vector<std::pair<EmbSeq, EmbSeq>>& history,
                           StyleParams& p) {
  std::vector<const EmbSeq*> seqs{&query};
  for (const auto& [post, resp] : history) {
    seqs.push_back(&post);
    seqs.push_back(&resp);
  }
  auto reps = encode_multigrain_many(g, seqs, p);
  StyleContext ctx;
  ctx.query = std::move(reps[0]);
  std::vector<std::pair<const MultiGrainRep*, const MultiGrainRep*>> pairs;
  for (size_t j = 0; j < history.size(); ++j) pairs.emplace_back(&reps[2 + 2 * j], &reps[1 + 2 * j]);
  ctx.resp_cross = cross_rep_many(g, pairs, p);
  for (size_t j = 0; j < history.size(); ++j) ctx.resp_self.push_back(std::move(reps[2 + 2 * j]));
  return ctx;
}

FeatureMap style_match_map(const MultiGrainRep& hist_self, const MultiGrainRep& hist_cross,
                           const MultiGrainRep& cand_self, const MultiGrainRep& cand_cross) {
  const auto& first = hist_self.levels.at(0);
  const double inv = 1.0 / std::sqrt(static_cast<double>(first.width()));
  std::vector<Var> channels;
  for (const auto* pair : {&hist_self, &hist_cross}) {
    const auto& cand = pair == &hist_self ? cand_self : cand_cross;
    for (size_t l = 0; l < pair->levels.size(); ++l) {
      Var m = ad::scale(ad::matmul_nt(pair->levels[l].values, cand.levels[l].values), inv);
      channels.push_back(ad::flatten_row_major(m));
    }
  }
  return {ad::concat_rows(channels), static_cast<int>(first.length()), static_cast<int>(cand_self.levels[0].length())};
}

StyleOutput style_feature(Graph& g, const StyleContext& ctx, const EmbSeq& candidate, StyleParams& p) {
  return style_features(g, ctx, {candidate}, p).front();
}

std::vector<StyleOutput> style_features(Graph& g, const StyleContext& ctx, const std::vector<EmbSeq>& candidates,
                                        StyleParams& p) {
  if (ctx.resp_self.empty()) throw std::invalid_argument("style_feature: history is empty");
  std::vector<const EmbSeq*> seqs;
  for (const auto& c : candidates) {
    if (!c.any()) throw std::invalid_argument("style_feature: candidate is empty");
    seqs.push_back(&c);
  }
  auto cand_self = encode_multigrain_many(g, seqs, p);
  std::vector<std::pair<const MultiGrainRep*, const MultiGrainRep*>> pairs;
  for (const auto& c : cand_self) pairs.emplace_back(&c, &ctx.query);
  auto cand_cross = cross_rep_many(g, pairs, p);

  std::vector<StyleOutput> outs;
  for (size_t c = 0; c < candidates.size(); ++c) {
    std::vector<Var> rows;
    for (size_t j = 0; j < ctx.resp_self.size(); ++j) {
      FeatureMap map = style_match_map(ctx.resp_self[j], ctx.resp_cross[j], cand_self[c], cand_cross[c]);
      rows.push_back(p.conv(g, map));
    }
    StyleOutput out;
    out.pair_feats = p.project(g, ad::concat_rows(rows));
    out.weights = ad::softmax_cols(p.att_out(g, ad::tanh(p.att_hidden(g, out.pair_feats))));
    out.feature = ad::sum_rows(ad::mul(out.weights, out.pair_feats));
    outs.push_back(std::move(out));
  }
  return outs;
}

}  // namespace impchat
