#pragma once

// Style branch: multi-grained self and post-conditioned representations of
// every historical response are matched against the candidate, each pair's
// stacked matching maps go through a shared CNN, and the per-pair features
// are pooled with column-wise attention into g^S.

#include "impchat/nnblocks.hpp"

#include <vector>

namespace impchat {

/// Levels e_0 .. e_n; level 0 is the raw embedding.
struct MultiGrainRep {
  std::vector<EmbSeq> levels;
};

struct StyleParams {
  std::vector<AttentiveModule> self_levels;   // n modules (one when sharing levels)
  std::vector<AttentiveModule> cross_levels;  // n + 1 modules (one when sharing levels)
  ConvStack conv;                             // 2(n+1) input channels
  Linear project;                             // conv feature -> d
  Linear att_hidden;                          // d -> d
  Linear att_out;                             // d -> d
  int levels = 0;
  int d = 0;
  int max_len = 0;

  StyleParams() = default;
  StyleParams(const ModelConfig& cfg, Rng& rng);
  void visit(const ParamVisitor& fn);

  AttentiveModule& self_module(int level);   // level in [1, n]
  AttentiveModule& cross_module(int level);  // level in [0, n]
};

/// e_l = attend(e_{l-1}, e_{l-1}, e_{l-1}) for l = 1..n.
MultiGrainRep encode_multigrain(Graph& g, const EmbSeq& seq, StyleParams& p);
std::vector<MultiGrainRep> encode_multigrain_many(Graph& g, const std::vector<const EmbSeq*>& seqs, StyleParams& p);
/// Per level: attend(resp_l, post_l, post_l).
MultiGrainRep cross_rep(Graph& g, const MultiGrainRep& resp, const MultiGrainRep& post, StyleParams& p);
std::vector<MultiGrainRep> cross_rep_many(Graph& g,
                                          const std::vector<std::pair<const MultiGrainRep*, const MultiGrainRep*>>& pairs,
                                          StyleParams& p);

/// Representations that do not depend on the candidate.
struct StyleContext {
  MultiGrainRep query;
  std::vector<MultiGrainRep> resp_self;
  std::vector<MultiGrainRep> resp_cross;
};

StyleContext style_context(Graph& g, const EmbSeq& query, const std::vector<std::pair<EmbSeq, EmbSeq>>& history,
                           StyleParams& p);

/// The 2(n+1) x (L*L) stacked matching map of one history pair: channel l
/// holds e^{r_j}_l e^{r T}_l / sqrt(d), channel n+1+l the cross-rep analogue.
FeatureMap style_match_map(const MultiGrainRep& hist_self, const MultiGrainRep& hist_cross,
                           const MultiGrainRep& cand_self, const MultiGrainRep& cand_cross);

struct StyleOutput {
  Var feature;     // 1 x d, g^S
  Var pair_feats;  // t x d, V_s
  Var weights;     // t x d, column-normalized attention
};

StyleOutput style_feature(Graph& g, const StyleContext& ctx, const EmbSeq& candidate, StyleParams& p);
/// style_feature for several candidates sharing one context.
std::vector<StyleOutput> style_features(Graph& g, const StyleContext& ctx, const std::vector<EmbSeq>& candidates,
                                        StyleParams& p);

}  // namespace impchat
