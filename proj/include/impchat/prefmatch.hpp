#pragma once

// Preference branch: score how related each historical post is to the
// query (word-level bilinear maps plus sentence cosine), enrich the query
// over several hops by popping the best-matching post, reweight history
// pairs by the resulting relevance, and match the candidate against the
// reweighted pairs with a CNN + GRU.

#include "impchat/nnblocks.hpp"

#include <vector>

namespace impchat {

struct PrefParams {
  AttentiveModule relevance;  // contextual encoder for relevance scoring
  Param bilinear;             // d x (channels * d), one d x d block per channel
  Param channel_mix;          // channels x 1
  Linear word_score;          // 2L -> 1
  Param alpha;                // 1 x 1, initialized to 0.5
  Param hop_mix;              // hops x 1
  AttentiveModule self_att;
  AttentiveModule cross_att;
  Param match_raw, match_self, match_cross;  // d x d
  ConvStack conv;                            // 6 input channels over L x 2L
  GruCell gru;
  int d = 0;
  int max_len = 0;
  int hops = 0;
  int channels = 0;

  PrefParams() = default;
  PrefParams(const ModelConfig& cfg, Rng& rng);
  void visit(const ParamVisitor& fn);
};

/// Contextual representations of every post (history first, query last).
struct RelevanceInputs {
  std::vector<EmbSeq> posts;  // t + 1 entries; the last is the query
};

/// Word-level relevance s1 (N x 1, softmax over posts).
Var word_level_relevance(Graph& g, const RelevanceInputs& reps, PrefParams& p);
/// Context-level relevance s2 (N x 1): cosine of masked means against the query entry.
Var context_level_relevance(const RelevanceInputs& reps);
/// alpha * s1 + (1 - alpha) * s2.
Var combine_relevance(const Var& s1, const Var& s2, const Var& alpha);

struct HopTrace {
  std::vector<Var> scores;  // per hop, N x 1
  std::vector<int> popped;  // history indices, in pop order
  Var combined;             // N x 1, s-bar
};

/// Multi-hop relevance over raw post embeddings (history) and the raw query.
/// With use_multihop false only the first hop is scored.
HopTrace multi_hop(Graph& g, const EmbSeq& query, const std::vector<EmbSeq>& posts, int hops, PrefParams& p,
                   bool use_multihop = true);

/// Candidate-independent part of the branch.
struct PrefContext {
  HopTrace hops;
  std::vector<EmbSeq> profile;       // D_j, 2L x d
  std::vector<EmbSeq> profile_self;  // self-attended D_j
};

PrefContext pref_context(Graph& g, const EmbSeq& query, const std::vector<std::pair<EmbSeq, EmbSeq>>& history,
                         PrefParams& p, bool use_multihop = true);

/// Two channels (L x 2L each, row-major): a M b^T / sqrt(d) and row cosine.
std::vector<Var> pref_match_channels(const Var& a, const Var& b, const Var& bilinear);

struct PrefOutput {
  Var feature;                  // 1 x gru_hidden, g^P
  std::vector<Var> pair_feats;  // CNN features per pair
};

PrefOutput pref_feature(Graph& g, const PrefContext& ctx, const EmbSeq& candidate, PrefParams& p);
/// pref_feature for several candidates sharing one context.
std::vector<PrefOutput> pref_features(Graph& g, const PrefContext& ctx, const std::vector<EmbSeq>& candidates,
                                      PrefParams& p);

}  // namespace impchat
