#pragma once

// Small models and random inputs shared by the branch and model tests.

#include "gradcheck.hpp"
#include "impchat/config.hpp"
#include "impchat/nnblocks.hpp"

namespace impchat::testing {

// d=4, L=3, n=1, k=2, t=2, GRU width 4, one 2x2 conv layer.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.d = 4;
  c.max_len = 3;
  c.levels = 1;
  c.hops = 2;
  c.history = 2;
  c.gru_hidden = 4;
  c.cnn = {{2, 2, 1, 1}};
  c.ffn_mult = 2;
  c.fusion_hidden = 4;
  return c;
}

inline Mask random_mask(Rng& rng, size_t len, double pad_prob = 0.3) {
  Mask m(len);
  for (auto&& b : m) b = !rng.bernoulli(pad_prob);
  m[0] = true;
  return m;
}

// An utterance whose embedding values are a trainable leaf.
struct Leaf {
  Param values;
  Mask mask;

  Leaf(Rng& rng, const std::string& name, int len, int d, double pad_prob = 0.3)
      : values(name, random_matrix(rng, len, d)), mask(random_mask(rng, static_cast<size_t>(len), pad_prob)) {}

  EmbSeq seq(Graph& g) { return {ad::mask_rows(g.param(values), mask), mask}; }
};

struct LeafHistory {
  std::vector<Leaf> posts, responses;

  LeafHistory(Rng& rng, int t, int len, int d, double pad_prob = 0.3) {
    for (int j = 0; j < t; ++j) {
      posts.emplace_back(rng, "post" + std::to_string(j), len, d, pad_prob);
      responses.emplace_back(rng, "resp" + std::to_string(j), len, d, pad_prob);
    }
  }

  std::vector<std::pair<EmbSeq, EmbSeq>> pairs(Graph& g) {
    std::vector<std::pair<EmbSeq, EmbSeq>> out;
    for (size_t j = 0; j < posts.size(); ++j) out.emplace_back(posts[j].seq(g), responses[j].seq(g));
    return out;
  }

  void add_params(std::vector<Param*>& out) {
    for (size_t j = 0; j < posts.size(); ++j) {
      out.push_back(&posts[j].values);
      out.push_back(&responses[j].values);
    }
  }
};

template <class P>
std::vector<Param*> params_of(P& p) {
  std::vector<Param*> out;
  p.visit([&](Param& x) { out.push_back(&x); });
  return out;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return std::numeric_limits<double>::infinity();
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

}  // namespace impchat::testing
