#include "fixtures.hpp"
#include "impchat/stylematch.hpp"

#include <doctest.h>

using namespace impchat;
using namespace impchat::testing;

namespace {

EmbSeq const_seq(Graph& g, Rng& rng, int len, int d) {
  Mask m = random_mask(rng, static_cast<size_t>(len));
  Matrix v = random_matrix(rng, len, d);
  for (int i = 0; i < len; ++i)
    if (!m[static_cast<size_t>(i)]) v.row(i).setZero();
  return {g.constant(std::move(v)), std::move(m)};
}

std::vector<std::pair<EmbSeq, EmbSeq>> const_history(Graph& g, Rng& rng, int t, int len, int d) {
  std::vector<std::pair<EmbSeq, EmbSeq>> h;
  for (int j = 0; j < t; ++j) h.emplace_back(const_seq(g, rng, len, d), const_seq(g, rng, len, d));
  return h;
}

Matrix map_of(const StyleContext& ctx, size_t j, const MultiGrainRep& cs, const MultiGrainRep& cc) {
  return style_match_map(ctx.resp_self[j], ctx.resp_cross[j], cs, cc).data->value;
}

}  // namespace

TEST_CASE("multigrain: zero levels returns the input, deeper levels follow the recurrence") {
  Rng rng(1);
  auto cfg = tiny_config();
  cfg.levels = 0;
  StyleParams none(cfg, rng);
  Graph g(false);
  EmbSeq x = const_seq(g, rng, 3, 4);
  auto rep = encode_multigrain(g, x, none);
  REQUIRE(rep.levels.size() == 1);
  CHECK(rep.levels[0].values == x.values);

  cfg.levels = 2;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(seed);
    StyleParams p(cfg, r);
    Graph g(false);
    EmbSeq a = const_seq(g, r, 3, 4), b = const_seq(g, r, 3, 4);
    auto ra = encode_multigrain(g, a, p);
    auto rb = encode_multigrain(g, b, p);
    REQUIRE(ra.levels.size() == 3);
    const EmbSeq& l1 = ra.levels[1];
    CHECK(max_abs_diff(ra.levels[2].values->value, p.self_module(2)(g, l1, l1, l1).values->value) < 1e-12);
    for (int l = 1; l <= 2; ++l) CHECK(max_abs_diff(ra.levels[l].values->value, rb.levels[l].values->value) > 1e-6);
  }
}

TEST_CASE("style feature with one history pair uses weight one") {
  Rng rng(2);
  StyleParams p(tiny_config(), rng);
  Graph g(false);
  EmbSeq q = const_seq(g, rng, 3, 4), c = const_seq(g, rng, 3, 4);
  auto ctx = style_context(g, q, const_history(g, rng, 1, 3, 4), p);
  auto out = style_feature(g, ctx, c, p);
  CHECK(out.weights->value == Matrix::Ones(1, 4));
  CHECK(out.feature->value == out.pair_feats->value);
}

TEST_CASE("style feature rejects empty history and empty candidates") {
  Rng rng(3);
  StyleParams p(tiny_config(), rng);
  Graph g(false);
  EmbSeq q = const_seq(g, rng, 3, 4), c = const_seq(g, rng, 3, 4);
  auto empty_ctx = style_context(g, q, {}, p);
  CHECK_THROWS_AS(style_feature(g, empty_ctx, c, p), std::invalid_argument);
  auto ctx = style_context(g, q, const_history(g, rng, 2, 3, 4), p);
  EmbSeq blank{g.constant(Matrix::Zero(3, 4)), {false, false, false}};
  CHECK_THROWS_AS(style_feature(g, ctx, blank, p), std::invalid_argument);
}

TEST_CASE("per-pair matching maps do not depend on other pairs") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 10);
    StyleParams p(tiny_config(), rng);
    Graph g(false);
    EmbSeq q = const_seq(g, rng, 3, 4), c = const_seq(g, rng, 3, 4);
    auto hist = const_history(g, rng, 2, 3, 4);
    auto cs = encode_multigrain(g, c, p);
    auto qs = encode_multigrain(g, q, p);
    auto cc = cross_rep(g, cs, qs, p);

    auto base = style_context(g, q, hist, p);
    auto dup_hist = hist;
    dup_hist.push_back(hist[1]);
    auto dup = style_context(g, q, dup_hist, p);
    CHECK(map_of(dup, 1, cs, cc) == map_of(dup, 2, cs, cc));
    CHECK(map_of(dup, 0, cs, cc) == map_of(base, 0, cs, cc));

    auto perturbed_hist = hist;
    perturbed_hist[1] = {const_seq(g, rng, 3, 4), const_seq(g, rng, 3, 4)};
    auto perturbed = style_context(g, q, perturbed_hist, p);
    CHECK(map_of(perturbed, 0, cs, cc) == map_of(base, 0, cs, cc));
    CHECK(map_of(perturbed, 1, cs, cc) != map_of(base, 1, cs, cc));
  }
}

TEST_CASE("style attention columns sum to one and pooling ignores pair order") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 30);
    StyleParams p(tiny_config(), rng);
    Graph g(false);
    EmbSeq q = const_seq(g, rng, 3, 4), c = const_seq(g, rng, 3, 4);
    auto hist = const_history(g, rng, 3, 3, 4);
    auto out = style_feature(g, style_context(g, q, hist, p), c, p);
    const Matrix w = out.weights->value;
    for (Eigen::Index col = 0; col < w.cols(); ++col) CHECK(std::abs(w.col(col).sum() - 1.0) < 1e-6);

    std::swap(hist[0], hist[2]);
    auto swapped = style_feature(g, style_context(g, q, hist, p), c, p);
    CHECK(max_abs_diff(swapped.pair_feats->value.row(0), out.pair_feats->value.row(2)) < 1e-12);
    CHECK(max_abs_diff(swapped.pair_feats->value.row(1), out.pair_feats->value.row(1)) < 1e-12);
    CHECK(max_abs_diff(swapped.pair_feats->value.row(2), out.pair_feats->value.row(0)) < 1e-12);
    CHECK(max_abs_diff(swapped.feature->value, out.feature->value) < 1e-12);
  }
}

TEST_CASE("matching map of (x, y) is the transpose of (y, x)") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 50);
    StyleParams p(tiny_config(), rng);
    Graph g(false);
    auto x = encode_multigrain(g, const_seq(g, rng, 3, 4), p);
    auto y = encode_multigrain(g, const_seq(g, rng, 3, 4), p);
    auto xc = cross_rep(g, x, y, p), yc = cross_rep(g, y, x, p);
    const Matrix xy = style_match_map(x, xc, y, yc).data->value;
    const Matrix yx = style_match_map(y, yc, x, xc).data->value;
    REQUIRE(xy.rows() == 4);
    for (Eigen::Index ch = 0; ch < xy.rows(); ++ch)
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) CHECK(std::abs(xy(ch, a * 3 + b) - yx(ch, b * 3 + a)) < 1e-12);
  }
}

TEST_CASE("style branch gradient at d=4, L=3, t=2, n=1") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 70);
    StyleParams p(tiny_config(), rng);
    Leaf q(rng, "query", 3, 4), c(rng, "cand", 3, 4);
    LeafHistory hist(rng, 2, 3, 4);
    auto ps = params_of(p);
    ps.push_back(&q.values);
    ps.push_back(&c.values);
    hist.add_params(ps);
    jitter(ps, rng);
    auto res = gradcheck(ps, [&](Graph& g) {
      auto ctx = style_context(g, q.seq(g), hist.pairs(g), p);
      return probe(g, style_feature(g, ctx, c.seq(g), p).feature, seed);
    }, rng, 0, 1e-6, 1e-5);
    INFO("seed ", seed, ": ", res.worst);
    CHECK(res.max_rel_err < 1e-3);
  }
}
