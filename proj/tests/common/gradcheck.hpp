#pragma once

// Central finite differences against the tape.

#include "impchat/autodiff.hpp"
#include "impchat/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace impchat::testing {

struct GradCheck {
  double max_rel_err = 0;
  int checked = 0;
  std::string worst;
};

/// |analytic - numeric| / max(|analytic|, |numeric|, floor).
inline double rel_err(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// loss builds a 1 x 1 node on the graph it is given.  samples = 0 checks
/// every entry; otherwise that many entries drawn uniformly over all params.
inline GradCheck gradcheck(const std::vector<Param*>& params, const std::function<ad::Var(ad::Graph&)>& loss,
                           Rng& rng, int samples = 0, double eps = 1e-5, double floor = 1e-6) {
  for (Param* p : params) p->zero_grad();
  {
    ad::Graph g(true);
    g.backward(loss(g));
  }
  std::vector<std::pair<Param*, Eigen::Index>> entries;
  for (Param* p : params)
    for (Eigen::Index i = 0; i < p->value.size(); ++i) entries.emplace_back(p, i);
  if (samples > 0 && static_cast<size_t>(samples) < entries.size()) {
    rng.shuffle(entries);
    entries.resize(static_cast<size_t>(samples));
  }
  auto eval = [&] {
    ad::Graph g(false);
    return loss(g)->value(0, 0);
  };
  GradCheck out;
  for (auto [p, i] : entries) {
    double& x = p->value.data()[i];
    const double saved = x;
    x = saved + eps;
    const double up = eval();
    x = saved - eps;
    const double down = eval();
    x = saved;
    const double numeric = (up - down) / (2 * eps);
    const double analytic = p->grad.data()[i];
    const double e = rel_err(analytic, numeric, floor);
    if (e > out.max_rel_err) {
      out.max_rel_err = e;
      out.worst = p->name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic) + " numeric " +
                  std::to_string(numeric);
    }
    ++out.checked;
  }
  return out;
}

/// A fixed random linear functional of a node: sum(out .* W).
inline ad::Var probe(ad::Graph& g, const ad::Var& out, std::uint64_t seed) {
  Rng rng(seed);
  Matrix w(out->rows(), out->cols());
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-1.0, 1.0);
  return ad::sum_all(ad::mul(out, g.constant(std::move(w))));
}

inline Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

/// Adds uniform noise to every parameter.  Zero-initialized biases put
/// ReLU inputs of zero-padded regions exactly on the kink, where central
/// differences and the one-sided derivative disagree.
inline void jitter(const std::vector<Param*>& params, Rng& rng, double scale = 0.1) {
  for (Param* p : params)
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += rng.uniform(-scale, scale);
}

}  // namespace impchat::testing
