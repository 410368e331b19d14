#pragma once

// Numeric building blocks shared by both matching branches.  Every block is
// a pure function of (inputs, parameters) expressed on the autodiff graph,
// so gradients come from the tape and are checked against finite
// differences in the test suite.

#include "impchat/autodiff.hpp"
#include "impchat/config.hpp"
#include "impchat/rng.hpp"

#include <functional>
#include <string>
#include <vector>

namespace impchat {

using ad::Graph;
using ad::Var;

/// Padded token sequence; id 0 is PAD.
using TokenSeq = std::vector<int>;

/// An L x d sequence representation and its validity mask.  Rows whose mask
/// is false are zero after every masked operation.
struct EmbSeq {
  Var values;
  Mask mask;

  Eigen::Index length() const { return values->rows(); }
  Eigen::Index width() const { return values->cols(); }
  bool any() const;
};

/// Calls fn(param) for each parameter of a module, in a fixed order.
using ParamVisitor = std::function<void(Param&)>;

/// Xavier-uniform initialised matrix.
Matrix xavier(Rng& rng, Eigen::Index rows, Eigen::Index cols);
Matrix gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev);

/// Affine map x W + b applied row-wise.
struct Linear {
  Param weight;  // in x out
  Param bias;    // 1 x out

  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng);
  Var operator()(Graph& g, const Var& x);
  void visit(const ParamVisitor& fn);
  int in() const { return static_cast<int>(weight.value.rows()); }
  int out() const { return static_cast<int>(weight.value.cols()); }
};

/// Single-head attention block with residual + layer norm and a ReLU
/// feed-forward sublayer:
///   x   = LayerNorm(Q + softmax(Q K^T / sqrt(d)) V)
///   out = LayerNorm(x + ReLU(x W1 + b1) W2 + b2)
struct AttentiveModule {
  Param w1, b1, w2, b2;
  Param ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  double eps = 1e-6;
  // Unit-isolation switches; both off in normal operation.
  bool bypass_norm = false;
  bool bypass_ffn = false;

  AttentiveModule() = default;
  AttentiveModule(const std::string& name, int d, int d_ff, double eps, Rng& rng);

  EmbSeq operator()(Graph& g, const EmbSeq& q, const EmbSeq& k, const EmbSeq& v);

  struct Call {
    const EmbSeq* q;
    const EmbSeq* k;
    const EmbSeq* v;
  };
  /// Applies the block to several independent (Q, K, V) triples; results
  /// are bit-identical to separate calls.
  std::vector<EmbSeq> apply_many(Graph& g, const std::vector<Call>& calls);
  void visit(const ParamVisitor& fn);
};

/// softmax(Q K^T / sqrt(d)) over unmasked keys; rows for fully masked keys
/// are zero.  Inputs must already have masked rows zeroed.
Var attention_weights(const EmbSeq& q, const EmbSeq& k);

/// Embedding lookup; PAD rows are zero and masked out.
EmbSeq embed(Graph& g, const TokenSeq& tokens, Param& table);

/// Mean over unmasked rows (1 x d).  Throws if every row is masked.
Var masked_mean(const EmbSeq& seq);

/// A stack of 2D maps: channels x (h*w), row-major spatial layout.
struct FeatureMap {
  Var data;
  int h = 0;
  int w = 0;
};

/// conv -> ReLU -> max-pool per layer, flattened at the end.
struct ConvStack {
  struct Layer {
    Param weight;  // filters x (in_channels * k * k)
    Param bias;    // filters x 1
    ConvLayerSpec spec;
  };
  std::vector<Layer> layers;
  int in_channels = 0;
  ConvPadding padding = ConvPadding::same;
  bool use_bias = true;

  ConvStack() = default;
  ConvStack(const std::string& name, int in_channels, const std::vector<ConvLayerSpec>& spec,
            ConvPadding padding, Rng& rng);

  /// Output spatial size after every layer; throws std::invalid_argument
  /// naming the first layer whose input is smaller than it can consume.
  std::vector<std::pair<int, int>> shapes(int h, int w) const;
  /// Width of the flattened feature for an h x w input.
  int output_size(int h, int w) const;
  /// Returns a 1 x output_size(h, w) row.
  Var operator()(Graph& g, const FeatureMap& input);
  void visit(const ParamVisitor& fn);
};

/// GRU cell, gate order (reset, update, new):
///   r = sigmoid(x Wr + h Ur + br), z = sigmoid(x Wz + h Uz + bz)
///   n = tanh(x Wn + bxn + r * (h Un + bhn)),  h' = (1 - z) * n + z * h
struct GruCell {
  Param wx;  // in x 3h
  Param wh;  // h x 3h
  Param bx;  // 1 x 3h
  Param bh;  // 1 x 3h

  GruCell() = default;
  GruCell(const std::string& name, int in, int hidden, Rng& rng);
  int hidden() const { return static_cast<int>(wh.value.rows()); }

  Var step(Graph& g, const Var& x, const Var& h);
  void visit(const ParamVisitor& fn);
};

/// Runs the cell from a zero state over inputs (each 1 x in) and returns the
/// final state.  Throws on an empty sequence.
Var gru_run(Graph& g, GruCell& cell, const std::vector<Var>& inputs);

/// Sinusoidal position encodings, L x d.
Matrix positional_encoding(int length, int d);

/// Loads `vocab_size d` + `word v1 .. vd` lines; words are mapped through
/// lookup (return -1 to skip).  Rows not present keep their current value.
/// Returns the number of rows written.
int load_embedding_text(const std::string& path, Param& table, const std::function<int(const std::string&)>& lookup);

}  // namespace impchat
