#pragma once

// Reverse-mode automatic differentiation over dense matrices.
//
// A Graph records every node created while it is alive.  Calling
// Graph::backward() walks the tape in reverse creation order, which is a
// valid topological order because a node can only consume nodes that exist
// before it.  Graphs built with record=false keep no tape and no closures,
// so intermediates are freed as soon as they go out of scope.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace impchat {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;
using Mask = std::vector<bool>;

/// A trainable array with its accumulated gradient.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

namespace ad {

class Graph;

struct Node {
  Matrix value;
  Matrix grad;
  bool needs_grad = false;
  Graph* graph = nullptr;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  Matrix& grad_buffer() {
    if (grad.size() == 0) grad = Matrix::Zero(value.rows(), value.cols());
    return grad;
  }
  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
};

using Var = std::shared_ptr<Node>;

class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value);
  /// Leaf bound to a trainable parameter; cached by address so each Param
  /// appears once.  Params must outlive the graph.
  Var param(Param& p);

  /// Creates an op node.  The backward closure is dropped when not recording
  /// or when no input needs a gradient.
  Var make(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);
  /// Creates a node whose backward writes straight into parameter storage
  /// (used by sparse lookups so the full table never enters the tape).
  Var make_sink(Matrix value, std::function<void(Node&)> backward_fn);

  /// Seeds d(root) = seed (root must be 1x1) and propagates to every
  /// parameter reachable from it.
  void backward(const Var& root, double seed = 1.0);

 private:
  bool record_;
  std::vector<Var> tape_;
  std::unordered_map<const Param*, Var> params_;
};

// Elementwise and linear algebra.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// s * a + c elementwise.
Var affine(const Var& a, double s, double c);
/// a scaled by the 1x1 node s.
Var scale_by(const Var& a, const Var& s);
Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);
/// a + 1 * bias where bias is a 1 x cols row.
Var add_row(const Var& a, const Var& bias);

Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);

/// Row softmax restricted to columns with col_mask true.  Rows with no
/// admissible column become all-zero.
Var softmax_rows(const Var& scores, const Mask& col_mask);
/// Column softmax (each column normalized over its rows).
Var softmax_cols(const Var& a);
Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps);

/// Zeroes rows where mask is false.
Var mask_rows(const Var& a, const Mask& mask);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var element(const Var& a, Eigen::Index r, Eigen::Index c);
/// 1 x (rows*cols) row holding a in row-major order.
Var flatten_row_major(const Var& a);
/// Splits a (r x c*w) into c column blocks of width w and stacks them
/// vertically: (c*r x w), block i at rows [i*r, (i+1)*r).
Var blocks_to_rows(const Var& a, Eigen::Index width);
/// sum_i weights(i) * a[:, i*w : (i+1)*w] for a (r x c*w) and weights c x 1.
Var weighted_col_blocks(const Var& a, const Var& weights, Eigen::Index width);
/// Elementwise mean of equally shaped nodes.
Var mean_of(const std::vector<Var>& parts);

Var sum_all(const Var& a);
/// Column sums, 1 x cols.
Var sum_rows(const Var& a);
/// Mean over rows with mask true, 1 x cols.  Throws if nothing is unmasked.
Var mean_rows_masked(const Var& a, const Mask& mask);

/// cos(a_i, b_j) for every row pair; zero-norm rows give 0.
Var cosine_matrix(const Var& a, const Var& b);

/// For each admissible column, the max over admissible rows (1 x cols);
/// inadmissible columns produce 0.
Var max_over_rows(const Var& m, const Mask& row_mask, const Mask& col_mask);
/// For each admissible row, the max over admissible columns (rows x 1).
Var max_over_cols(const Var& m, const Mask& row_mask, const Mask& col_mask);

/// Rows of table selected by ids; id 0 (PAD) yields a zero row and no grad.
Var gather_rows(Graph& g, Param& table, const std::vector<int>& ids);

/// Multichannel 2D convolution.  Input is channels x (h*w) row-major
/// spatial; weight is filters x (channels*k*k); bias is filters x 1.
Var conv2d(const Var& input, int h, int w, const Var& weight, const Var& bias, int kernel,
           int stride, int pad_top, int pad_left, int out_h, int out_w);
/// Max pooling with window = stride = size; ceil mode (partial windows).
Var max_pool2d(const Var& input, int h, int w, int size, int out_h, int out_w);

/// Mean binary cross-entropy contribution of one probability, with the
/// probability clipped to [clip, 1 - clip] before the log.
Var binary_cross_entropy(const Var& prob, double label, double clip);

}  // namespace ad
}  // namespace impchat
