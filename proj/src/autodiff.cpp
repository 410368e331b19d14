#include "impchat/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace impchat::ad {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a->rows() != b->rows() || a->cols() != b->cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a->rows()) +
                                "x" + std::to_string(a->cols()) + " vs " +
                                std::to_string(b->rows()) + "x" + std::to_string(b->cols()));
  }
}

Graph& graph_of(const Var& v) {
  if (!v || !v->graph) throw std::logic_error("autodiff: node without graph");
  return *v->graph;
}

}  // namespace

Var Graph::constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->graph = this;
  return n;
}

Var Graph::param(Param& p) {
  if (auto it = params_.find(&p); it != params_.end()) return it->second;
  auto n = std::make_shared<Node>();
  n->value = p.value;
  n->graph = this;
  if (record_) {
    n->needs_grad = true;
    Param* target = &p;
    n->backward_fn = [target](Node& self) {
      if (target->grad.size() == 0) target->zero_grad();
      target->grad += self.grad;
    };
    tape_.push_back(n);
  }
  params_.emplace(&p, n);
  return n;
}

Var Graph::make(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->graph = this;
  if (record_) {
    bool any = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v->needs_grad; });
    if (any) {
      n->needs_grad = true;
      n->inputs = std::move(inputs);
      n->backward_fn = std::move(backward_fn);
      tape_.push_back(n);
    }
  }
  return n;
}

Var Graph::make_sink(Matrix value, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->graph = this;
  if (record_) {
    n->needs_grad = true;
    n->backward_fn = std::move(backward_fn);
    tape_.push_back(n);
  }
  return n;
}

void Graph::backward(const Var& root, double seed) {
  if (!record_) throw std::logic_error("backward on a non-recording graph");
  if (root->rows() != 1 || root->cols() != 1) throw std::invalid_argument("backward root must be 1x1");
  if (!root->needs_grad) return;
  root->grad_buffer()(0, 0) += seed;
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
    Node& n = **it;
    if (n.grad.size() == 0 || !n.backward_fn) continue;
    n.backward_fn(n);
  }
  // Release intermediate gradients so the graph can be backpropagated again
  // with a different root.
  for (auto& n : tape_) n->grad.resize(0, 0);
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return graph_of(a).make(a->value + b->value, {a, b}, [](Node& o) {
    for (auto& in : o.inputs)
      if (in->needs_grad) in->grad_buffer() += o.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return graph_of(a).make(a->value - b->value, {a, b}, [](Node& o) {
    if (o.inputs[0]->needs_grad) o.inputs[0]->grad_buffer() += o.grad;
    if (o.inputs[1]->needs_grad) o.inputs[1]->grad_buffer() -= o.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return graph_of(a).make(a->value.cwiseProduct(b->value), {a, b}, [](Node& o) {
    auto& x = *o.inputs[0];
    auto& y = *o.inputs[1];
    if (x.needs_grad) x.grad_buffer() += o.grad.cwiseProduct(y.value);
    if (y.needs_grad) y.grad_buffer() += o.grad.cwiseProduct(x.value);
  });
}

Var scale(const Var& a, double s) { return affine(a, s, 0.0); }

Var affine(const Var& a, double s, double c) {
  Matrix v = (a->value * s).array() + c;
  return graph_of(a).make(std::move(v), {a}, [s](Node& o) { o.inputs[0]->grad_buffer() += s * o.grad; });
}

Var scale_by(const Var& a, const Var& s) {
  if (s->rows() != 1 || s->cols() != 1) throw std::invalid_argument("scale_by: scalar expected");
  return graph_of(a).make(a->value * s->value(0, 0), {a, s}, [](Node& o) {
    auto& x = *o.inputs[0];
    auto& k = *o.inputs[1];
    if (x.needs_grad) x.grad_buffer() += k.value(0, 0) * o.grad;
    if (k.needs_grad) k.grad_buffer()(0, 0) += o.grad.cwiseProduct(x.value).sum();
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a->cols() != b->rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  return graph_of(a).make(a->value * b->value, {a, b}, [](Node& o) {
    auto& x = *o.inputs[0];
    auto& y = *o.inputs[1];
    if (x.needs_grad) x.grad_buffer().noalias() += o.grad * y.value.transpose();
    if (y.needs_grad) y.grad_buffer().noalias() += x.value.transpose() * o.grad;
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  if (a->cols() != b->cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  return graph_of(a).make(a->value * b->value.transpose(), {a, b}, [](Node& o) {
    auto& x = *o.inputs[0];
    auto& y = *o.inputs[1];
    if (x.needs_grad) x.grad_buffer().noalias() += o.grad * y.value;
    if (y.needs_grad) y.grad_buffer().noalias() += o.grad.transpose() * x.value;
  });
}

Var transpose(const Var& a) {
  return graph_of(a).make(a->value.transpose(), {a},
                          [](Node& o) { o.inputs[0]->grad_buffer() += o.grad.transpose(); });
}

Var add_row(const Var& a, const Var& bias) {
  if (bias->rows() != 1 || bias->cols() != a->cols()) throw std::invalid_argument("add_row: bias shape");
  Matrix v = a->value.rowwise() + RowVector(bias->value.row(0));
  return graph_of(a).make(std::move(v), {a, bias}, [](Node& o) {
    if (o.inputs[0]->needs_grad) o.inputs[0]->grad_buffer() += o.grad;
    if (o.inputs[1]->needs_grad) o.inputs[1]->grad_buffer() += o.grad.colwise().sum();
  });
}

Var relu(const Var& a) {
  Matrix v = a->value.cwiseMax(0.0);
  return graph_of(a).make(std::move(v), {a}, [](Node& o) {
    auto& x = *o.inputs[0];
    x.grad_buffer() += (x.value.array() > 0.0).select(o.grad, 0.0);
  });
}

Var tanh(const Var& a) {
  Matrix v = a->value.array().tanh();
  return graph_of(a).make(std::move(v), {a}, [](Node& o) {
    o.inputs[0]->grad_buffer().array() += o.grad.array() * (1.0 - o.value.array().square());
  });
}

Var sigmoid(const Var& a) {
  Matrix v = (1.0 / (1.0 + (-a->value.array()).exp())).matrix();
  return graph_of(a).make(std::move(v), {a}, [](Node& o) {
    o.inputs[0]->grad_buffer().array() += o.grad.array() * o.value.array() * (1.0 - o.value.array());
  });
}

Var softmax_rows(const Var& scores, const Mask& col_mask) {
  const auto rows = scores->rows();
  const auto cols = scores->cols();
  if (static_cast<Eigen::Index>(col_mask.size()) != cols) throw std::invalid_argument("softmax_rows: mask length");
  Matrix p = Matrix::Zero(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < cols; ++j)
      if (col_mask[j]) mx = std::max(mx, scores->value(i, j));
    if (!std::isfinite(mx)) continue;
    double z = 0.0;
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (!col_mask[j]) continue;
      p(i, j) = std::exp(scores->value(i, j) - mx);
      z += p(i, j);
    }
    p.row(i) /= z;
  }
  return graph_of(scores).make(std::move(p), {scores}, [](Node& o) {
    Eigen::VectorXd dot = o.grad.cwiseProduct(o.value).rowwise().sum();
    Matrix g = o.value.cwiseProduct(o.grad.colwise() - dot);
    o.inputs[0]->grad_buffer() += g;
  });
}

Var softmax_cols(const Var& a) {
  Matrix p(a->rows(), a->cols());
  for (Eigen::Index j = 0; j < a->cols(); ++j) {
    const double mx = a->value.col(j).maxCoeff();
    p.col(j) = (a->value.col(j).array() - mx).exp();
    p.col(j) /= p.col(j).sum();
  }
  return graph_of(a).make(std::move(p), {a}, [](Node& o) {
    RowVector dot = o.grad.cwiseProduct(o.value).colwise().sum();
    Matrix g = o.value.cwiseProduct(o.grad.rowwise() - dot);
    o.inputs[0]->grad_buffer() += g;
  });
}

Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps) {
  const auto rows = x->rows();
  const auto cols = x->cols();
  if (gain->cols() != cols || bias->cols() != cols) throw std::invalid_argument("layer_norm: param width");
  Matrix xhat(rows, cols);
  Eigen::VectorXd inv_std(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double mean = x->value.row(i).mean();
    const double var = (x->value.row(i).array() - mean).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x->value.row(i).array() - mean) * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gain->value.row(0).array()).rowwise() + bias->value.row(0).array();
  return graph_of(x).make(std::move(out), {x, gain, bias},
                          [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& o) {
                            auto& in = *o.inputs[0];
                            auto& g = *o.inputs[1];
                            auto& b = *o.inputs[2];
                            if (g.needs_grad) g.grad_buffer() += o.grad.cwiseProduct(xhat).colwise().sum();
                            if (b.needs_grad) b.grad_buffer() += o.grad.colwise().sum();
                            if (in.needs_grad) {
                              const double n = static_cast<double>(xhat.cols());
                              Matrix dxhat = o.grad.array().rowwise() * g.value.row(0).array();
                              Matrix& dx = in.grad_buffer();
                              for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
                                const double m1 = dxhat.row(i).mean();
                                const double m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).sum() / n;
                                dx.row(i).array() +=
                                    inv_std(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
                              }
                            }
                          });
}

Var mask_rows(const Var& a, const Mask& mask) {
  if (static_cast<Eigen::Index>(mask.size()) != a->rows()) throw std::invalid_argument("mask_rows: mask length");
  Matrix v = a->value;
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    if (!mask[i]) v.row(i).setZero();
  return graph_of(a).make(std::move(v), {a}, [mask](Node& o) {
    Matrix& g = o.inputs[0]->grad_buffer();
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      if (mask[i]) g.row(i) += o.grad.row(i);
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Eigen::Index total = 0;
  const auto cols = parts.front()->cols();
  for (const auto& p : parts) {
    if (p->cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    total += p->rows();
  }
  Matrix v(total, cols);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleRows(off, p->rows()) = p->value;
    off += p->rows();
  }
  return graph_of(parts.front()).make(std::move(v), parts, [](Node& o) {
    Eigen::Index at = 0;
    for (auto& in : o.inputs) {
      if (in->needs_grad) in->grad_buffer() += o.grad.middleRows(at, in->rows());
      at += in->rows();
    }
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Eigen::Index total = 0;
  const auto rows = parts.front()->rows();
  for (const auto& p : parts) {
    if (p->rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    total += p->cols();
  }
  Matrix v(rows, total);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    v.middleCols(off, p->cols()) = p->value;
    off += p->cols();
  }
  return graph_of(parts.front()).make(std::move(v), parts, [](Node& o) {
    Eigen::Index at = 0;
    for (auto& in : o.inputs) {
      if (in->needs_grad) in->grad_buffer() += o.grad.middleCols(at, in->cols());
      at += in->cols();
    }
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a->rows()) throw std::out_of_range("slice_rows");
  return graph_of(a).make(a->value.middleRows(start, count), {a}, [start, count](Node& o) {
    o.inputs[0]->grad_buffer().middleRows(start, count) += o.grad;
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a->cols()) throw std::out_of_range("slice_cols");
  return graph_of(a).make(a->value.middleCols(start, count), {a}, [start, count](Node& o) {
    o.inputs[0]->grad_buffer().middleCols(start, count) += o.grad;
  });
}

Var element(const Var& a, Eigen::Index r, Eigen::Index c) {
  if (r < 0 || c < 0 || r >= a->rows() || c >= a->cols()) throw std::out_of_range("element");
  Matrix v(1, 1);
  v(0, 0) = a->value(r, c);
  return graph_of(a).make(std::move(v), {a}, [r, c](Node& o) { o.inputs[0]->grad_buffer()(r, c) += o.grad(0, 0); });
}

Var flatten_row_major(const Var& a) {
  const Eigen::Index r = a->rows(), c = a->cols();
  Matrix out(1, r * c);
  for (Eigen::Index i = 0; i < r; ++i) out.middleCols(i * c, c) = a->value.row(i);
  return graph_of(a).make(std::move(out), {a}, [r, c](Node& o) {
    auto& g = o.inputs[0]->grad_buffer();
    for (Eigen::Index i = 0; i < r; ++i) g.row(i) += o.grad.middleCols(i * c, c);
  });
}

Var blocks_to_rows(const Var& a, Eigen::Index width) {
  if (width <= 0 || a->cols() % width != 0) throw std::invalid_argument("blocks_to_rows: width must divide cols");
  const Eigen::Index r = a->rows(), n = a->cols() / width;
  Matrix out(n * r, width);
  for (Eigen::Index i = 0; i < n; ++i) out.middleRows(i * r, r) = a->value.middleCols(i * width, width);
  return graph_of(a).make(std::move(out), {a}, [r, n, width](Node& o) {
    auto& g = o.inputs[0]->grad_buffer();
    for (Eigen::Index i = 0; i < n; ++i) g.middleCols(i * width, width) += o.grad.middleRows(i * r, r);
  });
}

Var weighted_col_blocks(const Var& a, const Var& weights, Eigen::Index width) {
  if (width <= 0 || a->cols() % width != 0) throw std::invalid_argument("weighted_col_blocks: width must divide cols");
  const Eigen::Index n = a->cols() / width;
  if (weights->rows() != n || weights->cols() != 1)
    throw std::invalid_argument("weighted_col_blocks: expected " + std::to_string(n) + " x 1 weights");
  Matrix out = Matrix::Zero(a->rows(), width);
  for (Eigen::Index i = 0; i < n; ++i) out += weights->value(i, 0) * a->value.middleCols(i * width, width);
  return graph_of(a).make(std::move(out), {a, weights}, [n, width](Node& o) {
    auto& a = *o.inputs[0];
    auto& w = *o.inputs[1];
    if (a.needs_grad) {
      auto& g = a.grad_buffer();
      for (Eigen::Index i = 0; i < n; ++i) g.middleCols(i * width, width) += w.value(i, 0) * o.grad;
    }
    if (w.needs_grad) {
      auto& g = w.grad_buffer();
      for (Eigen::Index i = 0; i < n; ++i) g(i, 0) += a.value.middleCols(i * width, width).cwiseProduct(o.grad).sum();
    }
  });
}

Var mean_of(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("mean_of: empty");
  Matrix v = parts.front()->value;
  for (size_t i = 1; i < parts.size(); ++i) {
    require_same_shape(parts.front(), parts[i], "mean_of");
    v += parts[i]->value;
  }
  const double inv = 1.0 / static_cast<double>(parts.size());
  v *= inv;
  return graph_of(parts.front()).make(std::move(v), parts, [inv](Node& o) {
    for (auto& in : o.inputs)
      if (in->needs_grad) in->grad_buffer() += inv * o.grad;
  });
}

Var sum_all(const Var& a) {
  Matrix v(1, 1);
  v(0, 0) = a->value.sum();
  return graph_of(a).make(std::move(v), {a}, [](Node& o) { o.inputs[0]->grad_buffer().array() += o.grad(0, 0); });
}

Var sum_rows(const Var& a) {
  return graph_of(a).make(a->value.colwise().sum(), {a},
                          [](Node& o) { o.inputs[0]->grad_buffer().rowwise() += RowVector(o.grad.row(0)); });
}

Var mean_rows_masked(const Var& a, const Mask& mask) {
  if (static_cast<Eigen::Index>(mask.size()) != a->rows()) throw std::invalid_argument("mean_rows_masked: mask length");
  const auto count = std::count(mask.begin(), mask.end(), true);
  if (count == 0) throw std::invalid_argument("mean_rows_masked: all rows masked");
  RowVector v = RowVector::Zero(a->cols());
  for (Eigen::Index i = 0; i < a->rows(); ++i)
    if (mask[i]) v += a->value.row(i);
  const double inv = 1.0 / static_cast<double>(count);
  v *= inv;
  return graph_of(a).make(Matrix(v), {a}, [mask, inv](Node& o) {
    Matrix& g = o.inputs[0]->grad_buffer();
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      if (mask[i]) g.row(i) += inv * o.grad.row(0);
  });
}

Var cosine_matrix(const Var& a, const Var& b) {
  if (a->cols() != b->cols()) throw std::invalid_argument("cosine_matrix: width mismatch");
  Eigen::VectorXd na = a->value.rowwise().norm();
  Eigen::VectorXd nb = b->value.rowwise().norm();
  Eigen::VectorXd ia = (na.array() > 0.0).select(na.cwiseInverse(), 0.0);
  Eigen::VectorXd ib = (nb.array() > 0.0).select(nb.cwiseInverse(), 0.0);
  Matrix dots = a->value * b->value.transpose();
  Matrix c = ia.asDiagonal() * dots * ib.asDiagonal();
  return graph_of(a).make(c, {a, b}, [c, ia, ib](Node& o) {
    auto& x = *o.inputs[0];
    auto& y = *o.inputs[1];
    // c_ij = <x_i, y_j> ia_i ib_j
    // dc/dx_i = ia_i ib_j y_j - c_ij ia_i^2 x_i
    if (x.needs_grad) {
      Matrix gy = o.grad * ib.asDiagonal();  // rows i, cols j
      Matrix t1 = ia.asDiagonal() * (gy * y.value);
      Eigen::VectorXd s = o.grad.cwiseProduct(c).rowwise().sum();
      Matrix t2 = (s.array() * ia.array().square()).matrix().asDiagonal() * x.value;
      x.grad_buffer() += t1 - t2;
    }
    if (y.needs_grad) {
      Matrix gx = ia.asDiagonal() * o.grad;
      Matrix t1 = ib.asDiagonal() * (gx.transpose() * x.value);
      Eigen::VectorXd s = o.grad.cwiseProduct(c).colwise().sum().transpose();
      Matrix t2 = (s.array() * ib.array().square()).matrix().asDiagonal() * y.value;
      y.grad_buffer() += t1 - t2;
    }
  });
}

Var max_over_rows(const Var& m, const Mask& row_mask, const Mask& col_mask) {
  const auto rows = m->rows();
  const auto cols = m->cols();
  if (static_cast<Eigen::Index>(row_mask.size()) != rows || static_cast<Eigen::Index>(col_mask.size()) != cols)
    throw std::invalid_argument("max_over_rows: mask length");
  Matrix v = Matrix::Zero(1, cols);
  std::vector<Eigen::Index> arg(cols, -1);
  for (Eigen::Index j = 0; j < cols; ++j) {
    if (!col_mask[j]) continue;
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (!row_mask[i]) continue;
      if (arg[j] < 0 || m->value(i, j) > v(0, j)) {
        v(0, j) = m->value(i, j);
        arg[j] = i;
      }
    }
  }
  return graph_of(m).make(std::move(v), {m}, [arg](Node& o) {
    Matrix& g = o.inputs[0]->grad_buffer();
    for (size_t j = 0; j < arg.size(); ++j)
      if (arg[j] >= 0) g(arg[j], static_cast<Eigen::Index>(j)) += o.grad(0, static_cast<Eigen::Index>(j));
  });
}

Var max_over_cols(const Var& m, const Mask& row_mask, const Mask& col_mask) {
  const auto rows = m->rows();
  const auto cols = m->cols();
  if (static_cast<Eigen::Index>(row_mask.size()) != rows || static_cast<Eigen::Index>(col_mask.size()) != cols)
    throw std::invalid_argument("max_over_cols: mask length");
  Matrix v = Matrix::Zero(rows, 1);
  std::vector<Eigen::Index> arg(rows, -1);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!row_mask[i]) continue;
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (!col_mask[j]) continue;
      if (arg[i] < 0 || m->value(i, j) > v(i, 0)) {
        v(i, 0) = m->value(i, j);
        arg[i] = j;
      }
    }
  }
  return graph_of(m).make(std::move(v), {m}, [arg](Node& o) {
    Matrix& g = o.inputs[0]->grad_buffer();
    for (size_t i = 0; i < arg.size(); ++i)
      if (arg[i] >= 0) g(static_cast<Eigen::Index>(i), arg[i]) += o.grad(static_cast<Eigen::Index>(i), 0);
  });
}

Var gather_rows(Graph& g, Param& table, const std::vector<int>& ids) {
  const auto d = table.value.cols();
  Matrix v = Matrix::Zero(static_cast<Eigen::Index>(ids.size()), d);
  for (size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id >= table.value.rows())
      throw std::out_of_range("embedding lookup: token id " + std::to_string(id) + " outside table of " +
                              std::to_string(table.value.rows()) + " rows");
    if (id != 0) v.row(static_cast<Eigen::Index>(i)) = table.value.row(id);
  }
  Param* target = &table;
  return g.make_sink(std::move(v), [target, ids](Node& o) {
    if (target->grad.size() == 0) target->zero_grad();
    for (size_t i = 0; i < ids.size(); ++i)
      if (ids[i] != 0) target->grad.row(ids[i]) += o.grad.row(static_cast<Eigen::Index>(i));
  });
}

Var conv2d(const Var& input, int h, int w, const Var& weight, const Var& bias, int kernel, int stride,
           int pad_top, int pad_left, int out_h, int out_w) {
  const auto channels = input->rows();
  if (input->cols() != static_cast<Eigen::Index>(h) * w) throw std::invalid_argument("conv2d: input size");
  const Eigen::Index patch = channels * kernel * kernel;
  if (weight->cols() != patch) throw std::invalid_argument("conv2d: weight width");
  const Eigen::Index positions = static_cast<Eigen::Index>(out_h) * out_w;
  // im2col; out-of-bounds taps read zero.
  Matrix cols = Matrix::Zero(patch, positions);
  for (Eigen::Index c = 0; c < channels; ++c)
    for (int ky = 0; ky < kernel; ++ky)
      for (int kx = 0; kx < kernel; ++kx) {
        const Eigen::Index row = (c * kernel + ky) * kernel + kx;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - pad_top;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - pad_left;
            if (ix < 0 || ix >= w) continue;
            cols(row, oy * out_w + ox) = input->value(c, iy * w + ix);
          }
        }
      }
  Matrix out = weight->value * cols;
  out.colwise() += Eigen::VectorXd(bias->value.col(0));
  return graph_of(input).make(
      std::move(out), {input, weight, bias},
      [cols = std::move(cols), h, w, kernel, stride, pad_top, pad_left, out_h, out_w](Node& o) {
        auto& in = *o.inputs[0];
        auto& wt = *o.inputs[1];
        auto& b = *o.inputs[2];
        if (wt.needs_grad) wt.grad_buffer().noalias() += o.grad * cols.transpose();
        if (b.needs_grad) b.grad_buffer() += o.grad.rowwise().sum();
        if (in.needs_grad) {
          Matrix dcols = wt.value.transpose() * o.grad;
          Matrix& dx = in.grad_buffer();
          for (Eigen::Index c = 0; c < in.rows(); ++c)
            for (int ky = 0; ky < kernel; ++ky)
              for (int kx = 0; kx < kernel; ++kx) {
                const Eigen::Index row = (c * kernel + ky) * kernel + kx;
                for (int oy = 0; oy < out_h; ++oy) {
                  const int iy = oy * stride + ky - pad_top;
                  if (iy < 0 || iy >= h) continue;
                  for (int ox = 0; ox < out_w; ++ox) {
                    const int ix = ox * stride + kx - pad_left;
                    if (ix < 0 || ix >= w) continue;
                    dx(c, iy * w + ix) += dcols(row, oy * out_w + ox);
                  }
                }
              }
        }
      });
}

Var max_pool2d(const Var& input, int h, int w, int size, int out_h, int out_w) {
  const auto channels = input->rows();
  const Eigen::Index positions = static_cast<Eigen::Index>(out_h) * out_w;
  Matrix out(channels, positions);
  std::vector<Eigen::Index> arg(static_cast<size_t>(channels * positions));
  for (Eigen::Index c = 0; c < channels; ++c)
    for (int oy = 0; oy < out_h; ++oy)
      for (int ox = 0; ox < out_w; ++ox) {
        double best = -std::numeric_limits<double>::infinity();
        Eigen::Index best_at = -1;
        for (int dy = 0; dy < size; ++dy) {
          const int iy = oy * size + dy;
          if (iy >= h) break;
          for (int dx = 0; dx < size; ++dx) {
            const int ix = ox * size + dx;
            if (ix >= w) break;
            const double v = input->value(c, iy * w + ix);
            if (best_at < 0 || v > best) {
              best = v;
              best_at = iy * w + ix;
            }
          }
        }
        const Eigen::Index p = oy * out_w + ox;
        out(c, p) = best;
        arg[static_cast<size_t>(c * positions + p)] = best_at;
      }
  return graph_of(input).make(std::move(out), {input}, [arg = std::move(arg), positions](Node& o) {
    Matrix& g = o.inputs[0]->grad_buffer();
    for (Eigen::Index c = 0; c < o.rows(); ++c)
      for (Eigen::Index p = 0; p < positions; ++p) g(c, arg[static_cast<size_t>(c * positions + p)]) += o.grad(c, p);
  });
}

Var binary_cross_entropy(const Var& prob, double label, double clip) {
  if (prob->rows() != 1 || prob->cols() != 1) throw std::invalid_argument("binary_cross_entropy: scalar expected");
  const double p = prob->value(0, 0);
  const double pc = std::clamp(p, clip, 1.0 - clip);
  const bool clipped = pc != p;
  Matrix v(1, 1);
  v(0, 0) = -(label * std::log(pc) + (1.0 - label) * std::log(1.0 - pc));
  return graph_of(prob).make(std::move(v), {prob}, [pc, clipped, label](Node& o) {
    if (clipped) return;
    o.inputs[0]->grad_buffer()(0, 0) += o.grad(0, 0) * (-(label / pc) + (1.0 - label) / (1.0 - pc));
  });
}

}  // namespace impchat::ad
