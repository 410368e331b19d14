#include "impchat/nnblocks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace impchat {

bool EmbSeq::any() const { return std::find(mask.begin(), mask.end(), true) != mask.end(); }

Matrix xavier(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.uniform(-limit, limit);
  return m;
}

Matrix gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = stddev * rng.normal();
  return m;
}

Linear::Linear(const std::string& name, int in, int out, Rng& rng)
    : weight(name + ".weight", xavier(rng, in, out)), bias(name + ".bias", Matrix::Zero(1, out)) {}

Var Linear::operator()(Graph& g, const Var& x) {
  return ad::add_row(ad::matmul(x, g.param(weight)), g.param(bias));
}

void Linear::visit(const ParamVisitor& fn) {
  fn(weight);
  fn(bias);
}

AttentiveModule::AttentiveModule(const std::string& name, int d, int d_ff, double eps_, Rng& rng)
    : w1(name + ".w1", xavier(rng, d, d_ff)),
      b1(name + ".b1", Matrix::Zero(1, d_ff)),
      w2(name + ".w2", xavier(rng, d_ff, d)),
      b2(name + ".b2", Matrix::Zero(1, d)),
      ln1_gain(name + ".ln1_gain", Matrix::Ones(1, d)),
      ln1_bias(name + ".ln1_bias", Matrix::Zero(1, d)),
      ln2_gain(name + ".ln2_gain", Matrix::Ones(1, d)),
      ln2_bias(name + ".ln2_bias", Matrix::Zero(1, d)),
      eps(eps_) {}

Var attention_weights(const EmbSeq& q, const EmbSeq& k) {
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.width()));
  return ad::softmax_rows(ad::scale(ad::matmul_nt(q.values, k.values), inv), k.mask);
}

EmbSeq AttentiveModule::operator()(Graph& g, const EmbSeq& q, const EmbSeq& k, const EmbSeq& v) {
  return apply_many(g, {{&q, &k, &v}}).front();
}

std::vector<EmbSeq> AttentiveModule::apply_many(Graph& g, const std::vector<Call>& calls) {
  std::vector<Var> mixed;
  for (const auto& c : calls) {
    const EmbSeq& q = *c.q;
    const EmbSeq& k = *c.k;
    const EmbSeq& v = *c.v;
    if (k.length() != v.length() || k.mask != v.mask)
      throw std::invalid_argument("attend: keys and values must share length and mask");
    if (q.width() != k.width() || v.width() != q.width())
      throw std::invalid_argument("attend: width mismatch (" + std::to_string(q.width()) + ", " +
                                  std::to_string(k.width()) + ", " + std::to_string(v.width()) + ")");
    // Masked rows are zeroed at entry so their contents can never leak.
    EmbSeq qz{ad::mask_rows(q.values, q.mask), q.mask};
    EmbSeq kz{ad::mask_rows(k.values, k.mask), k.mask};
    Var vz = ad::mask_rows(v.values, v.mask);
    mixed.push_back(ad::add(qz.values, ad::matmul(attention_weights(qz, kz), vz)));
  }
  // The position-wise layers run per call rather than on stacked rows: with
  // FMA, Eigen's tail rows round differently from full panels, so a row's
  // result would depend on what else shared the batch.
  std::vector<EmbSeq> result;
  for (size_t i = 0; i < calls.size(); ++i) {
    Var x = mixed[i];
    if (!bypass_norm) x = ad::layer_norm_rows(x, g.param(ln1_gain), g.param(ln1_bias), eps);
    Var out = x;
    if (!bypass_ffn) {
      Var hidden = ad::relu(ad::add_row(ad::matmul(x, g.param(w1)), g.param(b1)));
      out = ad::add(x, ad::add_row(ad::matmul(hidden, g.param(w2)), g.param(b2)));
      if (!bypass_norm) out = ad::layer_norm_rows(out, g.param(ln2_gain), g.param(ln2_bias), eps);
    }
    result.push_back({ad::mask_rows(out, calls[i].q->mask), calls[i].q->mask});
  }
  return result;
}

void AttentiveModule::visit(const ParamVisitor& fn) {
  for (Param* p : {&w1, &b1, &w2, &b2, &ln1_gain, &ln1_bias, &ln2_gain, &ln2_bias}) fn(*p);
}

EmbSeq embed(Graph& g, const TokenSeq& tokens, Param& table) {
  Mask mask(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) mask[i] = tokens[i] != 0;
  return {ad::gather_rows(g, table, tokens), std::move(mask)};
}

Var masked_mean(const EmbSeq& seq) { return ad::mean_rows_masked(seq.values, seq.mask); }

ConvStack::ConvStack(const std::string& name, int in_ch, const std::vector<ConvLayerSpec>& spec,
                     ConvPadding pad, Rng& rng)
    : in_channels(in_ch), padding(pad) {
  int channels = in_ch;
  for (size_t i = 0; i < spec.size(); ++i) {
    const auto& s = spec[i];
    const int fan_in = channels * s.kernel * s.kernel;
    Layer layer;
    layer.spec = s;
    // He-style uniform init for the ReLU stack.
    const double limit = std::sqrt(6.0 / fan_in);
    Matrix w(s.filters, fan_in);
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = rng.uniform(-limit, limit);
    layer.weight = Param(name + ".conv" + std::to_string(i) + ".weight", std::move(w));
    layer.bias = Param(name + ".conv" + std::to_string(i) + ".bias", Matrix::Zero(s.filters, 1));
    layers.push_back(std::move(layer));
    channels = s.filters;
  }
}

namespace {

struct ConvGeometry {
  int out_h, out_w, pad_top, pad_left, pool_h, pool_w;
};

ConvGeometry geometry(const ConvLayerSpec& s, ConvPadding padding, int h, int w, size_t index) {
  ConvGeometry g{};
  auto fail = [&](const std::string& why) {
    throw std::invalid_argument("conv_stack layer " + std::to_string(index) + ": spatial underflow (" + why +
                                ", input " + std::to_string(h) + "x" + std::to_string(w) + ")");
  };
  if (h < 1 || w < 1) fail("empty input");
  if (padding == ConvPadding::same) {
    g.out_h = (h + s.stride - 1) / s.stride;
    g.out_w = (w + s.stride - 1) / s.stride;
    g.pad_top = std::max((g.out_h - 1) * s.stride + s.kernel - h, 0) / 2;
    g.pad_left = std::max((g.out_w - 1) * s.stride + s.kernel - w, 0) / 2;
    g.pool_h = (g.out_h + s.pool - 1) / s.pool;
    g.pool_w = (g.out_w + s.pool - 1) / s.pool;
  } else {
    if (h < s.kernel || w < s.kernel) fail("kernel " + std::to_string(s.kernel) + " larger than input");
    g.out_h = (h - s.kernel) / s.stride + 1;
    g.out_w = (w - s.kernel) / s.stride + 1;
    g.pad_top = g.pad_left = 0;
    if (g.out_h < s.pool || g.out_w < s.pool) fail("pool " + std::to_string(s.pool) + " larger than conv output");
    g.pool_h = g.out_h / s.pool;
    g.pool_w = g.out_w / s.pool;
  }
  return g;
}

}  // namespace

std::vector<std::pair<int, int>> ConvStack::shapes(int h, int w) const {
  std::vector<std::pair<int, int>> out;
  for (size_t i = 0; i < layers.size(); ++i) {
    auto geo = geometry(layers[i].spec, padding, h, w, i);
    h = geo.pool_h;
    w = geo.pool_w;
    out.emplace_back(h, w);
  }
  return out;
}

int ConvStack::output_size(int h, int w) const {
  auto s = shapes(h, w);
  const int filters = layers.empty() ? in_channels : layers.back().spec.filters;
  if (s.empty()) return filters * h * w;
  return filters * s.back().first * s.back().second;
}

Var ConvStack::operator()(Graph& g, const FeatureMap& input) {
  if (input.data->rows() != in_channels)
    throw std::invalid_argument("conv_stack: expected " + std::to_string(in_channels) + " channels, got " +
                                std::to_string(input.data->rows()));
  Var x = input.data;
  int h = input.h;
  int w = input.w;
  for (size_t i = 0; i < layers.size(); ++i) {
    auto& layer = layers[i];
    auto geo = geometry(layer.spec, padding, h, w, i);
    Var bias = use_bias ? g.param(layer.bias) : g.constant(Matrix::Zero(layer.spec.filters, 1));
    x = ad::conv2d(x, h, w, g.param(layer.weight), bias, layer.spec.kernel, layer.spec.stride, geo.pad_top,
                   geo.pad_left, geo.out_h, geo.out_w);
    x = ad::relu(x);
    // Same padding pools in ceil mode; valid padding drops the ragged border.
    x = ad::max_pool2d(x, geo.out_h, geo.out_w, layer.spec.pool, geo.pool_h, geo.pool_w);
    h = geo.pool_h;
    w = geo.pool_w;
  }
  // Flatten position-major (all channels of position 0 first) into one row.
  const Eigen::Index n = x->rows() * x->cols();
  Matrix flat = Eigen::Map<const Matrix>(x->value.data(), 1, n);
  return g.make(std::move(flat), {x}, [](ad::Node& o) {
    auto& in = *o.inputs[0];
    in.grad_buffer() += Eigen::Map<const Matrix>(o.grad.data(), in.rows(), in.cols());
  });
}

void ConvStack::visit(const ParamVisitor& fn) {
  for (auto& l : layers) {
    fn(l.weight);
    fn(l.bias);
  }
}

GruCell::GruCell(const std::string& name, int in, int hidden, Rng& rng)
    : wx(name + ".wx", xavier(rng, in, 3 * hidden)),
      wh(name + ".wh", xavier(rng, hidden, 3 * hidden)),
      bx(name + ".bx", Matrix::Zero(1, 3 * hidden)),
      bh(name + ".bh", Matrix::Zero(1, 3 * hidden)) {}

Var GruCell::step(Graph& g, const Var& x, const Var& h) {
  const Eigen::Index H = hidden();
  Var gx = ad::add_row(ad::matmul(x, g.param(wx)), g.param(bx));
  Var gh = ad::add_row(ad::matmul(h, g.param(wh)), g.param(bh));
  Var r = ad::sigmoid(ad::add(ad::slice_cols(gx, 0, H), ad::slice_cols(gh, 0, H)));
  Var z = ad::sigmoid(ad::add(ad::slice_cols(gx, H, H), ad::slice_cols(gh, H, H)));
  Var n = ad::tanh(ad::add(ad::slice_cols(gx, 2 * H, H), ad::mul(r, ad::slice_cols(gh, 2 * H, H))));
  // h' = (1 - z) * n + z * h
  return ad::add(ad::mul(ad::affine(z, -1.0, 1.0), n), ad::mul(z, h));
}

void GruCell::visit(const ParamVisitor& fn) {
  fn(wx);
  fn(wh);
  fn(bx);
  fn(bh);
}

Var gru_run(Graph& g, GruCell& cell, const std::vector<Var>& inputs) {
  if (inputs.empty()) throw std::invalid_argument("gru_run: empty input sequence");
  Var h = g.constant(Matrix::Zero(1, cell.hidden()));
  for (const auto& x : inputs) h = cell.step(g, x, h);
  return h;
}

Matrix positional_encoding(int length, int d) {
  Matrix pe(length, d);
  for (int pos = 0; pos < length; ++pos)
    for (int i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / d);
      pe(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  return pe;
}

int load_embedding_text(const std::string& path, Param& table, const std::function<int(const std::string&)>& lookup) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embedding file " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("embedding file " + path + " is empty");
  std::istringstream header(line);
  long count = 0;
  int dim = 0;
  if (!(header >> count >> dim)) throw std::runtime_error("embedding file " + path + ": bad header '" + line + "'");
  if (dim != table.value.cols())
    throw std::runtime_error("embedding file " + path + ": width " + std::to_string(dim) + " != model d " +
                             std::to_string(table.value.cols()));
  int written = 0;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream row(line);
    std::string word;
    if (!(row >> word)) continue;
    Eigen::RowVectorXd v(dim);
    for (int i = 0; i < dim; ++i)
      if (!(row >> v(i))) throw std::runtime_error("embedding file " + path + ": short row at line " + std::to_string(lineno));
    const int id = lookup(word);
    if (id <= 0 || id >= table.value.rows()) continue;
    table.value.row(id) = v;
    ++written;
  }
  return written;
}

}  // namespace impchat
