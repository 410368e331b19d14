#include "impchat/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace impchat {

Adam::Adam(std::vector<Param*> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (Param* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

double dataset_loss(Model& model, const std::vector<EncodedSample>& data) {
  double total = 0.0;
  long pairs = 0;
  for (const auto& s : data) {
    Graph g(false);
    total += model.sample_loss(g, s)->value(0, 0);
    pairs += static_cast<long>(s.candidates.size());
  }
  return pairs ? total / static_cast<double>(pairs) : 0.0;
}

namespace {

std::string first_bad_gradient(Model& model) {
  std::string grad, value;
  model.visit([&](Param& p) {
    if (grad.empty() && !p.grad.allFinite()) grad = p.name;
    if (value.empty() && !p.value.allFinite()) value = p.name;
  });
  if (!grad.empty()) return grad;
  // Clipped probabilities can leave every gradient finite.
  return "(all gradients finite; first non-finite parameter value: " + (value.empty() ? "none" : value) + ")";
}

}  // namespace

TrainResult train(Model& model, const std::vector<EncodedSample>& train_set, const std::vector<EncodedSample>& valid_set,
                  std::uint64_t seed, const std::function<void(const EpochLog&)>& on_epoch) {
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  const ModelConfig& cfg = model.cfg;
  auto params = model.params();
  Adam opt(params, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  Rng rng(seed);
  Rng dropout_rng(seed ^ 0xd50f0a7ULL);

  const double cands = static_cast<double>(train_set.front().candidates.size());
  const size_t per_step = static_cast<size_t>(std::max(1.0, std::round(cfg.batch / std::max(1.0, cands))));

  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), size_t{0});

  TrainResult result;
  std::vector<Matrix> best;
  double lr = cfg.lr;
  const auto t0 = std::chrono::steady_clock::now();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    long epoch_pairs = 0;
    for (size_t start = 0; start < order.size(); start += per_step) {
      const size_t end = std::min(order.size(), start + per_step);
      long batch_pairs = 0;
      for (size_t i = start; i < end; ++i) batch_pairs += static_cast<long>(train_set[order[i]].candidates.size());
      model.zero_grad();
      double batch_loss = 0.0;
      for (size_t i = start; i < end; ++i) {
        Graph g(true);
        Var loss = model.sample_loss(g, train_set[order[i]], cfg.dropout > 0 ? &dropout_rng : nullptr);
        batch_loss += loss->value(0, 0);
        g.backward(loss, 1.0 / static_cast<double>(batch_pairs));
      }
      if (!std::isfinite(batch_loss))
        throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch) +
                               ": non-finite loss; first non-finite gradient: " + first_bad_gradient(model));
      opt.step(lr);
      epoch_loss += batch_loss;
      epoch_pairs += batch_pairs;
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.train_loss = epoch_loss / static_cast<double>(epoch_pairs);
    entry.valid_loss = valid_set.empty() ? entry.train_loss : dataset_loss(model, valid_set);
    entry.lr = lr;
    entry.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (result.best_epoch == 0 || entry.valid_loss < result.best_valid) {
      result.best_epoch = epoch;
      result.best_valid = entry.valid_loss;
      best.clear();
      for (Param* p : params) best.push_back(p->value);
    }
    lr *= cfg.lr_decay;
  }
  for (size_t i = 0; i < best.size(); ++i) params[i]->value = best[i];
  std::ostringstream state;
  state << rng.engine();
  result.rng_state = state.str();
  return result;
}

void write_train_log(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch,train_loss,valid_loss,lr,wall_seconds\n";
  out.precision(10);
  for (const auto& e : log)
    out << e.epoch << ',' << e.train_loss << ',' << e.valid_loss << ',' << e.lr << ',' << e.wall_seconds << '\n';
}

}  // namespace impchat
