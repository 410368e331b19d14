#pragma once

#include "impchat/model.hpp"

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace impchat {

/// Adam with bias correction over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Param*> params, double beta1, double beta2, double eps);
  void step(double lr);
  long steps() const { return t_; }

 private:
  std::vector<Param*> params_;
  std::vector<Matrix> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  double valid_loss = 0;
  double lr = 0;
  double wall_seconds = 0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_valid = 0;
  std::string rng_state;
};

/// Thrown when the loss turns non-finite; the message names the first
/// parameter whose gradient is not finite.
struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Mean per-pair cross-entropy over a dataset, without recording a tape.
double dataset_loss(Model& model, const std::vector<EncodedSample>& data);

/// Trains in place.  Each step covers about cfg.batch candidate pairs
/// (whole samples, so the candidates of one sample share a graph); the
/// learning rate decays by cfg.lr_decay after every epoch.  The parameters
/// with the lowest validation loss (training loss when valid is empty) are
/// restored at the end.
TrainResult train(Model& model, const std::vector<EncodedSample>& train_set, const std::vector<EncodedSample>& valid_set,
                  std::uint64_t seed, const std::function<void(const EpochLog&)>& on_epoch = {});

/// Writes `epoch,train_loss,valid_loss,lr,wall_seconds` with a header row.
void write_train_log(const std::string& path, const std::vector<EpochLog>& log);

}  // namespace impchat
