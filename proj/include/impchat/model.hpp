#pragma once

// The full scorer: embeddings, both matching branches and the fusion MLP,
// plus checkpoint persistence.

#include "impchat/corpus.hpp"
#include "impchat/prefmatch.hpp"
#include "impchat/stylematch.hpp"

#include <nlohmann/json_fwd.hpp>

#include <stdexcept>
#include <string>
#include <vector>

namespace impchat {

/// A Sample mapped to token ids, history truncated to the most recent pairs.
struct EncodedSample {
  std::string user_id;
  TokenSeq query;
  std::vector<std::pair<TokenSeq, TokenSeq>> history;  // (post, response), oldest first
  std::vector<TokenSeq> candidates;
  std::vector<int> labels;  // 2 / 1 / 0
};

EncodedSample encode_sample(const Sample& s, const Vocab& vocab, int max_len, int history);
std::vector<EncodedSample> encode_samples(const std::vector<Sample>& samples, const Vocab& vocab, int max_len,
                                          int history);

class Model {
 public:
  Model(const ModelConfig& cfg, int vocab_size, std::uint64_t seed);

  ModelConfig cfg;
  Param embedding;  // vocab x d; row 0 (PAD) stays zero
  StyleParams style;
  PrefParams pref;
  Linear fuse_hidden;
  Linear fuse_out;

  void visit(const ParamVisitor& fn);
  std::vector<Param*> params();
  std::size_t num_values();

  struct Forward {
    std::vector<Var> probs;  // one 1 x 1 probability per candidate
    std::vector<Var> style;  // g^S per candidate (zero when disabled)
    std::vector<Var> pref;   // g^P per candidate (zero when disabled)
  };

  /// Builds every candidate's score on one graph so candidate-independent
  /// work is shared.  dropout_rng enables embedding dropout.
  Forward forward(Graph& g, const EncodedSample& s, Rng* dropout_rng = nullptr);

  /// sigmoid(MLP([g^S ; g^P])).
  Var fuse(Graph& g, const Var& style_feat, const Var& pref_feat);

  /// Candidate probabilities without recording a tape.
  std::vector<double> score(const EncodedSample& s);

  /// Sum over candidates of the clipped binary cross-entropy (label 1 only
  /// for the personalized candidate), built on g.
  Var sample_loss(Graph& g, const EncodedSample& s, Rng* dropout_rng = nullptr);

  /// Raw embedding of a token sequence with the configured extras.
  EmbSeq embed_tokens(Graph& g, const TokenSeq& tokens, Rng* dropout_rng);

  void zero_grad();
};

double label_target(int label);

/// Checkpoint directory: params.bin (little-endian doubles in visit order)
/// and manifest.json (model config, hashes, training state).
struct CheckpointInfo {
  std::string config_hash;
  std::string vocab_hash;
  int vocab_size = 0;
  int epoch = 0;
  double train_loss = 0;
  double valid_loss = 0;
  std::string rng_state;
};

void save_checkpoint(const std::string& dir, Model& model, const CheckpointInfo& info);
/// Throws CheckpointError on a missing or inconsistent checkpoint.
Model load_checkpoint(const std::string& dir, CheckpointInfo* info = nullptr);

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace impchat
