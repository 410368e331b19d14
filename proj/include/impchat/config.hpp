#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace impchat {

/// One convolution layer: conv(filters, kernel x kernel, stride) -> ReLU ->
/// max-pool(pool x pool, stride pool).
struct ConvLayerSpec {
  int filters = 16;
  int kernel = 3;
  int stride = 2;
  int pool = 2;

  bool operator==(const ConvLayerSpec&) const = default;
};

enum class ConvPadding { same, valid };

/// Hyperparameters.  Defaults follow the published configuration.
struct ModelConfig {
  int d = 200;            // embedding width
  int max_len = 50;       // L, tokens per utterance
  int levels = 3;         // n, stacked attentive modules in the style branch
  int hops = 2;           // k
  int history = 10;       // t; also fixes the bilinear channel count (t + 1)
  int gru_hidden = 300;
  std::vector<ConvLayerSpec> cnn = {{16, 3, 2, 2}, {32, 3, 2, 2}, {64, 3, 3, 3}};
  ConvPadding padding = ConvPadding::same;
  int ffn_mult = 4;
  double ln_eps = 1e-6;
  int fusion_hidden = 0;  // 0 means d

  double lr = 5e-4;
  double lr_decay = 0.95;
  int batch = 128;        // training pairs per optimizer step
  int epochs = 10;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double prob_clip = 1e-7;

  bool use_style = true;
  bool use_pref = true;
  bool use_multihop = true;
  bool blind_history = false;  // zero every history embedding (history-blind variant)
  bool share_levels = false;   // one attentive module for all style levels
  bool positional = false;     // sinusoidal position encodings on embeddings
  double dropout = 0.0;        // embedding dropout during training

  int effective_fusion_hidden() const { return fusion_hidden > 0 ? fusion_hidden : d; }

  /// Throws std::invalid_argument naming the first bad field.
  void validate() const;

  /// Flat key/value view, sorted by key; the canonical input to hash().
  std::map<std::string, std::string> to_map() const;
  /// Applies one key; throws on unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  std::string hash() const;
};

/// Settings for the synthetic persona corpus.
struct SynthConfig {
  int users = 200;
  int vocab = 500;
  int topics = 12;
  int pairs_per_user = 30;
  int style_tokens = 2;        // per user
  double style_prob = 0.8;     // emission probability of each style token
  double style_pool = 0.4;     // fraction of the vocabulary reserved for style tokens
  int filler_min = 3;
  int filler_max = 8;
  int post_pool = 0;           // distinct posts; 0 means users*pairs/5

  void validate() const;
  std::map<std::string, std::string> to_map() const;
  void set(const std::string& key, const std::string& value);
};

/// Everything a CLI run can be configured with: model, synthetic corpus and
/// dataset-construction settings.  Parsed from `key = value` text; unknown
/// keys are rejected.
struct RunConfig {
  ModelConfig model;
  SynthConfig synth;
  int min_history = 15;
  int max_words = 50;
  int min_freq = 1;
  int candidates = 10;
  int queries_per_user = 1;
  int eval_queries_per_user = 1;  // most recent queries kept for valid/test users
  std::uint64_t seed = 0;
  int workers = 1;

  void set(const std::string& key, const std::string& value);
  std::map<std::string, std::string> to_map() const;
  std::string hash() const;
};

/// Parses `key = value` lines ('#' comments, blank lines ignored) into cfg.
void load_config_text(const std::string& text, RunConfig& cfg);
void load_config_file(const std::string& path, RunConfig& cfg);

/// 64-bit FNV-1a rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& data);

std::string format_cnn(const std::vector<ConvLayerSpec>& cnn);
std::vector<ConvLayerSpec> parse_cnn(const std::string& text);

}  // namespace impchat
