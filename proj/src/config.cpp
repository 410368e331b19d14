#include "impchat/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace impchat {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw std::invalid_argument("config: '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw std::invalid_argument("config: '" + key + "' expects an unsigned integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: '" + key + "' expects a boolean, got '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

}  // namespace

std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string format_cnn(const std::vector<ConvLayerSpec>& cnn) {
  std::string out;
  for (size_t i = 0; i < cnn.size(); ++i) {
    if (i) out += ';';
    out += std::to_string(cnn[i].filters) + ',' + std::to_string(cnn[i].kernel) + ',' +
           std::to_string(cnn[i].stride) + ',' + std::to_string(cnn[i].pool);
  }
  return out;
}

std::vector<ConvLayerSpec> parse_cnn(const std::string& text) {
  // "filters,kernel,stride,pool;..."
  std::vector<ConvLayerSpec> out;
  std::stringstream layers(text);
  std::string layer;
  while (std::getline(layers, layer, ';')) {
    layer = trim(layer);
    if (layer.empty()) continue;
    std::stringstream fields(layer);
    std::string f;
    std::vector<int> nums;
    while (std::getline(fields, f, ',')) nums.push_back(parse_int("cnn", trim(f)));
    if (nums.size() != 4) throw std::invalid_argument("config: cnn layer '" + layer + "' needs filters,kernel,stride,pool");
    out.push_back({nums[0], nums[1], nums[2], nums[3]});
  }
  if (out.empty()) throw std::invalid_argument("config: cnn needs at least one layer");
  return out;
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw std::invalid_argument(std::string("config: ") + name + " must be positive");
  };
  positive(d, "d");
  positive(max_len, "max_len");
  if (levels < 0) throw std::invalid_argument("config: levels must be non-negative");
  positive(hops, "hops");
  positive(history, "history");
  positive(gru_hidden, "gru_hidden");
  positive(ffn_mult, "ffn_mult");
  positive(batch, "batch");
  if (epochs < 0) throw std::invalid_argument("config: epochs must be non-negative");
  if (lr < 0) throw std::invalid_argument("config: lr must be non-negative");
  if (cnn.empty()) throw std::invalid_argument("config: cnn needs at least one layer");
  for (const auto& l : cnn)
    if (l.filters <= 0 || l.kernel <= 0 || l.stride <= 0 || l.pool <= 0)
      throw std::invalid_argument("config: cnn entries must be positive");
  if (dropout < 0 || dropout >= 1) throw std::invalid_argument("config: dropout must be in [0, 1)");
  if (prob_clip <= 0 || prob_clip >= 0.5) throw std::invalid_argument("config: prob_clip must be in (0, 0.5)");
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  return {
      {"d", std::to_string(d)},
      {"max_len", std::to_string(max_len)},
      {"levels", std::to_string(levels)},
      {"hops", std::to_string(hops)},
      {"history", std::to_string(history)},
      {"gru_hidden", std::to_string(gru_hidden)},
      {"cnn", format_cnn(cnn)},
      {"padding", padding == ConvPadding::same ? "same" : "valid"},
      {"ffn_mult", std::to_string(ffn_mult)},
      {"ln_eps", fmt_double(ln_eps)},
      {"fusion_hidden", std::to_string(fusion_hidden)},
      {"lr", fmt_double(lr)},
      {"lr_decay", fmt_double(lr_decay)},
      {"batch", std::to_string(batch)},
      {"epochs", std::to_string(epochs)},
      {"adam_beta1", fmt_double(adam_beta1)},
      {"adam_beta2", fmt_double(adam_beta2)},
      {"adam_eps", fmt_double(adam_eps)},
      {"prob_clip", fmt_double(prob_clip)},
      {"use_style", fmt_bool(use_style)},
      {"use_pref", fmt_bool(use_pref)},
      {"use_multihop", fmt_bool(use_multihop)},
      {"blind_history", fmt_bool(blind_history)},
      {"share_levels", fmt_bool(share_levels)},
      {"positional", fmt_bool(positional)},
      {"dropout", fmt_double(dropout)},
  };
}

void ModelConfig::set(const std::string& key, const std::string& v) {
  if (key == "d") d = parse_int(key, v);
  else if (key == "max_len" || key == "L") max_len = parse_int(key, v);
  else if (key == "levels" || key == "n") levels = parse_int(key, v);
  else if (key == "hops" || key == "k") hops = parse_int(key, v);
  else if (key == "history" || key == "t") history = parse_int(key, v);
  else if (key == "gru_hidden") gru_hidden = parse_int(key, v);
  else if (key == "cnn") cnn = parse_cnn(v);
  else if (key == "padding") {
    if (v == "same") padding = ConvPadding::same;
    else if (v == "valid") padding = ConvPadding::valid;
    else throw std::invalid_argument("config: padding must be same or valid");
  } else if (key == "ffn_mult") ffn_mult = parse_int(key, v);
  else if (key == "ln_eps") ln_eps = parse_double(key, v);
  else if (key == "fusion_hidden") fusion_hidden = parse_int(key, v);
  else if (key == "lr") lr = parse_double(key, v);
  else if (key == "lr_decay") lr_decay = parse_double(key, v);
  else if (key == "batch") batch = parse_int(key, v);
  else if (key == "epochs") epochs = parse_int(key, v);
  else if (key == "adam_beta1") adam_beta1 = parse_double(key, v);
  else if (key == "adam_beta2") adam_beta2 = parse_double(key, v);
  else if (key == "adam_eps") adam_eps = parse_double(key, v);
  else if (key == "prob_clip") prob_clip = parse_double(key, v);
  else if (key == "use_style") use_style = parse_bool(key, v);
  else if (key == "use_pref") use_pref = parse_bool(key, v);
  else if (key == "use_multihop") use_multihop = parse_bool(key, v);
  else if (key == "blind_history") blind_history = parse_bool(key, v);
  else if (key == "share_levels") share_levels = parse_bool(key, v);
  else if (key == "positional") positional = parse_bool(key, v);
  else if (key == "dropout") dropout = parse_double(key, v);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::string ModelConfig::hash() const {
  std::string canon;
  for (const auto& [k, v] : to_map()) canon += k + '=' + v + '\n';
  return fnv1a_hex(canon);
}

void SynthConfig::validate() const {
  if (users < 2) throw std::invalid_argument("synthetic corpus needs at least 2 users (non-personalized candidates impossible)");
  if (vocab < 1 || topics < 1 || pairs_per_user < 1 || style_tokens < 0)
    throw std::invalid_argument("synthetic corpus: vocab, topics and pairs_per_user must be positive");
  if (style_prob < 0 || style_prob > 1 || style_pool <= 0 || style_pool >= 1)
    throw std::invalid_argument("synthetic corpus: probabilities must be in [0, 1]");
  if (filler_min < 0 || filler_max < filler_min)
    throw std::invalid_argument("synthetic corpus: filler_min <= filler_max required");
}

std::map<std::string, std::string> SynthConfig::to_map() const {
  return {
      {"users", std::to_string(users)},
      {"vocab", std::to_string(vocab)},
      {"topics", std::to_string(topics)},
      {"pairs_per_user", std::to_string(pairs_per_user)},
      {"style_tokens", std::to_string(style_tokens)},
      {"style_prob", fmt_double(style_prob)},
      {"style_pool", fmt_double(style_pool)},
      {"filler_min", std::to_string(filler_min)},
      {"filler_max", std::to_string(filler_max)},
      {"post_pool", std::to_string(post_pool)},
  };
}

void SynthConfig::set(const std::string& key, const std::string& v) {
  if (key == "users") users = parse_int(key, v);
  else if (key == "vocab") vocab = parse_int(key, v);
  else if (key == "topics") topics = parse_int(key, v);
  else if (key == "pairs_per_user") pairs_per_user = parse_int(key, v);
  else if (key == "style_tokens") style_tokens = parse_int(key, v);
  else if (key == "style_prob") style_prob = parse_double(key, v);
  else if (key == "style_pool") style_pool = parse_double(key, v);
  else if (key == "filler_min") filler_min = parse_int(key, v);
  else if (key == "filler_max") filler_max = parse_int(key, v);
  else if (key == "post_pool") post_pool = parse_int(key, v);
  else throw std::invalid_argument("config: unknown key 'synth." + key + "'");
}

void RunConfig::set(const std::string& key, const std::string& v) {
  if (key.rfind("synth.", 0) == 0) synth.set(key.substr(6), v);
  else if (key == "min_history") min_history = parse_int(key, v);
  else if (key == "max_words") max_words = parse_int(key, v);
  else if (key == "min_freq") min_freq = parse_int(key, v);
  else if (key == "candidates") candidates = parse_int(key, v);
  else if (key == "queries_per_user") queries_per_user = parse_int(key, v);
  else if (key == "eval_queries_per_user") eval_queries_per_user = parse_int(key, v);
  else if (key == "seed") seed = parse_u64(key, v);
  else if (key == "workers") workers = parse_int(key, v);
  else model.set(key, v);
}

std::map<std::string, std::string> RunConfig::to_map() const {
  auto out = model.to_map();
  for (const auto& [k, v] : synth.to_map()) out["synth." + k] = v;
  out["min_history"] = std::to_string(min_history);
  out["max_words"] = std::to_string(max_words);
  out["min_freq"] = std::to_string(min_freq);
  out["candidates"] = std::to_string(candidates);
  out["queries_per_user"] = std::to_string(queries_per_user);
  out["eval_queries_per_user"] = std::to_string(eval_queries_per_user);
  out["seed"] = std::to_string(seed);
  return out;
}

std::string RunConfig::hash() const {
  std::string canon;
  for (const auto& [k, v] : to_map()) canon += k + '=' + v + '\n';
  return fnv1a_hex(canon);
}

void load_config_text(const std::string& text, RunConfig& cfg) {
  std::stringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected 'key = value'");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void load_config_file(const std::string& path, RunConfig& cfg) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  load_config_text(ss.str(), cfg);
}

}  // namespace impchat
