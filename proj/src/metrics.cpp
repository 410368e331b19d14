#include "impchat/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace impchat {

void RankedSample::validate() const {
  if (scores.size() != labels.size())
    throw std::invalid_argument("ranked sample: " + std::to_string(scores.size()) + " scores for " +
                                std::to_string(labels.size()) + " candidates");
  if (std::count(labels.begin(), labels.end(), 2) != 1)
    throw std::invalid_argument("ranked sample: exactly one personalized candidate required");
  for (int l : labels)
    if (l < 0 || l > 2) throw std::invalid_argument("ranked sample: label outside {0, 1, 2}");
}

std::vector<int> RankedSample::ranking() const {
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)]; });
  return idx;
}

int RankedSample::personalized_rank() const {
  const auto order = ranking();
  for (size_t i = 0; i < order.size(); ++i)
    if (labels[static_cast<size_t>(order[i])] == 2) return static_cast<int>(i) + 1;
  throw std::invalid_argument("ranked sample: no personalized candidate");
}

int recall_at_k(const RankedSample& rs, int k) { return rs.personalized_rank() <= k ? 1 : 0; }

double mrr(const RankedSample& rs) { return 1.0 / rs.personalized_rank(); }

double ndcg_at(const RankedSample& rs, int cutoff, DcgGain gain) {
  auto g = [gain](int label) { return gain == DcgGain::exponential ? std::exp2(label) - 1.0 : static_cast<double>(label); };
  const auto order = rs.ranking();
  const size_t n = std::min(order.size(), static_cast<size_t>(cutoff));
  double dcg = 0.0;
  for (size_t i = 0; i < n; ++i) dcg += g(rs.labels[static_cast<size_t>(order[i])]) / std::log2(static_cast<double>(i) + 2.0);
  std::vector<int> ideal = rs.labels;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double idcg = 0.0;
  for (size_t i = 0; i < n; ++i) idcg += g(ideal[i]) / std::log2(static_cast<double>(i) + 2.0);
  return dcg / idcg;
}

int rp_at_k(const RankedSample& rs, int k) {
  int rank = 0;
  for (int idx : rs.ranking()) {
    const int label = rs.labels[static_cast<size_t>(idx)];
    if (label < 1) continue;
    ++rank;
    if (label == 2) return rank <= k ? 1 : 0;
  }
  return 0;
}

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"R10@1", "R10@2", "R10@5", "MRR", "nDCG", "Rp@1"};
  return names;
}

double RankReport::get(const std::string& name) const {
  const auto& names = metric_names();
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::invalid_argument("unknown metric " + name);
  return means.at(static_cast<size_t>(it - names.begin()));
}

nlohmann::json RankReport::to_json(bool include_samples) const {
  nlohmann::json j;
  for (size_t i = 0; i < metric_names().size(); ++i) j[metric_names()[i]] = means[i];
  j["n_samples"] = n_samples;
  j["config_hash"] = config_hash;
  if (include_samples) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& s : per_sample) rows.push_back({{"id", s.sample_id}, {"values", s.values}});
    j["samples"] = std::move(rows);
  }
  return j;
}

std::string report_table(const std::vector<std::pair<std::string, RankReport>>& rows) {
  size_t label_w = 5;
  for (const auto& [label, _] : rows) label_w = std::max(label_w, label.size());
  std::ostringstream out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(label_w), "model");
  out << buf;
  for (const auto& n : metric_names()) {
    std::snprintf(buf, sizeof buf, " %8s", n.c_str());
    out << buf;
  }
  out << '\n';
  for (const auto& [label, report] : rows) {
    std::snprintf(buf, sizeof buf, "%-*s", static_cast<int>(label_w), label.c_str());
    out << buf;
    for (double v : report.means) {
      std::snprintf(buf, sizeof buf, " %8.4f", v);
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

std::string RankReport::table(const std::string& row_label) const { return report_table({{row_label, *this}}); }

RankReport evaluate(const std::vector<RankedSample>& samples, const std::vector<std::string>& sample_ids,
                    bool keep_per_sample, DcgGain gain) {
  const size_t m = metric_names().size();
  std::vector<double> sum(m, 0.0), comp(m, 0.0);
  RankReport report;
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& rs = samples[i];
    const std::string id = i < sample_ids.size() ? sample_ids[i] : std::to_string(i);
    if (rs.scores.size() != rs.labels.size())
      throw std::invalid_argument("sample " + id + ": missing score (" + std::to_string(rs.scores.size()) + " of " +
                                  std::to_string(rs.labels.size()) + ")");
    for (double s : rs.scores)
      if (std::isnan(s)) throw std::invalid_argument("sample " + id + ": missing score (NaN)");
    rs.validate();
    const std::vector<double> v = {static_cast<double>(recall_at_k(rs, 1)), static_cast<double>(recall_at_k(rs, 2)),
                                   static_cast<double>(recall_at_k(rs, 5)), mrr(rs),
                                   ndcg_at(rs, 5, gain),                    static_cast<double>(rp_at_k(rs, 1))};
    for (size_t k = 0; k < m; ++k) {
      // Kahan summation.
      const double y = v[k] - comp[k];
      const double t = sum[k] + y;
      comp[k] = (t - sum[k]) - y;
      sum[k] = t;
    }
    if (keep_per_sample) report.per_sample.push_back({id, v});
  }
  report.n_samples = static_cast<long>(samples.size());
  report.means.resize(m, 0.0);
  if (!samples.empty())
    for (size_t k = 0; k < m; ++k) report.means[k] = sum[k] / static_cast<double>(samples.size());
  return report;
}

}  // namespace impchat
