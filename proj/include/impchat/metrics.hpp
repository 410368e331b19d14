#pragma once

#include <nlohmann/json_fwd.hpp>

#include <string>
#include <vector>

namespace impchat {

/// Candidate scores and graded labels (2 personalized, 1 non-personalized,
/// 0 retrieved) of one sample.
struct RankedSample {
  std::vector<double> scores;
  std::vector<int> labels;

  /// Candidate indices by descending score, ties by ascending index.
  std::vector<int> ranking() const;
  /// 1-based rank of the personalized candidate.
  int personalized_rank() const;
  void validate() const;
};

enum class DcgGain { exponential, linear };

int recall_at_k(const RankedSample& rs, int k);
double mrr(const RankedSample& rs);
double ndcg_at(const RankedSample& rs, int cutoff = 5, DcgGain gain = DcgGain::exponential);
inline double ndcg5(const RankedSample& rs, DcgGain gain = DcgGain::exponential) { return ndcg_at(rs, 5, gain); }
/// Recall among proper candidates (labels 1 and 2) only.
int rp_at_k(const RankedSample& rs, int k);

/// Metric names in report order.
const std::vector<std::string>& metric_names();

struct SampleMetrics {
  std::string sample_id;
  std::vector<double> values;  // metric_names() order
};

struct RankReport {
  std::vector<double> means;  // metric_names() order
  long n_samples = 0;
  std::string config_hash;
  std::vector<SampleMetrics> per_sample;

  double get(const std::string& name) const;
  nlohmann::json to_json(bool include_samples = false) const;
  /// Fixed-width table: header row then one value row.
  std::string table(const std::string& row_label = "model") const;
};

/// Averages per-sample metrics with compensated summation.  Throws
/// std::invalid_argument naming the sample when a score is missing.
RankReport evaluate(const std::vector<RankedSample>& samples, const std::vector<std::string>& sample_ids = {},
                    bool keep_per_sample = false, DcgGain gain = DcgGain::exponential);

/// Writes several labelled reports as one table.
std::string report_table(const std::vector<std::pair<std::string, RankReport>>& rows);

}  // namespace impchat
