#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "oex/model.hpp"
#include "oex/scoring.hpp"
#include "oex/tensor.hpp"

namespace oex {

// ID scores are the positive class throughout; higher means more ID.

// FPR at the largest threshold whose TPR reaches `tpr`. Scores equal to
// the threshold count as accepted.
double fpr_at_tpr(const std::vector<double>& id_scores, const std::vector<double>& ood_scores, double tpr = 0.95);
double auroc(const std::vector<double>& id_scores, const std::vector<double>& ood_scores);
// Step-interpolated area under the precision/recall curve (average precision
// over distinct thresholds).
double aupr(const std::vector<double>& id_scores, const std::vector<double>& ood_scores);
double id_accuracy(const Tensor& logits, const std::vector<int>& labels);

// Median pairwise Euclidean distance over the union of X and Y.
double median_bandwidth(const Tensor& x, const Tensor& y);
// Biased (V-statistic) squared MMD with k(a, b) = exp(-|a - b|^2 / (2 bw^2)).
// No bandwidth means the median heuristic.
double mmd_rbf(const Tensor& x, const Tensor& y, std::optional<double> bandwidth = std::nullopt);
// MMD between the first and second half of the rows, in order.
double split_half_mmd(const Tensor& x, std::optional<double> bandwidth = std::nullopt);

struct OodRecord {
  std::string ood_set;
  double fpr95 = 0.0;
  double auroc = 0.0;
  double aupr = 0.0;

  friend bool operator==(const OodRecord&, const OodRecord&) = default;
};

struct DetectionReport {
  std::string method;
  std::string score;
  std::vector<OodRecord> records;  // one per set, then "average" when there are several
  double id_accuracy = 0.0;
  std::uint64_t seed = 0;
  std::string config_digest;

  friend bool operator==(const DetectionReport&, const DetectionReport&) = default;
};

using NamedSet = std::pair<std::string, Tensor>;

DetectionReport detection_report(const MlpClassifier& model, const ScoreSpec& spec, const Tensor& id_test,
                                 const std::vector<int>& labels, const std::vector<NamedSet>& ood_sets);
// Recomputes the macro "average" row; present only with two or more OOD sets.
void add_average_row(DetectionReport& report);

nlohmann::json report_to_json(const DetectionReport& report);
DetectionReport report_from_json(const nlohmann::json& j);
nlohmann::json reports_to_json(const std::vector<DetectionReport>& reports);
std::vector<DetectionReport> reports_from_json(const nlohmann::json& j);

// Columns: method, score, ood_set, fpr95, auroc, aupr, id_acc.
std::string reports_to_csv(const std::vector<DetectionReport>& reports);

std::string format_double(double v);

}  // namespace oex
