#include "oex/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace oex {

namespace {

void require_nonempty(const std::vector<double>& id, const std::vector<double>& ood, const char* what) {
  if (id.empty() || ood.empty()) throw std::invalid_argument(std::string(what) + ": empty score set");
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

double kernel_mean(const Tensor& a, const Tensor& b, double inv_two_bw2) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) total += std::exp(-squared_distance(a.row(i), b.row(j)) * inv_two_bw2);
  }
  return total / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

std::size_t row_count(const Tensor& t) { return t.size() ? t.rows() : 0; }

}  // namespace

double fpr_at_tpr(const std::vector<double>& id_scores, const std::vector<double>& ood_scores, double tpr) {
  require_nonempty(id_scores, ood_scores, "fpr_at_tpr");
  if (!(tpr >= 0.0 && tpr <= 1.0)) throw std::invalid_argument("fpr_at_tpr: tpr must be in [0, 1]");
  const std::size_t n = id_scores.size();
  // smallest k with k / n >= tpr
  auto k = static_cast<std::size_t>(std::ceil(tpr * static_cast<double>(n)));
  k = std::min(k, n);
  while (k > 0 && static_cast<double>(k - 1) / static_cast<double>(n) >= tpr) --k;
  while (k < n && static_cast<double>(k) / static_cast<double>(n) < tpr) ++k;
  if (k == 0) return 0.0;
  std::vector<double> sorted = id_scores;
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double threshold = sorted[k - 1];
  std::size_t accepted = 0;
  for (double s : ood_scores) accepted += s >= threshold;
  return static_cast<double>(accepted) / static_cast<double>(ood_scores.size());
}

double auroc(const std::vector<double>& id_scores, const std::vector<double>& ood_scores) {
  require_nonempty(id_scores, ood_scores, "auroc");
  std::vector<double> ood = ood_scores;
  std::sort(ood.begin(), ood.end());
  // twice the Mann-Whitney count, kept integral for exactness
  std::uint64_t twice = 0;
  for (double s : id_scores) {
    auto lo = std::lower_bound(ood.begin(), ood.end(), s);
    auto hi = std::upper_bound(lo, ood.end(), s);
    twice += 2 * static_cast<std::uint64_t>(lo - ood.begin()) + static_cast<std::uint64_t>(hi - lo);
  }
  return static_cast<double>(twice) /
         (2.0 * static_cast<double>(id_scores.size()) * static_cast<double>(ood_scores.size()));
}

double aupr(const std::vector<double>& id_scores, const std::vector<double>& ood_scores) {
  require_nonempty(id_scores, ood_scores, "aupr");
  std::vector<std::pair<double, int>> all;
  all.reserve(id_scores.size() + ood_scores.size());
  for (double s : id_scores) all.emplace_back(s, 1);
  for (double s : ood_scores) all.emplace_back(s, 0);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  const double positives = static_cast<double>(id_scores.size());
  std::size_t tp = 0, fp = 0, prev_tp = 0;
  double area = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) {
      tp += static_cast<std::size_t>(all[j].second);
      fp += static_cast<std::size_t>(1 - all[j].second);
      ++j;
    }
    if (tp > prev_tp) {
      const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
      area += static_cast<double>(tp - prev_tp) / positives * precision;
      prev_tp = tp;
    }
    i = j;
  }
  return area;
}

double id_accuracy(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t n = row_count(logits);
  if (n != labels.size()) throw std::invalid_argument("id_accuracy: row/label count mismatch");
  if (n == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= logits.cols()) {
      throw std::invalid_argument("id_accuracy: label out of range");
    }
    hits += argmax_row(logits.row(r)) == static_cast<std::size_t>(labels[r]);
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

double median_bandwidth(const Tensor& x, const Tensor& y) {
  std::vector<std::span<const double>> rows;
  for (std::size_t i = 0; i < row_count(x); ++i) rows.push_back(x.row(i));
  for (std::size_t i = 0; i < row_count(y); ++i) rows.push_back(y.row(i));
  std::vector<double> d;
  d.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) d.push_back(std::sqrt(squared_distance(rows[i], rows[j])));
  }
  if (d.empty()) return 1.0;
  std::sort(d.begin(), d.end());
  const std::size_t m = d.size();
  const double med = m % 2 ? d[m / 2] : 0.5 * (d[m / 2 - 1] + d[m / 2]);
  return med > 0.0 ? med : 1.0;
}

double mmd_rbf(const Tensor& x, const Tensor& y, std::optional<double> bandwidth) {
  if (row_count(x) == 0 || row_count(y) == 0) throw std::invalid_argument("mmd_rbf: empty set");
  if (x.cols() != y.cols()) throw std::invalid_argument("mmd_rbf: dimension mismatch");
  if (bandwidth && !(*bandwidth > 0.0)) throw std::invalid_argument("mmd_rbf: bandwidth must be positive");
  // canonical operand order makes the statistic exactly symmetric
  const bool swap = std::make_pair(y.rows(), y.data()) < std::make_pair(x.rows(), x.data());
  const Tensor& a = swap ? y : x;
  const Tensor& b = swap ? x : y;
  const double bw = bandwidth ? *bandwidth : median_bandwidth(a, b);
  const double inv = 1.0 / (2.0 * bw * bw);
  const double value = kernel_mean(a, a, inv) + kernel_mean(b, b, inv) - 2.0 * kernel_mean(a, b, inv);
  return std::max(value, 0.0);
}

double split_half_mmd(const Tensor& x, std::optional<double> bandwidth) {
  const std::size_t n = row_count(x);
  if (n < 2) throw std::invalid_argument("split_half_mmd: need at least 2 rows");
  std::vector<std::size_t> first(n / 2), second(n - n / 2);
  for (std::size_t i = 0; i < first.size(); ++i) first[i] = i;
  for (std::size_t i = 0; i < second.size(); ++i) second[i] = first.size() + i;
  return mmd_rbf(x.select_rows(first), x.select_rows(second), bandwidth);
}

void add_average_row(DetectionReport& report) {
  std::erase_if(report.records, [](const OodRecord& r) { return r.ood_set == "average"; });
  if (report.records.size() < 2) return;
  OodRecord avg{"average"};
  for (const auto& r : report.records) {
    avg.fpr95 += r.fpr95;
    avg.auroc += r.auroc;
    avg.aupr += r.aupr;
  }
  const auto k = static_cast<double>(report.records.size());
  avg.fpr95 /= k;
  avg.auroc /= k;
  avg.aupr /= k;
  report.records.push_back(avg);
}

DetectionReport detection_report(const MlpClassifier& model, const ScoreSpec& spec, const Tensor& id_test,
                                 const std::vector<int>& labels, const std::vector<NamedSet>& ood_sets) {
  if (row_count(id_test) == 0) throw std::invalid_argument("detection_report: empty ID test set");
  if (ood_sets.empty()) throw std::invalid_argument("detection_report: no OOD sets");
  DetectionReport report;
  report.score = spec.label();
  report.id_accuracy = id_accuracy(forward(model, id_test), labels);
  const auto id_scores = compute_scores(model, spec, id_test);
  for (const auto& [name, set] : ood_sets) {
    if (row_count(set) == 0) throw std::invalid_argument("detection_report: OOD set '" + name + "' is empty");
    const auto ood_scores = compute_scores(model, spec, set);
    report.records.push_back(
        {name, fpr_at_tpr(id_scores, ood_scores), auroc(id_scores, ood_scores), aupr(id_scores, ood_scores)});
  }
  add_average_row(report);
  return report;
}

nlohmann::json report_to_json(const DetectionReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.records) {
    rows.push_back({{"ood_set", r.ood_set}, {"fpr95", r.fpr95}, {"auroc", r.auroc}, {"aupr", r.aupr}});
  }
  return {{"method", report.method},         {"score", report.score},
          {"id_accuracy", report.id_accuracy}, {"seed", report.seed},
          {"config_digest", report.config_digest}, {"records", rows}};
}

DetectionReport report_from_json(const nlohmann::json& j) {
  DetectionReport r;
  r.method = j.at("method").get<std::string>();
  r.score = j.at("score").get<std::string>();
  r.id_accuracy = j.at("id_accuracy").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config_digest = j.at("config_digest").get<std::string>();
  for (const auto& row : j.at("records")) {
    r.records.push_back({row.at("ood_set").get<std::string>(), row.at("fpr95").get<double>(),
                         row.at("auroc").get<double>(), row.at("aupr").get<double>()});
  }
  return r;
}

nlohmann::json reports_to_json(const std::vector<DetectionReport>& reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) arr.push_back(report_to_json(r));
  return {{"reports", arr}};
}

std::vector<DetectionReport> reports_from_json(const nlohmann::json& j) {
  std::vector<DetectionReport> out;
  for (const auto& r : j.at("reports")) out.push_back(report_from_json(r));
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string reports_to_csv(const std::vector<DetectionReport>& reports) {
  std::ostringstream out;
  out << "method,score,ood_set,fpr95,auroc,aupr,id_acc\n";
  for (const auto& rep : reports) {
    for (const auto& r : rep.records) {
      out << rep.method << ',' << rep.score << ',' << r.ood_set << ',' << format_double(r.fpr95) << ','
          << format_double(r.auroc) << ',' << format_double(r.aupr) << ',' << format_double(rep.id_accuracy) << '\n';
    }
  }
  return out.str();
}

}  // namespace oex
