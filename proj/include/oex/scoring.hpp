#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oex/model.hpp"
#include "oex/tensor.hpp"

namespace oex {

// All scores are oriented so that higher means "more in-distribution";
// a sample is accepted as ID when score >= threshold.
enum class ScoreKind { MSP, Energy, ODIN, Mahalanobis, AshEnergy };

std::string score_kind_name(ScoreKind kind);
ScoreKind parse_score_kind(const std::string& name);

// Class-conditional Gaussians with one shared (tied) covariance. The
// Cholesky factor of the regularized covariance is kept for scoring.
struct GaussianStats {
  Tensor means;       // C x h
  Tensor covariance;  // h x h, already includes gamma * I
  Tensor cholesky;    // lower triangular, h x h
  double gamma = 0.0;
};

GaussianStats make_gaussian_stats(Tensor means, Tensor covariance, double gamma);

struct ScoreSpec {
  ScoreKind kind = ScoreKind::Energy;
  double temperature = 1.0;
  double odin_epsilon = 0.0;
  double percentile = 95.0;
  double domain_lo = 0.0;
  double domain_hi = 1.0;
  std::optional<GaussianStats> stats;

  static ScoreSpec msp() { return with_kind(ScoreKind::MSP); }
  static ScoreSpec energy(double temperature = 1.0) {
    ScoreSpec s = with_kind(ScoreKind::Energy);
    s.temperature = temperature;
    return s;
  }
  static ScoreSpec odin(double temperature = 1.0e4, double epsilon = 1.4e-3) {
    ScoreSpec s = with_kind(ScoreKind::ODIN);
    s.temperature = temperature;
    s.odin_epsilon = epsilon;
    return s;
  }
  static ScoreSpec ash(double percentile = 95.0, double temperature = 1.0) {
    ScoreSpec s = with_kind(ScoreKind::AshEnergy);
    s.percentile = percentile;
    s.temperature = temperature;
    return s;
  }
  static ScoreSpec mahalanobis(GaussianStats stats) {
    ScoreSpec s = with_kind(ScoreKind::Mahalanobis);
    s.stats = std::move(stats);
    return s;
  }
  static ScoreSpec with_kind(ScoreKind kind) {
    ScoreSpec s;
    s.kind = kind;
    return s;
  }

  void validate() const;
  std::string label() const { return score_kind_name(kind); }
};

std::vector<double> msp_score(const Tensor& logits);
std::vector<double> energy_score(const Tensor& logits, double temperature);

// ODIN: one sign-gradient step of size eps toward higher top-class
// log-probability (at temperature T), clamped to [lo, hi], followed by
// the max softmax of the temperature-scaled logits.
std::vector<double> odin_score(const MlpClassifier& model, const Tensor& x, double temperature, double epsilon,
                               double lo = 0.0, double hi = 1.0);

// Default gamma (when unset) is 1e-6 * trace(pooled covariance) / h.
GaussianStats fit_mahalanobis(const Tensor& features, const std::vector<int>& labels,
                              std::optional<double> gamma = std::nullopt);
std::vector<double> mahalanobis_score(const GaussianStats& stats, const Tensor& features);

struct AshResult {
  Tensor activations;
  std::vector<std::size_t> flagged_rows;  // rows left unchanged because they could not be rescaled
};

// ASH-S: per row, zero entries below the p-th percentile (linear
// interpolation) and rescale survivors so the row sum is preserved.
AshResult ash_s(const Tensor& activations, double percentile);

enum class Decision { ID, OOD };
std::vector<Decision> detect(const std::vector<double>& scores, double threshold);

// Scores a batch under any spec. Mahalanobis requires spec.stats.
std::vector<double> compute_scores(const MlpClassifier& model, const ScoreSpec& spec, const Tensor& x);

std::size_t argmax_row(std::span<const double> row);

}  // namespace oex
