#include "oex/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "oex/autodiff.hpp"
#include "oex/error.hpp"

namespace oex {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMatrix> as_eigen(const Tensor& t) {
  return Eigen::Map<const RowMatrix>(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                                     static_cast<Eigen::Index>(t.cols()));
}

Tensor from_eigen(const RowMatrix& m) {
  Tensor t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  std::copy(m.data(), m.data() + m.size(), t.values().begin());
  return t;
}

void require_logits(const Tensor& logits, std::size_t min_classes) {
  if (logits.rank() != 2) throw std::invalid_argument("scores: logits must be a matrix");
  if (logits.cols() < min_classes) {
    throw std::invalid_argument("scores: need at least " + std::to_string(min_classes) + " classes");
  }
}

std::vector<double> row_max(const Tensor& t) {
  std::vector<double> out(t.rows());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.row(r);
    out[r] = *std::max_element(row.begin(), row.end());
  }
  return out;
}

Tensor scale_logits(const Tensor& logits, double temperature) {
  if (temperature == 1.0) return logits;
  return kernels::affine(logits, 1.0 / temperature, 0.0);
}

}  // namespace

std::string score_kind_name(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::MSP: return "msp";
    case ScoreKind::Energy: return "energy";
    case ScoreKind::ODIN: return "odin";
    case ScoreKind::Mahalanobis: return "mahalanobis";
    case ScoreKind::AshEnergy: return "ash";
  }
  return "?";
}

ScoreKind parse_score_kind(const std::string& name) {
  static const std::map<std::string, ScoreKind> kinds{{"msp", ScoreKind::MSP},
                                                      {"energy", ScoreKind::Energy},
                                                      {"odin", ScoreKind::ODIN},
                                                      {"mahalanobis", ScoreKind::Mahalanobis},
                                                      {"ash", ScoreKind::AshEnergy}};
  auto it = kinds.find(name);
  if (it == kinds.end()) throw std::invalid_argument("unknown score kind '" + name + "'");
  return it->second;
}

void ScoreSpec::validate() const {
  if (!(temperature > 0.0)) throw std::invalid_argument("score: temperature must be positive");
  if (!(odin_epsilon >= 0.0)) throw std::invalid_argument("score: odin epsilon must be non-negative");
  if (!(percentile >= 0.0 && percentile < 100.0)) throw std::invalid_argument("score: percentile must be in [0, 100)");
  if (kind == ScoreKind::Mahalanobis && !stats) throw std::invalid_argument("score: mahalanobis needs fitted stats");
}

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

std::vector<double> msp_score(const Tensor& logits) {
  require_logits(logits, 2);
  return row_max(kernels::softmax(logits, 1));
}

std::vector<double> energy_score(const Tensor& logits, double temperature) {
  require_logits(logits, 1);
  if (!(temperature > 0.0)) throw std::invalid_argument("energy_score: temperature must be positive");
  Tensor lse = kernels::logsumexp(scale_logits(logits, temperature), 1);
  std::vector<double> out(lse.values().begin(), lse.values().end());
  if (temperature != 1.0) {
    for (auto& v : out) v *= temperature;
  }
  return out;
}

std::vector<double> odin_score(const MlpClassifier& model, const Tensor& x, double temperature, double epsilon,
                               double lo, double hi) {
  if (!(temperature > 0.0)) throw std::invalid_argument("odin_score: temperature must be positive");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("odin_score: epsilon must be non-negative");
  Tensor perturbed = x;
  if (epsilon > 0.0 && x.rows() > 0) {
    Tensor logits = forward(model, x);
    Tensor mask(logits.shape(), 0.0);
    for (std::size_t r = 0; r < logits.rows(); ++r) mask(r, argmax_row(logits.row(r))) = 1.0;
    ad::Expr in = ad::input("x");
    ad::Expr z = ad::affine(logits_expr(model, in), 1.0 / temperature, 0.0);
    ad::Expr objective = ad::sum(ad::mul(ad::constant(mask), ad::log_softmax(z, 1)));
    ad::Bindings b{{"x", x}};
    model.bind(b);
    Tensor g = ad::gradient(objective, b, {"x"}).at("x");
    for (std::size_t i = 0; i < perturbed.size(); ++i) {
      const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      perturbed[i] = std::clamp(x[i] + epsilon * s, lo, hi);
    }
  }
  Tensor logits = forward(model, perturbed);
  require_logits(logits, 2);
  return row_max(kernels::softmax(scale_logits(logits, temperature), 1));
}

GaussianStats make_gaussian_stats(Tensor means, Tensor covariance, double gamma) {
  if (covariance.rank() != 2 || covariance.rows() != covariance.cols()) {
    throw std::invalid_argument("gaussian stats: covariance must be square");
  }
  if (means.cols() != covariance.cols()) throw std::invalid_argument("gaussian stats: mean width mismatch");
  Eigen::LLT<RowMatrix> llt(as_eigen(covariance));
  if (llt.info() != Eigen::Success) {
    throw NumericError("mahalanobis: covariance is not positive definite (gamma too small?)");
  }
  RowMatrix l = llt.matrixL();
  GaussianStats stats{std::move(means), std::move(covariance), from_eigen(l), gamma};
  return stats;
}

GaussianStats fit_mahalanobis(const Tensor& features, const std::vector<int>& labels, std::optional<double> gamma) {
  if (features.rank() != 2 || features.rows() != labels.size()) {
    throw std::invalid_argument("fit_mahalanobis: features and labels disagree");
  }
  if (gamma && !(*gamma >= 0.0)) throw std::invalid_argument("fit_mahalanobis: gamma must be non-negative");
  const std::size_t h = features.cols();
  int classes = 0;
  for (int y : labels) {
    if (y < 0) throw std::invalid_argument("fit_mahalanobis: negative label");
    classes = std::max(classes, y + 1);
  }
  std::vector<std::size_t> counts(static_cast<std::size_t>(classes), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  for (int c = 0; c < classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] < 2) {
      throw std::invalid_argument("fit_mahalanobis: class " + std::to_string(c) + " has fewer than 2 samples");
    }
  }

  Tensor means(Shape{static_cast<std::size_t>(classes), h});
  for (std::size_t r = 0; r < features.rows(); ++r) {
    auto row = features.row(r);
    auto m = means.row(static_cast<std::size_t>(labels[r]));
    for (std::size_t j = 0; j < h; ++j) m[j] += row[j];
  }
  for (int c = 0; c < classes; ++c) {
    for (auto& v : means.row(static_cast<std::size_t>(c))) v /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
  }

  RowMatrix cov = RowMatrix::Zero(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(h));
  Eigen::VectorXd diff(h);
  for (std::size_t r = 0; r < features.rows(); ++r) {
    auto row = features.row(r);
    auto m = means.row(static_cast<std::size_t>(labels[r]));
    for (std::size_t j = 0; j < h; ++j) diff[static_cast<Eigen::Index>(j)] = row[j] - m[j];
    cov.noalias() += diff * diff.transpose();
  }
  cov /= static_cast<double>(features.rows());
  cov = 0.5 * (cov + cov.transpose()).eval();

  const double g = gamma ? *gamma : 1e-6 * cov.trace() / static_cast<double>(h);
  cov.diagonal().array() += g;
  return make_gaussian_stats(std::move(means), from_eigen(cov), g);
}

std::vector<double> mahalanobis_score(const GaussianStats& stats, const Tensor& features) {
  const std::size_t h = stats.covariance.cols();
  if (features.rank() != 2 || features.cols() != h) {
    throw std::invalid_argument("mahalanobis_score: feature width " + std::to_string(features.cols()) +
                                " does not match stats width " + std::to_string(h));
  }
  Eigen::Map<const RowMatrix> l = as_eigen(stats.cholesky);
  std::vector<double> out(features.rows());
  Eigen::VectorXd diff(h);
  for (std::size_t r = 0; r < features.rows(); ++r) {
    auto row = features.row(r);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < stats.means.rows(); ++c) {
      auto m = stats.means.row(c);
      for (std::size_t j = 0; j < h; ++j) diff[static_cast<Eigen::Index>(j)] = row[j] - m[j];
      Eigen::VectorXd y = l.triangularView<Eigen::Lower>().solve(diff);
      best = std::max(best, -y.squaredNorm());
    }
    out[r] = best;
  }
  return out;
}

AshResult ash_s(const Tensor& activations, double percentile) {
  if (!(percentile >= 0.0 && percentile < 100.0)) throw std::invalid_argument("ash_s: percentile must be in [0, 100)");
  AshResult result{activations, {}};
  if (percentile == 0.0) return result;
  const std::size_t h = activations.cols();
  std::vector<double> sorted(h);
  for (std::size_t r = 0; r < activations.rows(); ++r) {
    auto row = result.activations.row(r);
    std::copy(row.begin(), row.end(), sorted.begin());
    std::sort(sorted.begin(), sorted.end());
    const double pos = percentile / 100.0 * static_cast<double>(h - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, h - 1);
    const double threshold = sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);

    double before = 0.0, after = 0.0;
    for (double v : row) {
      before += v;
      if (v >= threshold) after += v;
    }
    if (!(before > 0.0) || !(after > 0.0)) {
      result.flagged_rows.push_back(r);
      continue;
    }
    const double scale = before / after;
    for (auto& v : row) v = v >= threshold ? v * scale : 0.0;
  }
  return result;
}

std::vector<Decision> detect(const std::vector<double>& scores, double threshold) {
  std::vector<Decision> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] >= threshold ? Decision::ID : Decision::OOD;
  return out;
}

std::vector<double> compute_scores(const MlpClassifier& model, const ScoreSpec& spec, const Tensor& x) {
  spec.validate();
  switch (spec.kind) {
    case ScoreKind::MSP: return msp_score(forward(model, x));
    case ScoreKind::Energy: return energy_score(forward(model, x), spec.temperature);
    case ScoreKind::ODIN:
      return odin_score(model, x, spec.temperature, spec.odin_epsilon, spec.domain_lo, spec.domain_hi);
    case ScoreKind::Mahalanobis: return mahalanobis_score(*spec.stats, penultimate_features(model, x));
    case ScoreKind::AshEnergy: {
      AshResult shaped = ash_s(penultimate_features(model, x), spec.percentile);
      return energy_score(head(model, shaped.activations), spec.temperature);
    }
  }
  throw std::logic_error("compute_scores: unknown kind");
}

}  // namespace oex
