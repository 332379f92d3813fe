#include "oex/losses.hpp"

#include <cmath>
#include <iostream>
#include <map>
#include <stdexcept>

namespace oex {

std::string loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::CrossEntropy: return "ce";
    case LossKind::OE: return "oe";
    case LossKind::EnergyBounded: return "energy";
    case LossKind::DivOE: return "divoe";
  }
  return "?";
}

LossKind parse_loss_kind(const std::string& name) {
  static const std::map<std::string, LossKind> kinds{{"ce", LossKind::CrossEntropy},
                                                     {"oe", LossKind::OE},
                                                     {"energy", LossKind::EnergyBounded},
                                                     {"divoe", LossKind::DivOE}};
  auto it = kinds.find(name);
  if (it == kinds.end()) throw std::invalid_argument("unknown loss kind '" + name + "'");
  return it->second;
}

void LossConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("loss: lambda must be non-negative");
  if (!(temperature > 0.0)) throw std::invalid_argument("loss: temperature must be positive");
}

Tensor one_hot(const std::vector<int>& labels, std::size_t classes) {
  Tensor out(Shape{labels.size(), classes}, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw std::invalid_argument("label " + std::to_string(labels[i]) + " out of range [0, " +
                                  std::to_string(classes) + ")");
    }
    out(i, static_cast<std::size_t>(labels[i])) = 1.0;
  }
  return out;
}

std::size_t extrapolated_count(std::size_t n, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("extrapolation ratio must be in [0, 1]");
  auto k = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n)));
  return std::min(k, n);
}

namespace loss {

ad::Expr cross_entropy(const ad::Expr& logits, const ad::Expr& one_hot_labels) {
  return ad::affine(ad::mean(ad::sum(ad::mul(one_hot_labels, ad::log_softmax(logits, 1)), 1)), -1.0, 0.0);
}

ad::Expr uniform_rows(const ad::Expr& logits) {
  return ad::logsumexp(logits, 1) - ad::mean(logits, 1);
}

ad::Expr uniform(const ad::Expr& logits) { return ad::mean(uniform_rows(logits)); }

ad::Expr free_energy_rows(const ad::Expr& logits, double temperature) {
  ad::Expr scaled = temperature == 1.0 ? logits : ad::affine(logits, 1.0 / temperature, 0.0);
  return ad::affine(ad::logsumexp(scaled, 1), -temperature, 0.0);
}

ad::Expr energy_in_hinge(const ad::Expr& id_logits, double m_in, double temperature) {
  return ad::mean(ad::square(ad::relu(ad::affine(free_energy_rows(id_logits, temperature), 1.0, -m_in))));
}

ad::Expr energy_out_hinge(const ad::Expr& out_logits, double m_out, double temperature) {
  return ad::mean(ad::square(ad::relu(ad::affine(free_energy_rows(out_logits, temperature), -1.0, m_out))));
}

ad::Expr energy_bounded(const ad::Expr& id_logits, const ad::Expr& out_logits, double m_in, double m_out,
                        double temperature) {
  return energy_in_hinge(id_logits, m_in, temperature) + energy_out_hinge(out_logits, m_out, temperature);
}

Objective objective(const LossConfig& config, const ad::Expr& id_logits, const ad::Expr& one_hot_labels,
                    const std::optional<ad::Expr>& original_logits, const std::optional<ad::Expr>& extrapolated_logits) {
  config.validate();
  Objective obj;
  obj.ce = cross_entropy(id_logits, one_hot_labels);
  if (config.kind == LossKind::CrossEntropy) {
    obj.total = obj.ce;
    return obj;
  }
  if (!original_logits && !extrapolated_logits) throw std::invalid_argument("objective: no outlier rows");

  if (config.kind == LossKind::EnergyBounded) {
    // One hinge term per side: the id hinge is shared, each outlier side
    // contributes its own mean.
    auto out_term = [&](const ad::Expr& logits) { return energy_out_hinge(logits, config.m_out, config.temperature); };
    ad::Expr reg = energy_in_hinge(id_logits, config.m_in, config.temperature);
    if (original_logits) {
      obj.outlier_original = out_term(*original_logits);
      reg = reg + obj.outlier_original;
    }
    if (extrapolated_logits) {
      obj.outlier_extrapolated = out_term(*extrapolated_logits);
      reg = reg + obj.outlier_extrapolated;
    }
    obj.total = obj.ce + ad::affine(reg, config.lambda, 0.0);
    return obj;
  }

  ad::Expr reg;
  if (original_logits) {
    obj.outlier_original = uniform(*original_logits);
    reg = obj.outlier_original;
  }
  if (extrapolated_logits) {
    obj.outlier_extrapolated = uniform(*extrapolated_logits);
    reg = reg ? reg + obj.outlier_extrapolated : obj.outlier_extrapolated;
  }
  obj.total = obj.ce + ad::affine(reg, config.lambda, 0.0);
  return obj;
}

}  // namespace loss

namespace {

ad::Expr logits_in(const char* name) { return ad::input(name); }

}  // namespace

double ce_loss(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rows() != labels.size()) throw std::invalid_argument("ce_loss: row/label count mismatch");
  ad::Bindings b{{"f", logits}};
  return ad::evaluate(loss::cross_entropy(logits_in("f"), ad::constant(one_hot(labels, logits.cols()))), b).item();
}

double oe_uniform_loss(const Tensor& logits) {
  if (logits.cols() < 2) throw std::invalid_argument("oe_uniform_loss: need at least 2 classes");
  ad::Bindings b{{"f", logits}};
  return ad::evaluate(loss::uniform(logits_in("f")), b).item();
}

std::vector<double> oe_uniform_rows(const Tensor& logits) {
  if (logits.cols() < 2) throw std::invalid_argument("oe_uniform_rows: need at least 2 classes");
  ad::Bindings b{{"f", logits}};
  Tensor rows = ad::evaluate(loss::uniform_rows(logits_in("f")), b);
  return rows.data();
}

double oe_total_loss(const Tensor& id_logits, const std::vector<int>& labels, const Tensor& out_logits, double lambda) {
  LossConfig cfg{LossKind::OE, lambda};
  if (out_logits.rows() == 0 || out_logits.size() == 0) {
    std::clog << "warning: oe_total_loss called with an empty outlier batch; using cross-entropy only\n";
    return ce_loss(id_logits, labels);
  }
  ad::Bindings b{{"f_in", id_logits}, {"f_out", out_logits}};
  auto obj = loss::objective(cfg, logits_in("f_in"), ad::constant(one_hot(labels, id_logits.cols())),
                             logits_in("f_out"), std::nullopt);
  return ad::evaluate(obj.total, b).item();
}

double energy_bounded_loss(const Tensor& id_logits, const Tensor& out_logits, double m_in, double m_out,
                           double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("energy_bounded_loss: temperature must be positive");
  ad::Bindings b{{"f_in", id_logits}, {"f_out", out_logits}};
  double total = 0.0;
  if (id_logits.size() != 0) {
    total += ad::evaluate(loss::energy_in_hinge(logits_in("f_in"), m_in, temperature), b).item();
  }
  if (out_logits.size() != 0) {
    total += ad::evaluate(loss::energy_out_hinge(logits_in("f_out"), m_out, temperature), b).item();
  }
  return total;
}

double divoe_loss(const Tensor& id_logits, const std::vector<int>& labels, const Tensor& original_logits,
                  const Tensor& extrapolated_logits, double lambda, double ratio) {
  const std::size_t n_orig = original_logits.size() ? original_logits.rows() : 0;
  const std::size_t n_ext = extrapolated_logits.size() ? extrapolated_logits.rows() : 0;
  if (n_orig + n_ext == 0) throw std::invalid_argument("divoe_loss: both outlier sides are empty");
  if (extrapolated_count(n_orig + n_ext, ratio) != n_ext) {
    throw std::invalid_argument("divoe_loss: " + std::to_string(n_ext) + " extrapolated rows inconsistent with ratio " +
                                std::to_string(ratio));
  }
  LossConfig cfg{LossKind::DivOE, lambda};
  ad::Bindings b{{"f_in", id_logits}};
  std::optional<ad::Expr> orig, ext;
  if (n_orig) {
    b.emplace("f_orig", original_logits);
    orig = logits_in("f_orig");
  }
  if (n_ext) {
    b.emplace("f_ext", extrapolated_logits);
    ext = logits_in("f_ext");
  }
  auto obj = loss::objective(cfg, logits_in("f_in"), ad::constant(one_hot(labels, id_logits.cols())), orig, ext);
  return ad::evaluate(obj.total, b).item();
}

}  // namespace oex
