#pragma once

#include <optional>
#include <string>
#include <vector>

#include "oex/autodiff.hpp"
#include "oex/tensor.hpp"

namespace oex {

enum class LossKind { CrossEntropy, OE, EnergyBounded, DivOE };

std::string loss_kind_name(LossKind kind);
LossKind parse_loss_kind(const std::string& name);

struct LossConfig {
  LossKind kind = LossKind::DivOE;
  double lambda = 0.5;
  // Margins of the energy-bounded loss. They use the -T*logsumexp sign
  // convention, so the familiar values (-23, -5) apply unchanged.
  double m_in = -23.0;
  double m_out = -5.0;
  double temperature = 1.0;

  void validate() const;
};

Tensor one_hot(const std::vector<int>& labels, std::size_t classes);

namespace loss {

// Symbolic building blocks over logits expressions.
ad::Expr cross_entropy(const ad::Expr& logits, const ad::Expr& one_hot_labels);
// Per-row logsumexp(f) - mean(f): cross-entropy to the uniform distribution
// up to the constant log C.
ad::Expr uniform_rows(const ad::Expr& logits);
ad::Expr uniform(const ad::Expr& logits);
// -T * logsumexp(f / T) per row.
ad::Expr free_energy_rows(const ad::Expr& logits, double temperature);
// Squared hinges on the free energy: ID rows above m_in, outlier rows below m_out.
ad::Expr energy_in_hinge(const ad::Expr& id_logits, double m_in, double temperature);
ad::Expr energy_out_hinge(const ad::Expr& out_logits, double m_out, double temperature);
ad::Expr energy_bounded(const ad::Expr& id_logits, const ad::Expr& out_logits, double m_in, double m_out,
                        double temperature);

struct Objective {
  ad::Expr total;
  ad::Expr ce;
  ad::Expr outlier_original;      // empty when that side is absent
  ad::Expr outlier_extrapolated;  // empty when that side is absent
};

// Mean CE on the ID batch plus lambda times the outlier term. For OE and
// DivOE the outlier term averages the uniform loss separately over the
// original and extrapolated rows, dropping whichever side is empty. For
// EnergyBounded both outlier sides feed one energy-bounded term.
Objective objective(const LossConfig& config, const ad::Expr& id_logits, const ad::Expr& one_hot_labels,
                    const std::optional<ad::Expr>& original_logits, const std::optional<ad::Expr>& extrapolated_logits);

}  // namespace loss

double ce_loss(const Tensor& logits, const std::vector<int>& labels);
double oe_uniform_loss(const Tensor& logits);
std::vector<double> oe_uniform_rows(const Tensor& logits);
double oe_total_loss(const Tensor& id_logits, const std::vector<int>& labels, const Tensor& out_logits, double lambda);
double energy_bounded_loss(const Tensor& id_logits, const Tensor& out_logits, double m_in, double m_out,
                           double temperature);
// Extrapolated rows must number ceil(r * n) with n the total outlier count.
double divoe_loss(const Tensor& id_logits, const std::vector<int>& labels, const Tensor& original_logits,
                  const Tensor& extrapolated_logits, double lambda, double ratio);

std::size_t extrapolated_count(std::size_t n, double ratio);

}  // namespace oex
