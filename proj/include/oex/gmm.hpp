#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "json.hpp"
#include "oex/random.hpp"
#include "oex/tensor.hpp"

namespace oex::gmm {

// Two-component isotropic mixture: ID ~ N(mu, sigma^2 I), outliers ~ N(-mu, sigma^2 I).
struct GmmSpec {
  std::vector<double> mu;
  double sigma = 1.0;

  std::size_t dim() const { return mu.size(); }
  double mu_norm() const;
  void validate() const;
};

struct TheoryParams {
  std::size_t n = 0;   // sample size in the bound
  std::size_t n1 = 0;  // ID samples
  std::size_t n2 = 0;  // outlier samples
  double alpha_c = 1.0;
  double tau = 0.0;
  std::size_t retry_budget = 10000;  // proposals per outlier before declaring infeasibility

  void validate() const;
};

std::pair<Tensor, Tensor> sample_gmm(const GmmSpec& spec, std::size_t n1, std::size_t n2, Rng& rng);

// (sum of ID rows - sum of outlier rows) / (n1 + n2)
std::vector<double> theta_star(const Tensor& x_id, const Tensor& x_out);

double separation_ratio(const std::vector<double>& theta, const std::vector<double>& mu, double sigma);
// P_{x ~ N(-mu, sigma^2 I)}(theta^T x > 0) = Phi(-mu^T theta / (sigma |theta|)).
double analytic_fpr(const std::vector<double>& theta, const std::vector<double>& mu, double sigma);
double normal_cdf(double z);

double bound_rhs(double mu_norm, double sigma, double n, double d, double alpha_c, double tau);

// (1 / (n sigma^2)) * sum_i |2 x_i^T mu|
double boundary_margin(const Tensor& x_out, const std::vector<double>& mu, double sigma);

// Standard normal restricted to [lo, hi]. Uses exponential or uniform
// proposals in the tails; throws NumericError when `budget` proposals fail.
double truncated_normal(double lo, double hi, Rng& rng, std::size_t budget);

// Outliers from N(-mu, sigma^2 I) conditioned on |2 x^T mu| <= sigma^2 (alpha_c - tau).
Tensor sample_feasible_outliers(const GmmSpec& spec, const TheoryParams& params, Rng& rng);

struct TrialRecord {
  std::size_t trial = 0;
  double ratio = 0.0;
  double rhs = 0.0;
  double margin = 0.0;
  bool satisfied = false;
};

struct VerifyResult {
  std::vector<TrialRecord> trials;
  double violation_fraction = 0.0;
};

// Trial t draws from its own stream derive_seed(seed, "theory", t), so any
// partition of trials reproduces the sequential result.
VerifyResult verify_bound(const GmmSpec& spec, const TheoryParams& params, std::size_t trials, std::uint64_t seed,
                          unsigned threads = 1);

struct TheoryConfig {
  GmmSpec spec;
  TheoryParams params;
  std::size_t trials = 100;
  std::vector<double> tau_grid;
};

nlohmann::json theory_to_json(const TheoryConfig& cfg);
TheoryConfig theory_from_json(const nlohmann::json& j);
// Calibrated configuration used by the acceptance suite and the CLI default.
TheoryConfig frozen_theory_config();

}  // namespace oex::gmm
