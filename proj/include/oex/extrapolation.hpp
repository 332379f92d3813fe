#pragma once

#include <optional>
#include <string>
#include <vector>

#include "oex/model.hpp"
#include "oex/random.hpp"
#include "oex/tensor.hpp"

namespace oex {

enum class Direction { Maximize, Minimize };
// Per-sample objective the ascent follows. UniformLoss is the outlier
// exposure loss; MSP and Energy push samples toward higher ID-ness scores.
enum class Target { UniformLoss, MSP, Energy };

std::string direction_name(Direction d);
Direction parse_direction(const std::string& name);
std::string target_name(Target t);
Target parse_target(const std::string& name);

struct PoolEntry {
  double epsilon = 0.0;
  double fraction = 1.0;
};

struct ExtrapolationConfig {
  double ratio = 0.5;
  double epsilon = 0.05;  // l-inf radius in normalized input units
  int steps = 5;
  std::optional<double> step_size;  // defaults to 2 * epsilon / steps
  Direction direction = Direction::Maximize;
  Target target = Target::UniformLoss;
  double temperature = 1.0;  // Energy target only
  double domain_lo = 0.0;
  double domain_hi = 1.0;
  // Mixed-radius pool; empty means a single entry {epsilon, 1.0}.
  std::vector<PoolEntry> pool;
  unsigned threads = 1;

  void validate() const;
  double alpha() const;
  std::vector<PoolEntry> pool_entries() const;
};

struct ExtrapolatedBatch {
  Tensor origins;
  Tensor synthesized;
  std::vector<double> epsilon_used;
  std::vector<double> initial_loss;  // target value at the origin
  std::vector<double> final_loss;    // target value at the returned iterate
  std::vector<std::size_t> flagged;  // rows aborted on a non-finite value; returned as origins

  std::size_t size() const { return epsilon_used.size(); }
};

// Per-row target values of `x` under `model`.
std::vector<double> target_values(const MlpClassifier& model, const Tensor& x, const ExtrapolationConfig& cfg);

// Projected sign-gradient ascent (or descent) on the per-sample target,
// x <- clip(x + s * alpha * sign(grad), B_inf(x0, eps) intersected with the
// domain). Each row returns its best iterate, x0 included. Rows are
// independent: splitting across cfg.threads gives bit-identical output.
ExtrapolatedBatch pgd_extrapolate(const MlpClassifier& model, const Tensor& x0, const ExtrapolationConfig& cfg);

struct SubbatchSplit {
  std::vector<std::size_t> selected;   // ceil(r * n) indices, ascending
  std::vector<std::size_t> untouched;  // the rest, ascending
};

SubbatchSplit select_subbatch(std::size_t n, double ratio, Rng& rng);

// Largest-remainder apportionment of `total` across fractions; ties go to
// the lower index.
std::vector<std::size_t> apportion(const std::vector<double>& fractions, std::size_t total);

// Splits the sub-batch into contiguous slices, one per pool entry, and
// extrapolates each slice with its own radius.
ExtrapolatedBatch build_extrapolation_pool(const MlpClassifier& model, const Tensor& subbatch,
                                           const ExtrapolationConfig& cfg);

Tensor random_noise_extrapolate(const Tensor& x, double epsilon, Rng& rng, double lo = 0.0, double hi = 1.0);

// x' = lambda * x + (1 - lambda) * partner, lambda ~ Beta(a, b), partner
// drawn uniformly from `partners` for every row.
Tensor mixup_extrapolate(const Tensor& x, const Tensor& partners, double beta_a, double beta_b, Rng& rng);
Tensor mixup_with(const Tensor& x, const Tensor& partners, const std::vector<double>& lambdas,
                  const std::vector<std::size_t>& partner_index);

}  // namespace oex
