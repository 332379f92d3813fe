#pragma once

#include <optional>
#include <vector>

#include "oex/model.hpp"
#include "oex/random.hpp"
#include "oex/scoring.hpp"
#include "oex/tensor.hpp"

namespace oex {

class OutlierPool {
 public:
  OutlierPool() = default;
  explicit OutlierPool(Tensor samples);

  const Tensor& samples() const { return samples_; }
  std::size_t size() const { return samples_.size() ? samples_.rows() : 0; }

  const std::optional<std::vector<double>>& scores() const { return scores_; }
  void set_scores(std::vector<double> scores);
  void clear_scores() { scores_.reset(); }
  // Cached scores when present, otherwise computed under (model, spec).
  std::vector<double> scores_under(const MlpClassifier& model, const ScoreSpec& spec) const;

 private:
  Tensor samples_;
  std::optional<std::vector<double>> scores_;
};

struct Selection {
  std::vector<std::size_t> indices;
  Tensor batch;
};

// Uniform draw of n samples without replacement.
Selection random_sample(const OutlierPool& pool, std::size_t n, Rng& rng);

// The n samples with the highest ID-ness score, best first; equal scores
// keep ascending pool order.
Selection greedy_informative_sample(const OutlierPool& pool, const MlpClassifier& model, const ScoreSpec& spec,
                                    std::size_t n);
std::vector<std::size_t> top_n_by_score(const std::vector<double>& scores, std::size_t n);

// Sorts by score (ascending) and cuts into group_count contiguous groups of
// equal size; the last group takes the remainder.
std::vector<OutlierPool> stratify_by_score(const OutlierPool& pool, const MlpClassifier& model,
                                           const ScoreSpec& spec, std::size_t group_count);
std::vector<std::vector<std::size_t>> stratify_indices(const std::vector<double>& scores, std::size_t group_count);

}  // namespace oex
