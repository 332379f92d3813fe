#include "oex/sampling.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace oex {

OutlierPool::OutlierPool(Tensor samples) : samples_(std::move(samples)) {
  if (samples_.rank() != 2) throw std::invalid_argument("outlier pool: samples must be a matrix");
}

void OutlierPool::set_scores(std::vector<double> scores) {
  if (scores.size() != size()) {
    throw std::invalid_argument("outlier pool: " + std::to_string(scores.size()) + " scores for " +
                                std::to_string(size()) + " samples");
  }
  scores_ = std::move(scores);
}

std::vector<double> OutlierPool::scores_under(const MlpClassifier& model, const ScoreSpec& spec) const {
  if (scores_) return *scores_;
  if (size() == 0) return {};
  return compute_scores(model, spec, samples_);
}

namespace {

void require_count(std::size_t n, std::size_t available) {
  if (n > available) {
    throw std::invalid_argument("requested " + std::to_string(n) + " samples from a pool of " +
                                std::to_string(available));
  }
}

Selection take(const OutlierPool& pool, std::vector<std::size_t> idx) {
  Selection s;
  s.batch = idx.empty() ? Tensor(Shape{0, pool.samples().cols()}) : pool.samples().select_rows(idx);
  s.indices = std::move(idx);
  return s;
}

}  // namespace

Selection random_sample(const OutlierPool& pool, std::size_t n, Rng& rng) {
  require_count(n, pool.size());
  std::vector<std::size_t> perm(pool.size());
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = 0; i < n; ++i) std::swap(perm[i], perm[i + rng.index(perm.size() - i)]);
  perm.resize(n);
  return take(pool, std::move(perm));
}

std::vector<std::size_t> top_n_by_score(const std::vector<double>& scores, std::size_t n) {
  require_count(n, scores.size());
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(n);
  return order;
}

Selection greedy_informative_sample(const OutlierPool& pool, const MlpClassifier& model, const ScoreSpec& spec,
                                    std::size_t n) {
  require_count(n, pool.size());
  return take(pool, top_n_by_score(pool.scores_under(model, spec), n));
}

std::vector<std::vector<std::size_t>> stratify_indices(const std::vector<double>& scores, std::size_t group_count) {
  if (group_count == 0) throw std::invalid_argument("stratify: group_count must be >= 1");
  if (scores.empty()) throw std::invalid_argument("stratify: empty pool");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  const std::size_t base = scores.size() / group_count;
  std::vector<std::vector<std::size_t>> groups(group_count);
  std::size_t at = 0;
  for (std::size_t g = 0; g < group_count; ++g) {
    const std::size_t len = g + 1 == group_count ? scores.size() - at : base;
    groups[g].assign(order.begin() + static_cast<std::ptrdiff_t>(at),
                     order.begin() + static_cast<std::ptrdiff_t>(at + len));
    at += len;
  }
  return groups;
}

std::vector<OutlierPool> stratify_by_score(const OutlierPool& pool, const MlpClassifier& model,
                                           const ScoreSpec& spec, std::size_t group_count) {
  if (pool.size() == 0) throw std::invalid_argument("stratify: empty pool");
  const auto scores = pool.scores_under(model, spec);
  std::vector<OutlierPool> out;
  for (const auto& idx : stratify_indices(scores, group_count)) {
    Selection s = take(pool, idx);
    OutlierPool sub(std::move(s.batch));
    std::vector<double> sub_scores;
    for (std::size_t i : idx) sub_scores.push_back(scores[i]);
    sub.set_scores(std::move(sub_scores));
    out.push_back(std::move(sub));
  }
  return out;
}

}  // namespace oex
