#include <algorithm>
#include <numeric>
#include <set>

#include "doctest.h"
#include "oex/model.hpp"
#include "oex/random.hpp"
#include "oex/sampling.hpp"

using namespace oex;

namespace {

OutlierPool pool_with_scores(std::vector<double> scores) {
  Tensor x(Shape{scores.size(), 1});
  for (std::size_t i = 0; i < scores.size(); ++i) x[i] = static_cast<double>(i);
  OutlierPool pool(x);
  pool.set_scores(std::move(scores));
  return pool;
}

}  // namespace

TEST_CASE("random sample") {
  Tensor x(Shape{20, 2});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(i);
  OutlierPool pool(x);
  Rng rng(1);
  Selection all = random_sample(pool, 20, rng);
  std::vector<std::size_t> sorted = all.indices;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> expect(20);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(sorted == expect);
  CHECK(random_sample(pool, 0, rng).indices.empty());
  CHECK_THROWS_AS(random_sample(pool, 21, rng), std::invalid_argument);
  Rng a(5), b(5);
  CHECK(random_sample(pool, 7, a).indices == random_sample(pool, 7, b).indices);
  Selection s = random_sample(pool, 5, rng);
  CHECK(s.batch == x.select_rows(s.indices));
}

TEST_CASE("greedy selection") {
  MlpClassifier m = init_model({1, 4, 2}, 1);
  OutlierPool p = pool_with_scores({0.1, 0.9, 0.5});
  Selection s = greedy_informative_sample(p, m, ScoreSpec::energy(), 2);
  CHECK(std::set<std::size_t>(s.indices.begin(), s.indices.end()) == std::set<std::size_t>{1, 2});
  CHECK(s.indices == std::vector<std::size_t>{1, 2});
  CHECK(greedy_informative_sample(p, m, ScoreSpec::energy(), 3).indices == std::vector<std::size_t>{1, 2, 0});
  CHECK(top_n_by_score({0.5, 0.5, 0.5, 0.5}, 2) == std::vector<std::size_t>{0, 1});
  CHECK_THROWS_AS(greedy_informative_sample(p, m, ScoreSpec::energy(), 4), std::invalid_argument);

  Rng rng(2);
  for (int t = 0; t < 30; ++t) {
    std::vector<double> scores(1 + rng.index(1000));
    for (auto& v : scores) v = static_cast<double>(rng.index(50));
    const std::size_t n = rng.index(scores.size() + 1);
    auto top = top_n_by_score(scores, n);
    std::vector<bool> chosen(scores.size(), false);
    double lowest = 1e300;
    for (auto i : top) chosen[i] = true, lowest = std::min(lowest, scores[i]);
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (!chosen[i]) CHECK(scores[i] <= lowest);
    }
  }
}

TEST_CASE("greedy selection under a live model") {
  MlpClassifier m = init_model({2, 8, 3}, 3);
  Rng rng(3);
  Tensor x(Shape{30, 2});
  for (auto& v : x.values()) v = rng.uniform();
  OutlierPool pool(x);
  Selection s = greedy_informative_sample(pool, m, ScoreSpec::energy(), 10);
  auto scores = pool.scores_under(m, ScoreSpec::energy());
  for (std::size_t k = 1; k < s.indices.size(); ++k) CHECK(scores[s.indices[k - 1]] >= scores[s.indices[k]]);
}

TEST_CASE("stratification") {
  auto g1 = stratify_indices({3, 1, 2}, 1);
  CHECK(g1.size() == 1);
  CHECK(g1[0] == std::vector<std::size_t>{1, 2, 0});
  std::vector<double> ten(10), eleven(11);
  std::iota(ten.begin(), ten.end(), 0.0);
  std::iota(eleven.begin(), eleven.end(), 0.0);
  for (const auto& g : stratify_indices(ten, 5)) CHECK(g.size() == 2);
  auto g11 = stratify_indices(eleven, 5);
  std::vector<std::size_t> sizes;
  for (const auto& g : g11) sizes.push_back(g.size());
  CHECK(sizes == std::vector<std::size_t>{2, 2, 2, 2, 3});
  CHECK_THROWS_AS(stratify_indices({}, 2), std::invalid_argument);
  CHECK_THROWS_AS(stratify_indices({1.0}, 0), std::invalid_argument);

  Rng rng(4);
  std::vector<double> s(97);
  for (auto& v : s) v = rng.normal();
  std::vector<std::size_t> all;
  for (const auto& g : stratify_indices(s, 6)) all.insert(all.end(), g.begin(), g.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expect(97);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(all == expect);

  MlpClassifier m = init_model({1, 4, 2}, 1);
  auto pools = stratify_by_score(pool_with_scores({5, 4, 3, 2, 1, 0}), m, ScoreSpec::energy(), 3);
  CHECK(pools.size() == 3);
  CHECK(pools[0].samples() == Tensor::matrix({{5}, {4}}));
}

TEST_CASE("score cache validation") {
  OutlierPool p(Tensor(Shape{3, 1}, 0.0));
  CHECK_THROWS_AS(p.set_scores({1.0}), std::invalid_argument);
}
