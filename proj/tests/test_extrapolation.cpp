#include <cmath>
#include <numeric>

#include "doctest.h"
#include "oex/extrapolation.hpp"
#include "oex/losses.hpp"
#include "oex/model.hpp"
#include "oex/random.hpp"
#include "oex/scoring.hpp"

using namespace oex;

namespace {

Tensor uniform_batch(std::size_t n, std::size_t d, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor x(Shape{n, d});
  for (auto& v : x.values()) v = rng.uniform(lo, hi);
  return x;
}

double linf(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("defaults and step size") {
  ExtrapolationConfig cfg;
  CHECK(cfg.ratio == 0.5);
  CHECK(cfg.epsilon == 0.05);
  CHECK(cfg.steps == 5);
  CHECK(cfg.alpha() == doctest::Approx(0.02).epsilon(1e-15));
  cfg.step_size = 0.003;
  CHECK(cfg.alpha() == 0.003);
  CHECK(parse_direction("minimize") == Direction::Minimize);
  CHECK(parse_target("energy") == Target::Energy);
  CHECK_THROWS_AS(parse_target("cw"), std::invalid_argument);
}

TEST_CASE("config validation") {
  ExtrapolationConfig cfg;
  cfg.ratio = 1.5;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.epsilon = -0.1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.pool = {{0.05, 0.5}, {0.1, 0.4}};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.pool = {{0.05, 0.5}, {0.125, 0.5}};
  CHECK_NOTHROW(cfg.validate());
  cfg.pool = {{-0.05, 1.0}};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("no feasible move returns inputs bitwise") {
  Rng rng(1);
  MlpClassifier m = init_model({2, 16, 3}, 2);
  Tensor x = uniform_batch(9, 2, rng);
  ExtrapolationConfig cfg;
  cfg.epsilon = 0.0;
  CHECK(pgd_extrapolate(m, x, cfg).synthesized == x);
  cfg.epsilon = 0.1;
  cfg.steps = 0;
  CHECK(pgd_extrapolate(m, x, cfg).synthesized == x);
  Tensor outside = x;
  outside(0, 0) = 1.5;
  cfg.steps = 3;
  CHECK_THROWS_AS(pgd_extrapolate(m, outside, cfg), std::invalid_argument);
}

TEST_CASE("one step on a linear model follows the closed-form gradient sign") {
  Rng rng(3);
  const std::size_t d = 4, c = 3;
  std::vector<double> w(d * c);
  for (auto& v : w) v = rng.normal();
  MlpClassifier lin({d, c}, {Tensor::matrix(d, c, w)}, {Tensor::vector({0.1, -0.2, 0.3})});
  Tensor x = uniform_batch(6, d, rng, -1.0, 1.0);
  ExtrapolationConfig cfg;
  cfg.epsilon = 0.01;
  cfg.steps = 1;
  cfg.step_size = 0.01;
  cfg.domain_lo = -10;
  cfg.domain_hi = 10;
  ExtrapolatedBatch out = pgd_extrapolate(lin, x, cfg);
  Tensor logits = forward(lin, x);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = logits(i, 0);
    for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, logits(i, k));
    std::vector<double> p(c);
    double z = 0;
    for (std::size_t k = 0; k < c; ++k) z += p[k] = std::exp(logits(i, k) - mx);
    for (std::size_t j = 0; j < d; ++j) {
      double g = 0;
      for (std::size_t k = 0; k < c; ++k) g += w[j * c + k] * (p[k] / z - 1.0 / static_cast<double>(c));
      const double expected = x(i, j) + 0.01 * (g > 0 ? 1.0 : g < 0 ? -1.0 : 0.0);
      CHECK(out.synthesized(i, j) == doctest::Approx(expected).epsilon(1e-15));
    }
    CHECK(out.final_loss[i] > out.initial_loss[i]);
  }
}

TEST_CASE("ball, domain and best-iterate invariants on random cases") {
  Rng rng(4);
  for (int t = 0; t < 60; ++t) {
    MlpClassifier m = init_model({3, 4 + rng.index(12), 2 + rng.index(4)}, rng.next_u64());
    Tensor x = uniform_batch(1 + rng.index(12), 3, rng);
    ExtrapolationConfig cfg;
    cfg.epsilon = rng.uniform(0.0, 0.3);
    cfg.steps = static_cast<int>(rng.index(8));
    cfg.direction = rng.index(2) ? Direction::Maximize : Direction::Minimize;
    cfg.target = static_cast<Target>(rng.index(3));
    ExtrapolatedBatch b = pgd_extrapolate(m, x, cfg);
    auto recomputed = target_values(m, b.synthesized, cfg);
    for (std::size_t i = 0; i < x.rows(); ++i) {
      CHECK(linf(b.synthesized.row(i), x.row(i)) <= cfg.epsilon + 1e-12);
      for (double v : b.synthesized.row(i)) CHECK((v >= 0.0 && v <= 1.0));
      if (cfg.direction == Direction::Maximize) {
        CHECK(b.final_loss[i] >= b.initial_loss[i]);
      } else {
        CHECK(b.final_loss[i] <= b.initial_loss[i]);
      }
      CHECK(recomputed[i] == b.final_loss[i]);
    }
  }
}

TEST_CASE("threaded extrapolation matches sequential bitwise") {
  Rng rng(5);
  MlpClassifier m = init_model({2, 32, 32, 3}, 6);
  Tensor x = uniform_batch(37, 2, rng);
  ExtrapolationConfig cfg;
  cfg.epsilon = 0.1;
  ExtrapolatedBatch seq = pgd_extrapolate(m, x, cfg);
  for (unsigned threads : {2u, 3u, 8u, 64u}) {
    cfg.threads = threads;
    ExtrapolatedBatch par = pgd_extrapolate(m, x, cfg);
    CHECK(par.synthesized == seq.synthesized);
    CHECK(par.final_loss == seq.final_loss);
  }
}

TEST_CASE("sub-batch selection") {
  Rng rng(6);
  SubbatchSplit none = select_subbatch(10, 0.0, rng);
  CHECK(none.selected.empty());
  CHECK(none.untouched.size() == 10);
  SubbatchSplit all = select_subbatch(10, 1.0, rng);
  CHECK(all.selected.size() == 10);
  CHECK(all.untouched.empty());
  SubbatchSplit half = select_subbatch(128, 0.5, rng);
  CHECK(half.selected.size() == 64);
  CHECK(half.untouched.size() == 64);
  std::vector<std::size_t> joined = half.selected;
  joined.insert(joined.end(), half.untouched.begin(), half.untouched.end());
  std::sort(joined.begin(), joined.end());
  std::vector<std::size_t> expect(128);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(joined == expect);

  Rng a(9), b(9);
  CHECK(select_subbatch(50, 0.3, a).selected == select_subbatch(50, 0.3, b).selected);
}

TEST_CASE("pool apportionment and reduction") {
  CHECK(apportion({0.3, 0.7}, 10) == std::vector<std::size_t>{3, 7});
  CHECK(apportion({0.5, 0.5}, 5) == std::vector<std::size_t>{3, 2});
  CHECK(apportion({1.0 / 3, 1.0 / 3, 1.0 / 3}, 10) == std::vector<std::size_t>{4, 3, 3});

  Rng rng(7);
  MlpClassifier m = init_model({2, 16, 3}, 8);
  Tensor x = uniform_batch(12, 2, rng);
  ExtrapolationConfig cfg;
  cfg.epsilon = 0.08;
  ExtrapolatedBatch plain = pgd_extrapolate(m, x, cfg);
  cfg.pool = {{0.08, 1.0}};
  ExtrapolatedBatch pooled = build_extrapolation_pool(m, x, cfg);
  CHECK(pooled.synthesized == plain.synthesized);

  cfg.pool = {{0.05, 0.5}, {0.125, 0.5}};
  ExtrapolatedBatch mixed = build_extrapolation_pool(m, x, cfg);
  CHECK(mixed.size() == 12);
  for (std::size_t i = 0; i < 12; ++i) {
    const double eps = i < 6 ? 0.05 : 0.125;
    CHECK(mixed.epsilon_used[i] == eps);
    CHECK(linf(mixed.synthesized.row(i), x.row(i)) <= eps + 1e-12);
  }
}

TEST_CASE("informative extrapolation raises energy scores under a trained-like model") {
  // A model whose logits grow toward the centre of the square: moving toward
  // the centre raises both the uniform loss and the energy score.
  MlpClassifier m({2, 4, 2},
                  {Tensor::matrix({{4, -4, 0, 0}, {0, 0, 4, -4}}), Tensor::matrix({{-1, 1}, {-1, 1}, {-1, 1}, {-1, 1}})},
                  {Tensor::vector({-2, 2, -2, 2}), Tensor::vector({0, 0})});
  Rng rng(8);
  Tensor x = uniform_batch(40, 2, rng);
  ExtrapolationConfig cfg;
  cfg.epsilon = 0.1;
  cfg.target = Target::Energy;
  ExtrapolatedBatch b = pgd_extrapolate(m, x, cfg);
  auto before = energy_score(forward(m, x), 1.0);
  auto after = energy_score(forward(m, b.synthesized), 1.0);
  CHECK(std::accumulate(after.begin(), after.end(), 0.0) > std::accumulate(before.begin(), before.end(), 0.0));
}

TEST_CASE("random noise stays in the ball and is centred") {
  Rng rng(9);
  Tensor x(Shape{4, 3}, 0.5);
  CHECK(random_noise_extrapolate(x, 0.0, rng) == x);
  Tensor big(Shape{100000, 1}, 0.5);
  Tensor noisy = random_noise_extrapolate(big, 0.2, rng);
  double s = 0;
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    CHECK(std::fabs(noisy[i] - 0.5) <= 0.2);
    s += noisy[i] - 0.5;
  }
  const double sd = 0.2 / std::sqrt(3.0) / std::sqrt(100000.0);
  CHECK(std::fabs(s / 100000.0) < 3 * sd);
  Tensor edge(Shape{50, 2}, 0.99);
  Tensor clipped = random_noise_extrapolate(edge, 0.1, rng);
  for (double v : clipped.values()) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("mixup") {
  Tensor x = Tensor::matrix({{1, 2}, {3, 4}});
  Tensor p = Tensor::matrix({{10, 20}, {30, 40}, {50, 60}});
  CHECK(mixup_with(x, p, {1.0, 1.0}, {0, 2}) == x);
  CHECK(mixup_with(x, p, {0.0, 0.0}, {2, 1}) == Tensor::matrix({{50, 60}, {30, 40}}));
  Rng rng(10);
  Tensor m = mixup_extrapolate(x, p, 1.0, 0.1, rng);
  CHECK(m.shape() == x.shape());
  CHECK_THROWS_AS(mixup_extrapolate(x, Tensor(Shape{0, 2}, 0.0), 1.0, 0.1, rng), std::invalid_argument);
  CHECK_THROWS_AS(mixup_extrapolate(x, p, 0.0, 0.1, rng), std::invalid_argument);
}
