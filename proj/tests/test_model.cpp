#include <cmath>

#include "doctest.h"
#include "oex/model.hpp"
#include "oex/random.hpp"

using namespace oex;

namespace {

Tensor random_batch(std::size_t n, std::size_t d, Rng& rng) {
  std::vector<double> v(n * d);
  for (auto& x : v) x = rng.normal();
  return Tensor::matrix(n, d, v);
}

}  // namespace

TEST_CASE("init is deterministic with chained shapes") {
  MlpClassifier a = init_model({2, 8, 3}, 42), b = init_model({2, 8, 3}, 42), c = init_model({2, 8, 3}, 43);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  CHECK(a.weight(0).shape() == Shape{2, 8});
  CHECK(a.weight(1).shape() == Shape{8, 3});
  for (double v : a.bias(0).values()) CHECK(v == 0.0);
  CHECK_THROWS_AS(init_model({2}, 0), std::invalid_argument);
  CHECK_THROWS_AS(init_model({2, 0, 3}, 0), std::invalid_argument);
}

TEST_CASE("He variance of a large layer") {
  MlpClassifier m = init_model({100, 100, 2}, 1);
  double s = 0, s2 = 0;
  for (double v : m.weight(0).values()) s += v, s2 += v * v;
  const double n = static_cast<double>(m.weight(0).size());
  const double var = s2 / n - (s / n) * (s / n);
  CHECK(std::fabs(var - 2.0 / 100.0) < 0.2 * 2.0 / 100.0);
}

TEST_CASE("forward on hand examples") {
  MlpClassifier zero({2, 3, 2}, {Tensor(Shape{2, 3}, 0.0), Tensor(Shape{3, 2}, 0.0)},
                     {Tensor(Shape{3}, 0.0), Tensor(Shape{2}, 0.0)});
  CHECK(forward(zero, Tensor::matrix({{1, 2}, {3, 4}})) == Tensor(Shape{2, 2}, 0.0));

  MlpClassifier ident({2, 2}, {Tensor::matrix({{1, 0}, {0, 1}})}, {Tensor(Shape{2}, 0.0)});
  CHECK(forward(ident, Tensor::matrix({{3, -1}})) == Tensor::matrix({{3, -1}}));

  // h = relu(x W0 + b0), logits = h W1 + b1
  MlpClassifier net({2, 2, 2}, {Tensor::matrix({{1, -1}, {2, 1}}), Tensor::matrix({{1, 2}, {-1, 1}})},
                    {Tensor::vector({0, 1}), Tensor::vector({0.5, 0})});
  Tensor x = Tensor::matrix({{1, 1}, {-1, 0}});
  // row 0: xW0 = [3, 0] + [0, 1] = [3, 1] -> logits [3-1+0.5, 6+1] = [2.5, 7]
  // row 1: xW0 = [-1, 1] + [0, 1] = [-1, 2] -> relu [0, 2] -> logits [-2+0.5, 2] = [-1.5, 2]
  CHECK(forward(net, x) == Tensor::matrix({{2.5, 7}, {-1.5, 2}}));
  CHECK(penultimate_features(net, x) == Tensor::matrix({{3, 1}, {0, 2}}));
  CHECK_THROWS_AS(forward(net, Tensor::matrix({{1, 2, 3}})), std::invalid_argument);
  CHECK_THROWS_AS(penultimate_features(ident, x), std::invalid_argument);
}

TEST_CASE("forward equals the head applied to penultimate features") {
  Rng rng(8);
  for (int t = 0; t < 30; ++t) {
    MlpClassifier m = init_model({3, 1 + rng.index(9), 1 + rng.index(9), 2 + rng.index(4)}, rng.next_u64());
    Tensor x = random_batch(1 + rng.index(10), 3, rng);
    Tensor feats = penultimate_features(m, x);
    for (double v : feats.values()) CHECK(v >= 0.0);
    CHECK(forward(m, x) == head(m, feats));
  }
}

TEST_CASE("final bias shift is exact") {
  Rng rng(2);
  MlpClassifier m = init_model({2, 6, 3}, 9);
  Tensor x = random_batch(5, 2, rng);
  Tensor base = forward(m, x);
  MlpClassifier shifted = m;
  for (auto& b : shifted.bias(1).values()) b += 0.25;
  Tensor moved = forward(shifted, x);
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(moved[i] == base[i] + 0.25);
}

TEST_CASE("expression path matches direct forward bitwise") {
  Rng rng(12);
  MlpClassifier m = init_model({2, 16, 16, 3}, 5);
  Tensor x = random_batch(7, 2, rng);
  ad::Bindings b{{"x", x}};
  m.bind(b);
  CHECK(ad::evaluate(logits_expr(m, ad::input("x")), b) == forward(m, x));
  CHECK(ad::evaluate(features_expr(m, ad::input("x")), b) == penultimate_features(m, x));
}

TEST_CASE("checkpoint round trip") {
  MlpClassifier m = init_model({2, 5, 3}, 77);
  MlpClassifier back = model_from_json(model_to_json(m));
  CHECK(back == m);
  CHECK(back.seed() == 77);
  auto j = model_to_json(m);
  j["format_version"] = 999;
  CHECK_THROWS(model_from_json(j));
}
