#include <cmath>
#include <limits>

#include "doctest.h"
#include "oex/metrics.hpp"
#include "oex/model.hpp"
#include "oex/random.hpp"
#include "oex/scoring.hpp"

using namespace oex;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.normal(0.0, scale);
  return Tensor::matrix(r, c, v);
}

}  // namespace

TEST_CASE("msp values") {
  CHECK(msp_score(Tensor(Shape{1, 10}, 2.0))[0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(msp_score(Tensor::matrix({{1, 0}}))[0] == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 1)).epsilon(1e-15));
  Tensor sat(Shape{1, 5}, 0.0);
  sat(0, 0) = 1000;
  CHECK(std::fabs(msp_score(sat)[0] - 1.0) < 1e-12);
  CHECK_THROWS_AS(msp_score(Tensor(Shape{2, 1}, 0.0)), std::invalid_argument);
}

TEST_CASE("energy values and shift identity") {
  CHECK(energy_score(Tensor(Shape{1, 10}, 0.0), 1.0)[0] == doctest::Approx(std::log(10.0)).epsilon(1e-15));
  CHECK(energy_score(Tensor::matrix({{1, 1}}), 1.0)[0] == doctest::Approx(1 + std::log(2.0)).epsilon(1e-15));
  CHECK(energy_score(Tensor::matrix({{-3.5}}), 0.3)[0] == doctest::Approx(-3.5).epsilon(1e-15));
  CHECK_THROWS_AS(energy_score(Tensor::matrix({{1, 2}}), 0.0), std::invalid_argument);

  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    Tensor z = random_matrix(4, 6, rng, 5.0);
    const double c = rng.uniform(-10, 10);
    Tensor zc = z;
    for (auto& v : zc.values()) v += c;
    auto a = energy_score(z, 1.0), b = energy_score(zc, 1.0);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i] + c).epsilon(1e-13));
  }
}

TEST_CASE("raising one logit never lowers msp or energy of its row when it is the top class") {
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    Tensor z = random_matrix(1, 5, rng, 3.0);
    const std::size_t top = argmax_row(z.row(0));
    Tensor up = z;
    up(0, top) += rng.uniform(0.0, 50.0);
    CHECK(msp_score(up)[0] >= msp_score(z)[0]);
    CHECK(energy_score(up, 1.0)[0] >= energy_score(z, 1.0)[0]);
    Tensor other = z;
    other(0, rng.index(5)) += 5.0;
    CHECK(energy_score(other, 1.0)[0] >= energy_score(z, 1.0)[0]);
  }
}

TEST_CASE("odin reduces to msp and increases confidence on a linear model") {
  Rng rng(3);
  MlpClassifier m = init_model({2, 8, 3}, 4);
  Tensor x(Shape{10, 2});
  for (auto& v : x.values()) v = rng.uniform();
  CHECK(odin_score(m, x, 1.0, 0.0) == msp_score(forward(m, x)));
  const ScoreSpec d = ScoreSpec::odin();
  CHECK(d.odin_epsilon == 1.4e-3);
  CHECK(d.temperature == 1.0e4);

  MlpClassifier lin({2, 3}, {Tensor::matrix({{2, -1, 0.5}, {-1, 1.5, 0}})}, {Tensor::vector({0, 0.1, -0.2})});
  Tensor xi(Shape{20, 2});
  for (auto& v : xi.values()) v = rng.uniform(0.2, 0.8);
  auto base = odin_score(lin, xi, 1.0, 0.0);
  auto pert = odin_score(lin, xi, 1.0, 0.05);
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(pert[i] >= base[i]);
}

TEST_CASE("mahalanobis fit and score") {
  Tensor f = Tensor::matrix({{-1}, {-1}, {1}, {1}});
  GaussianStats s = fit_mahalanobis(f, {0, 0, 1, 1}, 1e-6);
  CHECK(s.means(0, 0) == -1.0);
  CHECK(s.means(1, 0) == 1.0);
  CHECK(s.covariance(0, 0) == doctest::Approx(1e-6).epsilon(1e-9));

  GaussianStats unit = make_gaussian_stats(Tensor::matrix({{-1}, {1}}), Tensor::matrix({{1}}), 0.0);
  CHECK(mahalanobis_score(unit, Tensor::matrix({{0}}))[0] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(mahalanobis_score(unit, Tensor::matrix({{1}}))[0] == 0.0);
  GaussianStats scaled = make_gaussian_stats(Tensor::matrix({{-1}, {1}}), Tensor::matrix({{4}}), 0.0);
  CHECK(mahalanobis_score(scaled, Tensor::matrix({{0.3}}))[0] ==
        doctest::Approx(mahalanobis_score(unit, Tensor::matrix({{0.3}}))[0] / 4).epsilon(1e-14));
  CHECK_THROWS_AS(mahalanobis_score(unit, Tensor::matrix({{0, 1}})), std::invalid_argument);
  CHECK_THROWS_AS(fit_mahalanobis(f, {0, 0, 2, 2}, 1e-6), std::invalid_argument);
  CHECK_THROWS_AS(fit_mahalanobis(f, {0, 0, 0, 1}, 1e-6), std::invalid_argument);

  Rng rng(4);
  Tensor feats = random_matrix(60, 4, rng);
  std::vector<int> labels(60);
  for (std::size_t i = 0; i < 60; ++i) labels[i] = static_cast<int>(i % 3);
  GaussianStats r = fit_mahalanobis(feats, labels);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::fabs(r.covariance(i, j) - r.covariance(j, i)) <= 1e-12);
  }
  for (double v : mahalanobis_score(r, feats)) CHECK(v <= 0.0);
  for (std::size_t c = 0; c < 3; ++c) {
    Tensor mean_row = Tensor::matrix(1, 4, {r.means(c, 0), r.means(c, 1), r.means(c, 2), r.means(c, 3)});
    CHECK(std::fabs(mahalanobis_score(r, mean_row)[0]) < 1e-9);
  }

  // Shifting one class leaves the pooled covariance alone.
  Tensor shifted = feats;
  for (std::size_t i = 0; i < 60; ++i) {
    if (labels[i] == 1) {
      for (std::size_t j = 0; j < 4; ++j) shifted(i, j) += 3.0;
    }
  }
  GaussianStats r2 = fit_mahalanobis(shifted, labels, r.gamma);
  for (std::size_t i = 0; i < 16; ++i) CHECK(r2.covariance[i] == doctest::Approx(r.covariance[i]).epsilon(1e-10));
}

TEST_CASE("ash_s") {
  Tensor row = Tensor::matrix({{4, 3, 2, 1}});
  CHECK(ash_s(row, 0.0).activations == row);
  Tensor out = ash_s(row, 50.0).activations;
  CHECK(out(0, 0) == doctest::Approx(40.0 / 7).epsilon(1e-15));
  CHECK(out(0, 1) == doctest::Approx(30.0 / 7).epsilon(1e-15));
  CHECK(out(0, 2) == 0.0);
  CHECK(out(0, 3) == 0.0);
  AshResult z = ash_s(Tensor(Shape{1, 4}, 0.0), 50.0);
  CHECK(z.flagged_rows == std::vector<std::size_t>{0});
  CHECK_THROWS_AS(ash_s(row, 100.0), std::invalid_argument);

  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    Tensor a(Shape{3, 9});
    for (auto& v : a.values()) v = rng.uniform(0.0, 2.0);
    const double p = rng.uniform(0.0, 99.0);
    Tensor b = ash_s(a, p).activations;
    for (std::size_t r = 0; r < 3; ++r) {
      double sa = 0, sb = 0;
      for (double v : a.row(r)) sa += v;
      for (double v : b.row(r)) sb += v;
      CHECK(std::fabs(sa - sb) <= 1e-12 * std::max(1.0, sa));
      CHECK(argmax_row(a.row(r)) == argmax_row(b.row(r)));
    }
  }
}

TEST_CASE("detect thresholds inclusively") {
  auto d = detect({0.9, 0.1}, 0.5);
  CHECK(d == std::vector<Decision>{Decision::ID, Decision::OOD});
  for (auto x : detect({-1e300, 0, 5}, -std::numeric_limits<double>::infinity())) CHECK(x == Decision::ID);

  Rng rng(6);
  std::vector<double> id(200);
  for (auto& v : id) v = rng.normal();
  // The FPR95 threshold is the 190th largest ID score.
  std::vector<double> sorted = id;
  std::sort(sorted.rbegin(), sorted.rend());
  std::size_t accepted = 0;
  for (auto x : detect(id, sorted[189])) accepted += x == Decision::ID;
  CHECK(static_cast<double>(accepted) / 200.0 >= 0.95);
}

TEST_CASE("score spec validation") {
  ScoreSpec s = ScoreSpec::energy(0.0);
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  CHECK_THROWS_AS(ScoreSpec::odin(1.0, -1.0).validate(), std::invalid_argument);
  CHECK_THROWS_AS(ScoreSpec::ash(100.0).validate(), std::invalid_argument);
  CHECK(parse_score_kind("mahalanobis") == ScoreKind::Mahalanobis);
  CHECK_THROWS_AS(parse_score_kind("gradnorm"), std::invalid_argument);
}
