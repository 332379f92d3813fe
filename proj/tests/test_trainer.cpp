#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "oex/data.hpp"
#include "oex/model.hpp"
#include "oex/random.hpp"
#include "oex/trainer.hpp"

using namespace oex;

namespace {

struct Toy {
  Dataset id_train;
  Dataset id_test;
  Dataset aux;
  Dataset ood;
};

Toy toy(std::uint64_t seed, std::size_t per_class = 30) {
  BenchmarkConfig bc;
  bc.train_per_class = per_class;
  bc.test_per_class = per_class;
  bc.aux_count = 60;
  bc.ood_count = 60;
  Benchmark b = make_benchmark(bc, seed);
  return {b.id_train, b.id_test, b.aux, b.ood.front().second};
}

TrainConfig small_config(LossKind kind, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.lr = 0.05;
  cfg.id_batch = 16;
  cfg.outlier_batch = 16;
  cfg.loss.kind = kind;
  cfg.loss.lambda = 0.5;
  cfg.seed = seed;
  return cfg;
}

MlpClassifier small_model(std::uint64_t seed) { return init_model({2, 16, 3}, seed); }

}  // namespace

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 100, 0.1) == doctest::Approx(0.1));
  CHECK(cosine_lr(100, 100, 0.1) == 0.0);
  CHECK(cosine_lr(50, 100, 0.1) == doctest::Approx(0.05));
  for (std::size_t s = 1; s <= 100; ++s) CHECK(cosine_lr(s, 100, 0.1) <= cosine_lr(s - 1, 100, 0.1));
  CHECK_THROWS_AS(cosine_lr(0, 0, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(cosine_lr(101, 100, 0.1), std::invalid_argument);
}

TEST_CASE("nesterov sgd step") {
  std::vector<Tensor> p{Tensor::scalar(1.0)};
  std::vector<Tensor> g{Tensor::scalar(1.0)};
  std::vector<Tensor> v{Tensor::scalar(0.0)};
  sgd_step(p, g, v, 0.1, 0.9, 0.0);
  CHECK(v[0].item() == doctest::Approx(1.0));
  CHECK(p[0].item() == doctest::Approx(0.81));

  std::vector<Tensor> q{Tensor::vector({1.0, -2.0})};
  std::vector<Tensor> gq{Tensor::vector({0.5, 0.25})};
  std::vector<Tensor> vq{Tensor::vector({0.0, 0.0})};
  sgd_step(q, gq, vq, 0.0, 0.9, 1e-4);
  CHECK(q[0] == Tensor::vector({1.0, -2.0}));
  CHECK(vq[0][0] != 0.0);

  std::vector<Tensor> r{Tensor::vector({1.0, -2.0})};
  std::vector<Tensor> vr{Tensor::vector({0.0, 0.0})};
  sgd_step(r, gq, vr, 0.2, 0.0, 0.0);
  CHECK(r[0][0] == doctest::Approx(0.9));
  CHECK(r[0][1] == doctest::Approx(-2.05));

  std::vector<Tensor> bad{Tensor::vector({1.0})};
  CHECK_THROWS_AS(sgd_step(bad, gq, vr, 0.1, 0.9, 0.0), std::invalid_argument);
}

TEST_CASE("zero epochs and zero learning rate leave the model unchanged") {
  Toy t = toy(1);
  MlpClassifier m = small_model(2);
  TrainConfig cfg = small_config(LossKind::OE, 3);
  cfg.epochs = 0;
  CHECK(fine_tune(m, t.id_train, t.aux, cfg).model == m);
  cfg.epochs = 2;
  cfg.lr = 0.0;
  TrainResult r = fine_tune(m, t.id_train, t.aux, cfg);
  CHECK(r.model == m);
  CHECK(r.history.size() == 2 * batches_per_epoch(t.id_train.size(), cfg.id_batch));
}

TEST_CASE("history length and determinism") {
  Toy t = toy(4);
  MlpClassifier m = small_model(5);
  for (LossKind kind : {LossKind::CrossEntropy, LossKind::OE, LossKind::EnergyBounded, LossKind::DivOE}) {
    TrainConfig cfg = small_config(kind, 6);
    cfg.epochs = 3;
    TrainResult a = fine_tune(m, t.id_train, t.aux, cfg);
    TrainResult b = fine_tune(m, t.id_train, t.aux, cfg);
    CHECK(a.history.size() == 3 * batches_per_epoch(t.id_train.size(), cfg.id_batch));
    CHECK(a.model == b.model);
    CHECK(history_to_csv(a.history) == history_to_csv(b.history));
    for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].step == i);
  }
}

TEST_CASE("divoe with ratio zero reproduces oe") {
  for (std::uint64_t seed : {7u, 8u, 9u}) {
    Toy t = toy(seed);
    MlpClassifier m = small_model(seed + 100);
    TrainConfig oe = small_config(LossKind::OE, seed);
    TrainConfig div = oe;
    div.loss.kind = LossKind::DivOE;
    div.extrapolation.ratio = 0.0;
    TrainResult a = fine_tune(m, t.id_train, t.aux, oe);
    TrainResult b = fine_tune(m, t.id_train, t.aux, div);
    CHECK(a.model == b.model);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      CHECK(a.history[i].total == b.history[i].total);
      CHECK_FALSE(b.history[i].oe_extrapolated.has_value());
    }
  }
}

TEST_CASE("extrapolated loss is never below its starting value") {
  Toy t = toy(10);
  TrainConfig cfg = small_config(LossKind::DivOE, 11);
  cfg.extrapolation.epsilon = 0.1;
  TrainResult r = fine_tune(small_model(12), t.id_train, t.aux, cfg);
  for (const auto& rec : r.history) {
    REQUIRE(rec.oe_extrapolated.has_value());
    REQUIRE(rec.oe_extrapolated_before.has_value());
    CHECK(*rec.oe_extrapolated >= *rec.oe_extrapolated_before);
  }
}

TEST_CASE("training lowers the loss") {
  int improved = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Toy t = toy(seed + 20, 60);
    TrainConfig cfg = small_config(LossKind::OE, seed);
    cfg.epochs = 10;
    cfg.lr = 0.1;
    TrainResult r = fine_tune(small_model(seed + 30), t.id_train, t.aux, cfg);
    const std::size_t per = batches_per_epoch(t.id_train.size(), cfg.id_batch);
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      first += r.history[i].total;
      last += r.history[r.history.size() - per + i].total;
    }
    improved += last < first;
  }
  CHECK(improved == 5);
}

TEST_CASE("input validation") {
  Toy t = toy(13);
  MlpClassifier m = small_model(14);
  TrainConfig cfg = small_config(LossKind::OE, 15);
  Dataset empty{Tensor(Shape{0, 2}, 0.0), std::nullopt};
  CHECK_THROWS_AS(fine_tune(m, t.id_train, empty, cfg), std::invalid_argument);
  cfg.loss.kind = LossKind::CrossEntropy;
  CHECK_NOTHROW(fine_tune(m, t.id_train, empty, cfg));
  cfg.epochs = -1;
  CHECK_THROWS_AS(fine_tune(m, t.id_train, t.aux, cfg), std::invalid_argument);
  cfg = small_config(LossKind::OE, 15);
  cfg.id_batch = 0;
  CHECK_THROWS_AS(fine_tune(m, t.id_train, t.aux, cfg), std::invalid_argument);
  cfg = small_config(LossKind::OE, 15);
  CHECK_THROWS_AS(fine_tune(init_model({3, 8, 3}, 1), t.id_train, t.aux, cfg), std::invalid_argument);
  CHECK_THROWS_AS(parse_sampler("best"), std::invalid_argument);
}

TEST_CASE("checkpoints are written per epoch") {
  Toy t = toy(16);
  const auto dir = std::filesystem::temp_directory_path() / "oex_test_trainer_ckpt";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  TrainConfig cfg = small_config(LossKind::OE, 17);
  cfg.checkpoint_dir = dir;
  TrainResult r = fine_tune(small_model(18), t.id_train, t.aux, cfg);
  CHECK(std::filesystem::exists(dir / "epoch_1.json"));
  CHECK(load_checkpoint(dir / "epoch_2.json") == r.model);
  std::filesystem::remove_all(dir);
}

TEST_CASE("captured outlier streams") {
  Toy t = toy(19);
  TrainConfig cfg = small_config(LossKind::DivOE, 20);
  cfg.capture_epochs = 1;
  TrainResult r = fine_tune(small_model(21), t.id_train, t.aux, cfg);
  const std::size_t per = batches_per_epoch(t.id_train.size(), cfg.id_batch);
  CHECK(r.stream.rows() == per * cfg.outlier_batch);
  CHECK(r.stream.shape() == r.stream_originals.shape());
  CHECK_FALSE(r.stream == r.stream_originals);
  std::size_t moved = 0;
  for (std::size_t i = 0; i < r.stream.rows(); ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < 2; ++j) d = std::max(d, std::fabs(r.stream(i, j) - r.stream_originals(i, j)));
    CHECK(d <= cfg.extrapolation.epsilon + 1e-12);
    moved += d > 0.0;
  }
  CHECK(moved > 0);
  CHECK(moved <= per * extrapolated_count(cfg.outlier_batch, cfg.extrapolation.ratio));

  cfg.loss.kind = LossKind::OE;
  TrainResult o = fine_tune(small_model(21), t.id_train, t.aux, cfg);
  CHECK(o.stream == o.stream_originals);
  cfg.capture_epochs = 0;
  CHECK(fine_tune(small_model(21), t.id_train, t.aux, cfg).stream.size() == 0);
}

TEST_CASE("evaluation suite") {
  Toy t = toy(22);
  MlpClassifier m = small_model(23);
  auto specs = prepare_scores(m, {"msp", "energy", "mahalanobis"}, t.id_train);
  REQUIRE(specs.size() == 3);
  auto reports = evaluate_suite(m, t.id_test, {{"same", t.id_test}}, specs, "oe", 5, "abc");
  REQUIRE(reports.size() == 3);
  for (const auto& r : reports) {
    CHECK(r.method == "oe");
    CHECK(r.seed == 5);
    CHECK(r.config_digest == "abc");
    CHECK(r.records.front().auroc == doctest::Approx(0.5));
  }
  CHECK_THROWS(prepare_scores(m, {"nope"}, t.id_train));
}
