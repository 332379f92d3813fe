#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "oex/error.hpp"
#include "oex/pipeline.hpp"

using namespace oex;
using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("oex_test_pipeline_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

RunConfig quick_config(std::uint64_t seed) {
  RunConfig c = default_run_config();
  c.seed = seed;
  c.data.train_per_class = 40;
  c.data.test_per_class = 40;
  c.data.aux_count = 80;
  c.data.ood_count = 80;
  c.hidden = {16};
  c.pretrain_epochs = 3;
  c.train.epochs = 2;
  c.train.id_batch = 32;
  c.train.outlier_batch = 32;
  return c;
}

}  // namespace

TEST_CASE("config round trip and digest") {
  RunConfig d = default_run_config();
  json j = run_config_to_json(d);
  CHECK(j.at("schema_version") == kSchemaVersion);
  CHECK(run_config_to_json(run_config_from_json(j)) == j);
  CHECK(run_config_to_json(run_config_from_json(json::object())) == j);
  CHECK(config_digest(d).size() == 16);
  CHECK(config_digest(d) == config_digest(run_config_from_json(j)));

  RunConfig moved = d;
  moved.out_dir = "elsewhere";
  CHECK(config_digest(moved) == config_digest(d));
  RunConfig other = d;
  other.seed = 1;
  CHECK(config_digest(other) != config_digest(d));
  other = d;
  other.train.loss.lambda = 0.25;
  CHECK(config_digest(other) != config_digest(d));
}

TEST_CASE("config strictness") {
  CHECK_THROWS_AS(run_config_from_json(json{{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"train", {{"epoch", 3}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"train", {{"epochs", "three"}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"train", {{"epochs", -1}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"train", {{"method", "magic"}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"extrapolation", {{"ratio", 1.5}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"scores", {"nope"}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"schema_version", 99}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"data", 3}}), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);

  RunConfig c = run_config_from_json(json{{"extrapolation", {{"step_size", 0.01}}}});
  REQUIRE(c.train.extrapolation.step_size.has_value());
  CHECK(*c.train.extrapolation.step_size == 0.01);
  CHECK_FALSE(run_config_from_json(json{{"extrapolation", {{"step_size", nullptr}}}}).train.extrapolation.step_size);
  CHECK(run_config_from_json(json{{"train", {{"lr", 1}}}}).train.lr == 1.0);

  const auto dir = scratch("badjson");
  std::filesystem::create_directories(dir);
  write_text(dir / "c.json", "{ not json");
  CHECK_THROWS_AS(load_run_config(dir / "c.json"), ConfigError);
  write_text(dir / "c.json", R"({"seed": 9, "train": {"method": "oe"}})");
  RunConfig loaded = load_run_config(dir / "c.json");
  CHECK(loaded.seed == 9);
  CHECK(loaded.method == "oe");
  std::filesystem::remove_all(dir);
}

TEST_CASE("overrides") {
  json doc = json::object();
  apply_override(doc, "train.epochs=7");
  apply_override(doc, "train.method=oe");
  apply_override(doc, "extrapolation.epsilon_grid=[0.01,0.02]");
  apply_override(doc, "seed=5");
  RunConfig c = run_config_from_json(doc);
  CHECK(c.train.epochs == 7);
  CHECK(c.method == "oe");
  CHECK(c.epsilon_grid == std::vector<double>{0.01, 0.02});
  CHECK(c.seed == 5);
  CHECK_THROWS_AS(apply_override(doc, "train.nope=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "train.epochs=abc"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "noequals"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "train..epochs=1"), ConfigError);
  CHECK_THROWS_AS(method_loss("magic"), ConfigError);
  CHECK(method_loss("divoe") == LossKind::DivOE);
}

TEST_CASE("derived seeds and stage configs") {
  RunConfig c = default_run_config();
  c.seed = 3;
  CHECK(c.model_dims().front() == 2);
  CHECK(c.model_dims().back() == c.data.classes);
  CHECK(c.fine_tune_config().seed != c.pretrain_config().seed);
  CHECK(c.pretrain_config().loss.kind == LossKind::CrossEntropy);
  CHECK(c.fine_tune_config().loss.kind == LossKind::DivOE);
  CHECK(c.pretrain_config().epochs == c.pretrain_epochs);
}

TEST_CASE("benchmark files round trip") {
  RunConfig c = quick_config(11);
  Benchmark b = generate_benchmark(c);
  const auto a = scratch("bench_a");
  const auto z = scratch("bench_b");
  write_benchmark(b, a);
  write_benchmark(generate_benchmark(c), z);
  for (const char* f : {"id_train.csv", "id_test.csv", "aux_out.csv", "ood_ring.csv", "transform.json"}) {
    REQUIRE(std::filesystem::exists(a / f));
    CHECK(slurp(a / f) == slurp(z / f));
  }
  Benchmark back = read_benchmark(a);
  CHECK(back.id_train == b.id_train);
  CHECK(back.id_test == b.id_test);
  CHECK(back.aux.x == b.aux.x);
  REQUIRE(back.ood.size() == b.ood.size());
  CHECK(back.ood[0].first == "ring");
  CHECK(back.ood[0].second.x == b.ood[0].second.x);
  CHECK(back.transform == b.transform);
  CHECK_THROWS_AS(read_benchmark(a / "missing"), DataError);
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(z);
}

TEST_CASE("pipeline is deterministic and reduces correctly") {
  RunConfig c = quick_config(12);
  Benchmark b = generate_benchmark(c);
  TrainedModels t1 = train_pipeline(c, b);
  TrainedModels t2 = train_pipeline(c, b);
  CHECK(t1.fine_tuned == t2.fine_tuned);
  auto r1 = evaluate_pipeline(c, t1.fine_tuned, b);
  auto r2 = evaluate_pipeline(c, t2.fine_tuned, b);
  CHECK(reports_to_json(r1) == reports_to_json(r2));
  REQUIRE(r1.size() == c.scores.size());
  CHECK(r1[0].config_digest == config_digest(c));
  CHECK(r1[0].method == "divoe");

  RunConfig oe = c;
  oe.method = "oe";
  RunConfig div0 = c;
  div0.train.extrapolation.ratio = 0.0;
  CHECK(train_pipeline(oe, b).fine_tuned == train_pipeline(div0, b).fine_tuned);

  RunConfig frozen = c;
  frozen.train.epochs = 0;
  TrainedModels f = train_pipeline(frozen, b);
  CHECK(f.fine_tuned == f.initial);
  CHECK(f.initial == t1.initial);
}

TEST_CASE("extrapolation dump") {
  RunConfig c = quick_config(13);
  Benchmark b = generate_benchmark(c);
  MlpClassifier m = pretrain(c, b);
  const Tensor inputs = b.aux.x.select_rows(std::vector<std::size_t>{0, 1, 2, 3});
  ExtrapolationConfig e = c.train.extrapolation;
  e.target = Target::Energy;
  ExtrapolationDump d = extrapolation_dump(m, inputs, e, {0.0, 0.05});
  REQUIRE(d.rows.size() == 8);
  REQUIRE(d.synthesized.size() == 2);
  CHECK(d.synthesized[0] == inputs);
  for (const auto& r : d.rows) CHECK(r.loss_after >= r.loss_before);
  const std::string rows = extrapolation_rows_csv(d);
  CHECK(rows.rfind("index,epsilon,loss_before,loss_after,score_before,score_after\n", 0) == 0);
  const std::string syn = synthesized_csv(d, {0.0, 0.05});
  CHECK(syn.rfind("epsilon,index,x0,x1\n", 0) == 0);
  CHECK(std::count(syn.begin(), syn.end(), '\n') == 9);
}

TEST_CASE("outlier exposure beats the pretrained model on the default benchmark") {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RunConfig c = default_run_config();
    c.seed = seed;
    c.method = "oe";
    c.scores = {"energy"};
    Benchmark b = generate_benchmark(c);
    TrainedModels t = train_pipeline(c, b);
    const double before = evaluate_pipeline(c, t.initial, b)[0].records[0].fpr95;
    const double after = evaluate_pipeline(c, t.fine_tuned, b)[0].records[0].fpr95;
    wins += after < before;
  }
  CHECK(wins >= 9);
}
