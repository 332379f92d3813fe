#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "oex/data.hpp"
#include "oex/gmm.hpp"
#include "oex/metrics.hpp"
#include "oex/model.hpp"
#include "oex/trainer.hpp"

namespace oex {

inline constexpr int kSchemaVersion = 1;

struct RunConfig {
  std::uint64_t seed = 0;
  BenchmarkConfig data;
  std::vector<std::size_t> hidden{64, 64};
  std::string method = "divoe";
  int pretrain_epochs = 30;
  double pretrain_lr = 0.05;
  TrainConfig train;  // train.seed and train.loss.kind are derived from seed and method
  std::vector<double> epsilon_grid{0.01, 0.05, 0.1, 0.15};
  std::vector<std::string> scores{"energy", "msp"};
  std::string out_dir = "run";
  gmm::TheoryConfig theory = gmm::frozen_theory_config();

  std::vector<std::size_t> model_dims() const;
  TrainConfig fine_tune_config() const;
  TrainConfig pretrain_config() const;
};

// Calibrated desk-scale defaults.
RunConfig default_run_config();

nlohmann::json run_config_to_json(const RunConfig& cfg);
// Strict: unknown keys, wrong types and invalid values raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Applies "a.b.c=value" to a config document. The value is read as JSON
// when it parses, otherwise as a string. The key must already exist.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_digest(const RunConfig& cfg);

LossKind method_loss(const std::string& method);

Benchmark generate_benchmark(const RunConfig& cfg);
void write_benchmark(const Benchmark& b, const std::filesystem::path& dir);
Benchmark read_benchmark(const std::filesystem::path& dir);

struct TrainedModels {
  MlpClassifier initial;     // after pretraining, before fine-tuning
  MlpClassifier fine_tuned;
  TrainHistory history;
};

MlpClassifier pretrain(const RunConfig& cfg, const Benchmark& b);
TrainedModels train_pipeline(const RunConfig& cfg, const Benchmark& b);
std::vector<DetectionReport> evaluate_pipeline(const RunConfig& cfg, const MlpClassifier& model, const Benchmark& b);

struct ExtrapolationRow {
  std::size_t index = 0;
  double epsilon = 0.0;
  double loss_before = 0.0;
  double loss_after = 0.0;
  double score_before = 0.0;
  double score_after = 0.0;
};

struct ExtrapolationDump {
  std::vector<ExtrapolationRow> rows;
  std::vector<Tensor> synthesized;  // one per epsilon, in grid order
};

// Extrapolates every input row once per epsilon in the grid; scores are
// energy ID-ness.
ExtrapolationDump extrapolation_dump(const MlpClassifier& model, const Tensor& inputs, const ExtrapolationConfig& base,
                                     const std::vector<double>& epsilons);
std::string extrapolation_rows_csv(const ExtrapolationDump& dump);
std::string synthesized_csv(const ExtrapolationDump& dump, const std::vector<double>& epsilons);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace oex
