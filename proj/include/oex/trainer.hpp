#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "oex/data.hpp"
#include "oex/extrapolation.hpp"
#include "oex/losses.hpp"
#include "oex/metrics.hpp"
#include "oex/model.hpp"
#include "oex/scoring.hpp"

namespace oex {

enum class SamplerKind { Random, Greedy };
std::string sampler_name(SamplerKind s);
SamplerKind parse_sampler(const std::string& name);

struct TrainConfig {
  int epochs = 10;
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t id_batch = 128;
  std::size_t outlier_batch = 128;
  LossConfig loss;
  ExtrapolationConfig extrapolation;
  SamplerKind sampler = SamplerKind::Random;
  // Greedy sampler: fraction of the pool kept each epoch (highest energy first).
  double greedy_fraction = 0.5;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> checkpoint_dir;
  // Number of leading epochs whose outlier stream is kept in TrainResult.
  int capture_epochs = 0;

  void validate() const;
};

struct StepRecord {
  int epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double ce = 0.0;
  std::optional<double> oe_original;
  std::optional<double> oe_extrapolated;
  // Same sub-batch, same model, before extrapolation.
  std::optional<double> oe_extrapolated_before;
  double total = 0.0;
};

using TrainHistory = std::vector<StepRecord>;

std::string history_to_csv(const TrainHistory& history);

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0);

// Nesterov SGD: g = grad + wd * p; v' = mu * v + g; p' = p - lr * (g + mu * v').
void sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, std::vector<Tensor>& velocity, double lr,
              double momentum, double weight_decay);

struct TrainResult {
  MlpClassifier model;
  TrainHistory history;
  // Outlier rows fed to the loss during the captured epochs: untouched
  // originals followed by synthesized rows, batch by batch.
  Tensor stream;
  // The same batches with the selected originals in place of the
  // synthesized rows.
  Tensor stream_originals;
};

// Per batch: draw ID and outlier batches, select the extrapolation
// sub-batch (DivOE), synthesize it under the current model, and take one
// gradient step on the configured objective. The outlier stream cycles to
// match the ID epoch length.
TrainResult fine_tune(const MlpClassifier& model, const Dataset& id_train, const Dataset& aux_outliers,
                      const TrainConfig& cfg);

std::size_t batches_per_epoch(std::size_t id_count, std::size_t id_batch);

// Builds concrete score specs; Mahalanobis statistics are fit on id_train.
std::vector<ScoreSpec> prepare_scores(const MlpClassifier& model, const std::vector<std::string>& names,
                                      const Dataset& id_train);

std::vector<DetectionReport> evaluate_suite(const MlpClassifier& model, const Dataset& id_test,
                                            const std::vector<std::pair<std::string, Dataset>>& ood_sets,
                                            const std::vector<ScoreSpec>& specs, const std::string& method = "",
                                            std::uint64_t seed = 0, const std::string& config_digest = "");

}  // namespace oex
