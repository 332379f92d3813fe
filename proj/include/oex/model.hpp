#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "oex/autodiff.hpp"
#include "oex/tensor.hpp"

namespace oex {

// Multilayer perceptron f: R^d -> R^C. Hidden layers use relu, the output
// layer is affine. Weights are stored (fan_in x fan_out) so a batch maps
// through x * W + b.
class MlpClassifier {
 public:
  MlpClassifier() = default;
  MlpClassifier(std::vector<std::size_t> dims, std::vector<Tensor> weights, std::vector<Tensor> biases,
                std::uint64_t seed = 0);

  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t input_dim() const { return dims_.front(); }
  std::size_t num_classes() const { return dims_.back(); }
  std::size_t layer_count() const { return dims_.size() - 1; }
  std::size_t hidden_count() const { return layer_count() - 1; }
  std::uint64_t seed() const { return seed_; }

  const Tensor& weight(std::size_t layer) const { return params_[2 * layer]; }
  const Tensor& bias(std::size_t layer) const { return params_[2 * layer + 1]; }
  Tensor& weight(std::size_t layer) { return params_[2 * layer]; }
  Tensor& bias(std::size_t layer) { return params_[2 * layer + 1]; }

  // Flat parameter list W0, b0, W1, b1, ... in layer order.
  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  static std::string parameter_name(std::size_t k);
  std::set<std::string, std::less<>> parameter_names() const;

  void bind(ad::Bindings& bindings) const;

  friend bool operator==(const MlpClassifier& a, const MlpClassifier& b) {
    return a.dims_ == b.dims_ && a.params_ == b.params_;
  }

 private:
  std::vector<std::size_t> dims_;
  std::vector<Tensor> params_;
  std::uint64_t seed_ = 0;
};

// He initialization: W ~ N(0, 2/fan_in), b = 0.
MlpClassifier init_model(const std::vector<std::size_t>& dims, std::uint64_t seed);

Tensor forward(const MlpClassifier& model, const Tensor& batch);
Tensor penultimate_features(const MlpClassifier& model, const Tensor& batch);
// Final affine layer applied to penultimate features.
Tensor head(const MlpClassifier& model, const Tensor& features);

// Symbolic counterparts; parameters are inputs named by parameter_name().
ad::Expr logits_expr(const MlpClassifier& model, const ad::Expr& x);
ad::Expr features_expr(const MlpClassifier& model, const ad::Expr& x);
// One input per parameter; share them when a graph runs the model on several batches.
std::vector<ad::Expr> parameter_inputs(const MlpClassifier& model);
ad::Expr logits_expr(const MlpClassifier& model, const ad::Expr& x, const std::vector<ad::Expr>& params);
ad::Expr features_expr(const MlpClassifier& model, const ad::Expr& x, const std::vector<ad::Expr>& params);

nlohmann::json model_to_json(const MlpClassifier& model);
MlpClassifier model_from_json(const nlohmann::json& j);
void save_checkpoint(const MlpClassifier& model, const std::filesystem::path& path);
MlpClassifier load_checkpoint(const std::filesystem::path& path);

}  // namespace oex
