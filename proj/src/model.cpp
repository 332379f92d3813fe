#include "oex/model.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "oex/error.hpp"
#include "oex/random.hpp"

namespace oex {

namespace {

constexpr int kCheckpointVersion = 1;

void validate_dims(const std::vector<std::size_t>& dims) {
  if (dims.size() < 2) throw std::invalid_argument("model: need at least input and output dims");
  for (std::size_t d : dims) {
    if (d == 0) throw std::invalid_argument("model: layer dimensions must be positive");
  }
}

void require_input(const MlpClassifier& model, const Tensor& batch) {
  if (batch.rank() != 2 || batch.cols() != model.input_dim()) {
    throw std::invalid_argument("model: batch shape " + shape_string(batch.shape()) + " does not match input dim " +
                                std::to_string(model.input_dim()));
  }
}

Tensor affine_layer(const MlpClassifier& model, std::size_t layer, const Tensor& h) {
  return kernels::add(kernels::matmul(h, model.weight(layer)), model.bias(layer));
}

}  // namespace

MlpClassifier::MlpClassifier(std::vector<std::size_t> dims, std::vector<Tensor> weights, std::vector<Tensor> biases,
                             std::uint64_t seed)
    : dims_(std::move(dims)), seed_(seed) {
  validate_dims(dims_);
  if (weights.size() != layer_count() || biases.size() != layer_count()) {
    throw std::invalid_argument("model: parameter count does not match dims");
  }
  for (std::size_t l = 0; l < layer_count(); ++l) {
    if (weights[l].shape() != Shape{dims_[l], dims_[l + 1]}) {
      throw std::invalid_argument("model: weight " + std::to_string(l) + " has shape " +
                                  shape_string(weights[l].shape()));
    }
    if (biases[l].shape() != Shape{dims_[l + 1]}) {
      throw std::invalid_argument("model: bias " + std::to_string(l) + " has shape " + shape_string(biases[l].shape()));
    }
    if (!weights[l].all_finite() || !biases[l].all_finite()) throw NumericError("model: non-finite parameter");
    params_.push_back(std::move(weights[l]));
    params_.push_back(std::move(biases[l]));
  }
}

std::string MlpClassifier::parameter_name(std::size_t k) {
  return (k % 2 == 0 ? "W" : "b") + std::to_string(k / 2);
}

std::set<std::string, std::less<>> MlpClassifier::parameter_names() const {
  std::set<std::string, std::less<>> names;
  for (std::size_t k = 0; k < params_.size(); ++k) names.insert(parameter_name(k));
  return names;
}

void MlpClassifier::bind(ad::Bindings& bindings) const {
  for (std::size_t k = 0; k < params_.size(); ++k) bindings.insert_or_assign(parameter_name(k), params_[k]);
}

MlpClassifier init_model(const std::vector<std::size_t>& dims, std::uint64_t seed) {
  validate_dims(dims);
  Rng rng(seed);
  std::vector<Tensor> weights, biases;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(dims[l]));
    Tensor w(Shape{dims[l], dims[l + 1]});
    for (auto& v : w.values()) v = rng.normal(0.0, stddev);
    weights.push_back(std::move(w));
    biases.emplace_back(Shape{dims[l + 1]}, 0.0);
  }
  return MlpClassifier(dims, std::move(weights), std::move(biases), seed);
}

Tensor penultimate_features(const MlpClassifier& model, const Tensor& batch) {
  require_input(model, batch);
  if (model.hidden_count() == 0) throw std::invalid_argument("model: no hidden layer to tap");
  Tensor h = batch;
  for (std::size_t l = 0; l + 1 < model.layer_count(); ++l) h = kernels::relu(affine_layer(model, l, h));
  return h;
}

Tensor head(const MlpClassifier& model, const Tensor& features) {
  return affine_layer(model, model.layer_count() - 1, features);
}

Tensor forward(const MlpClassifier& model, const Tensor& batch) {
  require_input(model, batch);
  Tensor h = batch;
  for (std::size_t l = 0; l + 1 < model.layer_count(); ++l) h = kernels::relu(affine_layer(model, l, h));
  Tensor logits = head(model, h);
  if (!logits.all_finite()) throw NumericError("model: non-finite logits");
  return logits;
}

std::vector<ad::Expr> parameter_inputs(const MlpClassifier& model) {
  std::vector<ad::Expr> out;
  for (std::size_t k = 0; k < 2 * model.layer_count(); ++k) out.push_back(ad::input(MlpClassifier::parameter_name(k)));
  return out;
}

ad::Expr features_expr(const MlpClassifier& model, const ad::Expr& x, const std::vector<ad::Expr>& params) {
  if (model.hidden_count() == 0) throw std::invalid_argument("model: no hidden layer to tap");
  if (params.size() != 2 * model.layer_count()) throw std::invalid_argument("model: wrong parameter expression count");
  ad::Expr h = x;
  for (std::size_t l = 0; l + 1 < model.layer_count(); ++l) h = ad::relu(ad::matmul(h, params[2 * l]) + params[2 * l + 1]);
  return h;
}

ad::Expr logits_expr(const MlpClassifier& model, const ad::Expr& x, const std::vector<ad::Expr>& params) {
  if (params.size() != 2 * model.layer_count()) throw std::invalid_argument("model: wrong parameter expression count");
  ad::Expr h = model.hidden_count() ? features_expr(model, x, params) : x;
  const std::size_t last = model.layer_count() - 1;
  return ad::matmul(h, params[2 * last]) + params[2 * last + 1];
}

ad::Expr features_expr(const MlpClassifier& model, const ad::Expr& x) {
  return features_expr(model, x, parameter_inputs(model));
}

ad::Expr logits_expr(const MlpClassifier& model, const ad::Expr& x) {
  return logits_expr(model, x, parameter_inputs(model));
}

nlohmann::json model_to_json(const MlpClassifier& model) {
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["dims"] = model.dims();
  j["seed"] = model.seed();
  j["weights"] = nlohmann::json::array();
  j["biases"] = nlohmann::json::array();
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    j["weights"].push_back(model.weight(l).data());
    j["biases"].push_back(model.bias(l).data());
  }
  return j;
}

MlpClassifier model_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kCheckpointVersion) {
      throw DataError("checkpoint: unsupported format_version");
    }
    auto dims = j.at("dims").get<std::vector<std::size_t>>();
    validate_dims(dims);
    const auto& jw = j.at("weights");
    const auto& jb = j.at("biases");
    if (jw.size() != dims.size() - 1 || jb.size() != dims.size() - 1) {
      throw DataError("checkpoint: layer count does not match dims");
    }
    std::vector<Tensor> weights, biases;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      weights.emplace_back(Shape{dims[l], dims[l + 1]}, jw[l].get<std::vector<double>>());
      biases.emplace_back(Shape{dims[l + 1]}, jb[l].get<std::vector<double>>());
    }
    return MlpClassifier(std::move(dims), std::move(weights), std::move(biases), j.at("seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const MlpClassifier& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << model_to_json(model).dump() << '\n';
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

MlpClassifier load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path.string() + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace oex
