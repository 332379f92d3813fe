#include "oex/trainer.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "oex/error.hpp"
#include "oex/sampling.hpp"

namespace oex {

std::string sampler_name(SamplerKind s) { return s == SamplerKind::Random ? "random" : "greedy"; }

SamplerKind parse_sampler(const std::string& name) {
  if (name == "random") return SamplerKind::Random;
  if (name == "greedy") return SamplerKind::Greedy;
  throw std::invalid_argument("unknown sampler '" + name + "'");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (!(lr >= 0.0 && std::isfinite(lr))) throw std::invalid_argument("train: lr must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("train: momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train: weight decay must be >= 0");
  if (id_batch == 0 || outlier_batch == 0) throw std::invalid_argument("train: batch sizes must be >= 1");
  if (capture_epochs < 0) throw std::invalid_argument("train: capture_epochs must be >= 0");
  if (!(greedy_fraction > 0.0 && greedy_fraction <= 1.0)) {
    throw std::invalid_argument("train: greedy_fraction must be in (0, 1]");
  }
  loss.validate();
  extrapolation.validate();
}

namespace {

std::string opt_field(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

std::string history_to_csv(const TrainHistory& history) {
  std::ostringstream out;
  out << "epoch,step,lr,ce,oe_original,oe_extrapolated,oe_extrapolated_before,total\n";
  for (const auto& r : history) {
    out << r.epoch << ',' << r.step << ',' << format_double(r.lr) << ',' << format_double(r.ce) << ','
        << opt_field(r.oe_original) << ',' << opt_field(r.oe_extrapolated) << ','
        << opt_field(r.oe_extrapolated_before) << ',' << format_double(r.total) << '\n';
  }
  return out.str();
}

double cosine_lr(std::size_t step, std::size_t total_steps, double lr0) {
  if (total_steps == 0) throw std::invalid_argument("cosine_lr: total_steps must be >= 1");
  if (step > total_steps) throw std::invalid_argument("cosine_lr: step beyond schedule");
  if (step == total_steps) return 0.0;
  return 0.5 * lr0 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

void sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, std::vector<Tensor>& velocity, double lr,
              double momentum, double weight_decay) {
  if (params.size() != grads.size() || params.size() != velocity.size()) {
    throw std::invalid_argument("sgd_step: parameter, gradient and velocity counts differ");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    Tensor& v = velocity[k];
    const Tensor& g = grads[k];
    if (p.shape() != g.shape() || p.shape() != v.shape()) {
      throw std::invalid_argument("sgd_step: shape mismatch for parameter " + std::to_string(k));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] + weight_decay * p[i];
      v[i] = momentum * v[i] + gi;
      p[i] -= lr * (gi + momentum * v[i]);
    }
  }
}

std::size_t batches_per_epoch(std::size_t id_count, std::size_t id_batch) {
  return (id_count + id_batch - 1) / id_batch;
}

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

TrainResult fine_tune(const MlpClassifier& model, const Dataset& id_train, const Dataset& aux_outliers,
                      const TrainConfig& cfg) {
  cfg.validate();
  id_train.validate();
  if (id_train.dim() != model.input_dim()) {
    throw std::invalid_argument("fine_tune: data has " + std::to_string(id_train.dim()) + " features, model expects " +
                                std::to_string(model.input_dim()));
  }
  const bool uses_outliers = cfg.loss.kind != LossKind::CrossEntropy;
  if (uses_outliers && aux_outliers.size() == 0) throw std::invalid_argument("fine_tune: empty auxiliary outlier pool");
  if (uses_outliers && aux_outliers.dim() != model.input_dim()) {
    throw std::invalid_argument("fine_tune: outlier feature count does not match the model");
  }
  const bool extrapolate = cfg.loss.kind == LossKind::DivOE;

  TrainResult result;
  result.model = model;
  if (cfg.epochs == 0 || id_train.size() == 0) return result;

  MlpClassifier& net = result.model;
  std::vector<Tensor> velocity;
  for (const auto& p : net.parameters()) velocity.emplace_back(p.shape(), 0.0);
  const auto param_names = net.parameter_names();
  const std::set<std::string, std::less<>> wrt(param_names.begin(), param_names.end());

  const std::size_t per_epoch = batches_per_epoch(id_train.size(), cfg.id_batch);
  const std::size_t total_steps = per_epoch * static_cast<std::size_t>(cfg.epochs);
  const std::uint64_t id_seed = derive_seed(cfg.seed, "id_batches");
  std::optional<BatchCycler> outlier_stream;
  if (uses_outliers) outlier_stream.emplace(aux_outliers.size(), cfg.outlier_batch, derive_seed(cfg.seed, "outliers"));
  Rng subbatch_rng(derive_seed(cfg.seed, "subbatch"));
  const std::size_t classes = net.num_classes();

  ad::Expr x_in = ad::input("x_in");
  ad::Expr onehot_in = ad::input("y_in");
  const std::vector<ad::Expr> params = parameter_inputs(net);
  std::vector<Tensor> captured, captured_originals;
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Dataset epoch_pool = aux_outliers;
    if (uses_outliers && cfg.sampler == SamplerKind::Greedy) {
      OutlierPool pool(aux_outliers.x);
      const auto keep = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::floor(cfg.greedy_fraction * static_cast<double>(pool.size()))));
      Selection sel = greedy_informative_sample(pool, net, ScoreSpec::energy(), keep);
      epoch_pool = Dataset{sel.batch, std::nullopt};
      outlier_stream.emplace(epoch_pool.size(), cfg.outlier_batch,
                             derive_seed(cfg.seed, "outliers", static_cast<std::uint64_t>(epoch)));
    }
    for (const auto& idx : epoch_batches(id_train.size(), cfg.id_batch, id_seed, static_cast<std::uint64_t>(epoch), false)) {
      Dataset batch = id_train.subset(idx);
      ad::Bindings bindings{{"x_in", batch.x}, {"y_in", one_hot(batch.y(), classes)}};
      net.bind(bindings);
      StepRecord rec;
      rec.epoch = epoch;
      rec.step = step;
      rec.lr = cosine_lr(step, total_steps, cfg.lr);

      std::optional<ad::Expr> orig_logits, ext_logits;
      if (uses_outliers) {
        Tensor out_batch = epoch_pool.x.select_rows(outlier_stream->next());
        Tensor originals = out_batch;
        const bool capture = epoch < cfg.capture_epochs;
        if (extrapolate) {
          SubbatchSplit split = select_subbatch(out_batch.rows(), cfg.extrapolation.ratio, subbatch_rng);
          originals = split.untouched.empty() ? Tensor() : out_batch.select_rows(split.untouched);
          if (capture && originals.size() != 0) {
            captured.push_back(originals);
            captured_originals.push_back(originals);
          }
          if (!split.selected.empty()) {
            Tensor selected = out_batch.select_rows(split.selected);
            ExtrapolatedBatch ext = build_extrapolation_pool(net, selected, cfg.extrapolation);
            if (cfg.extrapolation.target == Target::UniformLoss) {
              rec.oe_extrapolated_before = mean_of(ext.initial_loss);
            }
            if (capture) {
              captured.push_back(ext.synthesized);
              captured_originals.push_back(std::move(selected));
            }
            bindings.emplace("x_ext", std::move(ext.synthesized));
            ext_logits = logits_expr(net, ad::input("x_ext"), params);
          }
        } else if (capture) {
          captured.push_back(out_batch);
          captured_originals.push_back(out_batch);
        }
        if (originals.size() != 0) {
          bindings.emplace("x_orig", std::move(originals));
          orig_logits = logits_expr(net, ad::input("x_orig"), params);
        }
      }

      loss::Objective obj = loss::objective(cfg.loss, logits_expr(net, x_in, params), onehot_in, orig_logits, ext_logits);
      try {
        ad::Evaluation ev(obj.total, bindings);
        rec.total = ev.value().item();
        rec.ce = ev.value(obj.ce).item();
        if (obj.outlier_original) rec.oe_original = ev.value(obj.outlier_original).item();
        if (obj.outlier_extrapolated) rec.oe_extrapolated = ev.value(obj.outlier_extrapolated).item();
        if (rec.oe_extrapolated && rec.oe_extrapolated_before && *rec.oe_extrapolated < *rec.oe_extrapolated_before) {
          throw std::logic_error("fine_tune: extrapolated loss fell below its pre-extrapolation value");
        }
        ad::GradientMap grads = ev.backward(wrt);
        std::vector<Tensor> g;
        for (std::size_t k = 0; k < net.parameters().size(); ++k) g.push_back(std::move(grads.at(net.parameter_name(k))));
        for (const auto& t : g) {
          if (!t.all_finite()) throw NumericError("non-finite gradient");
        }
        sgd_step(net.parameters(), g, velocity, rec.lr, cfg.momentum, cfg.weight_decay);
      } catch (const NumericError& e) {
        throw NumericError("training aborted at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                           " (lr " + format_double(rec.lr) + "): " + e.what());
      }
      for (const auto& p : net.parameters()) {
        if (!p.all_finite()) {
          throw NumericError("training aborted at epoch " + std::to_string(epoch) + ", step " + std::to_string(step) +
                             ": parameters became non-finite");
        }
      }
      result.history.push_back(rec);
      ++step;
    }
    if (cfg.checkpoint_dir) {
      save_checkpoint(net, *cfg.checkpoint_dir / ("epoch_" + std::to_string(epoch + 1) + ".json"));
    }
  }
  if (!captured.empty()) {
    result.stream = concat_rows(captured);
    result.stream_originals = concat_rows(captured_originals);
  }
  return result;
}

std::vector<ScoreSpec> prepare_scores(const MlpClassifier& model, const std::vector<std::string>& names,
                                      const Dataset& id_train) {
  std::vector<ScoreSpec> out;
  for (const auto& name : names) {
    switch (parse_score_kind(name)) {
      case ScoreKind::MSP: out.push_back(ScoreSpec::msp()); break;
      case ScoreKind::Energy: out.push_back(ScoreSpec::energy()); break;
      case ScoreKind::ODIN: out.push_back(ScoreSpec::odin()); break;
      case ScoreKind::AshEnergy: out.push_back(ScoreSpec::ash()); break;
      case ScoreKind::Mahalanobis:
        out.push_back(ScoreSpec::mahalanobis(fit_mahalanobis(penultimate_features(model, id_train.x), id_train.y())));
        break;
    }
  }
  return out;
}

std::vector<DetectionReport> evaluate_suite(const MlpClassifier& model, const Dataset& id_test,
                                            const std::vector<std::pair<std::string, Dataset>>& ood_sets,
                                            const std::vector<ScoreSpec>& specs, const std::string& method,
                                            std::uint64_t seed, const std::string& config_digest) {
  std::vector<NamedSet> sets;
  for (const auto& [name, d] : ood_sets) sets.emplace_back(name, d.x);
  std::vector<DetectionReport> out;
  for (const auto& spec : specs) {
    DetectionReport r = detection_report(model, spec, id_test.x, id_test.y(), sets);
    r.method = method;
    r.seed = seed;
    r.config_digest = config_digest;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace oex
