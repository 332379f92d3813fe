#include "oex/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "oex/error.hpp"

namespace oex {

using nlohmann::json;

std::vector<std::size_t> RunConfig::model_dims() const {
  std::vector<std::size_t> dims{2};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(data.classes);
  return dims;
}

TrainConfig RunConfig::fine_tune_config() const {
  TrainConfig t = train;
  t.loss.kind = method_loss(method);
  t.seed = derive_seed(seed, "train");
  return t;
}

TrainConfig RunConfig::pretrain_config() const {
  TrainConfig t = train;
  t.epochs = pretrain_epochs;
  t.lr = pretrain_lr;
  t.loss.kind = LossKind::CrossEntropy;
  t.seed = derive_seed(seed, "pretrain");
  t.checkpoint_dir.reset();
  return t;
}

RunConfig default_run_config() {
  RunConfig cfg;
  cfg.train.epochs = 30;
  cfg.train.lr = 0.1;
  cfg.train.loss.lambda = 0.15;
  return cfg;
}

LossKind method_loss(const std::string& method) {
  try {
    return parse_loss_kind(method);
  } catch (const std::invalid_argument&) {
    throw ConfigError("unknown method '" + method + "' (expected ce, oe, energy or divoe)");
  }
}

json run_config_to_json(const RunConfig& cfg) {
  const auto& t = cfg.train;
  const auto& e = t.extrapolation;
  json pool = json::array();
  for (const auto& p : e.pool) pool.push_back({{"epsilon", p.epsilon}, {"fraction", p.fraction}});
  return {
      {"schema_version", kSchemaVersion},
      {"seed", cfg.seed},
      {"data",
       {{"classes", cfg.data.classes},
        {"train_per_class", cfg.data.train_per_class},
        {"test_per_class", cfg.data.test_per_class},
        {"radius", cfg.data.radius},
        {"sigma", cfg.data.sigma},
        {"inner_r", cfg.data.inner_r},
        {"outer_r", cfg.data.outer_r},
        {"arc_fraction", cfg.data.arc_fraction},
        {"arc_start", cfg.data.arc_start},
        {"aux_count", cfg.data.aux_count},
        {"ood_count", cfg.data.ood_count}}},
      {"model", {{"hidden", cfg.hidden}}},
      {"train",
       {{"method", cfg.method},
        {"epochs", t.epochs},
        {"lr", t.lr},
        {"momentum", t.momentum},
        {"weight_decay", t.weight_decay},
        {"id_batch", t.id_batch},
        {"outlier_batch", t.outlier_batch},
        {"lambda", t.loss.lambda},
        {"m_in", t.loss.m_in},
        {"m_out", t.loss.m_out},
        {"temperature", t.loss.temperature},
        {"sampler", sampler_name(t.sampler)},
        {"greedy_fraction", t.greedy_fraction},
        {"pretrain_epochs", cfg.pretrain_epochs},
        {"pretrain_lr", cfg.pretrain_lr}}},
      {"extrapolation",
       {{"ratio", e.ratio},
        {"epsilon", e.epsilon},
        {"steps", e.steps},
        {"step_size", e.step_size ? json(*e.step_size) : json(nullptr)},
        {"direction", direction_name(e.direction)},
        {"target", target_name(e.target)},
        {"temperature", e.temperature},
        {"domain_lo", e.domain_lo},
        {"domain_hi", e.domain_hi},
        {"pool", pool},
        {"threads", e.threads},
        {"epsilon_grid", cfg.epsilon_grid}}},
      {"scores", cfg.scores},
      {"outputs", {{"dir", cfg.out_dir}}},
      {"theory", gmm::theory_to_json(cfg.theory)},
  };
}

namespace {

bool compatible(const json& base, const json& value) {
  if (base.is_null()) return value.is_null() || value.is_number();
  if (base.is_number_float()) return value.is_number();
  if (base.is_number_unsigned()) return value.is_number_unsigned() || (value.is_number_integer() && value.get<std::int64_t>() >= 0);
  if (base.is_number_integer()) return value.is_number_integer();
  if (base.is_number()) return value.is_number();
  if (base.is_string()) return value.is_string();
  if (base.is_array()) return value.is_array();
  if (base.is_boolean()) return value.is_boolean();
  return base.type() == value.type();
}

// Fields that hold optional numbers default to null.
bool nullable(const std::string& path) { return path == "extrapolation.step_size"; }

void merge_strict(json& base, const json& overlay, const std::string& path) {
  if (!overlay.is_object()) throw ConfigError("config section '" + path + "' must be an object");
  for (const auto& [key, value] : overlay.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + full + "'");
    json& slot = base[key];
    if (slot.is_object()) {
      merge_strict(slot, value, full);
    } else if (nullable(full)) {
      if (!value.is_null() && !value.is_number()) throw ConfigError("config key '" + full + "' must be a number or null");
      slot = value;
    } else {
      if (!compatible(slot, value)) {
        throw ConfigError("config key '" + full + "' has the wrong type (expected " + std::string(slot.type_name()) +
                          ", got " + value.type_name() + ")");
      }
      slot = value;
    }
  }
}

template <typename T>
T field(const json& j, const char* key) {
  return j.at(key).get<T>();
}

RunConfig parse_complete(const json& j) {
  RunConfig cfg;
  if (j.at("schema_version").get<int>() != kSchemaVersion) {
    throw ConfigError("unsupported schema_version " + j.at("schema_version").dump());
  }
  cfg.seed = field<std::uint64_t>(j, "seed");
  const json& d = j.at("data");
  cfg.data.classes = field<std::size_t>(d, "classes");
  cfg.data.train_per_class = field<std::size_t>(d, "train_per_class");
  cfg.data.test_per_class = field<std::size_t>(d, "test_per_class");
  cfg.data.radius = field<double>(d, "radius");
  cfg.data.sigma = field<double>(d, "sigma");
  cfg.data.inner_r = field<double>(d, "inner_r");
  cfg.data.outer_r = field<double>(d, "outer_r");
  cfg.data.arc_fraction = field<double>(d, "arc_fraction");
  cfg.data.arc_start = field<double>(d, "arc_start");
  cfg.data.aux_count = field<std::size_t>(d, "aux_count");
  cfg.data.ood_count = field<std::size_t>(d, "ood_count");
  cfg.hidden = j.at("model").at("hidden").get<std::vector<std::size_t>>();

  const json& t = j.at("train");
  cfg.method = field<std::string>(t, "method");
  cfg.train.epochs = field<int>(t, "epochs");
  cfg.train.lr = field<double>(t, "lr");
  cfg.train.momentum = field<double>(t, "momentum");
  cfg.train.weight_decay = field<double>(t, "weight_decay");
  cfg.train.id_batch = field<std::size_t>(t, "id_batch");
  cfg.train.outlier_batch = field<std::size_t>(t, "outlier_batch");
  cfg.train.loss.lambda = field<double>(t, "lambda");
  cfg.train.loss.m_in = field<double>(t, "m_in");
  cfg.train.loss.m_out = field<double>(t, "m_out");
  cfg.train.loss.temperature = field<double>(t, "temperature");
  cfg.train.sampler = parse_sampler(field<std::string>(t, "sampler"));
  cfg.train.greedy_fraction = field<double>(t, "greedy_fraction");
  cfg.pretrain_epochs = field<int>(t, "pretrain_epochs");
  cfg.pretrain_lr = field<double>(t, "pretrain_lr");

  const json& e = j.at("extrapolation");
  auto& x = cfg.train.extrapolation;
  x.ratio = field<double>(e, "ratio");
  x.epsilon = field<double>(e, "epsilon");
  x.steps = field<int>(e, "steps");
  if (!e.at("step_size").is_null()) x.step_size = field<double>(e, "step_size");
  x.direction = parse_direction(field<std::string>(e, "direction"));
  x.target = parse_target(field<std::string>(e, "target"));
  x.temperature = field<double>(e, "temperature");
  x.domain_lo = field<double>(e, "domain_lo");
  x.domain_hi = field<double>(e, "domain_hi");
  for (const auto& p : e.at("pool")) {
    x.pool.push_back({field<double>(p, "epsilon"), field<double>(p, "fraction")});
  }
  x.threads = field<unsigned>(e, "threads");
  cfg.epsilon_grid = e.at("epsilon_grid").get<std::vector<double>>();

  cfg.scores = j.at("scores").get<std::vector<std::string>>();
  cfg.out_dir = j.at("outputs").at("dir").get<std::string>();
  cfg.theory = gmm::theory_from_json(j.at("theory"));
  return cfg;
}

void validate(const RunConfig& cfg) {
  cfg.data.validate();
  if (cfg.hidden.empty()) throw std::invalid_argument("model.hidden needs at least one layer");
  for (auto h : cfg.hidden) {
    if (h == 0) throw std::invalid_argument("model.hidden widths must be >= 1");
  }
  method_loss(cfg.method);
  cfg.fine_tune_config().validate();
  if (cfg.pretrain_epochs < 0) throw std::invalid_argument("train.pretrain_epochs must be >= 0");
  if (!(cfg.pretrain_lr >= 0.0)) throw std::invalid_argument("train.pretrain_lr must be >= 0");
  for (double eps : cfg.epsilon_grid) {
    if (!(eps >= 0.0)) throw std::invalid_argument("extrapolation.epsilon_grid values must be >= 0");
  }
  if (cfg.scores.empty()) throw std::invalid_argument("scores must name at least one score");
  for (const auto& s : cfg.scores) parse_score_kind(s);
  if (cfg.out_dir.empty()) throw std::invalid_argument("outputs.dir must be non-empty");
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  json merged = run_config_to_json(default_run_config());
  merge_strict(merged, j, "");
  try {
    RunConfig cfg = parse_complete(merged);
    validate(cfg);
    return cfg;
  } catch (const ConfigError&) {
    throw;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path.string() + "'");
  try {
    return run_config_from_json(json::parse(f));
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects KEY=VALUE, got '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json overlay = value;
  std::vector<std::string> parts;
  std::stringstream ss(key);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw ConfigError("malformed --set key '" + key + "'");
    parts.push_back(part);
  }
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) overlay = json{{*it, overlay}};
  json full = run_config_to_json(default_run_config());
  merge_strict(full, doc, "");
  merge_strict(full, overlay, "");
  doc = full;
}

std::string config_digest(const RunConfig& cfg) {
  json j = run_config_to_json(cfg);
  j.erase("outputs");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

Benchmark generate_benchmark(const RunConfig& cfg) { return make_benchmark(cfg.data, derive_seed(cfg.seed, "data")); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
  f << text;
  if (!f) throw DataError("write failed for '" + path.string() + "'");
}

void write_benchmark(const Benchmark& b, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create '" + dir.string() + "': " + ec.message());
  save_csv(b.id_train, dir / "id_train.csv");
  save_csv(b.id_test, dir / "id_test.csv");
  save_csv(b.aux, dir / "aux_out.csv");
  for (const auto& [name, d] : b.ood) save_csv(d, dir / ("ood_" + name + ".csv"));
  write_text(dir / "transform.json", transform_to_json(b.transform).dump(2) + "\n");
}

Benchmark read_benchmark(const std::filesystem::path& dir) {
  Benchmark b;
  b.id_train = load_csv(dir / "id_train.csv");
  b.id_test = load_csv(dir / "id_test.csv");
  b.aux = load_csv(dir / "aux_out.csv");
  if (!b.id_train.labeled() || !b.id_test.labeled()) throw DataError("ID splits must carry a label column");
  std::vector<std::filesystem::path> ood_files;
  std::error_code ec;
  for (const auto& entry : std::filesystem::directory_iterator(dir, ec)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("ood_", 0) == 0 && entry.path().extension() == ".csv") ood_files.push_back(entry.path());
  }
  if (ec) throw DataError("cannot list '" + dir.string() + "': " + ec.message());
  std::sort(ood_files.begin(), ood_files.end());
  if (ood_files.empty()) throw DataError("no ood_*.csv files in '" + dir.string() + "'");
  for (const auto& p : ood_files) {
    const std::string stem = p.stem().string();
    b.ood.emplace_back(stem.substr(4), load_csv(p));
  }
  std::ifstream tf(dir / "transform.json");
  if (tf) {
    try {
      b.transform = transform_from_json(json::parse(tf));
    } catch (const json::parse_error& e) {
      throw DataError(std::string("transform.json: ") + e.what());
    }
  }
  return b;
}

MlpClassifier pretrain(const RunConfig& cfg, const Benchmark& b) {
  MlpClassifier init = init_model(cfg.model_dims(), derive_seed(cfg.seed, "model"));
  return fine_tune(init, b.id_train, b.aux, cfg.pretrain_config()).model;
}

TrainedModels train_pipeline(const RunConfig& cfg, const Benchmark& b) {
  TrainedModels out;
  out.initial = pretrain(cfg, b);
  TrainResult r = fine_tune(out.initial, b.id_train, b.aux, cfg.fine_tune_config());
  out.fine_tuned = std::move(r.model);
  out.history = std::move(r.history);
  return out;
}

std::vector<DetectionReport> evaluate_pipeline(const RunConfig& cfg, const MlpClassifier& model, const Benchmark& b) {
  auto specs = prepare_scores(model, cfg.scores, b.id_train);
  return evaluate_suite(model, b.id_test, b.ood, specs, cfg.method, cfg.seed, config_digest(cfg));
}

ExtrapolationDump extrapolation_dump(const MlpClassifier& model, const Tensor& inputs, const ExtrapolationConfig& base,
                                     const std::vector<double>& epsilons) {
  ExtrapolationDump dump;
  const auto before_scores = energy_score(forward(model, inputs), 1.0);
  for (double eps : epsilons) {
    ExtrapolationConfig cfg = base;
    cfg.epsilon = eps;
    cfg.pool.clear();
    ExtrapolatedBatch batch = pgd_extrapolate(model, inputs, cfg);
    const auto after_scores = energy_score(forward(model, batch.synthesized), 1.0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      dump.rows.push_back({i, eps, batch.initial_loss[i], batch.final_loss[i], before_scores[i], after_scores[i]});
    }
    dump.synthesized.push_back(std::move(batch.synthesized));
  }
  return dump;
}

std::string extrapolation_rows_csv(const ExtrapolationDump& dump) {
  std::ostringstream out;
  out << "index,epsilon,loss_before,loss_after,score_before,score_after\n";
  for (const auto& r : dump.rows) {
    out << r.index << ',' << format_double(r.epsilon) << ',' << format_double(r.loss_before) << ','
        << format_double(r.loss_after) << ',' << format_double(r.score_before) << ',' << format_double(r.score_after)
        << '\n';
  }
  return out.str();
}

std::string synthesized_csv(const ExtrapolationDump& dump, const std::vector<double>& epsilons) {
  std::ostringstream out;
  const std::size_t dim = dump.synthesized.empty() ? 0 : dump.synthesized.front().cols();
  out << "epsilon,index";
  for (std::size_t j = 0; j < dim; ++j) out << ",x" << j;
  out << '\n';
  for (std::size_t k = 0; k < dump.synthesized.size(); ++k) {
    const Tensor& t = dump.synthesized[k];
    for (std::size_t r = 0; r < (t.size() ? t.rows() : 0); ++r) {
      out << format_double(epsilons[k]) << ',' << r;
      for (std::size_t j = 0; j < dim; ++j) out << ',' << format_double(t(r, j));
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace oex
