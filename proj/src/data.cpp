#include "oex/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "oex/error.hpp"
#include "oex/metrics.hpp"

namespace oex {

const std::vector<int>& Dataset::y() const {
  if (!labels) throw std::logic_error("dataset has no labels");
  return *labels;
}

void Dataset::validate() const {
  if (x.rank() != 2) throw DataError("dataset features must be a matrix");
  if (labels && labels->size() != size()) {
    throw DataError("dataset has " + std::to_string(size()) + " rows but " + std::to_string(labels->size()) +
                    " labels");
  }
  if (labels) {
    for (int v : *labels) {
      if (v < 0) throw DataError("dataset label " + std::to_string(v) + " is negative");
    }
  }
  if (!x.all_finite()) throw DataError("dataset contains non-finite values");
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.x = indices.empty() ? Tensor(Shape{0, dim()}) : x.select_rows(indices);
  if (labels) {
    std::vector<int> y;
    y.reserve(indices.size());
    for (std::size_t i : indices) y.push_back((*labels)[i]);
    out.labels = std::move(y);
  }
  return out;
}

Dataset gen_id_mixture_raw(std::size_t classes, std::size_t per_class, double radius, double sigma,
                           std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("gen_id_mixture: need at least 2 classes");
  if (!(radius >= 0.0) || !(sigma >= 0.0)) throw std::invalid_argument("gen_id_mixture: radius and sigma must be >= 0");
  Rng rng(derive_seed(seed, "id_mixture"));
  Dataset d;
  d.x = Tensor(Shape{classes * per_class, 2});
  d.labels.emplace();
  std::size_t r = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
    const double cx = radius * std::cos(angle), cy = radius * std::sin(angle);
    for (std::size_t i = 0; i < per_class; ++i, ++r) {
      d.x(r, 0) = cx + sigma * rng.normal();
      d.x(r, 1) = cy + sigma * rng.normal();
      d.labels->push_back(static_cast<int>(c));
    }
  }
  return d;
}

Dataset gen_arc_outliers_raw(double inner_r, double outer_r, double arc_fraction, std::size_t n, std::uint64_t seed,
                             double arc_start) {
  if (!(inner_r > 0.0 && inner_r < outer_r)) throw std::invalid_argument("annulus: need 0 < inner_r < outer_r");
  if (!(arc_fraction > 0.0 && arc_fraction <= 1.0)) throw std::invalid_argument("annulus: arc_fraction must be in (0, 1]");
  Rng rng(derive_seed(seed, "annulus"));
  Dataset d;
  d.x = Tensor(Shape{n, 2});
  const double width = 2.0 * std::numbers::pi * arc_fraction;
  for (std::size_t i = 0; i < n; ++i) {
    const double rad = std::sqrt(rng.uniform(inner_r * inner_r, outer_r * outer_r));
    const double angle = arc_start + rng.uniform(0.0, width);
    d.x(i, 0) = std::clamp(rad, inner_r, outer_r) * std::cos(angle);
    d.x(i, 1) = std::clamp(rad, inner_r, outer_r) * std::sin(angle);
  }
  return d;
}

Dataset gen_ring_ood_raw(double inner_r, double outer_r, std::size_t n, std::uint64_t seed) {
  return gen_arc_outliers_raw(inner_r, outer_r, 1.0, n, seed);
}

std::vector<std::size_t> MinMaxTransform::constant_features() const {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < min.size(); ++j) {
    if (!(max[j] > min[j])) out.push_back(j);
  }
  return out;
}

Tensor MinMaxTransform::apply(const Tensor& x) const {
  if (x.size() == 0) return x;
  if (x.cols() != min.size()) {
    throw DataError("transform expects " + std::to_string(min.size()) + " features, got " + std::to_string(x.cols()));
  }
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < min.size(); ++j) {
      const double range = max[j] - min[j];
      out(r, j) = range > 0.0 ? std::clamp((x(r, j) - min[j]) / range, 0.0, 1.0) : 0.5;
    }
  }
  return out;
}

Dataset MinMaxTransform::apply(const Dataset& d) const { return Dataset{apply(d.x), d.labels}; }

MinMaxTransform fit_min_max(const Tensor& reference) {
  if (reference.size() == 0) throw DataError("normalization reference is empty");
  MinMaxTransform t{std::vector<double>(reference.cols()), std::vector<double>(reference.cols())};
  for (std::size_t j = 0; j < reference.cols(); ++j) {
    t.min[j] = t.max[j] = reference(0, j);
    for (std::size_t r = 1; r < reference.rows(); ++r) {
      t.min[j] = std::min(t.min[j], reference(r, j));
      t.max[j] = std::max(t.max[j], reference(r, j));
    }
  }
  return t;
}

nlohmann::json transform_to_json(const MinMaxTransform& t) {
  return {{"min", t.min}, {"max", t.max}, {"constant_features", t.constant_features()}};
}

MinMaxTransform transform_from_json(const nlohmann::json& j) {
  try {
    MinMaxTransform t{j.at("min").get<std::vector<double>>(), j.at("max").get<std::vector<double>>()};
    if (t.min.size() != t.max.size()) throw DataError("transform min/max length mismatch");
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed transform: ") + e.what());
  }
}

Normalized normalize_fit_apply(const Dataset& reference, const std::vector<Dataset>& targets) {
  Normalized out;
  out.transform = fit_min_max(reference.x);
  for (const auto& t : targets) out.datasets.push_back(out.transform.apply(t));
  return out;
}

Dataset gen_id_mixture(std::size_t classes, std::size_t per_class, double radius, double sigma, std::uint64_t seed) {
  Dataset raw = gen_id_mixture_raw(classes, per_class, radius, sigma, seed);
  if (raw.size() == 0) return raw;
  return fit_min_max(raw.x).apply(raw);
}

Dataset gen_arc_outliers(double inner_r, double outer_r, double arc_fraction, std::size_t n, std::uint64_t seed,
                         const MinMaxTransform& transform) {
  return transform.apply(gen_arc_outliers_raw(inner_r, outer_r, arc_fraction, n, seed));
}

Dataset gen_ring_ood(double inner_r, double outer_r, std::size_t n, std::uint64_t seed,
                     const MinMaxTransform& transform) {
  return transform.apply(gen_ring_ood_raw(inner_r, outer_r, n, seed));
}

std::string to_csv(const Dataset& d) {
  std::ostringstream out;
  const std::size_t dim = d.dim();
  for (std::size_t j = 0; j < dim; ++j) out << (j ? "," : "") << 'x' << j;
  if (d.labeled()) out << (dim ? "," : "") << "label";
  out << '\n';
  for (std::size_t r = 0; r < d.size(); ++r) {
    for (std::size_t j = 0; j < dim; ++j) out << (j ? "," : "") << format_double(d.x(r, j));
    if (d.labeled()) out << ',' << (*d.labels)[r];
    out << '\n';
  }
  return out.str();
}

void save_csv(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
  f << to_csv(d);
  if (!f) throw DataError("write failed for '" + path.string() + "'");
}

namespace {

std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

Dataset parse_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) -> DataError {
    return DataError(source + ", line " + std::to_string(line_no) + ": " + why);
  };
  if (!std::getline(in, line)) {
    line_no = 1;
    throw fail("missing header");
  }
  ++line_no;
  auto header = split(trim(line));
  bool labeled = false;
  std::size_t dim = header.size();
  if (!header.empty() && trim(header.back()) == "label") {
    labeled = true;
    --dim;
  }
  for (std::size_t j = 0; j < dim; ++j) {
    if (trim(header[j]).empty() || trim(header[j]) == "label") throw fail("bad feature column name");
  }
  std::vector<double> values;
  std::vector<int> labels;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (view.empty()) continue;
    auto fields = split(view);
    if (fields.size() != header.size()) {
      throw fail("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
    }
    for (std::size_t j = 0; j < dim; ++j) {
      auto f = trim(fields[j]);
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size()) throw fail("malformed number '" + std::string(f) + "'");
      if (!std::isfinite(v)) throw fail("non-finite value");
      values.push_back(v);
    }
    if (labeled) {
      auto f = trim(fields.back());
      int v = 0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || v < 0) throw fail("malformed label '" + std::string(f) + "'");
      labels.push_back(v);
    }
    ++rows;
  }
  Dataset d;
  d.x = Tensor(Shape{rows, dim}, std::move(values));
  if (labeled) d.labels = std::move(labels);
  return d;
}

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_csv(ss.str(), path.string());
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t m, std::size_t batch_size, std::uint64_t seed,
                                                    std::uint64_t epoch, bool drop_last) {
  if (batch_size == 0) throw std::invalid_argument("batches: batch_size must be >= 1");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "epoch", epoch));
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < m; start += batch_size) {
    const std::size_t end = std::min(m, start + batch_size);
    if (drop_last && end - start < batch_size) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

BatchCycler::BatchCycler(std::size_t m, std::size_t batch_size, std::uint64_t seed)
    : m_(m), batch_size_(batch_size), seed_(seed) {
  if (batch_size == 0) throw std::invalid_argument("batches: batch_size must be >= 1");
}

std::vector<std::size_t> BatchCycler::next() {
  std::vector<std::size_t> out;
  if (m_ == 0) return out;
  while (out.size() < batch_size_) {
    if (pos_ == order_.size()) {
      order_.resize(m_);
      std::iota(order_.begin(), order_.end(), 0);
      Rng rng(derive_seed(seed_, "cycle", pass_++));
      rng.shuffle(order_);
      pos_ = 0;
    }
    out.push_back(order_[pos_++]);
  }
  return out;
}

void BenchmarkConfig::validate() const {
  if (classes < 2) throw std::invalid_argument("benchmark: classes must be >= 2");
  if (train_per_class == 0 || test_per_class == 0) throw std::invalid_argument("benchmark: empty ID split");
  if (!(sigma >= 0.0 && radius >= 0.0)) throw std::invalid_argument("benchmark: radius and sigma must be >= 0");
  if (!(inner_r > 0.0 && inner_r < outer_r)) throw std::invalid_argument("benchmark: need 0 < inner_r < outer_r");
  if (!(arc_fraction > 0.0 && arc_fraction <= 1.0)) throw std::invalid_argument("benchmark: arc_fraction must be in (0, 1]");
  if (aux_count == 0 || ood_count == 0) throw std::invalid_argument("benchmark: outlier sets must be non-empty");
}

Benchmark make_benchmark(const BenchmarkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Dataset train = gen_id_mixture_raw(cfg.classes, cfg.train_per_class, cfg.radius, cfg.sigma, derive_seed(seed, "id_train"));
  Dataset test = gen_id_mixture_raw(cfg.classes, cfg.test_per_class, cfg.radius, cfg.sigma, derive_seed(seed, "id_test"));
  Dataset aux = gen_arc_outliers_raw(cfg.inner_r, cfg.outer_r, cfg.arc_fraction, cfg.aux_count, derive_seed(seed, "aux"),
                                     cfg.arc_start);
  Dataset ring = gen_ring_ood_raw(cfg.inner_r, cfg.outer_r, cfg.ood_count, derive_seed(seed, "ood_ring"));

  Tensor frame(Shape{train.size() + 4, 2});
  std::copy(train.x.values().begin(), train.x.values().end(), frame.values().begin());
  const double corners[4][2] = {{-1, -1}, {-1, 1}, {1, -1}, {1, 1}};
  for (std::size_t k = 0; k < 4; ++k) {
    frame(train.size() + k, 0) = corners[k][0] * cfg.outer_r;
    frame(train.size() + k, 1) = corners[k][1] * cfg.outer_r;
  }
  Benchmark b;
  b.transform = fit_min_max(frame);
  b.id_train = b.transform.apply(train);
  b.id_test = b.transform.apply(test);
  b.aux = b.transform.apply(aux);
  b.ood.emplace_back("ring", b.transform.apply(ring));
  return b;
}

}  // namespace oex
