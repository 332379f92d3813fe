#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "oex/random.hpp"
#include "oex/tensor.hpp"

namespace oex {

// Feature matrix with optional labels. Unlabeled sets hold auxiliary
// outliers and OOD test data.
struct Dataset {
  Tensor x;
  std::optional<std::vector<int>> labels;

  std::size_t size() const { return x.size() ? x.rows() : 0; }
  std::size_t dim() const { return x.rank() == 2 ? x.cols() : 0; }
  bool labeled() const { return labels.has_value(); }
  const std::vector<int>& y() const;
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Raw (unnormalized) generators.
Dataset gen_id_mixture_raw(std::size_t classes, std::size_t per_class, double radius, double sigma,
                           std::uint64_t seed);
// Annulus samples, uniform in area; the angle is confined to
// [arc_start, arc_start + 2 pi arc_fraction).
Dataset gen_arc_outliers_raw(double inner_r, double outer_r, double arc_fraction, std::size_t n, std::uint64_t seed,
                             double arc_start = 0.0);
Dataset gen_ring_ood_raw(double inner_r, double outer_r, std::size_t n, std::uint64_t seed);

struct MinMaxTransform {
  std::vector<double> min;
  std::vector<double> max;

  std::vector<std::size_t> constant_features() const;
  // Per-feature (v - min) / (max - min) clipped to [0, 1]; constant features map to 0.5.
  Tensor apply(const Tensor& x) const;
  Dataset apply(const Dataset& d) const;

  friend bool operator==(const MinMaxTransform&, const MinMaxTransform&) = default;
};

MinMaxTransform fit_min_max(const Tensor& reference);
nlohmann::json transform_to_json(const MinMaxTransform& t);
MinMaxTransform transform_from_json(const nlohmann::json& j);

struct Normalized {
  std::vector<Dataset> datasets;
  MinMaxTransform transform;
};
Normalized normalize_fit_apply(const Dataset& reference, const std::vector<Dataset>& targets);

// Self-normalized generators.
Dataset gen_id_mixture(std::size_t classes, std::size_t per_class, double radius, double sigma, std::uint64_t seed);
Dataset gen_arc_outliers(double inner_r, double outer_r, double arc_fraction, std::size_t n, std::uint64_t seed,
                         const MinMaxTransform& transform);
Dataset gen_ring_ood(double inner_r, double outer_r, std::size_t n, std::uint64_t seed,
                     const MinMaxTransform& transform);

// Header x0..x{d-1}[,label]; values printed with 17 significant digits.
void save_csv(const Dataset& d, const std::filesystem::path& path);
std::string to_csv(const Dataset& d);
Dataset load_csv(const std::filesystem::path& path);
Dataset parse_csv(const std::string& text, const std::string& source = "<memory>");

// Index batches for one epoch: a seeded shuffle of [0, m) cut into
// batch_size chunks, the short tail dropped when drop_last is set.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t m, std::size_t batch_size, std::uint64_t seed,
                                                    std::uint64_t epoch, bool drop_last);

// Cycles through shuffled epochs of a dataset so any number of batches can
// be drawn; pass k restarts with a fresh permutation.
class BatchCycler {
 public:
  BatchCycler(std::size_t m, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  std::size_t m_, batch_size_;
  std::uint64_t seed_, pass_ = 0;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

struct BenchmarkConfig {
  std::size_t classes = 3;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 200;
  double radius = 1.0;
  double sigma = 0.25;
  double inner_r = 2.0;
  double outer_r = 3.0;
  double arc_fraction = 0.25;
  double arc_start = 0.0;
  std::size_t aux_count = 600;
  std::size_t ood_count = 600;

  void validate() const;
};

struct Benchmark {
  Dataset id_train;
  Dataset id_test;
  Dataset aux;
  std::vector<std::pair<std::string, Dataset>> ood;
  MinMaxTransform transform;
};

// Normalization is fit on the ID training set together with the corners of
// the outer square (+-outer_r), so the outlier annulus stays unclipped.
Benchmark make_benchmark(const BenchmarkConfig& cfg, std::uint64_t seed);

}  // namespace oex
