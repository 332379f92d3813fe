#include "oex/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "oex/error.hpp"

namespace oex::gmm {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace

double GmmSpec::mu_norm() const { return norm(mu); }

void GmmSpec::validate() const {
  if (mu.empty()) throw std::invalid_argument("gmm: mu must have at least one coordinate");
  for (double v : mu) {
    if (!std::isfinite(v)) throw std::invalid_argument("gmm: mu must be finite");
  }
  if (!(mu_norm() > 0.0)) throw std::invalid_argument("gmm: |mu| must be positive");
  if (!(sigma > 0.0 && std::isfinite(sigma))) throw std::invalid_argument("gmm: sigma must be positive");
}

void TheoryParams::validate() const {
  if (n == 0 || n1 == 0 || n2 == 0) throw std::invalid_argument("theory: n, n1, n2 must be >= 1");
  if (!(alpha_c - tau >= 0.0)) throw std::invalid_argument("theory: alpha_c - tau must be non-negative");
  if (!(tau >= 0.0)) throw std::invalid_argument("theory: tau must be non-negative");
  if (retry_budget == 0) throw std::invalid_argument("theory: retry budget must be >= 1");
}

std::pair<Tensor, Tensor> sample_gmm(const GmmSpec& spec, std::size_t n1, std::size_t n2, Rng& rng) {
  spec.validate();
  if (n1 == 0 || n2 == 0) throw std::invalid_argument("sample_gmm: n1 and n2 must be >= 1");
  const std::size_t d = spec.dim();
  Tensor id(Shape{n1, d}), out(Shape{n2, d});
  for (std::size_t r = 0; r < n1; ++r) {
    for (std::size_t j = 0; j < d; ++j) id(r, j) = spec.mu[j] + spec.sigma * rng.normal();
  }
  for (std::size_t r = 0; r < n2; ++r) {
    for (std::size_t j = 0; j < d; ++j) out(r, j) = -spec.mu[j] + spec.sigma * rng.normal();
  }
  return {std::move(id), std::move(out)};
}

std::vector<double> theta_star(const Tensor& x_id, const Tensor& x_out) {
  if (x_id.size() == 0 || x_out.size() == 0) throw std::invalid_argument("theta_star: empty sample set");
  if (x_id.cols() != x_out.cols()) throw std::invalid_argument("theta_star: dimension mismatch");
  std::vector<double> theta(x_id.cols(), 0.0);
  for (std::size_t r = 0; r < x_id.rows(); ++r) {
    for (std::size_t j = 0; j < theta.size(); ++j) theta[j] += x_id(r, j);
  }
  for (std::size_t r = 0; r < x_out.rows(); ++r) {
    for (std::size_t j = 0; j < theta.size(); ++j) theta[j] -= x_out(r, j);
  }
  const double total = static_cast<double>(x_id.rows() + x_out.rows());
  for (auto& v : theta) v /= total;
  return theta;
}

double separation_ratio(const std::vector<double>& theta, const std::vector<double>& mu, double sigma) {
  if (theta.size() != mu.size()) throw std::invalid_argument("separation ratio: dimension mismatch");
  const double tn = norm(theta);
  if (!(tn > 0.0)) throw std::invalid_argument("separation ratio: theta must be non-zero");
  return dot(mu, theta) / (sigma * tn);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double analytic_fpr(const std::vector<double>& theta, const std::vector<double>& mu, double sigma) {
  return normal_cdf(-separation_ratio(theta, mu, sigma));
}

double bound_rhs(double mu_norm, double sigma, double n, double d, double alpha_c, double tau) {
  const double numerator = mu_norm * mu_norm - std::sqrt(sigma) * std::pow(mu_norm, 1.5) -
                           sigma * sigma * (alpha_c - tau) / 2.0;
  const double denominator = 2.0 * std::sqrt(sigma * sigma / n * (d + 1.0 / sigma) + mu_norm * mu_norm);
  return numerator / denominator;
}

double boundary_margin(const Tensor& x_out, const std::vector<double>& mu, double sigma) {
  if (x_out.size() == 0) throw std::invalid_argument("boundary_margin: empty outlier set");
  if (x_out.cols() != mu.size()) throw std::invalid_argument("boundary_margin: dimension mismatch");
  double total = 0.0;
  for (std::size_t r = 0; r < x_out.rows(); ++r) total += std::fabs(2.0 * dot(x_out.row(r), mu));
  return total / (static_cast<double>(x_out.rows()) * sigma * sigma);
}

double truncated_normal(double lo, double hi, Rng& rng, std::size_t budget) {
  if (!(lo <= hi)) throw std::invalid_argument("truncated_normal: empty interval");
  if (lo == hi) return lo;
  if (hi <= 0.0) return -truncated_normal(-hi, -lo, rng, budget);
  for (std::size_t attempt = 0; attempt < budget; ++attempt) {
    double z;
    if (lo < 0.0) {
      if (hi - lo < 2.5) {
        z = rng.uniform(lo, hi);
        if (rng.uniform() <= std::exp(-0.5 * z * z)) return z;
      } else {
        z = rng.normal();
        if (z >= lo && z <= hi) return z;
      }
    } else if (lo * (hi - lo) < 1.0) {
      z = rng.uniform(lo, hi);
      if (rng.uniform() <= std::exp(0.5 * (lo * lo - z * z))) return z;
    } else {
      const double rate = 0.5 * (lo + std::sqrt(lo * lo + 4.0));
      z = lo - std::log1p(-rng.uniform()) / rate;
      if (z <= hi && rng.uniform() <= std::exp(-0.5 * (z - rate) * (z - rate))) return z;
    }
  }
  throw NumericError("truncated normal on [" + std::to_string(lo) + ", " + std::to_string(hi) + "] exhausted " +
                     std::to_string(budget) + " proposals");
}

Tensor sample_feasible_outliers(const GmmSpec& spec, const TheoryParams& params, Rng& rng) {
  spec.validate();
  params.validate();
  const std::size_t d = spec.dim();
  const double mn = spec.mu_norm(), s = spec.sigma;
  const double c = s * s * (params.alpha_c - params.tau) / 2.0;
  // coordinate of (x + mu) / sigma along mu/|mu|
  const double lo = (mn * mn - c) / (s * mn);
  const double hi = (mn * mn + c) / (s * mn);
  std::vector<double> u(spec.mu);
  for (auto& v : u) v /= mn;
  Tensor out(Shape{params.n2, d});
  std::vector<double> g(d);
  for (std::size_t r = 0; r < params.n2; ++r) {
    const double z = truncated_normal(lo, hi, rng, params.retry_budget);
    for (auto& v : g) v = rng.normal();
    const double along = dot(g, u);
    for (std::size_t j = 0; j < d; ++j) out(r, j) = -spec.mu[j] + s * (g[j] - along * u[j] + z * u[j]);
  }
  return out;
}

VerifyResult verify_bound(const GmmSpec& spec, const TheoryParams& params, std::size_t trials, std::uint64_t seed,
                          unsigned threads) {
  spec.validate();
  params.validate();
  if (trials == 0) throw std::invalid_argument("verify_bound: trials must be >= 1");
  if (threads == 0) throw std::invalid_argument("verify_bound: threads must be >= 1");
  const double rhs = bound_rhs(spec.mu_norm(), spec.sigma, static_cast<double>(params.n),
                               static_cast<double>(spec.dim()), params.alpha_c, params.tau);
  VerifyResult result;
  result.trials.resize(trials);
  auto run_trial = [&](std::size_t t) {
    Rng rng(derive_seed(seed, "theory", t));
    Tensor x_id(Shape{params.n1, spec.dim()});
    for (std::size_t r = 0; r < params.n1; ++r) {
      for (std::size_t j = 0; j < spec.dim(); ++j) x_id(r, j) = spec.mu[j] + spec.sigma * rng.normal();
    }
    Tensor x_out = sample_feasible_outliers(spec, params, rng);
    const double ratio = separation_ratio(theta_star(x_id, x_out), spec.mu, spec.sigma);
    result.trials[t] = {t, ratio, rhs, boundary_margin(x_out, spec.mu, spec.sigma), ratio >= rhs};
  };
  const std::size_t workers = std::min<std::size_t>(threads, trials);
  if (workers == 1) {
    for (std::size_t t = 0; t < trials; ++t) run_trial(t);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t t = w; t < trials; t += workers) run_trial(t);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  std::size_t violations = 0;
  for (const auto& r : result.trials) violations += !r.satisfied;
  result.violation_fraction = static_cast<double>(violations) / static_cast<double>(trials);
  return result;
}

nlohmann::json theory_to_json(const TheoryConfig& cfg) {
  return {{"mu", cfg.spec.mu},
          {"sigma", cfg.spec.sigma},
          {"n", cfg.params.n},
          {"n1", cfg.params.n1},
          {"n2", cfg.params.n2},
          {"alpha_c", cfg.params.alpha_c},
          {"tau", cfg.params.tau},
          {"retry_budget", cfg.params.retry_budget},
          {"trials", cfg.trials},
          {"tau_grid", cfg.tau_grid}};
}

TheoryConfig theory_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> keys{"mu",  "sigma", "n",           "n1",     "n2",
                                             "alpha_c", "tau", "retry_budget", "trials", "tau_grid"};
  TheoryConfig cfg = frozen_theory_config();
  if (!j.is_object()) throw ConfigError("theory config must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) throw ConfigError("unknown theory key '" + key + "'");
  }
  try {
    if (j.contains("mu")) cfg.spec.mu = j.at("mu").get<std::vector<double>>();
    if (j.contains("sigma")) cfg.spec.sigma = j.at("sigma").get<double>();
    if (j.contains("n")) cfg.params.n = j.at("n").get<std::size_t>();
    if (j.contains("n1")) cfg.params.n1 = j.at("n1").get<std::size_t>();
    if (j.contains("n2")) cfg.params.n2 = j.at("n2").get<std::size_t>();
    if (j.contains("alpha_c")) cfg.params.alpha_c = j.at("alpha_c").get<double>();
    if (j.contains("tau")) cfg.params.tau = j.at("tau").get<double>();
    if (j.contains("retry_budget")) cfg.params.retry_budget = j.at("retry_budget").get<std::size_t>();
    if (j.contains("trials")) cfg.trials = j.at("trials").get<std::size_t>();
    if (j.contains("tau_grid")) cfg.tau_grid = j.at("tau_grid").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("theory config: ") + e.what());
  }
  try {
    cfg.spec.validate();
    cfg.params.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

TheoryConfig frozen_theory_config() {
  TheoryConfig cfg;
  cfg.spec.mu = std::vector<double>(8, 0.0);
  cfg.spec.mu[0] = 4.0;
  cfg.spec.sigma = 1.0;
  cfg.params = TheoryParams{500, 500, 500, 2.0, 1.0, 10000};
  cfg.trials = 100;
  for (int i = 0; i < 10; ++i) cfg.tau_grid.push_back(0.2 * i);
  return cfg;
}

}  // namespace oex::gmm
