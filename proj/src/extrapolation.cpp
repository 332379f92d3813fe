#include "oex/extrapolation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "oex/autodiff.hpp"
#include "oex/error.hpp"
#include "oex/losses.hpp"
#include "oex/scoring.hpp"

namespace oex {

std::string direction_name(Direction d) { return d == Direction::Maximize ? "maximize" : "minimize"; }

Direction parse_direction(const std::string& name) {
  if (name == "maximize") return Direction::Maximize;
  if (name == "minimize") return Direction::Minimize;
  throw std::invalid_argument("unknown direction '" + name + "'");
}

std::string target_name(Target t) {
  switch (t) {
    case Target::UniformLoss: return "uniform";
    case Target::MSP: return "msp";
    case Target::Energy: return "energy";
  }
  return "?";
}

Target parse_target(const std::string& name) {
  static const std::map<std::string, Target> targets{
      {"uniform", Target::UniformLoss}, {"msp", Target::MSP}, {"energy", Target::Energy}};
  auto it = targets.find(name);
  if (it == targets.end()) throw std::invalid_argument("unknown extrapolation target '" + name + "'");
  return it->second;
}

void ExtrapolationConfig::validate() const {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("extrapolation: ratio must be in [0, 1]");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("extrapolation: epsilon must be non-negative");
  if (steps < 0) throw std::invalid_argument("extrapolation: steps must be non-negative");
  if (step_size && !(*step_size > 0.0)) throw std::invalid_argument("extrapolation: step size must be positive");
  if (!(temperature > 0.0)) throw std::invalid_argument("extrapolation: temperature must be positive");
  if (!(domain_lo < domain_hi)) throw std::invalid_argument("extrapolation: empty domain");
  if (threads == 0) throw std::invalid_argument("extrapolation: threads must be >= 1");
  if (!pool.empty()) {
    double total = 0.0;
    for (const auto& e : pool) {
      if (!(e.epsilon >= 0.0)) throw std::invalid_argument("extrapolation: pool epsilon must be non-negative");
      if (!(e.fraction >= 0.0)) throw std::invalid_argument("extrapolation: pool fraction must be non-negative");
      total += e.fraction;
    }
    if (std::fabs(total - 1.0) > 1e-9) throw std::invalid_argument("extrapolation: pool fractions must sum to 1");
  }
}

double ExtrapolationConfig::alpha() const {
  if (step_size) return *step_size;
  return steps > 0 ? 2.0 * epsilon / steps : 0.0;
}

std::vector<PoolEntry> ExtrapolationConfig::pool_entries() const {
  if (pool.empty()) return {PoolEntry{epsilon, 1.0}};
  return pool;
}

namespace {

// Interval [origin - eps, origin + eps] shrunk by rounding so every member
// stays within eps of origin when measured in floating point.
std::pair<double, double> ball_bounds(double origin, double eps, double lo, double hi) {
  double a = origin - eps, b = origin + eps;
  while (origin - a > eps) a = std::nextafter(a, origin);
  while (b - origin > eps) b = std::nextafter(b, origin);
  return {std::max(lo, a), std::min(hi, b)};
}

struct TargetGraph {
  ad::Expr rows;
  ad::Expr root;
};

TargetGraph target_graph(const MlpClassifier& model, const ExtrapolationConfig& cfg, const Tensor& x) {
  ad::Expr logits = logits_expr(model, ad::input("x"));
  ad::Expr rows;
  switch (cfg.target) {
    case Target::UniformLoss:
      rows = loss::uniform_rows(logits);
      break;
    case Target::Energy:
      rows = ad::affine(loss::free_energy_rows(logits, cfg.temperature), -1.0, 0.0);
      break;
    case Target::MSP: {
      // max softmax, differentiated through the current arg-max class
      Tensor f = forward(model, x);
      Tensor mask(f.shape(), 0.0);
      for (std::size_t r = 0; r < f.rows(); ++r) mask(r, argmax_row(f.row(r))) = 1.0;
      rows = ad::sum(ad::mul(ad::constant(std::move(mask)), ad::softmax(logits, 1)), 1);
      break;
    }
  }
  return {rows, ad::sum(rows)};
}

struct ChunkResult {
  Tensor synthesized;
  std::vector<double> initial, final;
  std::vector<std::size_t> flagged;  // chunk-local
};

void require_in_domain(const Tensor& x, double lo, double hi) {
  for (double v : x.values()) {
    if (!(v >= lo && v <= hi)) {
      throw std::invalid_argument("extrapolation: origin outside domain [" + std::to_string(lo) + ", " +
                                  std::to_string(hi) + "]");
    }
  }
}

ChunkResult ascend(const MlpClassifier& model, const Tensor& x0, const ExtrapolationConfig& cfg) {
  const std::size_t m = x0.rows(), d = x0.cols();
  const double eps = cfg.epsilon, alpha = cfg.alpha();
  const double sign = cfg.direction == Direction::Maximize ? 1.0 : -1.0;

  ad::Bindings bindings;
  model.bind(bindings);
  Tensor current = x0;
  ChunkResult out{x0, {}, {}, {}};
  std::vector<double> best;
  for (int t = 0; t <= cfg.steps; ++t) {
    bindings.insert_or_assign("x", current);
    TargetGraph graph = target_graph(model, cfg, current);
    ad::Evaluation ev(graph.root, bindings);
    const Tensor& rows = ev.value(graph.rows);
    if (t == 0) {
      out.initial = rows.data();
      best = rows.data();
    } else {
      for (std::size_t r = 0; r < m; ++r) {
        const bool better = cfg.direction == Direction::Maximize ? rows[r] > best[r] : rows[r] < best[r];
        if (better) {
          best[r] = rows[r];
          std::copy(current.row(r).begin(), current.row(r).end(), out.synthesized.row(r).begin());
        }
      }
    }
    if (t == cfg.steps) break;
    Tensor grad = ev.backward({"x"}).at("x");
    if (!grad.all_finite()) throw NumericError("extrapolation: non-finite input gradient");
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t j = 0; j < d; ++j) {
        const double g = grad(r, j);
        const double s = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
        const double origin = x0(r, j);
        const auto [lo, hi] = ball_bounds(origin, eps, cfg.domain_lo, cfg.domain_hi);
        current(r, j) = std::clamp(current(r, j) + sign * alpha * s, lo, hi);
      }
    }
  }
  out.final = std::move(best);
  return out;
}

// Falls back to row-by-row processing when a block hits a non-finite
// value, so a single bad sample only flags itself.
ChunkResult ascend_guarded(const MlpClassifier& model, const Tensor& x0, const ExtrapolationConfig& cfg) {
  try {
    return ascend(model, x0, cfg);
  } catch (const NumericError&) {
    if (x0.rows() <= 1) {
      const double nan = std::numeric_limits<double>::quiet_NaN();
      return ChunkResult{x0, {nan}, {nan}, {0}};
    }
  }
  ChunkResult out{x0, {}, {}, {}};
  for (std::size_t r = 0; r < x0.rows(); ++r) {
    const std::size_t idx[] = {r};
    ChunkResult one = ascend_guarded(model, x0.select_rows(idx), cfg);
    std::copy(one.synthesized.values().begin(), one.synthesized.values().end(), out.synthesized.row(r).begin());
    out.initial.push_back(one.initial[0]);
    out.final.push_back(one.final[0]);
    if (!one.flagged.empty()) out.flagged.push_back(r);
  }
  return out;
}

}  // namespace

std::vector<double> target_values(const MlpClassifier& model, const Tensor& x, const ExtrapolationConfig& cfg) {
  if (x.rows() == 0 || x.size() == 0) return {};
  ad::Bindings bindings{{"x", x}};
  model.bind(bindings);
  TargetGraph graph = target_graph(model, cfg, x);
  return ad::evaluate(graph.rows, bindings).data();
}

ExtrapolatedBatch pgd_extrapolate(const MlpClassifier& model, const Tensor& x0, const ExtrapolationConfig& cfg) {
  cfg.validate();
  ExtrapolatedBatch out;
  out.origins = x0;
  out.synthesized = x0;
  const std::size_t m = x0.size() ? x0.rows() : 0;
  out.epsilon_used.assign(m, cfg.epsilon);
  if (m == 0) return out;
  require_in_domain(x0, cfg.domain_lo, cfg.domain_hi);

  if (cfg.steps == 0 || cfg.epsilon == 0.0) {
    try {
      out.initial_loss = target_values(model, x0, cfg);
    } catch (const NumericError&) {
      out.initial_loss.assign(m, std::numeric_limits<double>::quiet_NaN());
      for (std::size_t r = 0; r < m; ++r) out.flagged.push_back(r);
    }
    out.final_loss = out.initial_loss;
    return out;
  }

  const std::size_t workers = std::min<std::size_t>(cfg.threads, m);
  std::vector<std::size_t> bounds(workers + 1, 0);
  for (std::size_t w = 0; w <= workers; ++w) bounds[w] = m * w / workers;
  std::vector<ChunkResult> parts(workers);
  auto run = [&](std::size_t w) {
    std::vector<std::size_t> idx(bounds[w + 1] - bounds[w]);
    std::iota(idx.begin(), idx.end(), bounds[w]);
    parts[w] = ascend_guarded(model, x0.select_rows(idx), cfg);
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          run(w);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  for (std::size_t w = 0; w < workers; ++w) {
    const auto& p = parts[w];
    std::copy(p.synthesized.values().begin(), p.synthesized.values().end(),
              out.synthesized.values().begin() + static_cast<std::ptrdiff_t>(bounds[w] * x0.cols()));
    out.initial_loss.insert(out.initial_loss.end(), p.initial.begin(), p.initial.end());
    out.final_loss.insert(out.final_loss.end(), p.final.begin(), p.final.end());
    for (std::size_t f : p.flagged) out.flagged.push_back(bounds[w] + f);
  }
  return out;
}

SubbatchSplit select_subbatch(std::size_t n, double ratio, Rng& rng) {
  const std::size_t k = extrapolated_count(n, ratio);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  // partial Fisher-Yates: the first k slots become a uniform k-subset
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t j = i + rng.index(n - i);
    std::swap(perm[i], perm[j]);
  }
  SubbatchSplit split;
  split.selected.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
  split.untouched.assign(perm.begin() + static_cast<std::ptrdiff_t>(k), perm.end());
  std::sort(split.selected.begin(), split.selected.end());
  std::sort(split.untouched.begin(), split.untouched.end());
  return split;
}

std::vector<std::size_t> apportion(const std::vector<double>& fractions, std::size_t total) {
  if (fractions.empty()) throw std::invalid_argument("apportion: empty fraction list");
  std::vector<std::size_t> sizes(fractions.size());
  std::vector<double> remainder(fractions.size());
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double exact = fractions[i] * static_cast<double>(total);
    sizes[i] = static_cast<std::size_t>(std::floor(exact));
    remainder[i] = exact - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  std::vector<std::size_t> order(fractions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % order.size()) {
    ++sizes[order[i]];
    ++assigned;
  }
  while (assigned > total) {
    // floating noise can push floor(f * total) over; trim from the end
    for (std::size_t i = sizes.size(); i-- > 0 && assigned > total;) {
      if (sizes[i]) {
        --sizes[i];
        --assigned;
      }
    }
  }
  return sizes;
}

ExtrapolatedBatch build_extrapolation_pool(const MlpClassifier& model, const Tensor& subbatch,
                                           const ExtrapolationConfig& cfg) {
  cfg.validate();
  const auto entries = cfg.pool_entries();
  if (entries.empty()) throw std::invalid_argument("extrapolation pool: empty pool spec");
  if (entries.size() == 1) {
    ExtrapolationConfig single = cfg;
    single.epsilon = entries[0].epsilon;
    single.pool.clear();
    return pgd_extrapolate(model, subbatch, single);
  }
  const std::size_t m = subbatch.size() ? subbatch.rows() : 0;
  std::vector<double> fractions;
  for (const auto& e : entries) fractions.push_back(e.fraction);
  const auto sizes = apportion(fractions, m);

  ExtrapolatedBatch out;
  out.origins = subbatch;
  std::vector<Tensor> pieces;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    std::vector<std::size_t> idx(sizes[i]);
    std::iota(idx.begin(), idx.end(), offset);
    ExtrapolationConfig slice_cfg = cfg;
    slice_cfg.epsilon = entries[i].epsilon;
    slice_cfg.pool.clear();
    ExtrapolatedBatch part = pgd_extrapolate(model, subbatch.select_rows(idx), slice_cfg);
    pieces.push_back(part.synthesized);
    out.epsilon_used.insert(out.epsilon_used.end(), part.epsilon_used.begin(), part.epsilon_used.end());
    out.initial_loss.insert(out.initial_loss.end(), part.initial_loss.begin(), part.initial_loss.end());
    out.final_loss.insert(out.final_loss.end(), part.final_loss.begin(), part.final_loss.end());
    for (std::size_t f : part.flagged) out.flagged.push_back(offset + f);
    offset += sizes[i];
  }
  out.synthesized = m ? concat_rows(pieces) : subbatch;
  return out;
}

Tensor random_noise_extrapolate(const Tensor& x, double epsilon, Rng& rng, double lo, double hi) {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("random noise: epsilon must be non-negative");
  Tensor out = x;
  if (epsilon == 0.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto [a, b] = ball_bounds(x[i], epsilon, lo, hi);
    out[i] = std::clamp(x[i] + rng.uniform(-epsilon, epsilon), a, b);
  }
  return out;
}

Tensor mixup_with(const Tensor& x, const Tensor& partners, const std::vector<double>& lambdas,
                  const std::vector<std::size_t>& partner_index) {
  if (x.rows() != lambdas.size() || x.rows() != partner_index.size()) {
    throw std::invalid_argument("mixup: one weight and partner per row required");
  }
  if (partners.cols() != x.cols()) throw std::invalid_argument("mixup: partner width mismatch");
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double lam = lambdas[r];
    auto p = partners.row(partner_index[r]);
    auto o = out.row(r);
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (lam == 1.0) continue;
      o[j] = lam == 0.0 ? p[j] : lam * o[j] + (1.0 - lam) * p[j];
    }
  }
  return out;
}

Tensor mixup_extrapolate(const Tensor& x, const Tensor& partners, double beta_a, double beta_b, Rng& rng) {
  if (!(beta_a > 0.0 && beta_b > 0.0)) throw std::invalid_argument("mixup: beta parameters must be positive");
  if (partners.size() == 0 || partners.rows() == 0) throw std::invalid_argument("mixup: empty partner batch");
  const std::size_t m = x.size() ? x.rows() : 0;
  std::vector<double> lambdas(m);
  std::vector<std::size_t> idx(m);
  for (std::size_t r = 0; r < m; ++r) {
    lambdas[r] = rng.beta(beta_a, beta_b);
    idx[r] = rng.index(partners.rows());
  }
  return mixup_with(x, partners, lambdas, idx);
}

}  // namespace oex
