#include "oex/selftest.hpp"

#include <algorithm>
#include <stdexcept>

#include "oex/gradcheck.hpp"
#include "oex/losses.hpp"
#include "oex/model.hpp"
#include "oex/random.hpp"

namespace oex {

namespace {

constexpr double kStep = 1e-5;

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

MlpClassifier random_network(Rng& rng, std::size_t& batch) {
  std::vector<std::size_t> dims{2 + rng.index(4)};
  const std::size_t hidden = 1 + rng.index(2);
  for (std::size_t l = 0; l < hidden; ++l) dims.push_back(3 + rng.index(6));
  dims.push_back(2 + rng.index(4));
  batch = 2 + rng.index(5);
  MlpClassifier model = init_model(dims, rng.next_u64());
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    for (auto& b : model.bias(l).values()) b = 0.1 * rng.normal();
  }
  return model;
}

std::vector<int> random_labels(std::size_t n, std::size_t classes, Rng& rng) {
  std::vector<int> y(n);
  for (auto& v : y) v = static_cast<int>(rng.index(classes));
  return y;
}

// Lowest or highest free energy -T * logsumexp(f / T) over the batch.
double energy_extreme(const MlpClassifier& model, const Tensor& x, double temperature, bool lowest) {
  Tensor lse = kernels::logsumexp(kernels::affine(forward(model, x), 1.0 / temperature, 0.0), 1);
  double out = lowest ? 1e300 : -1e300;
  for (double v : lse.values()) out = lowest ? std::min(out, -temperature * v) : std::max(out, -temperature * v);
  return out;
}

struct Case {
  std::string name;
  ad::Expr expr;
  ad::Bindings bindings;
  std::set<std::string, std::less<>> wrt;
};

Case network_case(std::size_t kind, Rng& rng) {
  std::size_t n = 0;
  MlpClassifier model = random_network(rng, n);
  const std::size_t d = model.input_dim(), c = model.num_classes();
  Case out;
  model.bind(out.bindings);
  const auto names = model.parameter_names();
  out.wrt.insert(names.begin(), names.end());
  const auto params = parameter_inputs(model);
  Tensor x = random_tensor(Shape{n, d}, rng);
  Tensor xo = random_tensor(Shape{n + 1, d}, rng, 1.5);
  out.bindings.emplace("x", x);
  ad::Expr fx = logits_expr(model, ad::input("x"), params);
  switch (kind) {
    case 0:
      out.name = "cross_entropy";
      out.expr = loss::cross_entropy(fx, ad::constant(one_hot(random_labels(n, c, rng), c)));
      break;
    case 1:
      out.name = "oe_uniform";
      out.bindings.emplace("xo", xo);
      out.expr = loss::objective(LossConfig{LossKind::OE, 0.5}, fx, ad::constant(one_hot(random_labels(n, c, rng), c)),
                                 logits_expr(model, ad::input("xo"), params), std::nullopt)
                     .total;
      break;
    case 2: {
      out.name = "energy_bounded";
      out.bindings.emplace("xo", xo);
      const double temperature = 0.5 + rng.uniform();
      // margins placed so both hinges are active
      LossConfig cfg{LossKind::EnergyBounded, 0.3, 0.0, 0.0, temperature};
      cfg.m_in = energy_extreme(model, x, temperature, true) - 1.0;
      cfg.m_out = energy_extreme(model, xo, temperature, false) + 1.0;
      out.expr = loss::objective(cfg, fx, ad::constant(one_hot(random_labels(n, c, rng), c)),
                                 logits_expr(model, ad::input("xo"), params), std::nullopt)
                     .total;
      break;
    }
    case 3: {
      out.name = "divoe";
      Tensor xe = random_tensor(Shape{n, d}, rng, 1.5);
      out.bindings.emplace("xo", xo);
      out.bindings.emplace("xe", xe);
      out.expr = loss::objective(LossConfig{LossKind::DivOE, 0.7}, fx,
                                 ad::constant(one_hot(random_labels(n, c, rng), c)),
                                 logits_expr(model, ad::input("xo"), params), logits_expr(model, ad::input("xe"), params))
                     .total;
      break;
    }
    case 4:
      out.name = "extrapolation_input_gradient";
      out.wrt = {"x"};
      out.expr = ad::sum(loss::uniform_rows(fx));
      break;
    default: {
      out.name = "energy_input_gradient";
      out.wrt = {"x"};
      out.expr = ad::sum(loss::free_energy_rows(fx, 0.5 + rng.uniform()));
      break;
    }
  }
  return out;
}

Case primitive_case(Rng& rng) {
  const std::size_t r = 2 + rng.index(4), c = 2 + rng.index(4);
  Case out;
  out.name = "primitives";
  Tensor a = random_tensor(Shape{r, c}, rng);
  // keep |a| away from the kink of abs
  for (auto& v : a.values()) v += v >= 0 ? 0.2 : -0.2;
  out.bindings = {{"a", a}, {"b", random_tensor(Shape{c}, rng)}, {"m", random_tensor(Shape{c, r}, rng)},
                  {"col", random_tensor(Shape{r, 1}, rng)}};
  out.wrt = {"a", "b", "m", "col"};
  ad::Expr A = ad::input("a"), B = ad::input("b"), M = ad::input("m"), COL = ad::input("col");
  ad::Expr t1 = ad::sum(ad::mul(ad::softmax(A + B, 1), ad::log_softmax(ad::mul(A, COL), 0)));
  ad::Expr t2 = ad::mean(ad::square(ad::matmul(A, M)));
  ad::Expr t3 = ad::sum(ad::logsumexp(ad::affine(A, 0.7, -0.3), 0)) + ad::mean(ad::abs(A));
  ad::Expr t4 = ad::mean(ad::mean(ad::relu(A + COL), 1));
  out.expr = t1 + t2 + 0.5 * t3 + t4;
  return out;
}

}  // namespace

std::optional<ad::Op> parse_op(const std::string& name) {
  for (int k = static_cast<int>(ad::Op::Input); k <= static_cast<int>(ad::Op::Affine); ++k) {
    auto op = static_cast<ad::Op>(k);
    if (ad::op_name(op) == name) return op;
  }
  return std::nullopt;
}

GradcheckSummary run_gradcheck_suite(std::size_t cases, std::uint64_t seed, double tolerance,
                                     std::optional<ad::Op> faulty_op) {
  if (cases == 0) throw std::invalid_argument("gradcheck: need at least one case");
  GradcheckSummary summary;
  ad::BackwardOptions options{faulty_op};
  for (std::size_t i = 0; i < cases; ++i) {
    Rng rng(derive_seed(seed, "gradcheck", i));
    const std::size_t kind = i % 7;
    Case c = kind == 6 ? primitive_case(rng) : network_case(kind, rng);
    const auto report = ad::finite_diff_report(c.expr, c.bindings, c.wrt, kStep, options);
    const double err = report.max_rel_error;
    summary.cases.push_back({c.name + "#" + std::to_string(i), err, report.worst_input, report.analytic, report.numeric});
    if (!(err < tolerance)) ++summary.failures;
    if (!(err <= summary.max_rel_error)) {
      summary.max_rel_error = err;
      summary.worst_case = summary.cases.back().name;
    }
  }
  return summary;
}

}  // namespace oex
