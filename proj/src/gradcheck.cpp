#include "oex/gradcheck.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace oex::ad {

namespace {

// Extended-precision forward evaluator used as the finite-difference
// oracle. It is written independently of the double kernels; in double,
// central differences at h = 1e-5 carry about 1e-11 of absolute noise,
// which swamps gradient coordinates near 1e-5.
using Real = long double;

struct RTensor {
  Shape shape;
  std::vector<Real> v;
};

struct Perturbation {
  const std::string* name = nullptr;
  std::size_t index = 0;
  Real delta = 0;
};

RTensor from(const Tensor& t) {
  RTensor r{t.shape(), std::vector<Real>(t.size())};
  for (std::size_t i = 0; i < t.size(); ++i) r.v[i] = t[i];
  return r;
}

Shape broadcast(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::size_t da = k < rank - a.size() ? 1 : a[k - (rank - a.size())];
    const std::size_t db = k < rank - b.size() ? 1 : b[k - (rank - b.size())];
    if (da != db && da != 1 && db != 1) throw std::invalid_argument("reference: incompatible shapes");
    out[k] = da == 1 ? db : da;
  }
  return out;
}

// Flat index into `src` for a multi-index of the broadcast shape `out`.
std::size_t source_index(const Shape& src, const Shape& out, std::size_t flat) {
  std::size_t idx = 0, stride = 1;
  for (std::size_t k = out.size(); k-- > 0;) {
    const std::size_t coord = flat % out[k];
    flat /= out[k];
    const std::size_t sk = k + src.size();
    if (sk < out.size()) continue;
    const std::size_t dim = src[sk - out.size()];
    idx += (dim == 1 ? 0 : coord) * stride;
    stride *= dim;
  }
  return idx;
}

template <typename F>
RTensor binary(const RTensor& a, const RTensor& b, F f) {
  RTensor out{broadcast(a.shape, b.shape), {}};
  out.v.resize(shape_size(out.shape));
  for (std::size_t i = 0; i < out.v.size(); ++i) {
    out.v[i] = f(a.v[source_index(a.shape, out.shape, i)], b.v[source_index(b.shape, out.shape, i)]);
  }
  return out;
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
  Shape reduced;
};

AxisSplit split_axis(const Shape& s, int axis) {
  const auto rank = static_cast<int>(s.size());
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) throw std::invalid_argument("reference: bad axis");
  AxisSplit sp;
  for (int k = 0; k < rank; ++k) {
    if (k < a) sp.outer *= s[static_cast<std::size_t>(k)];
    if (k > a) sp.inner *= s[static_cast<std::size_t>(k)];
    if (k != a) sp.reduced.push_back(s[static_cast<std::size_t>(k)]);
  }
  sp.len = s[static_cast<std::size_t>(a)];
  return sp;
}

// kind: 0 sum, 1 mean, 2 logsumexp
RTensor reduce(const RTensor& x, const Node& n, int kind) {
  if (n.all_axes) {
    Real s = 0;
    for (Real v : x.v) s += v;
    if (kind == 1) s /= static_cast<Real>(x.v.size());
    return {Shape{}, {s}};
  }
  AxisSplit sp = split_axis(x.shape, n.axis);
  RTensor out{sp.reduced, std::vector<Real>(sp.outer * sp.inner)};
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto at = [&](std::size_t k) { return x.v[(o * sp.len + k) * sp.inner + i]; };
      Real acc = 0;
      if (kind == 2) {
        Real m = at(0);
        for (std::size_t k = 1; k < sp.len; ++k) m = std::max(m, at(k));
        for (std::size_t k = 0; k < sp.len; ++k) acc += std::exp(at(k) - m);
        acc = m + std::log(acc);
      } else {
        for (std::size_t k = 0; k < sp.len; ++k) acc += at(k);
        if (kind == 1) acc /= static_cast<Real>(sp.len);
      }
      out.v[o * sp.inner + i] = acc;
    }
  }
  return out;
}

RTensor normalize(const RTensor& x, const Node& n, bool log_space) {
  AxisSplit sp = split_axis(x.shape, n.axis);
  RTensor out{x.shape, x.v};
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto idx = [&](std::size_t k) { return (o * sp.len + k) * sp.inner + i; };
      Real m = x.v[idx(0)];
      for (std::size_t k = 1; k < sp.len; ++k) m = std::max(m, x.v[idx(k)]);
      Real z = 0;
      for (std::size_t k = 0; k < sp.len; ++k) z += std::exp(x.v[idx(k)] - m);
      for (std::size_t k = 0; k < sp.len; ++k) {
        out.v[idx(k)] = log_space ? x.v[idx(k)] - m - std::log(z) : std::exp(x.v[idx(k)] - m) / z;
      }
    }
  }
  return out;
}

RTensor matmul(const RTensor& a, const RTensor& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0]) {
    throw std::invalid_argument("reference: matmul shape mismatch");
  }
  const std::size_t n = a.shape[0], k = a.shape[1], m = b.shape[1];
  RTensor out{Shape{n, m}, std::vector<Real>(n * m, 0)};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      Real s = 0;
      for (std::size_t t = 0; t < k; ++t) s += a.v[i * k + t] * b.v[t * m + j];
      out.v[i * m + j] = s;
    }
  }
  return out;
}

class Reference {
 public:
  Reference(const Bindings& bindings, Perturbation p) : bindings_(bindings), p_(p) {}

  const RTensor& eval(const Node* node) {
    if (auto it = memo_.find(node); it != memo_.end()) return it->second;
    const Node& n = *node;
    auto arg = [&](std::size_t k) -> const RTensor& { return eval(n.parents[k].get()); };
    RTensor out;
    switch (n.op) {
      case Op::Input: {
        auto it = bindings_.find(n.name);
        if (it == bindings_.end()) throw std::invalid_argument("reference: unbound input '" + n.name + "'");
        out = from(it->second);
        if (p_.name && *p_.name == n.name) out.v[p_.index] += p_.delta;
        break;
      }
      case Op::Constant: out = from(n.constant); break;
      case Op::MatMul: out = matmul(arg(0), arg(1)); break;
      case Op::Add: out = binary(arg(0), arg(1), [](Real a, Real b) { return a + b; }); break;
      case Op::Mul: out = binary(arg(0), arg(1), [](Real a, Real b) { return a * b; }); break;
      case Op::Relu:
        out = arg(0);
        for (auto& v : out.v) v = v > 0 ? v : 0;
        break;
      case Op::Softmax: out = normalize(arg(0), n, false); break;
      case Op::LogSoftmax: out = normalize(arg(0), n, true); break;
      case Op::LogSumExp: out = reduce(arg(0), n, 2); break;
      case Op::Sum: out = reduce(arg(0), n, 0); break;
      case Op::Mean: out = reduce(arg(0), n, 1); break;
      case Op::Square:
        out = arg(0);
        for (auto& v : out.v) v *= v;
        break;
      case Op::Abs:
        out = arg(0);
        for (auto& v : out.v) v = std::fabs(v);
        break;
      case Op::Affine:
        out = arg(0);
        for (auto& v : out.v) v = static_cast<Real>(n.scale) * v + static_cast<Real>(n.shift);
        break;
    }
    return memo_.emplace(node, std::move(out)).first->second;
  }

 private:
  const Bindings& bindings_;
  Perturbation p_;
  std::unordered_map<const Node*, RTensor> memo_;
};

Real reference_value(const Expr& expr, const Bindings& bindings, Perturbation p) {
  Reference ref(bindings, p);
  const RTensor& out = ref.eval(expr.get());
  if (out.v.size() != 1) throw std::invalid_argument("finite_diff_check: expression must be scalar");
  return out.v[0];
}

}  // namespace

FiniteDiffReport finite_diff_report(const Expr& expr, const Bindings& bindings,
                                    const std::set<std::string, std::less<>>& wrt, double h,
                                    const BackwardOptions& options) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
  GradientMap analytic = Evaluation(expr, bindings).backward(wrt, options);

  FiniteDiffReport report;
  for (const auto& [name, grad] : analytic) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const Real up = reference_value(expr, bindings, {&name, i, static_cast<Real>(h)});
      const Real down = reference_value(expr, bindings, {&name, i, -static_cast<Real>(h)});
      const auto numeric = static_cast<double>((up - down) / (2 * static_cast<Real>(h)));
      const double err = std::fabs(grad[i] - numeric) / (std::fabs(grad[i]) + 1e-12);
      if (report.worst_input.empty() || err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_input = name;
        report.worst_index = i;
        report.analytic = grad[i];
        report.numeric = numeric;
      }
    }
  }
  return report;
}

double finite_diff_check(const Expr& expr, const Bindings& bindings, const std::set<std::string, std::less<>>& wrt,
                         double h) {
  return finite_diff_report(expr, bindings, wrt, h).max_rel_error;
}

}  // namespace oex::ad
