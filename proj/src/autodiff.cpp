#include "oex/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

#include "oex/error.hpp"

namespace oex::ad {

std::string_view op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Mul: return "mul";
    case Op::Relu: return "relu";
    case Op::Softmax: return "softmax";
    case Op::LogSoftmax: return "log_softmax";
    case Op::LogSumExp: return "logsumexp";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Square: return "square";
    case Op::Abs: return "abs";
    case Op::Affine: return "affine";
  }
  return "?";
}

namespace {

Expr make(Node n) { return Expr(std::make_shared<const Node>(std::move(n))); }

Node node_of(Op op, std::vector<Expr> parents = {}) {
  Node n;
  n.op = op;
  n.parents = std::move(parents);
  return n;
}

Expr unary(Op op, const Expr& x, int axis = -1) {
  Node n = node_of(op, {x});
  n.axis = axis;
  return make(std::move(n));
}

Expr binary(Op op, const Expr& a, const Expr& b) { return make(node_of(op, {a, b})); }

// Copies a tensor reduced along `axis` back across that axis.
Tensor expand_axis(const Tensor& reduced, const Shape& full, std::size_t axis) {
  std::size_t outer = 1, inner = 1, len = full[axis];
  for (std::size_t i = 0; i < axis; ++i) outer *= full[i];
  for (std::size_t i = axis + 1; i < full.size(); ++i) inner *= full[i];
  Tensor out(full);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t l = 0; l < len; ++l) {
      for (std::size_t i = 0; i < inner; ++i) out[(o * len + l) * inner + i] = reduced[o * inner + i];
    }
  }
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

Tensor forward_op(const Node& n, const std::vector<const Tensor*>& in) {
  switch (n.op) {
    case Op::Input:
    case Op::Constant:
      break;
    case Op::MatMul: return kernels::matmul(*in[0], *in[1]);
    case Op::Add: return kernels::add(*in[0], *in[1]);
    case Op::Mul: return kernels::mul(*in[0], *in[1]);
    case Op::Relu: return kernels::relu(*in[0]);
    case Op::Softmax: return kernels::softmax(*in[0], n.axis);
    case Op::LogSoftmax: return kernels::log_softmax(*in[0], n.axis);
    case Op::LogSumExp: return kernels::logsumexp(*in[0], n.axis);
    case Op::Sum:
      if (n.all_axes) {
        double acc = 0.0;
        for (double v : in[0]->values()) acc += v;
        return Tensor::scalar(acc);
      }
      return kernels::sum(*in[0], n.axis);
    case Op::Mean:
      if (n.all_axes) {
        if (in[0]->size() == 0) throw std::invalid_argument("mean: empty tensor");
        double acc = 0.0;
        for (double v : in[0]->values()) acc += v;
        return Tensor::scalar(acc / static_cast<double>(in[0]->size()));
      }
      return kernels::mean(*in[0], n.axis);
    case Op::Square: return kernels::mul(*in[0], *in[0]);
    case Op::Abs: {
      Tensor out(in[0]->shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs((*in[0])[i]);
      return out;
    }
    case Op::Affine: return kernels::affine(*in[0], n.scale, n.shift);
  }
  throw std::logic_error("forward_op: unexpected op");
}

// Local vector-Jacobian products: the gradient contribution for each parent.
std::vector<Tensor> backward_op(const Node& n, const Tensor& out, const Tensor& g,
                                const std::vector<const Tensor*>& in) {
  switch (n.op) {
    case Op::Input:
    case Op::Constant:
      return {};
    case Op::MatMul:
      return {kernels::matmul_nt(g, *in[1]), kernels::matmul_tn(*in[0], g)};
    case Op::Add:
      return {kernels::reduce_to(g, in[0]->shape()), kernels::reduce_to(g, in[1]->shape())};
    case Op::Mul:
      return {kernels::reduce_to(kernels::mul(g, *in[1]), in[0]->shape()),
              kernels::reduce_to(kernels::mul(g, *in[0]), in[1]->shape())};
    case Op::Relu: {
      Tensor d(g.shape());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = (*in[0])[i] > 0.0 ? g[i] : 0.0;
      return {std::move(d)};
    }
    case Op::Softmax: {
      std::size_t ax = kernels::resolve_axis(n.axis, out.rank());
      Tensor gy = hadamard(g, out);
      Tensor dot = expand_axis(kernels::sum(gy, n.axis), out.shape(), ax);
      Tensor d(out.shape());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = out[i] * (g[i] - dot[i]);
      return {std::move(d)};
    }
    case Op::LogSoftmax: {
      std::size_t ax = kernels::resolve_axis(n.axis, out.rank());
      Tensor gsum = expand_axis(kernels::sum(g, n.axis), out.shape(), ax);
      Tensor d(out.shape());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] - std::exp(out[i]) * gsum[i];
      return {std::move(d)};
    }
    case Op::LogSumExp: {
      const Tensor& x = *in[0];
      std::size_t ax = kernels::resolve_axis(n.axis, x.rank());
      Tensor p = kernels::softmax(x, n.axis);
      Tensor ge = expand_axis(g, x.shape(), ax);
      return {hadamard(ge, p)};
    }
    case Op::Sum:
    case Op::Mean: {
      const Tensor& x = *in[0];
      Tensor d;
      double denom = 1.0;
      if (n.all_axes) {
        d = Tensor(x.shape(), g.item());
        if (n.op == Op::Mean) denom = static_cast<double>(x.size());
      } else {
        std::size_t ax = kernels::resolve_axis(n.axis, x.rank());
        d = expand_axis(g, x.shape(), ax);
        if (n.op == Op::Mean) denom = static_cast<double>(x.shape()[ax]);
      }
      if (n.op == Op::Mean) {
        for (auto& v : d.values()) v /= denom;
      }
      return {std::move(d)};
    }
    case Op::Square: {
      Tensor d(g.shape());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = 2.0 * (*in[0])[i] * g[i];
      return {std::move(d)};
    }
    case Op::Abs: {
      Tensor d(g.shape());
      for (std::size_t i = 0; i < d.size(); ++i) {
        double x = (*in[0])[i];
        d[i] = x > 0.0 ? g[i] : (x < 0.0 ? -g[i] : 0.0);
      }
      return {std::move(d)};
    }
    case Op::Affine: return {kernels::affine(g, n.scale, 0.0)};
  }
  throw std::logic_error("backward_op: unexpected op");
}

void accumulate(Tensor& slot, char& present, Tensor&& contribution) {
  if (!present) {
    slot = std::move(contribution);
    present = 1;
    return;
  }
  for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += contribution[i];
}

}  // namespace

Expr input(std::string name) {
  Node n = node_of(Op::Input);
  n.name = std::move(name);
  return make(std::move(n));
}

Expr constant(Tensor value) {
  Node n = node_of(Op::Constant);
  n.constant = std::move(value);
  return make(std::move(n));
}

Expr matmul(const Expr& a, const Expr& b) { return binary(Op::MatMul, a, b); }
Expr add(const Expr& a, const Expr& b) { return binary(Op::Add, a, b); }
Expr mul(const Expr& a, const Expr& b) { return binary(Op::Mul, a, b); }
Expr relu(const Expr& x) { return unary(Op::Relu, x); }
Expr softmax(const Expr& x, int axis) { return unary(Op::Softmax, x, axis); }
Expr log_softmax(const Expr& x, int axis) { return unary(Op::LogSoftmax, x, axis); }
Expr logsumexp(const Expr& x, int axis) { return unary(Op::LogSumExp, x, axis); }

Expr sum(const Expr& x) {
  Node n = node_of(Op::Sum, {x});
  n.all_axes = true;
  return make(std::move(n));
}

Expr sum(const Expr& x, int axis) { return unary(Op::Sum, x, axis); }

Expr mean(const Expr& x) {
  Node n = node_of(Op::Mean, {x});
  n.all_axes = true;
  return make(std::move(n));
}

Expr mean(const Expr& x, int axis) { return unary(Op::Mean, x, axis); }
Expr square(const Expr& x) { return unary(Op::Square, x); }
Expr abs(const Expr& x) { return unary(Op::Abs, x); }

Expr affine(const Expr& x, double scale, double shift) {
  Node n = node_of(Op::Affine, {x});
  n.scale = scale;
  n.shift = shift;
  return make(std::move(n));
}

Evaluation::Evaluation(const Expr& root, const Bindings& bindings) {
  if (!root) throw std::invalid_argument("evaluate: empty expression");

  // Iterative post-order DFS; parents are visited in declaration order so
  // the resulting topological order is a pure function of the graph.
  std::unordered_map<std::string, const Node*> names;
  std::vector<std::pair<const Node*, std::size_t>> stack{{root.get(), 0}};
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next == 0 && index_.count(node)) {
      stack.pop_back();
      continue;
    }
    if (next < node->parents.size()) {
      const Node* p = node->parents[next++].get();
      if (!index_.count(p)) stack.emplace_back(p, 0);
      continue;
    }
    if (node->op == Op::Input) {
      auto [it, inserted] = names.emplace(node->name, node);
      if (!inserted && it->second != node) {
        throw std::invalid_argument("evaluate: duplicate input name '" + node->name + "'");
      }
    }
    index_.emplace(node, order_.size());
    order_.push_back(node);
    stack.pop_back();
  }

  values_.reserve(order_.size());
  std::vector<const Tensor*> in;
  for (const Node* n : order_) {
    if (n->op == Op::Input) {
      auto it = bindings.find(n->name);
      if (it == bindings.end()) throw std::invalid_argument("evaluate: unbound input '" + n->name + "'");
      if (!it->second.all_finite()) throw NumericError("evaluate: non-finite value bound to '" + n->name + "'");
      values_.push_back(it->second);
      continue;
    }
    if (n->op == Op::Constant) {
      values_.push_back(n->constant);
      continue;
    }
    in.clear();
    for (const auto& p : n->parents) in.push_back(&values_[index_.at(p.get())]);
    Tensor v = forward_op(*n, in);
    if (!v.all_finite()) {
      throw NumericError("evaluate: non-finite result in " + std::string(op_name(n->op)));
    }
    values_.push_back(std::move(v));
  }
}

const Tensor& Evaluation::value(const Expr& e) const {
  auto it = index_.find(e.get());
  if (it == index_.end()) throw std::invalid_argument("evaluation: node not part of this expression");
  return values_[it->second];
}

GradientMap Evaluation::backward(const std::set<std::string, std::less<>>& wrt, const BackwardOptions& options) const {
  if (value().size() != 1) {
    throw std::invalid_argument("gradient: expression is not scalar, shape " + shape_string(value().shape()));
  }
  const std::size_t count = order_.size();
  std::vector<bool> needs(count, false);
  std::map<std::string, std::size_t, std::less<>> input_slot;
  for (std::size_t i = 0; i < count; ++i) {
    const Node* n = order_[i];
    if (n->op == Op::Input) {
      if (wrt.count(n->name)) {
        needs[i] = true;
        input_slot.emplace(n->name, i);
      }
      continue;
    }
    for (const auto& p : n->parents) {
      if (needs[index_.at(p.get())]) needs[i] = true;
    }
  }
  for (const auto& name : wrt) {
    if (!input_slot.count(name)) throw std::invalid_argument("gradient: '" + name + "' is not an input of the expression");
  }

  std::vector<Tensor> grads(count);
  std::vector<char> present(count, 0);
  grads[count - 1] = Tensor(value().shape(), 1.0);
  present[count - 1] = 1;

  std::vector<const Tensor*> in;
  for (std::size_t i = count; i-- > 0;) {
    const Node* n = order_[i];
    if (!present[i] || !needs[i] || n->parents.empty()) continue;
    in.clear();
    for (const auto& p : n->parents) in.push_back(&values_[index_.at(p.get())]);
    std::vector<Tensor> local = backward_op(*n, values_[i], grads[i], in);
    const bool flip = options.faulty_op && *options.faulty_op == n->op;
    for (std::size_t k = 0; k < n->parents.size(); ++k) {
      std::size_t pi = index_.at(n->parents[k].get());
      if (!needs[pi]) continue;
      if (flip) {
        for (auto& v : local[k].values()) v = -v;
      }
      accumulate(grads[pi], present[pi], std::move(local[k]));
    }
  }

  GradientMap out;
  for (const auto& [name, slot] : input_slot) {
    out.emplace(name, present[slot] ? grads[slot] : Tensor(values_[slot].shape(), 0.0));
  }
  return out;
}

Tensor evaluate(const Expr& expr, const Bindings& bindings) { return Evaluation(expr, bindings).value(); }

GradientMap gradient(const Expr& expr, const Bindings& bindings, const std::set<std::string, std::less<>>& wrt) {
  return Evaluation(expr, bindings).backward(wrt);
}

}  // namespace oex::ad
