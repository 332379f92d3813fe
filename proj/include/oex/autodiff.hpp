#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "oex/tensor.hpp"

namespace oex::ad {

enum class Op {
  Input,
  Constant,
  MatMul,
  Add,
  Mul,
  Relu,
  Softmax,
  LogSoftmax,
  LogSumExp,
  Sum,
  Mean,
  Square,
  Abs,
  Affine,
};

std::string_view op_name(Op op);

struct Node;

// Immutable handle to an expression DAG node. Copies share the node, so
// an expression can be evaluated from several threads at once.
class Expr {
 public:
  Expr() = default;
  explicit Expr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}

  const Node& node() const { return *node_; }
  const Node* get() const { return node_.get(); }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<const Node> node_;
};

struct Node {
  Op op = Op::Constant;
  std::vector<Expr> parents;
  std::string name;      // Input
  Tensor constant;       // Constant
  int axis = -1;         // reductions, softmax
  bool all_axes = false; // Sum/Mean over every element
  double scale = 1.0;    // Affine
  double shift = 0.0;    // Affine
};

using Bindings = std::map<std::string, Tensor, std::less<>>;
using GradientMap = std::map<std::string, Tensor, std::less<>>;

Expr input(std::string name);
Expr constant(Tensor value);
Expr matmul(const Expr& a, const Expr& b);
Expr add(const Expr& a, const Expr& b);
Expr mul(const Expr& a, const Expr& b);
Expr relu(const Expr& x);
Expr softmax(const Expr& x, int axis = -1);
Expr log_softmax(const Expr& x, int axis = -1);
Expr logsumexp(const Expr& x, int axis = -1);
Expr sum(const Expr& x);
Expr sum(const Expr& x, int axis);
Expr mean(const Expr& x);
Expr mean(const Expr& x, int axis);
Expr square(const Expr& x);
Expr abs(const Expr& x);
Expr affine(const Expr& x, double scale, double shift);

inline Expr operator+(const Expr& a, const Expr& b) { return add(a, b); }
inline Expr operator-(const Expr& a) { return affine(a, -1.0, 0.0); }
inline Expr operator-(const Expr& a, const Expr& b) { return add(a, -b); }
inline Expr operator*(const Expr& a, const Expr& b) { return mul(a, b); }
inline Expr operator*(double s, const Expr& a) { return affine(a, s, 0.0); }
inline Expr operator+(const Expr& a, double c) { return affine(a, 1.0, c); }

struct BackwardOptions {
  // Flips the sign of one primitive's local derivative. Only used to check
  // that the gradient self-test notices a broken primitive.
  std::optional<Op> faulty_op;
};

// One forward pass over a DAG with every node value cached. backward()
// may be called on the cached values without re-running the forward pass.
class Evaluation {
 public:
  Evaluation(const Expr& root, const Bindings& bindings);

  const Tensor& value() const { return values_.back(); }
  // Value of any node reachable from the root.
  const Tensor& value(const Expr& e) const;

  // Reverse-mode gradients of the (scalar) root with respect to the named
  // inputs. Accumulation follows the fixed reverse topological order.
  GradientMap backward(const std::set<std::string, std::less<>>& wrt, const BackwardOptions& options = {}) const;

  std::size_t node_count() const { return order_.size(); }

 private:
  std::vector<const Node*> order_;  // parents before children, root last
  std::unordered_map<const Node*, std::size_t> index_;
  std::vector<Tensor> values_;
};

Tensor evaluate(const Expr& expr, const Bindings& bindings);

GradientMap gradient(const Expr& expr, const Bindings& bindings, const std::set<std::string, std::less<>>& wrt);

}  // namespace oex::ad
