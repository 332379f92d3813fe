#include "oex/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace oex {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != shape_size(shape_)) {
    throw std::invalid_argument("tensor: " + std::to_string(values_.size()) + " values do not fill shape " +
                                shape_string(shape_));
  }
}

Tensor Tensor::vector(std::vector<double> values) {
  Shape s{values.size()};
  return Tensor(std::move(s), std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw std::invalid_argument("tensor: ragged matrix literal");
    values.insert(values.end(), r.begin(), r.end());
  }
  return Tensor(Shape{rows.size(), cols}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (rank() == 2) return shape_[0];
  if (rank() <= 1) return 1;
  throw std::invalid_argument("tensor: rows() of rank " + std::to_string(rank()));
}

std::size_t Tensor::cols() const {
  if (rank() == 2) return shape_[1];
  if (rank() == 1) return shape_[0];
  if (rank() == 0) return 1;
  throw std::invalid_argument("tensor: cols() of rank " + std::to_string(rank()));
}

double Tensor::item() const {
  if (values_.size() != 1) throw std::invalid_argument("tensor: item() of shape " + shape_string(shape_));
  return values_[0];
}

std::span<const double> Tensor::row(std::size_t r) const {
  std::size_t c = cols();
  return std::span<const double>(values_).subspan(r * c, c);
}

std::span<double> Tensor::row(std::size_t r) {
  std::size_t c = cols();
  return std::span<double>(values_).subspan(r * c, c);
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), values_); }

Tensor Tensor::select_rows(std::span<const std::size_t> indices) const {
  std::size_t c = cols();
  std::vector<double> out;
  out.reserve(indices.size() * c);
  for (std::size_t i : indices) {
    if (i >= rows()) throw std::out_of_range("tensor: row index " + std::to_string(i) + " out of range");
    auto r = row(i);
    out.insert(out.end(), r.begin(), r.end());
  }
  return Tensor(Shape{indices.size(), c}, std::move(out));
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) return Tensor(Shape{0, 0});
  std::size_t c = parts.front().cols();
  std::size_t r = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (p.cols() != c && p.size() != 0) throw std::invalid_argument("concat_rows: column mismatch");
    if (p.size() == 0) continue;
    r += p.rows();
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return Tensor(Shape{r, c}, std::move(out));
}

namespace kernels {

namespace {

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(what) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

struct Dims2 {
  std::size_t r, c;
};

Dims2 as2d(const Shape& s) {
  if (s.empty()) return {1, 1};
  if (s.size() == 1) return {1, s[0]};
  if (s.size() == 2) return {s[0], s[1]};
  return {1, shape_size(s)};
}

struct Axis3 {
  std::size_t outer, len, inner;
};

Axis3 split_axis(const Shape& s, std::size_t axis) {
  Axis3 a{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

Shape drop_axis(const Shape& s, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out.push_back(s[i]);
  }
  return out;
}

template <typename F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, F f) {
  Shape out_shape = broadcast_shape(a.shape(), b.shape());
  Tensor out(out_shape);
  if (a.shape() == b.shape()) {
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  Dims2 da = as2d(a.shape()), db = as2d(b.shape()), dout = as2d(out_shape);
  for (std::size_t r = 0; r < dout.r; ++r) {
    std::size_t ra = da.r == 1 ? 0 : r;
    std::size_t rb = db.r == 1 ? 0 : r;
    for (std::size_t c = 0; c < dout.c; ++c) {
      std::size_t ca = da.c == 1 ? 0 : c;
      std::size_t cb = db.c == 1 ? 0 : c;
      out[r * dout.c + c] = f(a[ra * da.c + ca], b[rb * db.c + cb]);
    }
  }
  return out;
}

}  // namespace

std::size_t resolve_axis(int axis, std::size_t rank) {
  long a = axis < 0 ? static_cast<long>(rank) + axis : axis;
  if (rank == 0 || a < 0 || a >= static_cast<long>(rank)) {
    throw std::invalid_argument("axis " + std::to_string(axis) + " invalid for rank " + std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw std::invalid_argument("matmul: shape mismatch " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  }
  Tensor c(Shape{m, n});
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = c.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = C + i * n;
    for (std::size_t l = 0; l < k; ++l) {
      const double av = A[i * k + l];
      const double* bl = B + l * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bl[j];
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_tn");
  require_matrix(b, "matmul_tn");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != m) throw std::invalid_argument("matmul_tn: shape mismatch");
  Tensor c(Shape{k, n});
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = c.values().data();
  for (std::size_t r = 0; r < m; ++r) {
    const double* br = B + r * n;
    for (std::size_t i = 0; i < k; ++i) {
      const double av = A[r * k + i];
      double* ci = C + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * br[j];
    }
  }
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  if (b.shape()[1] != k) throw std::invalid_argument("matmul_nt: shape mismatch");
  Tensor c(Shape{m, n});
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = c.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t l = 0; l < k; ++l) s += A[i * k + l] * B[j * k + l];
      C[i * n + j] = s;
    }
  }
  return c;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (a.size() > 2 || b.size() > 2) {
    throw std::invalid_argument("broadcast: incompatible shapes " + shape_string(a) + ", " + shape_string(b));
  }
  Dims2 da = as2d(a), db = as2d(b);
  auto join = [&](std::size_t x, std::size_t y) {
    if (x == y || y == 1) return x;
    if (x == 1) return y;
    throw std::invalid_argument("broadcast: incompatible shapes " + shape_string(a) + ", " + shape_string(b));
  };
  std::size_t r = join(da.r, db.r), c = join(da.c, db.c);
  std::size_t rank = std::max(a.size(), b.size());
  if (rank == 2) return Shape{r, c};
  if (rank == 1) return Shape{c};
  return Shape{};
}

Tensor add(const Tensor& a, const Tensor& b) {
  return broadcast_binary(a, b, [](double x, double y) { return x + y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return broadcast_binary(a, b, [](double x, double y) { return x * y; });
}

Tensor reduce_to(const Tensor& grad, const Shape& target) {
  if (grad.shape() == target) return grad;
  Dims2 dg = as2d(grad.shape()), dt = as2d(target);
  Tensor out(target);
  for (std::size_t r = 0; r < dg.r; ++r) {
    std::size_t rt = dt.r == 1 ? 0 : r;
    for (std::size_t c = 0; c < dg.c; ++c) {
      std::size_t ct = dt.c == 1 ? 0 : c;
      out[rt * dt.c + ct] += grad[r * dg.c + c];
    }
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

Tensor affine(const Tensor& x, double scale, double shift) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = scale * x[i] + shift;
  return out;
}

Tensor sum(const Tensor& x, int axis) {
  std::size_t ax = resolve_axis(axis, x.rank());
  Axis3 s = split_axis(x.shape(), ax);
  Tensor out(drop_axis(x.shape(), ax));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      double acc = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) acc += x[(o * s.len + l) * s.inner + i];
      out[o * s.inner + i] = acc;
    }
  }
  return out;
}

Tensor mean(const Tensor& x, int axis) {
  std::size_t ax = resolve_axis(axis, x.rank());
  std::size_t len = x.shape()[ax];
  if (len == 0) throw std::invalid_argument("mean: empty axis");
  Tensor out = sum(x, axis);
  for (auto& v : out.values()) v /= static_cast<double>(len);
  return out;
}

Tensor logsumexp(const Tensor& x, int axis) {
  std::size_t ax = resolve_axis(axis, x.rank());
  Axis3 s = split_axis(x.shape(), ax);
  if (s.len == 0) throw std::invalid_argument("logsumexp: empty axis");
  Tensor out(drop_axis(x.shape(), ax));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, x[(o * s.len + l) * s.inner + i]);
      double acc = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) acc += std::exp(x[(o * s.len + l) * s.inner + i] - mx);
      out[o * s.inner + i] = mx + std::log(acc);
    }
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  std::size_t ax = resolve_axis(axis, x.rank());
  Axis3 s = split_axis(x.shape(), ax);
  if (s.len == 0) throw std::invalid_argument("softmax: empty axis");
  Tensor out(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, x[(o * s.len + l) * s.inner + i]);
      double acc = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        std::size_t k = (o * s.len + l) * s.inner + i;
        out[k] = std::exp(x[k] - mx);
        acc += out[k];
      }
      for (std::size_t l = 0; l < s.len; ++l) out[(o * s.len + l) * s.inner + i] /= acc;
    }
  }
  return out;
}

Tensor log_softmax(const Tensor& x, int axis) {
  std::size_t ax = resolve_axis(axis, x.rank());
  Axis3 s = split_axis(x.shape(), ax);
  Tensor lse = logsumexp(x, axis);
  Tensor out(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t l = 0; l < s.len; ++l) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        std::size_t k = (o * s.len + l) * s.inner + i;
        out[k] = x[k] - lse[o * s.inner + i];
      }
    }
  }
  return out;
}

}  // namespace kernels
}  // namespace oex
