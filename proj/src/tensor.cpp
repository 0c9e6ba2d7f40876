#include "mrhd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "mrhd/error.hpp"

namespace mrhd {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t s : shape) n *= s;
  return n;
}

namespace detail {

void Node::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

}  // namespace detail

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

NodePtr make_leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  n->requires_grad = requires_grad;
  return n;
}

// Builds an op result. The backward closure is kept only if some input
// participates in differentiation.
Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::vector<NodePtr> inputs, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(values);
  n->op = op;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in->requires_grad;
  if (needs) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(a.shape()));
  }
}

void require_axis(const char* op, const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for " + shape_str(a.shape()));
  }
}

// outer x n x inner decomposition around an axis.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (i != axis) out.push_back(shape[i]);
  return out;
}

template <typename F, typename D>
Tensor unary(const char* op, const Tensor& a, F f, D dfdx) {
  const auto& x = a.node()->data;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  auto an = a.node();
  return make_result(op, a.shape(), std::move(y), {an}, [an, dfdx](Node& self) {
    if (!an->requires_grad) return;
    an->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      an->grad[i] += self.grad[i] * dfdx(an->data[i], self.data[i]);
  });
}

// c[m x n] += a[m x k] * b[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x k] += g[m x n] * b[k x n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * g[m x n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(make_leaf({}, {value}, requires_grad));
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return Tensor(make_leaf({n}, std::move(values), requires_grad));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
  std::vector<double> values;
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("matrix literal has ragged rows");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor(make_leaf({r, c}, std::move(values), requires_grad));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t = zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.node_->data[i * n + i] = 1.0;
  return t;
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_str(shape()));
  return shape()[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!node_) throw ContractError("use of undefined tensor");
  return node_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::size_t i) const {
  if (i >= numel()) throw DimensionError("index out of range");
  return node_->data[i];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  if (rank() != 2 || i >= shape()[0] || j >= shape()[1])
    throw DimensionError("index out of range for " + shape_str(shape()));
  return node_->data[i * shape()[1] + j];
}

std::vector<double> Tensor::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_) throw ContractError("use of undefined tensor");
  node_->requires_grad = on;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
  if (!node_) throw ContractError("use of undefined tensor");
  if (node_->grad.empty()) return std::vector<double>(node_->data.size(), 0.0);
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!node_) throw ContractError("use of undefined tensor");
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(make_leaf(shape(), node_->data, false)); }

Tensor Tensor::clone() const {
  return Tensor(make_leaf(shape(), node_->data, node_->requires_grad));
}

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

void Tensor::backward() const {
  if (!node_) throw ContractError("backward on undefined tensor");
  if (numel() != 1)
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(shape()));
  if (node_->consumed) throw ContractError("graph already consumed by an earlier backward");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; inputs land before their consumers.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    Node* n = stack.back().first;
    const std::size_t next = stack.back().second;
    if (next < n->inputs.size()) {
      ++stack.back().second;
      Node* child = n->inputs[next].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  // Release the tape; interior nodes cannot be replayed.
  for (Node* n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->inputs.clear();
      n->consumed = true;
    }
  }
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(m * n, 0.0);
  gemm_nn(a.node()->data.data(), b.node()->data.data(), c.data(), m, k, n);
  auto an = a.node(), bn = b.node();
  return make_result("matmul", {m, n}, std::move(c), {an, bn}, [an, bn, m, k, n](Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      gemm_nt(self.grad.data(), bn->data.data(), an->grad.data(), m, n, k);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      gemm_tn(an->data.data(), self.grad.data(), bn->grad.data(), m, k, n);
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t r = a.dim(0), c = a.dim(1);
  const auto& x = a.node()->data;
  std::vector<double> y(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[j * r + i] = x[i * c + j];
  auto an = a.node();
  return make_result("transpose", {c, r}, std::move(y), {an}, [an, r, c](Node& self) {
    an->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += self.grad[j * r + i];
  });
}

// ---------------------------------------------------------------------------
// Binary elementwise

namespace {

template <typename F, typename DA, typename DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  require_same_shape(op, a, b);
  const auto& x = a.node()->data;
  const auto& y = b.node()->data;
  std::vector<double> z(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) z[i] = f(x[i], y[i]);
  auto an = a.node(), bn = b.node();
  return make_result(op, a.shape(), std::move(z), {an, bn}, [an, bn, da, db](Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        an->grad[i] += self.grad[i] * da(an->data[i], bn->data[i]);
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        bn->grad[i] += self.grad[i] * db(an->data[i], bn->data[i]);
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

// Ties route the gradient to the first argument.
Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary(
      "maximum", a, b, [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary(
      "minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

// ---------------------------------------------------------------------------
// Unary elementwise

Tensor scale(const Tensor& a, double factor) {
  return unary(
      "scale", a, [factor](double x) { return x * factor; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      "add_scalar", a, [value](double x) { return x + value; },
      [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Tensor abs(const Tensor& a) {
  return unary(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor tanh(const Tensor& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary(
      "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.node()->data) s += v;
  auto an = a.node();
  return make_result("sum", {}, {s}, {an}, [an](Node& self) {
    an->ensure_grad();
    for (double& g : an->grad) g += self.grad[0];
  });
}

Tensor sum(const Tensor& a, std::size_t axis) {
  require_axis("sum", a, axis);
  const AxisSplit s = split_axis(a.shape(), axis);
  const auto& x = a.node()->data;
  std::vector<double> y(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.n; ++k)
      for (std::size_t i = 0; i < s.inner; ++i)
        y[o * s.inner + i] += x[(o * s.n + k) * s.inner + i];
  auto an = a.node();
  return make_result("sum_axis", drop_axis(a.shape(), axis), std::move(y), {an},
                     [an, s](Node& self) {
                       an->ensure_grad();
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t k = 0; k < s.n; ++k)
                           for (std::size_t i = 0; i < s.inner; ++i)
                             an->grad[(o * s.n + k) * s.inner + i] += self.grad[o * s.inner + i];
                     });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean(const Tensor& a, std::size_t axis) {
  require_axis("mean", a, axis);
  if (a.dim(axis) == 0) throw DimensionError("mean over empty axis");
  return scale(sum(a, axis), 1.0 / static_cast<double>(a.dim(axis)));
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  require_axis("softmax", a, axis);
  const AxisSplit s = split_axis(a.shape(), axis);
  const auto& x = a.node()->data;
  std::vector<double> y(x.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      auto idx = [&](std::size_t k) { return (o * s.n + k) * s.inner + i; };
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < s.n; ++k) m = std::max(m, x[idx(k)]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) z += (y[idx(k)] = std::exp(x[idx(k)] - m));
      for (std::size_t k = 0; k < s.n; ++k) y[idx(k)] /= z;
    }
  }
  auto an = a.node();
  return make_result("softmax", a.shape(), std::move(y), {an}, [an, s](Node& self) {
    an->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        auto idx = [&](std::size_t k) { return (o * s.n + k) * s.inner + i; };
        double dot = 0.0;
        for (std::size_t k = 0; k < s.n; ++k) dot += self.grad[idx(k)] * self.data[idx(k)];
        for (std::size_t k = 0; k < s.n; ++k)
          an->grad[idx(k)] += self.data[idx(k)] * (self.grad[idx(k)] - dot);
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0) throw DimensionError("layer_norm on a scalar");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw DimensionError("layer_norm: feature size " + std::to_string(d) + " vs gain " +
                         shape_str(gain.shape()) + " and bias " + shape_str(bias.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto& xv = x.node()->data;
  const auto& g = gain.node()->data;
  const auto& b = bias.node()->data;
  std::vector<double> y(xv.size()), xhat(xv.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mu) * inv_std[r];
      y[r * d + j] = xhat[r * d + j] * g[j] + b[j];
    }
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  return make_result(
      "layer_norm", x.shape(), std::move(y), {xn, gn, bn},
      [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](Node& self) {
        const auto& dy = self.grad;
        if (gn->requires_grad) {
          gn->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gn->grad[j] += dy[r * d + j] * xhat[r * d + j];
        }
        if (bn->requires_grad) {
          bn->ensure_grad();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) bn->grad[j] += dy[r * d + j];
        }
        if (xn->requires_grad) {
          xn->ensure_grad();
          const auto& g = gn->data;
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = dy[r * d + j] * g[j];
              m1 += dxh;
              m2 += dxh * xhat[r * d + j];
            }
            m1 /= static_cast<double>(d);
            m2 /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              const double dxh = dy[r * d + j] * g[j];
              xn->grad[r * d + j] += inv_std[r] * (dxh - m1 - xhat[r * d + j] * m2);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  }
  auto an = a.node();
  return make_result("reshape", std::move(shape), an->data, {an}, [an](Node& self) {
    an->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  require_axis("concat", parts[0], axis);
  Shape out = parts[0].shape();
  out[axis] = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != out.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < probe.size(); ++i) {
      if (i != axis && probe[i] != parts[0].shape()[i]) {
        throw DimensionError("concat: shape mismatch " + shape_str(parts[0].shape()) + " vs " +
                             shape_str(probe) + " along axis " + std::to_string(axis));
      }
    }
    out[axis] += probe[axis];
  }
  const AxisSplit so = split_axis(out, axis);
  std::vector<double> y(shape_numel(out));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const AxisSplit sp = split_axis(p.shape(), axis);
    const auto& x = p.node()->data;
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.n; ++k)
        std::copy_n(x.data() + (o * sp.n + k) * sp.inner, sp.inner,
                    y.data() + (o * so.n + off + k) * so.inner);
    off += sp.n;
  }
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return make_result("concat", out, std::move(y), nodes, [nodes, offsets, so](Node& self) {
    for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
      const auto& pn = nodes[pi];
      if (!pn->requires_grad) continue;
      pn->ensure_grad();
      const std::size_t n = pn->data.size() / (so.outer * so.inner);
      for (std::size_t o = 0; o < so.outer; ++o)
        for (std::size_t k = 0; k < n; ++k)
          for (std::size_t i = 0; i < so.inner; ++i)
            pn->grad[(o * n + k) * so.inner + i] +=
                self.grad[(o * so.n + offsets[pi] + k) * so.inner + i];
    }
  });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  require_axis("slice", a, axis);
  if (begin > end || end > a.dim(axis)) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for axis of size " + std::to_string(a.dim(axis)));
  }
  const AxisSplit s = split_axis(a.shape(), axis);
  Shape out = a.shape();
  out[axis] = end - begin;
  const std::size_t n = end - begin;
  const auto& x = a.node()->data;
  std::vector<double> y(shape_numel(out));
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(x.data() + (o * s.n + begin) * s.inner, n * s.inner,
                y.data() + o * n * s.inner);
  auto an = a.node();
  return make_result("slice", out, std::move(y), {an}, [an, s, begin, n](Node& self) {
    an->ensure_grad();
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < n * s.inner; ++k)
        an->grad[(o * s.n + begin) * s.inner + k] += self.grad[o * n * s.inner + k];
  });
}

Tensor gather(const Tensor& a, const std::vector<std::size_t>& indices) {
  if (a.rank() != 1 && a.rank() != 2)
    throw DimensionError("gather expects rank 1 or 2, got " + shape_str(a.shape()));
  const std::size_t rows = a.dim(0);
  const std::size_t width = a.rank() == 2 ? a.dim(1) : 1;
  for (std::size_t i : indices) {
    if (i >= rows)
      throw DimensionError("gather: index " + std::to_string(i) + " out of range " +
                           std::to_string(rows));
  }
  Shape out = a.shape();
  out[0] = indices.size();
  const auto& x = a.node()->data;
  std::vector<double> y(indices.size() * width);
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(x.data() + indices[r] * width, width, y.data() + r * width);
  auto an = a.node();
  return make_result("gather", out, std::move(y), {an}, [an, indices, width](Node& self) {
    an->ensure_grad();
    for (std::size_t r = 0; r < indices.size(); ++r)
      for (std::size_t j = 0; j < width; ++j)
        an->grad[indices[r] * width + j] += self.grad[r * width + j];
  });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  require_rank("add_rowvec", x, 2);
  if (v.shape() != Shape{x.dim(1)}) {
    throw DimensionError("add_rowvec: " + shape_str(x.shape()) + " with vector " +
                         shape_str(v.shape()));
  }
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> y = x.node()->data;
  const auto& vv = v.node()->data;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] += vv[j];
  auto xn = x.node(), vn = v.node();
  return make_result("add_rowvec", x.shape(), std::move(y), {xn, vn}, [xn, vn, r, c](Node& self) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < r * c; ++i) xn->grad[i] += self.grad[i];
    }
    if (vn->requires_grad) {
      vn->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) vn->grad[j] += self.grad[i * c + j];
    }
  });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  require_rank("scale_rows", x, 2);
  if (s.shape() != Shape{x.dim(0)}) {
    throw DimensionError("scale_rows: " + shape_str(x.shape()) + " with row weights " +
                         shape_str(s.shape()));
  }
  const std::size_t r = x.dim(0), c = x.dim(1);
  const auto& xv = x.node()->data;
  const auto& sv = s.node()->data;
  std::vector<double> y(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) y[i * c + j] = xv[i * c + j] * sv[i];
  auto xn = x.node(), sn = s.node();
  return make_result("scale_rows", x.shape(), std::move(y), {xn, sn}, [xn, sn, r, c](Node& self) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) xn->grad[i * c + j] += self.grad[i * c + j] * sn->data[i];
    }
    if (sn->requires_grad) {
      sn->ensure_grad();
      for (std::size_t i = 0; i < r; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < c; ++j) acc += self.grad[i * c + j] * xn->data[i * c + j];
        sn->grad[i] += acc;
      }
    }
  });
}

Tensor broadcast_rows(const Tensor& v, std::size_t rows) {
  require_rank("broadcast_rows", v, 1);
  const std::size_t c = v.dim(0);
  std::vector<double> y(rows * c);
  for (std::size_t i = 0; i < rows; ++i) std::copy_n(v.node()->data.data(), c, y.data() + i * c);
  auto vn = v.node();
  return make_result("broadcast_rows", {rows, c}, std::move(y), {vn}, [vn, rows, c](Node& self) {
    vn->ensure_grad();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < c; ++j) vn->grad[j] += self.grad[i * c + j];
  });
}

}  // namespace mrhd
