#pragma once

// Reverse-mode automatic differentiation over dense float64 tensors.
//
// Every operation records its inputs and a backward closure on the output
// node when any input requires a gradient. Calling backward() on a scalar
// walks the recorded graph once in reverse topological order and then
// releases it; leaves keep their accumulated gradients until zero_grad().

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mrhd {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool consumed = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void ensure_grad();
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);
  static Tensor identity(std::size_t n);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct write access; only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t i, std::size_t j) const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  // Zero-filled view when no gradient has arrived yet.
  std::vector<double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // New leaf holding a copy of the values, cut from any graph.
  Tensor detach() const;
  // Deep copy preserving requires_grad; the copy is a fresh leaf.
  Tensor clone() const;

  // Accumulates d(this)/d(leaf) into every reachable requires_grad leaf.
  void backward() const;

  const char* op_name() const;
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);

// Elementwise, unary.
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
// Gradient passes where lo <= x <= hi, zero outside.
Tensor clamp(const Tensor& a, double lo, double hi);

// Reductions. Reducing the only axis of a vector gives a rank-0 scalar.
Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::size_t axis);

Tensor softmax(const Tensor& a, std::size_t axis);
// Normalizes every row over the last axis, then applies gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Shape manipulation.
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
// Picks entries (rank 1) or rows (rank 2) along axis 0; repeats allowed.
Tensor gather(const Tensor& a, const std::vector<std::size_t>& indices);

// Vector-over-rows broadcasting for a [rows x cols] matrix.
Tensor add_rowvec(const Tensor& x, const Tensor& v);       // v: [cols]
Tensor scale_rows(const Tensor& x, const Tensor& s);       // s: [rows]
Tensor broadcast_rows(const Tensor& v, std::size_t rows);  // [cols] -> [rows x cols]

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace mrhd
