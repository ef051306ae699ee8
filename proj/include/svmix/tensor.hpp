#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "svmix/error.hpp"
#include "svmix/rng.hpp"

namespace svmix {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

// One vertex of the dynamic (define-by-run) tape. Parent links form the DAG;
// `backward_fn` reads this node's transient gradient and accumulates into the
// parents' transient buffers. Persistent gradients live only on leaves.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // persistent; allocated for requires_grad leaves
  std::vector<double> tmp;   // transient buffer used during one backward pass
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";
  bool requires_grad = false;
  bool is_leaf = true;
};

}  // namespace detail

// Dense float64 multi-dimensional array with reverse-mode autodiff.
// Value-semantic handle onto a tape node; data is immutable after forward
// creation except for gradient buffers and explicit leaf updates between
// optimization steps (mutable_values).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node()->shape; }
  std::size_t ndim() const { return node()->shape.size(); }
  std::size_t size() const { return node()->data.size(); }
  bool requires_grad() const { return node()->requires_grad; }
  bool is_leaf() const { return node()->is_leaf; }

  const std::vector<double>& values() const { return node()->data; }
  // In-place update of a leaf's values (parameter step, EMA). Forbidden on
  // interior nodes: recorded graphs cache forward values.
  std::vector<double>& mutable_values();
  double item() const;

  // Gradient of a requires_grad leaf; zero-filled until a backward touches it.
  const std::vector<double>& grad() const;
  void zero_grad();

  // Same values, cut out of the graph: no gradient flows through the result.
  Tensor detach() const;

  // Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls.
  void backward() const;

  std::shared_ptr<detail::Node> node_ptr() const { return node_; }

 private:
  friend Tensor wrap_node(std::shared_ptr<detail::Node> n);
  detail::Node* node() const;
  std::shared_ptr<detail::Node> node_;
};

// ---- elementwise & reduction suite ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // Hadamard
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor rsub_scalar(double s, const Tensor& a);  // s - a
Tensor mean(const Tensor& a, std::size_t axis);
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);
Tensor abs(const Tensor& a);

// ---- shape ops ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a, const std::vector<std::size_t>& perm);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Block replication along `axis`: index i expands to [i*factor, (i+1)*factor).
Tensor repeat_axis(const Tensor& a, std::size_t axis, std::size_t factor);
// Reorder along axis 0: out[i] = a[idx[i]]. idx need not be a permutation.
Tensor take_axis0(const Tensor& a, const std::vector<std::size_t>& idx);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor bmm(const Tensor& a, const Tensor& b);     // [g,m,k] x [g,k,n]

// ---- nonlinearities ----
Tensor softmax(const Tensor& a, std::size_t axis);
Tensor log_softmax(const Tensor& a, std::size_t axis);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor softsign(const Tensor& a);  // x / (1 + |x|), a cheap bounded activation

// ---- video trunk ops ----
// x: [N,C,H,W], w: [OC,IC,KH,KW], b: [OC]; stride 1, zero padding `pad`.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              std::size_t pad);
// 2x2 average pooling; H and W must be even.
Tensor avg_pool2(const Tensor& x);
// Non-overlapping temporal mixing: x: [B,T,C,H,W], w: [S,OC,IC], b: [OC],
// kernel == stride == S, so each output timestamp sees a disjoint window.
Tensor temporal_conv(const Tensor& x, const Tensor& w, const Tensor& b,
                     std::size_t window);

// ---- initializers ----
// He-style fan-in scaled normal init.
Tensor randn_fan_in(Shape shape, std::size_t fan_in, Rng& rng,
                    bool requires_grad);
Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
             bool requires_grad = false);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }

}  // namespace svmix
