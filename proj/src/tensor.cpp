#include "svmix/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace svmix {

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

namespace {

using detail::Node;

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<double> data,
                                bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  n->is_leaf = true;
  if (requires_grad) n->grad.assign(n->data.size(), 0.0);
  return n;
}

std::shared_ptr<Node> make_op(const char* op, Shape shape,
                              std::vector<double> data,
                              std::vector<std::shared_ptr<Node>> parents,
                              std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = op;
  n->is_leaf = false;
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  n->parents = std::move(parents);
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

void ensure_tmp(Node& n) {
  if (n.tmp.size() != n.data.size()) n.tmp.assign(n.data.size(), 0.0);
}

// Decompose a shape around `axis` into (outer, len, inner) so that the
// flat index of element (o, a, i) is (o * len + a) * inner + i.
struct AxisView {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.size())
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + shape_str(s));
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  v.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor wrap_node(std::shared_ptr<Node> n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

Node* Tensor::node() const {
  if (!node_) throw ContractError("use of default-constructed tensor");
  return node_.get();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = numel(shape);
  return wrap_node(
      make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = numel(shape);
  return wrap_node(make_leaf(std::move(shape), std::vector<double>(n, value),
                             requires_grad));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  if (numel(shape) != data.size())
    throw DimensionError("from_data: shape " + shape_str(shape) + " wants " +
                         std::to_string(numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  return wrap_node(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

std::vector<double>& Tensor::mutable_values() {
  Node* n = node();
  if (!n->is_leaf)
    throw ContractError(
        "mutable_values: in-place update is only allowed on leaf tensors");
  return n->data;
}

double Tensor::item() const {
  const Node* n = node();
  if (n->data.size() != 1)
    throw ContractError("item: tensor of shape " + shape_str(n->shape) +
                        " is not a scalar");
  return n->data[0];
}

const std::vector<double>& Tensor::grad() const {
  const Node* n = node();
  if (!n->is_leaf || !n->requires_grad)
    throw ContractError(
        "grad: gradients are tracked only on requires_grad leaf tensors");
  return n->grad;
}

void Tensor::zero_grad() {
  Node* n = node();
  if (!n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  const Node* n = node();
  return wrap_node(make_leaf(n->shape, n->data, /*requires_grad=*/false));
}

void Tensor::backward() const {
  Node* root = node();
  if (root->data.size() != 1)
    throw ContractError("backward: loss must be a scalar, got shape " +
                        shape_str(root->shape));
  if (!root->requires_grad) return;  // nothing reachable wants gradients

  // Iterative post-order DFS: parents land before children, root lands last.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root->tmp.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->tmp.empty()) continue;  // no gradient reached this node
    if (n->is_leaf) {
      for (std::size_t i = 0; i < n->tmp.size(); ++i) n->grad[i] += n->tmp[i];
    } else if (n->backward_fn) {
      n->backward_fn(*n);
    }
  }
  for (Node* n : order) {
    n->tmp.clear();
    n->tmp.shrink_to_fit();
  }
}

// ---------------------------------------------------------------------------
// elementwise & reductions
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto pa = a.node_ptr();
  auto pb = b.node_ptr();
  return wrap_node(make_op("add", a.shape(), std::move(out), {pa, pb},
                           [pa = pa.get(), pb = pb.get()](Node& self) {
                             if (pa->requires_grad) {
                               ensure_tmp(*pa);
                               for (std::size_t i = 0; i < self.tmp.size(); ++i)
                                 pa->tmp[i] += self.tmp[i];
                             }
                             if (pb->requires_grad) {
                               ensure_tmp(*pb);
                               for (std::size_t i = 0; i < self.tmp.size(); ++i)
                                 pb->tmp[i] += self.tmp[i];
                             }
                           }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  auto pa = a.node_ptr();
  auto pb = b.node_ptr();
  return wrap_node(make_op("sub", a.shape(), std::move(out), {pa, pb},
                           [pa = pa.get(), pb = pb.get()](Node& self) {
                             if (pa->requires_grad) {
                               ensure_tmp(*pa);
                               for (std::size_t i = 0; i < self.tmp.size(); ++i)
                                 pa->tmp[i] += self.tmp[i];
                             }
                             if (pb->requires_grad) {
                               ensure_tmp(*pb);
                               for (std::size_t i = 0; i < self.tmp.size(); ++i)
                                 pb->tmp[i] -= self.tmp[i];
                             }
                           }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto pa = a.node_ptr();
  auto pb = b.node_ptr();
  return wrap_node(make_op("mul", a.shape(), std::move(out), {pa, pb},
                           [pa = pa.get(), pb = pb.get()](Node& self) {
                             if (pa->requires_grad) {
                               ensure_tmp(*pa);
                               for (std::size_t i = 0; i < self.tmp.size(); ++i)
                                 pa->tmp[i] += self.tmp[i] * pb->data[i];
                             }
                             if (pb->requires_grad) {
                               ensure_tmp(*pb);
                               for (std::size_t i = 0; i < self.tmp.size(); ++i)
                                 pb->tmp[i] += self.tmp[i] * pa->data[i];
                             }
                           }));
}

Tensor add_scalar(const Tensor& a, double s) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + s;
  auto pa = a.node_ptr();
  return wrap_node(make_op("add_scalar", a.shape(), std::move(out), {pa},
                           [pa = pa.get()](Node& self) {
                             ensure_tmp(*pa);
                             for (std::size_t i = 0; i < self.tmp.size(); ++i)
                               pa->tmp[i] += self.tmp[i];
                           }));
}

Tensor mul_scalar(const Tensor& a, double s) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  auto pa = a.node_ptr();
  return wrap_node(make_op("mul_scalar", a.shape(), std::move(out), {pa},
                           [pa = pa.get(), s](Node& self) {
                             ensure_tmp(*pa);
                             for (std::size_t i = 0; i < self.tmp.size(); ++i)
                               pa->tmp[i] += self.tmp[i] * s;
                           }));
}

Tensor rsub_scalar(double s, const Tensor& a) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s - av[i];
  auto pa = a.node_ptr();
  return wrap_node(make_op("rsub_scalar", a.shape(), std::move(out), {pa},
                           [pa = pa.get()](Node& self) {
                             ensure_tmp(*pa);
                             for (std::size_t i = 0; i < self.tmp.size(); ++i)
                               pa->tmp[i] -= self.tmp[i];
                           }));
}

Tensor mean(const Tensor& a, std::size_t axis) {
  AxisView v = axis_view(a.shape(), axis, "mean");
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const auto& av = a.values();
  std::vector<double> out(v.outer * v.inner, 0.0);
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t l = 0; l < v.len; ++l) {
      const double* src = av.data() + (o * v.len + l) * v.inner;
      double* dst = out.data() + o * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i];
    }
  const double inv = 1.0 / static_cast<double>(v.len);
  for (double& x : out) x *= inv;
  auto pa = a.node_ptr();
  return wrap_node(make_op("mean", std::move(out_shape), std::move(out), {pa},
                           [pa = pa.get(), v, inv](Node& self) {
                             ensure_tmp(*pa);
                             for (std::size_t o = 0; o < v.outer; ++o)
                               for (std::size_t l = 0; l < v.len; ++l) {
                                 double* dst =
                                     pa->tmp.data() + (o * v.len + l) * v.inner;
                                 const double* src =
                                     self.tmp.data() + o * v.inner;
                                 for (std::size_t i = 0; i < v.inner; ++i)
                                   dst[i] += src[i] * inv;
                               }
                           }));
}

Tensor sum_all(const Tensor& a) {
  const auto& av = a.values();
  double acc = 0.0;
  for (double x : av) acc += x;
  auto pa = a.node_ptr();
  return wrap_node(make_op("sum_all", Shape{1}, {acc}, {pa},
                           [pa = pa.get()](Node& self) {
                             ensure_tmp(*pa);
                             const double g = self.tmp[0];
                             for (double& x : pa->tmp) x += g;
                           }));
}

Tensor mean_all(const Tensor& a) {
  return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor abs(const Tensor& a) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(av[i]);
  auto pa = a.node_ptr();
  return wrap_node(make_op("abs", a.shape(), std::move(out), {pa},
                           [pa = pa.get()](Node& self) {
                             ensure_tmp(*pa);
                             for (std::size_t i = 0; i < self.tmp.size(); ++i) {
                               const double x = pa->data[i];
                               if (x > 0.0)
                                 pa->tmp[i] += self.tmp[i];
                               else if (x < 0.0)
                                 pa->tmp[i] -= self.tmp[i];
                             }
                           }));
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) +
                         " as " + shape_str(shape));
  auto pa = a.node_ptr();
  return wrap_node(make_op("reshape", std::move(shape),
                           std::vector<double>(a.values()), {pa},
                           [pa = pa.get()](Node& self) {
                             ensure_tmp(*pa);
                             for (std::size_t i = 0; i < self.tmp.size(); ++i)
                               pa->tmp[i] += self.tmp[i];
                           }));
}

namespace {

// Flat index remap for an axis permutation: out[j] = in[remap[j]].
std::vector<std::size_t> permutation_remap(const Shape& in_shape,
                                           const std::vector<std::size_t>& perm,
                                           Shape& out_shape) {
  const std::size_t nd = in_shape.size();
  out_shape.resize(nd);
  for (std::size_t i = 0; i < nd; ++i) out_shape[i] = in_shape[perm[i]];
  std::vector<std::size_t> in_strides(nd, 1);
  for (std::size_t i = nd; i-- > 1;)
    in_strides[i - 1] = in_strides[i] * in_shape[i];
  std::vector<std::size_t> remap(numel(in_shape));
  std::vector<std::size_t> idx(nd, 0);
  for (std::size_t j = 0; j < remap.size(); ++j) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < nd; ++i) src += idx[i] * in_strides[perm[i]];
    remap[j] = src;
    for (std::size_t i = nd; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  return remap;
}

}  // namespace

Tensor transpose(const Tensor& a, const std::vector<std::size_t>& perm) {
  const Shape& s = a.shape();
  if (perm.size() != s.size())
    throw DimensionError("transpose: permutation of length " +
                         std::to_string(perm.size()) + " for shape " +
                         shape_str(s));
  std::vector<bool> used(s.size(), false);
  for (std::size_t p : perm) {
    if (p >= s.size() || used[p])
      throw DimensionError("transpose: invalid axis permutation for shape " +
                           shape_str(s));
    used[p] = true;
  }
  Shape out_shape;
  auto remap = permutation_remap(s, perm, out_shape);
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = av[remap[j]];
  auto pa = a.node_ptr();
  return wrap_node(make_op("transpose", std::move(out_shape), std::move(out),
                           {pa},
                           [pa = pa.get(), remap = std::move(remap)](Node& self) {
                             ensure_tmp(*pa);
                             for (std::size_t j = 0; j < self.tmp.size(); ++j)
                               pa->tmp[remap[j]] += self.tmp[j];
                           }));
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no tensors given");
  const Shape& first = parts[0].shape();
  std::size_t total_len = 0;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    if (s.size() != first.size())
      throw DimensionError("concat: rank mismatch " + shape_str(first) +
                           " vs " + shape_str(s));
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != first[i])
        throw DimensionError("concat: shape mismatch off axis " +
                             std::to_string(axis) + ": " + shape_str(first) +
                             " vs " + shape_str(s));
    total_len += s[axis];
  }
  AxisView v0 = axis_view(first, axis, "concat");
  Shape out_shape = first;
  out_shape[axis] = total_len;
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;  // start of each part along the axis
  std::size_t off = 0;
  for (const Tensor& t : parts) {
    offsets.push_back(off);
    const auto& tv = t.values();
    const std::size_t len = t.shape()[axis];
    for (std::size_t o = 0; o < v0.outer; ++o)
      std::copy(tv.begin() + static_cast<std::ptrdiff_t>(o * len * v0.inner),
                tv.begin() +
                    static_cast<std::ptrdiff_t>((o + 1) * len * v0.inner),
                out.begin() + static_cast<std::ptrdiff_t>(
                                  (o * total_len + off) * v0.inner));
    off += len;
  }
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<Node*> raw;
  std::vector<std::size_t> lens;
  for (const Tensor& t : parts) {
    parents.push_back(t.node_ptr());
    raw.push_back(t.node_ptr().get());
    lens.push_back(t.shape()[axis]);
  }
  return wrap_node(make_op(
      "concat", std::move(out_shape), std::move(out), std::move(parents),
      [raw = std::move(raw), offsets = std::move(offsets),
       lens = std::move(lens), v0, total_len](Node& self) {
        for (std::size_t k = 0; k < raw.size(); ++k) {
          Node* p = raw[k];
          if (!p->requires_grad) continue;
          ensure_tmp(*p);
          for (std::size_t o = 0; o < v0.outer; ++o) {
            const double* src =
                self.tmp.data() + (o * total_len + offsets[k]) * v0.inner;
            double* dst = p->tmp.data() + o * lens[k] * v0.inner;
            for (std::size_t i = 0; i < lens[k] * v0.inner; ++i)
              dst[i] += src[i];
          }
        }
      }));
}

Tensor repeat_axis(const Tensor& a, std::size_t axis, std::size_t factor) {
  if (factor == 0) throw DimensionError("repeat_axis: factor must be >= 1");
  AxisView v = axis_view(a.shape(), axis, "repeat_axis");
  Shape out_shape = a.shape();
  out_shape[axis] *= factor;
  const auto& av = a.values();
  std::vector<double> out(numel(out_shape));
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t l = 0; l < v.len; ++l) {
      const double* src = av.data() + (o * v.len + l) * v.inner;
      for (std::size_t f = 0; f < factor; ++f) {
        double* dst =
            out.data() + (o * v.len * factor + l * factor + f) * v.inner;
        std::copy(src, src + v.inner, dst);
      }
    }
  auto pa = a.node_ptr();
  return wrap_node(make_op(
      "repeat_axis", std::move(out_shape), std::move(out), {pa},
      [pa = pa.get(), v, factor](Node& self) {
        ensure_tmp(*pa);
        for (std::size_t o = 0; o < v.outer; ++o)
          for (std::size_t l = 0; l < v.len; ++l) {
            double* dst = pa->tmp.data() + (o * v.len + l) * v.inner;
            for (std::size_t f = 0; f < factor; ++f) {
              const double* src =
                  self.tmp.data() +
                  (o * v.len * factor + l * factor + f) * v.inner;
              for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i];
            }
          }
      }));
}

Tensor take_axis0(const Tensor& a, const std::vector<std::size_t>& idx) {
  const Shape& s = a.shape();
  if (s.empty()) throw DimensionError("take_axis0: rank-0 tensor");
  std::size_t row = a.size() / s[0];
  for (std::size_t i : idx)
    if (i >= s[0])
      throw DimensionError("take_axis0: index " + std::to_string(i) +
                           " out of range for shape " + shape_str(s));
  Shape out_shape = s;
  out_shape[0] = idx.size();
  const auto& av = a.values();
  std::vector<double> out(idx.size() * row);
  for (std::size_t j = 0; j < idx.size(); ++j)
    std::copy(av.begin() + static_cast<std::ptrdiff_t>(idx[j] * row),
              av.begin() + static_cast<std::ptrdiff_t>((idx[j] + 1) * row),
              out.begin() + static_cast<std::ptrdiff_t>(j * row));
  auto pa = a.node_ptr();
  return wrap_node(make_op("take_axis0", std::move(out_shape), std::move(out),
                           {pa}, [pa = pa.get(), idx, row](Node& self) {
                             ensure_tmp(*pa);
                             for (std::size_t j = 0; j < idx.size(); ++j) {
                               const double* src = self.tmp.data() + j * row;
                               double* dst = pa->tmp.data() + idx[j] * row;
                               for (std::size_t i = 0; i < row; ++i)
                                 dst[i] += src[i];
                             }
                           }));
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

namespace {

// C[m,n] += A[m,k] * B[k,n], ikj order so the inner loop is contiguous.
void gemm_acc(const double* A, const double* B, double* C, std::size_t m,
              std::size_t k, std::size_t n, bool transpose_a,
              bool transpose_b) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double a = transpose_a ? A[p * m + i] : A[i * k + p];
      if (a == 0.0) continue;
      double* c = C + i * n;
      if (!transpose_b) {
        const double* b = B + p * n;
        for (std::size_t j = 0; j < n; ++j) c[j] += a * b[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) c[j] += a * B[j * k + p];
      }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
    throw DimensionError("matmul: incompatible shapes " + shape_str(sa) +
                         " x " + shape_str(sb));
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  std::vector<double> out(m * n, 0.0);
  gemm_acc(a.values().data(), b.values().data(), out.data(), m, k, n, false,
           false);
  auto pa = a.node_ptr();
  auto pb = b.node_ptr();
  return wrap_node(make_op(
      "matmul", {m, n}, std::move(out), {pa, pb},
      [pa = pa.get(), pb = pb.get(), m, k, n](Node& self) {
        if (pa->requires_grad) {
          ensure_tmp(*pa);  // dA = G * B^T
          gemm_acc(self.tmp.data(), pb->data.data(), pa->tmp.data(), m, n, k,
                   false, true);
        }
        if (pb->requires_grad) {
          ensure_tmp(*pb);  // dB = A^T * G
          gemm_acc(pa->data.data(), self.tmp.data(), pb->tmp.data(), k, m, n,
                   true, false);
        }
      }));
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1])
    throw DimensionError("bmm: incompatible shapes " + shape_str(sa) + " x " +
                         shape_str(sb));
  const std::size_t g = sa[0], m = sa[1], k = sa[2], n = sb[2];
  std::vector<double> out(g * m * n, 0.0);
  for (std::size_t i = 0; i < g; ++i)
    gemm_acc(a.values().data() + i * m * k, b.values().data() + i * k * n,
             out.data() + i * m * n, m, k, n, false, false);
  auto pa = a.node_ptr();
  auto pb = b.node_ptr();
  return wrap_node(make_op(
      "bmm", {g, m, n}, std::move(out), {pa, pb},
      [pa = pa.get(), pb = pb.get(), g, m, k, n](Node& self) {
        for (std::size_t i = 0; i < g; ++i) {
          const double* G = self.tmp.data() + i * m * n;
          if (pa->requires_grad) {
            ensure_tmp(*pa);
            gemm_acc(G, pb->data.data() + i * k * n, pa->tmp.data() + i * m * k,
                     m, n, k, false, true);
          }
          if (pb->requires_grad) {
            ensure_tmp(*pb);
            gemm_acc(pa->data.data() + i * m * k, G, pb->tmp.data() + i * k * n,
                     k, m, n, true, false);
          }
        }
      }));
}

// ---------------------------------------------------------------------------
// nonlinearities
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& a, std::size_t axis) {
  AxisView v = axis_view(a.shape(), axis, "softmax");
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.len * v.inner + i;
      double mx = av[base];
      for (std::size_t l = 1; l < v.len; ++l)
        mx = std::max(mx, av[base + l * v.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < v.len; ++l) {
        const double e = std::exp(av[base + l * v.inner] - mx);
        out[base + l * v.inner] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (std::size_t l = 0; l < v.len; ++l) out[base + l * v.inner] *= inv;
    }
  auto pa = a.node_ptr();
  return wrap_node(make_op(
      "softmax", a.shape(), std::move(out), {pa},
      [pa = pa.get(), v](Node& self) {
        ensure_tmp(*pa);
        for (std::size_t o = 0; o < v.outer; ++o)
          for (std::size_t i = 0; i < v.inner; ++i) {
            const std::size_t base = o * v.len * v.inner + i;
            double dot = 0.0;
            for (std::size_t l = 0; l < v.len; ++l) {
              const std::size_t q = base + l * v.inner;
              dot += self.tmp[q] * self.data[q];
            }
            for (std::size_t l = 0; l < v.len; ++l) {
              const std::size_t q = base + l * v.inner;
              pa->tmp[q] += self.data[q] * (self.tmp[q] - dot);
            }
          }
      }));
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  AxisView v = axis_view(a.shape(), axis, "log_softmax");
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.len * v.inner + i;
      double mx = av[base];
      for (std::size_t l = 1; l < v.len; ++l)
        mx = std::max(mx, av[base + l * v.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < v.len; ++l)
        z += std::exp(av[base + l * v.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t l = 0; l < v.len; ++l)
        out[base + l * v.inner] = av[base + l * v.inner] - lse;
    }
  auto pa = a.node_ptr();
  return wrap_node(make_op(
      "log_softmax", a.shape(), std::move(out), {pa},
      [pa = pa.get(), v](Node& self) {
        ensure_tmp(*pa);
        for (std::size_t o = 0; o < v.outer; ++o)
          for (std::size_t i = 0; i < v.inner; ++i) {
            const std::size_t base = o * v.len * v.inner + i;
            double gsum = 0.0;
            for (std::size_t l = 0; l < v.len; ++l)
              gsum += self.tmp[base + l * v.inner];
            for (std::size_t l = 0; l < v.len; ++l) {
              const std::size_t q = base + l * v.inner;
              pa->tmp[q] += self.tmp[q] - std::exp(self.data[q]) * gsum;
            }
          }
      }));
}

Tensor sigmoid(const Tensor& a) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = av[i];
    // Branch on sign so exp never overflows.
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
  }
  auto pa = a.node_ptr();
  return wrap_node(make_op("sigmoid", a.shape(), std::move(out), {pa},
                           [pa = pa.get()](Node& self) {
                             ensure_tmp(*pa);
                             for (std::size_t i = 0; i < self.tmp.size(); ++i) {
                               const double y = self.data[i];
                               pa->tmp[i] += self.tmp[i] * y * (1.0 - y);
                             }
                           }));
}

Tensor tanh(const Tensor& a) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
  auto pa = a.node_ptr();
  return wrap_node(make_op("tanh", a.shape(), std::move(out), {pa},
                           [pa = pa.get()](Node& self) {
                             ensure_tmp(*pa);
                             for (std::size_t i = 0; i < self.tmp.size(); ++i) {
                               const double y = self.data[i];
                               pa->tmp[i] += self.tmp[i] * (1.0 - y * y);
                             }
                           }));
}

Tensor softsign(const Tensor& a) {
  const auto& av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = av[i] / (1.0 + std::fabs(av[i]));
  auto pa = a.node_ptr();
  // d/dx [x/(1+|x|)] = 1/(1+|x|)^2, and 1/(1+|x|) = 1-|y|.
  return wrap_node(make_op("softsign", a.shape(), std::move(out), {pa},
                           [pa = pa.get()](Node& self) {
                             ensure_tmp(*pa);
                             for (std::size_t i = 0; i < self.tmp.size(); ++i) {
                               const double d = 1.0 - std::fabs(self.data[i]);
                               pa->tmp[i] += self.tmp[i] * d * d;
                             }
                           }));
}

// ---------------------------------------------------------------------------
// video trunk ops
// ---------------------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              std::size_t pad) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 4)
    throw DimensionError("conv2d: input must be [N,C,H,W], got " +
                         shape_str(sx));
  if (sw.size() != 4)
    throw DimensionError("conv2d: weight must be [OC,IC,KH,KW], got " +
                         shape_str(sw));
  if (sx[1] != sw[1])
    throw DimensionError("conv2d: input channels " + shape_str(sx) +
                         " vs weight " + shape_str(sw));
  if (b.shape() != Shape{sw[0]})
    throw DimensionError("conv2d: bias must be [OC] = [" +
                         std::to_string(sw[0]) + "], got " +
                         shape_str(b.shape()));
  const std::size_t N = sx[0], C = sx[1], H = sx[2], W = sx[3];
  const std::size_t OC = sw[0], KH = sw[2], KW = sw[3];
  const auto& xv = x.values();
  const auto& wv = w.values();
  const auto& bv = b.values();
  std::vector<double> out(N * OC * H * W);
  const std::ptrdiff_t P = static_cast<std::ptrdiff_t>(pad);
  const std::ptrdiff_t Hs = static_cast<std::ptrdiff_t>(H);
  const std::ptrdiff_t Ws = static_cast<std::ptrdiff_t>(W);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t oc = 0; oc < OC; ++oc) {
      double* plane = out.data() + (n * OC + oc) * H * W;
      std::fill(plane, plane + H * W, bv[oc]);
      for (std::size_t ic = 0; ic < C; ++ic) {
        const double* in_plane = xv.data() + (n * C + ic) * H * W;
        for (std::size_t ky = 0; ky < KH; ++ky)
          for (std::size_t kx = 0; kx < KW; ++kx) {
            const double wgt = wv[((oc * C + ic) * KH + ky) * KW + kx];
            if (wgt == 0.0) continue;
            const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - P;
            const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - P;
            const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
            const std::ptrdiff_t y1 = std::min<std::ptrdiff_t>(Hs, Hs - dy);
            const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
            const std::ptrdiff_t x1 = std::min<std::ptrdiff_t>(Ws, Ws - dx);
            for (std::ptrdiff_t y = y0; y < y1; ++y) {
              double* orow = plane + y * Ws;
              const double* irow = in_plane + (y + dy) * Ws + dx;
              for (std::ptrdiff_t xq = x0; xq < x1; ++xq)
                orow[xq] += wgt * irow[xq];
            }
          }
      }
    }
  auto px = x.node_ptr();
  auto pw = w.node_ptr();
  auto pb = b.node_ptr();
  return wrap_node(make_op(
      "conv2d", {N, OC, H, W}, std::move(out), {px, pw, pb},
      [px = px.get(), pw = pw.get(), pb = pb.get(), N, C, H, W, OC, KH, KW,
       P](Node& self) {
        const std::ptrdiff_t Hs = static_cast<std::ptrdiff_t>(H);
        const std::ptrdiff_t Ws = static_cast<std::ptrdiff_t>(W);
        if (pb->requires_grad) {
          ensure_tmp(*pb);
          for (std::size_t n = 0; n < N; ++n)
            for (std::size_t oc = 0; oc < OC; ++oc) {
              const double* g = self.tmp.data() + (n * OC + oc) * H * W;
              double acc = 0.0;
              for (std::size_t i = 0; i < H * W; ++i) acc += g[i];
              pb->tmp[oc] += acc;
            }
        }
        if (px->requires_grad) ensure_tmp(*px);
        if (pw->requires_grad) ensure_tmp(*pw);
        if (!px->requires_grad && !pw->requires_grad) return;
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t oc = 0; oc < OC; ++oc) {
            const double* g = self.tmp.data() + (n * OC + oc) * H * W;
            for (std::size_t ic = 0; ic < C; ++ic) {
              const double* in_plane = px->data.data() + (n * C + ic) * H * W;
              double* gin_plane =
                  px->requires_grad ? px->tmp.data() + (n * C + ic) * H * W
                                    : nullptr;
              for (std::size_t ky = 0; ky < KH; ++ky)
                for (std::size_t kx = 0; kx < KW; ++kx) {
                  const std::size_t widx = ((oc * C + ic) * KH + ky) * KW + kx;
                  const double wgt = pw->data[widx];
                  const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - P;
                  const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(kx) - P;
                  const std::ptrdiff_t y0 = std::max<std::ptrdiff_t>(0, -dy);
                  const std::ptrdiff_t y1 =
                      std::min<std::ptrdiff_t>(Hs, Hs - dy);
                  const std::ptrdiff_t x0 = std::max<std::ptrdiff_t>(0, -dx);
                  const std::ptrdiff_t x1 =
                      std::min<std::ptrdiff_t>(Ws, Ws - dx);
                  double wacc = 0.0;
                  const bool want_w = pw->requires_grad;
                  for (std::ptrdiff_t y = y0; y < y1; ++y) {
                    const double* grow = g + y * Ws;
                    const double* irow = in_plane + (y + dy) * Ws + dx;
                    if (gin_plane && want_w) {
                      double* girow = gin_plane + (y + dy) * Ws + dx;
                      for (std::ptrdiff_t xq = x0; xq < x1; ++xq) {
                        girow[xq] += wgt * grow[xq];
                        wacc += grow[xq] * irow[xq];
                      }
                    } else if (gin_plane) {
                      double* girow = gin_plane + (y + dy) * Ws + dx;
                      for (std::ptrdiff_t xq = x0; xq < x1; ++xq)
                        girow[xq] += wgt * grow[xq];
                    } else {
                      for (std::ptrdiff_t xq = x0; xq < x1; ++xq)
                        wacc += grow[xq] * irow[xq];
                    }
                  }
                  if (want_w) pw->tmp[widx] += wacc;
                }
            }
          }
      }));
}

Tensor avg_pool2(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.size() != 4)
    throw DimensionError("avg_pool2: input must be [N,C,H,W], got " +
                         shape_str(s));
  if (s[2] % 2 != 0 || s[3] % 2 != 0)
    throw DimensionError("avg_pool2: H and W must be even, got " +
                         shape_str(s));
  const std::size_t N = s[0], C = s[1], H = s[2], W = s[3];
  const std::size_t HO = H / 2, WO = W / 2;
  const auto& xv = x.values();
  std::vector<double> out(N * C * HO * WO);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const double* in = xv.data() + nc * H * W;
    double* o = out.data() + nc * HO * WO;
    for (std::size_t y = 0; y < HO; ++y)
      for (std::size_t xq = 0; xq < WO; ++xq) {
        const double* r0 = in + (2 * y) * W + 2 * xq;
        const double* r1 = r0 + W;
        o[y * WO + xq] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
  }
  auto px = x.node_ptr();
  return wrap_node(make_op(
      "avg_pool2", {N, C, HO, WO}, std::move(out), {px},
      [px = px.get(), N, C, H, W, HO, WO](Node& self) {
        ensure_tmp(*px);
        for (std::size_t nc = 0; nc < N * C; ++nc) {
          const double* g = self.tmp.data() + nc * HO * WO;
          double* gi = px->tmp.data() + nc * H * W;
          for (std::size_t y = 0; y < HO; ++y)
            for (std::size_t xq = 0; xq < WO; ++xq) {
              const double v = 0.25 * g[y * WO + xq];
              double* r0 = gi + (2 * y) * W + 2 * xq;
              double* r1 = r0 + W;
              r0[0] += v;
              r0[1] += v;
              r1[0] += v;
              r1[1] += v;
            }
        }
      }));
}

Tensor temporal_conv(const Tensor& x, const Tensor& w, const Tensor& b,
                     std::size_t window) {
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() != 5)
    throw DimensionError("temporal_conv: input must be [B,T,C,H,W], got " +
                         shape_str(sx));
  if (window == 0 || sx[1] % window != 0)
    throw DimensionError("temporal_conv: window " + std::to_string(window) +
                         " must evenly divide T in " + shape_str(sx));
  if (sw.size() != 3 || sw[0] != window || sw[2] != sx[2])
    throw DimensionError("temporal_conv: weight must be [window,OC,IC] = [" +
                         std::to_string(window) + ",*," +
                         std::to_string(sx[2]) + "], got " + shape_str(sw));
  const std::size_t B = sx[0], T = sx[1], C = sx[2], H = sx[3], W = sx[4];
  const std::size_t OC = sw[1];
  if (b.shape() != Shape{OC})
    throw DimensionError("temporal_conv: bias must be [OC] = [" +
                         std::to_string(OC) + "], got " + shape_str(b.shape()));
  const std::size_t TO = T / window;
  const std::size_t hw = H * W;
  const auto& xv = x.values();
  const auto& wv = w.values();
  const auto& bv = b.values();
  std::vector<double> out(B * TO * OC * hw);
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t to = 0; to < TO; ++to)
      for (std::size_t oc = 0; oc < OC; ++oc) {
        double* plane = out.data() + ((bi * TO + to) * OC + oc) * hw;
        std::fill(plane, plane + hw, bv[oc]);
        for (std::size_t k = 0; k < window; ++k)
          for (std::size_t ic = 0; ic < C; ++ic) {
            const double wgt = wv[(k * OC + oc) * C + ic];
            if (wgt == 0.0) continue;
            const double* in =
                xv.data() + ((bi * T + to * window + k) * C + ic) * hw;
            for (std::size_t i = 0; i < hw; ++i) plane[i] += wgt * in[i];
          }
      }
  auto px = x.node_ptr();
  auto pw = w.node_ptr();
  auto pb = b.node_ptr();
  return wrap_node(make_op(
      "temporal_conv", {B, TO, OC, H, W}, std::move(out), {px, pw, pb},
      [px = px.get(), pw = pw.get(), pb = pb.get(), B, T, C, hw, OC, TO,
       window](Node& self) {
        if (pb->requires_grad) ensure_tmp(*pb);
        if (px->requires_grad) ensure_tmp(*px);
        if (pw->requires_grad) ensure_tmp(*pw);
        for (std::size_t bi = 0; bi < B; ++bi)
          for (std::size_t to = 0; to < TO; ++to)
            for (std::size_t oc = 0; oc < OC; ++oc) {
              const double* g = self.tmp.data() + ((bi * TO + to) * OC + oc) * hw;
              if (pb->requires_grad) {
                double acc = 0.0;
                for (std::size_t i = 0; i < hw; ++i) acc += g[i];
                pb->tmp[oc] += acc;
              }
              for (std::size_t k = 0; k < window; ++k)
                for (std::size_t ic = 0; ic < C; ++ic) {
                  const std::size_t widx = (k * OC + oc) * C + ic;
                  const std::size_t in_off =
                      ((bi * T + to * window + k) * C + ic) * hw;
                  if (px->requires_grad) {
                    const double wgt = pw->data[widx];
                    double* gi = px->tmp.data() + in_off;
                    for (std::size_t i = 0; i < hw; ++i) gi[i] += wgt * g[i];
                  }
                  if (pw->requires_grad) {
                    const double* in = px->data.data() + in_off;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < hw; ++i) acc += g[i] * in[i];
                    pw->tmp[widx] += acc;
                  }
                }
            }
      }));
}

// ---------------------------------------------------------------------------
// initializers
// ---------------------------------------------------------------------------

Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::size_t n = numel(shape);
  std::vector<double> data(n);
  for (double& x : data) x = rng.normal(0.0, stddev);
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor randn_fan_in(Shape shape, std::size_t fan_in, Rng& rng,
                    bool requires_grad) {
  if (fan_in == 0) throw ParamError("randn_fan_in: fan_in must be positive");
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  return randn(std::move(shape), rng, stddev, requires_grad);
}

}  // namespace svmix
