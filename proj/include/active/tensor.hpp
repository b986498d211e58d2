#pragma once

// Minimal reverse-mode autodiff over dense float64 arrays.
//
// A Tensor is a shared handle to a graph node. Operations build new nodes that
// remember their parents and a backward rule; Tensor::backward() walks the
// graph once in reverse topological order. Leaf gradients accumulate across
// backward calls, intermediate gradients are recomputed on every call.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace active {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct Node {
  std::vector<double> data;
  std::vector<double> grad;  // empty until first needed
  Shape shape;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
  }
  bool is_leaf() const { return !backward; }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (numel(shape) != data.size()) {
      throw ShapeError("tensor data has " + std::to_string(data.size()) +
                       " elements but shape " + shape_string(shape) + " needs " +
                       std::to_string(numel(shape)));
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const auto n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }
  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->data.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  std::span<const double> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  double item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
    return node_->data[0];
  }
  double operator[](std::size_t i) const { return node_->data[i]; }

  void set_requires_grad(bool value) { node_->requires_grad = value; }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }
  void clear_grad() { node_->grad.clear(); }

  /// Value copy cut off from the graph.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  /// Reverse-mode sweep from this node. Non-scalar roots are seeded with ones.
  void backward() const {
    if (!node_->requires_grad) return;
    std::vector<detail::Node*> order;
    topological_order(order);
    for (auto* n : order) {
      if (!n->is_leaf()) n->grad.assign(n->data.size(), 0.0);
    }
    node_->ensure_grad();
    if (node_->is_leaf()) {
      for (auto& g : node_->grad) g += 1.0;
    } else {
      std::fill(node_->grad.begin(), node_->grad.end(), 1.0);
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      auto* n = *it;
      if (n->backward) n->backward(*n);
    }
    // Intermediate grads are only scratch space for the sweep.
    for (auto* n : order) {
      if (!n->is_leaf() && n != node_.get()) {
        n->grad.clear();
        n->grad.shrink_to_fit();
      }
    }
  }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  // Post-order DFS restricted to nodes that require grad. Each node appears once.
  void topological_order(std::vector<detail::Node*>& order) const {
    std::unordered_set<const detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        auto* p = n->parents[next++].get();
        if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<detail::Node> node_;
};

namespace detail {

using BackwardFn = std::function<void(Node&)>;

inline Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                          BackwardFn backward) {
  Tensor out(std::move(shape), std::move(data), false);
  bool any = std::any_of(parents.begin(), parents.end(),
                         [](const Tensor& p) { return p.requires_grad(); });
  if (any) {
    auto& node = *out.node();
    node.requires_grad = true;
    node.parents.reserve(parents.size());
    for (auto& p : parents) node.parents.push_back(p.node());
    node.backward = std::move(backward);
  }
  return out;
}

inline Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise operations

enum class OpKind {
  add, sub, mul, div, neg, abs, log, exp, clamp, relu, leaky_relu, sigmoid, min, max
};

struct ElementwiseParams {
  double lo = 0.0;
  double hi = 1.0;
  double slope = 0.1;
};

namespace detail {

// Binary elementwise op with scalar-vs-tensor or equal-shape broadcasting.
// `fwd(x, y)` gives the value, `dfdx`/`dfdy` the partials at (x, y).
template <class Fwd, class Dx, class Dy>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Dx dfdx, Dy dfdy) {
  const bool a_scalar = a.size() == 1 && b.size() != 1;
  const bool b_scalar = b.size() == 1 && a.size() != 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape() && !(a.size() == 1 && b.size() == 1)) {
    throw ShapeError(std::string(name) + ": shapes " + shape_string(a.shape()) + " and " +
                     shape_string(b.shape()) + " are not broadcast-compatible");
  }
  const Shape out_shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = numel(out_shape);
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = fwd(ad[a_scalar ? 0 : i], bd[b_scalar ? 0 : i]);
  }
  return make_result(out_shape, std::move(out), {a, b},
                     [a_scalar, b_scalar, n, dfdx, dfdy](Node& self) {
                       Node& pa = parent(self, 0);
                       Node& pb = parent(self, 1);
                       const auto& g = self.grad;
                       if (pa.requires_grad) {
                         pa.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i) {
                           const double x = pa.data[a_scalar ? 0 : i];
                           const double y = pb.data[b_scalar ? 0 : i];
                           pa.grad[a_scalar ? 0 : i] += g[i] * dfdx(x, y);
                         }
                       }
                       if (pb.requires_grad) {
                         pb.ensure_grad();
                         for (std::size_t i = 0; i < n; ++i) {
                           const double x = pa.data[a_scalar ? 0 : i];
                           const double y = pb.data[b_scalar ? 0 : i];
                           pb.grad[b_scalar ? 0 : i] += g[i] * dfdy(x, y);
                         }
                       }
                     });
}

// Unary op; `deriv(x, y)` receives the input and the forward output.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto ad = a.data();
  std::vector<double> out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = fwd(ad[i]);
  return make_result(a.shape(), std::move(out), {a}, [deriv](Node& self) {
    Node& pa = parent(self, 0);
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.data.size(); ++i) {
      pa.grad[i] += self.grad[i] * deriv(pa.data[i], self.data[i]);
    }
  });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}
inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}
// Ties route the gradient to the first operand.
inline Tensor minimum(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "min", [](double x, double y) { return y < x ? y : x; },
      [](double x, double y) { return y < x ? 0.0 : 1.0; },
      [](double x, double y) { return y < x ? 1.0 : 0.0; });
}
inline Tensor maximum(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "max", [](double x, double y) { return y > x ? y : x; },
      [](double x, double y) { return y > x ? 0.0 : 1.0; },
      [](double x, double y) { return y > x ? 1.0 : 0.0; });
}

inline Tensor add(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }
inline Tensor mul(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }

inline Tensor neg(const Tensor& a) {
  return detail::unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}
inline Tensor abs(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}
// NaN passes through so callers' finiteness checks can report it with context.
inline Tensor log(const Tensor& a) {
  for (double x : a.data()) {
    if (x <= 0.0) {
      throw std::domain_error("log of non-positive value " + std::to_string(x) +
                              " (clamp the input first)");
    }
  }
  return detail::unary(a, [](double x) { return std::log(x); },
                       [](double x, double) { return 1.0 / x; });
}
inline Tensor exp(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
// Square root with a zero subgradient at 0.
inline Tensor sqrt(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  return detail::unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}
inline Tensor relu(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}
inline Tensor leaky_relu(const Tensor& a, double slope = 0.1) {
  return detail::unary(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}
inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

/// Dispatcher over OpKind for code that selects the operation at runtime.
inline Tensor elementwise(OpKind kind, const Tensor& a, const std::optional<Tensor>& b = {},
                          ElementwiseParams params = {}) {
  auto need_b = [&]() -> const Tensor& {
    if (!b) throw std::invalid_argument("binary elementwise op requires a second operand");
    return *b;
  };
  switch (kind) {
    case OpKind::add: return add(a, need_b());
    case OpKind::sub: return sub(a, need_b());
    case OpKind::mul: return mul(a, need_b());
    case OpKind::div: return div(a, need_b());
    case OpKind::min: return minimum(a, need_b());
    case OpKind::max: return maximum(a, need_b());
    case OpKind::neg: return neg(a);
    case OpKind::abs: return abs(a);
    case OpKind::log: return log(a);
    case OpKind::exp: return exp(a);
    case OpKind::clamp: return clamp(a, params.lo, params.hi);
    case OpKind::relu: return relu(a);
    case OpKind::leaky_relu: return leaky_relu(a, params.slope);
    case OpKind::sigmoid: return sigmoid(a);
  }
  throw std::invalid_argument("unknown elementwise op");
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add(a, s); }
inline Tensor operator+(double s, const Tensor& a) { return add(a, s); }
inline Tensor operator-(double s, const Tensor& a) { return sub(Tensor::scalar(s), a); }
inline Tensor operator-(const Tensor& a, double s) { return add(a, -s); }

// ---------------------------------------------------------------------------
// Reductions

enum class ReduceKind { sum, mean, max };

namespace detail {

// Maps each input flat index to its output flat index for a reduction over `axes`.
inline std::vector<std::size_t> reduction_map(const Shape& shape, const std::vector<bool>& reduced,
                                              Shape& out_shape) {
  out_shape.clear();
  for (std::size_t d = 0; d < shape.size(); ++d)
    if (!reduced[d]) out_shape.push_back(shape[d]);
  std::vector<std::size_t> out_stride(shape.size(), 0);
  std::size_t stride = 1;
  for (std::size_t d = shape.size(); d-- > 0;) {
    if (!reduced[d]) {
      out_stride[d] = stride;
      stride *= shape[d];
    }
  }
  const std::size_t n = numel(shape);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(shape.size(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t o = 0;
    for (std::size_t d = 0; d < shape.size(); ++d) o += idx[d] * out_stride[d];
    map[i] = o;
    for (std::size_t d = shape.size(); d-- > 0;) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  return map;
}

}  // namespace detail

/// Reduces over `axes` (all axes when empty). Reduced axes are dropped from the
/// result shape. Max routes its gradient to the first maximal element in
/// row-major order.
inline Tensor reduce(ReduceKind kind, const Tensor& a, std::vector<int> axes = {}) {
  const Shape& shape = a.shape();
  std::vector<bool> reduced(shape.size(), axes.empty());
  for (int ax : axes) {
    const int r = static_cast<int>(shape.size());
    const int d = ax < 0 ? ax + r : ax;
    if (d < 0 || d >= r) {
      throw ShapeError("reduce: axis " + std::to_string(ax) + " invalid for shape " +
                       shape_string(shape));
    }
    reduced[d] = true;
  }
  std::size_t count = 1;
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (reduced[d]) {
      if (shape[d] == 0) throw ShapeError("reduce: empty reduction axis in " + shape_string(shape));
      count *= shape[d];
    }
  }
  if (a.size() == 0) throw ShapeError("reduce: empty tensor");

  Shape out_shape;
  const bool all = std::all_of(reduced.begin(), reduced.end(), [](bool r) { return r; });
  std::vector<std::size_t> map;
  if (!all) map = detail::reduction_map(shape, reduced, out_shape);
  const std::size_t out_n = numel(out_shape);
  const auto ad = a.data();
  auto out_index = [&](std::size_t i) { return all ? std::size_t{0} : map[i]; };

  if (kind == ReduceKind::max) {
    std::vector<double> out(out_n, 0.0);
    std::vector<std::size_t> arg(out_n, static_cast<std::size_t>(-1));
    for (std::size_t i = 0; i < ad.size(); ++i) {
      const auto o = out_index(i);
      if (arg[o] == static_cast<std::size_t>(-1) || ad[i] > out[o]) {
        out[o] = ad[i];
        arg[o] = i;
      }
    }
    return detail::make_result(out_shape, std::move(out), {a}, [arg](detail::Node& self) {
      auto& pa = detail::parent(self, 0);
      pa.ensure_grad();
      for (std::size_t o = 0; o < arg.size(); ++o) pa.grad[arg[o]] += self.grad[o];
    });
  }

  std::vector<double> out(out_n, 0.0);
  for (std::size_t i = 0; i < ad.size(); ++i) out[out_index(i)] += ad[i];
  const double scale = kind == ReduceKind::mean ? 1.0 / static_cast<double>(count) : 1.0;
  if (kind == ReduceKind::mean)
    for (auto& v : out) v *= scale;
  return detail::make_result(out_shape, std::move(out), {a},
                             [map = std::move(map), all, scale](detail::Node& self) {
                               auto& pa = detail::parent(self, 0);
                               pa.ensure_grad();
                               for (std::size_t i = 0; i < pa.grad.size(); ++i) {
                                 pa.grad[i] += scale * self.grad[all ? 0 : map[i]];
                               }
                             });
}

inline Tensor sum(const Tensor& a, std::vector<int> axes = {}) {
  return reduce(ReduceKind::sum, a, std::move(axes));
}
inline Tensor mean(const Tensor& a, std::vector<int> axes = {}) {
  return reduce(ReduceKind::mean, a, std::move(axes));
}
inline Tensor max(const Tensor& a, std::vector<int> axes = {}) {
  return reduce(ReduceKind::max, a, std::move(axes));
}
/// min(x) = -max(-x); ties go to the first minimal element.
inline Tensor min(const Tensor& a, std::vector<int> axes = {}) {
  return neg(reduce(ReduceKind::max, neg(a), std::move(axes)));
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                     shape_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return detail::make_result(std::move(shape), std::move(out), {a}, [](detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
  });
}

/// Half-open slice [begin, end) along one axis.
inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin > end || end > s[axis]) {
    throw ShapeError("slice: [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") on axis " + std::to_string(axis) + " of " + shape_string(s));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t len = end - begin;
  Shape out_shape = s;
  out_shape[axis] = len;
  std::vector<double> out(outer * len * inner);
  const auto ad = a.data();
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = ad.data() + (o * s[axis] + begin) * inner;
    std::copy(src, src + len * inner, out.begin() + static_cast<std::ptrdiff_t>(o * len * inner));
  }
  const std::size_t full = s[axis];
  return detail::make_result(out_shape, std::move(out), {a},
                             [outer, inner, len, full, begin](detail::Node& self) {
                               auto& pa = detail::parent(self, 0);
                               pa.ensure_grad();
                               for (std::size_t o = 0; o < outer; ++o) {
                                 double* dst = pa.grad.data() + (o * full + begin) * inner;
                                 const double* g = self.grad.data() + o * len * inner;
                                 for (std::size_t i = 0; i < len * inner; ++i) dst[i] += g[i];
                               }
                             });
}

/// Concatenates along the last axis; leading dimensions must agree.
inline Tensor concat_last(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || sa.empty() ||
      !std::equal(sa.begin(), sa.end() - 1, sb.begin(), sb.end() - 1)) {
    throw ShapeError("concat: shapes " + shape_string(sa) + " and " + shape_string(sb) +
                     " differ outside the last axis");
  }
  const std::size_t ca = sa.back(), cb = sb.back(), rows = a.size() / std::max<std::size_t>(ca, 1);
  Shape out_shape = sa;
  out_shape.back() = ca + cb;
  std::vector<double> out(rows * (ca + cb));
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(ad.data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(bd.data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  return detail::make_result(out_shape, std::move(out), {a, b}, [rows, ca, cb](detail::Node& self) {
    auto& pa = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    const std::size_t c = ca + cb;
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < ca; ++i) pa.grad[r * ca + i] += self.grad[r * c + i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < cb; ++i) pb.grad[r * cb + i] += self.grad[r * c + ca + i];
    }
  });
}

/// Flat gather: out[i] = a[indices[i]]; the gradient scatter-adds back.
inline Tensor take(const Tensor& a, std::vector<std::size_t> indices) {
  const auto ad = a.data();
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= ad.size()) throw std::out_of_range("take: index out of range");
    out[i] = ad[indices[i]];
  }
  Shape shape{indices.size()};
  return detail::make_result(shape, std::move(out), {a},
                             [indices = std::move(indices)](detail::Node& self) {
                               auto& pa = detail::parent(self, 0);
                               pa.ensure_grad();
                               for (std::size_t i = 0; i < indices.size(); ++i)
                                 pa.grad[indices[i]] += self.grad[i];
                             });
}

// ---------------------------------------------------------------------------
// Neural-network building blocks (NHWC layout)

enum class Padding { same, valid };

/// Cross-correlation of input [N,H,W,C] with kernel [kh,kw,C,F].
/// Same padding pads k/2 on each side and needs odd kernels; valid padding
/// takes any size.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride = 1,
                     Padding padding = Padding::same) {
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw ShapeError("conv2d: expected input [N,H,W,C] and kernel [kh,kw,C,F], got " +
                     shape_string(input.shape()) + " and " + shape_string(kernel.shape()));
  }
  const std::size_t N = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
  const std::size_t KH = kernel.dim(0), KW = kernel.dim(1), KC = kernel.dim(2), F = kernel.dim(3);
  if (KC != C) {
    throw ShapeError("conv2d: channel mismatch, input " + shape_string(input.shape()) +
                     " kernel " + shape_string(kernel.shape()));
  }
  if (padding == Padding::same && (KH % 2 == 0 || KW % 2 == 0))
    throw ShapeError("conv2d: same padding needs odd kernel sizes, got " + shape_string(kernel.shape()));
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  const std::ptrdiff_t ph = padding == Padding::same ? static_cast<std::ptrdiff_t>(KH / 2) : 0;
  const std::ptrdiff_t pw = padding == Padding::same ? static_cast<std::ptrdiff_t>(KW / 2) : 0;
  if (H + 2 * ph < KH || W + 2 * pw < KW) throw ShapeError("conv2d: input smaller than kernel");
  const std::size_t OH = (H + 2 * ph - KH) / stride + 1;
  const std::size_t OW = (W + 2 * pw - KW) / stride + 1;

  const double* in = input.data().data();
  const double* k = kernel.data().data();
  std::vector<double> out(N * OH * OW * F, 0.0);

  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        double* o = out.data() + ((n * OH + oy) * OW + ox) * F;
        for (std::size_t ky = 0; ky < KH; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - ph;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
          for (std::size_t kx = 0; kx < KW; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pw;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
            const double* ip = in + ((n * H + iy) * W + ix) * C;
            const double* kp = k + (ky * KW + kx) * C * F;
            for (std::size_t c = 0; c < C; ++c) {
              const double v = ip[c];
              const double* kr = kp + c * F;
              for (std::size_t f = 0; f < F; ++f) o[f] += v * kr[f];
            }
          }
        }
      }

  return detail::make_result(
      {N, OH, OW, F}, std::move(out), {input, kernel},
      [=](detail::Node& self) {
        auto& pi = detail::parent(self, 0);
        auto& pk = detail::parent(self, 1);
        const bool gi = pi.requires_grad, gk = pk.requires_grad;
        if (gi) pi.ensure_grad();
        if (gk) pk.ensure_grad();
        const double* in = pi.data.data();
        const double* k = pk.data.data();
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t oy = 0; oy < OH; ++oy)
            for (std::size_t ox = 0; ox < OW; ++ox) {
              const double* g = self.grad.data() + ((n * OH + oy) * OW + ox) * F;
              for (std::size_t ky = 0; ky < KH; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - ph;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                for (std::size_t kx = 0; kx < KW; ++kx) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pw;
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                  const std::size_t ioff = ((n * H + iy) * W + ix) * C;
                  const std::size_t koff = (ky * KW + kx) * C * F;
                  for (std::size_t c = 0; c < C; ++c) {
                    if (gi) {
                      const double* kr = k + koff + c * F;
                      double acc = 0.0;
                      for (std::size_t f = 0; f < F; ++f) acc += g[f] * kr[f];
                      pi.grad[ioff + c] += acc;
                    }
                    if (gk) {
                      const double v = in[ioff + c];
                      double* gr = pk.grad.data() + koff + c * F;
                      for (std::size_t f = 0; f < F; ++f) gr[f] += v * g[f];
                    }
                  }
                }
              }
            }
      });
}

/// Adds a per-channel bias [C] to a tensor whose last axis is C.
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() == 0 || bias.rank() != 1 || bias.dim(0) != x.shape().back()) {
    throw ShapeError("add_bias: bias " + shape_string(bias.shape()) + " does not match " +
                     shape_string(x.shape()));
  }
  const std::size_t C = bias.dim(0), rows = x.size() / C;
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] += bd[c];
  return detail::make_result(x.shape(), std::move(out), {x, bias}, [rows, C](detail::Node& self) {
    auto& px = detail::parent(self, 0);
    auto& pb = detail::parent(self, 1);
    if (px.requires_grad) {
      px.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < C; ++c) pb.grad[c] += self.grad[r * C + c];
    }
  });
}

/// Nearest-neighbour 2x upsampling of [N,H,W,C].
inline Tensor upsample2x(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("upsample2x: expected [N,H,W,C], got " + shape_string(x.shape()));
  const std::size_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const std::size_t OH = 2 * H, OW = 2 * W;
  std::vector<double> out(N * OH * OW * C);
  const auto xd = x.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t y = 0; y < OH; ++y)
      for (std::size_t xx = 0; xx < OW; ++xx)
        std::copy_n(xd.data() + ((n * H + y / 2) * W + xx / 2) * C, C,
                    out.data() + ((n * OH + y) * OW + xx) * C);
  return detail::make_result({N, OH, OW, C}, std::move(out), {x}, [=](detail::Node& self) {
    auto& px = detail::parent(self, 0);
    px.ensure_grad();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t y = 0; y < OH; ++y)
        for (std::size_t xx = 0; xx < OW; ++xx) {
          const double* g = self.grad.data() + ((n * OH + y) * OW + xx) * C;
          double* d = px.grad.data() + ((n * H + y / 2) * W + xx / 2) * C;
          for (std::size_t c = 0; c < C; ++c) d[c] += g[c];
        }
  });
}

/// Softmax over the last axis.
inline Tensor softmax(const Tensor& x) {
  const std::size_t C = x.shape().back(), rows = x.size() / C;
  std::vector<double> out(x.size());
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * C;
    double* o = out.data() + r * C;
    const double m = *std::max_element(in, in + C);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += (o[c] = std::exp(in[c] - m));
    for (std::size_t c = 0; c < C; ++c) o[c] /= z;
  }
  return detail::make_result(x.shape(), std::move(out), {x}, [rows, C](detail::Node& self) {
    auto& px = detail::parent(self, 0);
    px.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * C;
      const double* g = self.grad.data() + r * C;
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += g[c] * y[c];
      for (std::size_t c = 0; c < C; ++c) px.grad[r * C + c] += y[c] * (g[c] - dot);
    }
  });
}

/// Log-softmax over the last axis.
inline Tensor log_softmax(const Tensor& x) {
  const std::size_t C = x.shape().back(), rows = x.size() / C;
  std::vector<double> out(x.size());
  const auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * C;
    const double m = *std::max_element(in, in + C);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(in[c] - m);
    const double lz = m + std::log(z);
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = in[c] - lz;
  }
  return detail::make_result(x.shape(), std::move(out), {x}, [rows, C](detail::Node& self) {
    auto& px = detail::parent(self, 0);
    px.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * C;
      const double* g = self.grad.data() + r * C;
      double gs = 0.0;
      for (std::size_t c = 0; c < C; ++c) gs += g[c];
      for (std::size_t c = 0; c < C; ++c) px.grad[r * C + c] += g[c] - std::exp(y[c]) * gs;
    }
  });
}

/// Sum over elements of weight * binary cross-entropy(sigmoid(logit), target),
/// evaluated stably from logits.
inline Tensor bce_with_logits(const Tensor& logits, std::vector<double> targets,
                              std::vector<double> weights) {
  if (targets.size() != logits.size() || weights.size() != logits.size()) {
    throw ShapeError("bce_with_logits: target/weight count does not match logits " +
                     shape_string(logits.shape()));
  }
  const auto ld = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < ld.size(); ++i) {
    const double z = ld[i];
    // log(1 + exp(-|z|)) + max(z, 0) - z * t
    total += weights[i] * (std::log1p(std::exp(-std::fabs(z))) + std::max(z, 0.0) - z * targets[i]);
  }
  return detail::make_result({}, {total}, {logits},
                             [targets = std::move(targets), weights = std::move(weights)](
                                 detail::Node& self) {
                               auto& pl = detail::parent(self, 0);
                               pl.ensure_grad();
                               const double g = self.grad[0];
                               for (std::size_t i = 0; i < pl.data.size(); ++i) {
                                 const double z = pl.data[i];
                                 const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                                                           : std::exp(z) / (1.0 + std::exp(z));
                                 pl.grad[i] += g * weights[i] * (s - targets[i]);
                               }
                             });
}

// ---------------------------------------------------------------------------
// Index-driven resampling

/// Per-output-pixel (row, col) lookup into a texture.
struct UvIndexMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> rows;
  std::vector<std::int32_t> cols;
};

/// out[p, :] = texture[rows[p], cols[p], :] for texture [Ht,Wt,C]; output is
/// [height,width,C]. Indices carry no gradient; texel gradients scatter-add.
inline Tensor gather_nearest(const Tensor& texture, const UvIndexMap& uv) {
  if (texture.rank() != 3) {
    throw ShapeError("gather_nearest: texture must be [H,W,C], got " +
                     shape_string(texture.shape()));
  }
  const std::size_t TH = texture.dim(0), TW = texture.dim(1), C = texture.dim(2);
  const std::size_t n = uv.height * uv.width;
  if (uv.rows.size() != n || uv.cols.size() != n) {
    throw ShapeError("gather_nearest: index map size does not match its declared extent");
  }
  std::vector<std::size_t> flat(n);
  for (std::size_t p = 0; p < n; ++p) {
    const auto r = uv.rows[p], c = uv.cols[p];
    if (r < 0 || c < 0 || static_cast<std::size_t>(r) >= TH || static_cast<std::size_t>(c) >= TW) {
      throw std::out_of_range("gather_nearest: index (" + std::to_string(r) + "," +
                              std::to_string(c) + ") outside texture " +
                              shape_string(texture.shape()));
    }
    flat[p] = (static_cast<std::size_t>(r) * TW + static_cast<std::size_t>(c)) * C;
  }
  const auto td = texture.data();
  std::vector<double> out(n * C);
  for (std::size_t p = 0; p < n; ++p) std::copy_n(td.data() + flat[p], C, out.data() + p * C);
  return detail::make_result({uv.height, uv.width, C}, std::move(out), {texture},
                             [flat = std::move(flat), C](detail::Node& self) {
                               auto& pt = detail::parent(self, 0);
                               pt.ensure_grad();
                               for (std::size_t p = 0; p < flat.size(); ++p)
                                 for (std::size_t c = 0; c < C; ++c)
                                   pt.grad[flat[p] + c] += self.grad[p * C + c];
                             });
}

/// Resamples image [H,W,C] to [out_h,out_w,C]; source[p] is a flat pixel index
/// into the input or -1 for a constant fill.
inline Tensor gather_pixels(const Tensor& image, const std::vector<std::int64_t>& source,
                            std::size_t out_h, std::size_t out_w, double fill) {
  if (image.rank() != 3) throw ShapeError("gather_pixels: image must be [H,W,C]");
  const std::size_t C = image.dim(2), pixels = image.dim(0) * image.dim(1);
  if (source.size() != out_h * out_w) throw ShapeError("gather_pixels: source map size mismatch");
  const auto d = image.data();
  std::vector<double> out(out_h * out_w * C, fill);
  for (std::size_t p = 0; p < source.size(); ++p) {
    const auto s = source[p];
    if (s < 0) continue;
    if (static_cast<std::size_t>(s) >= pixels) throw std::out_of_range("gather_pixels: bad index");
    std::copy_n(d.data() + static_cast<std::size_t>(s) * C, C, out.data() + p * C);
  }
  return detail::make_result({out_h, out_w, C}, std::move(out), {image},
                             [source, C](detail::Node& self) {
                               auto& pi = detail::parent(self, 0);
                               pi.ensure_grad();
                               for (std::size_t p = 0; p < source.size(); ++p) {
                                 if (source[p] < 0) continue;
                                 const auto base = static_cast<std::size_t>(source[p]) * C;
                                 for (std::size_t c = 0; c < C; ++c)
                                   pi.grad[base + c] += self.grad[p * C + c];
                               }
                             });
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamState {
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  long step_count = 0;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update in place; zeroes the gradient afterwards.
/// A parameter without an allocated gradient is treated as having zero gradient.
inline void adam_step(Tensor& param, AdamState& state) {
  const std::size_t n = param.size();
  if (state.first_moment.size() != n) {
    state.first_moment.assign(n, 0.0);
    state.second_moment.assign(n, 0.0);
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  auto p = param.mutable_data();
  const auto g = param.grad();
  for (std::size_t i = 0; i < n; ++i) {
    const double gi = g.empty() ? 0.0 : g[i];
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * gi;
    v = state.beta2 * v + (1.0 - state.beta2) * gi * gi;
    const double mhat = m / c1;
    const double vhat = v / c2;
    p[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
  param.zero_grad();
}

}  // namespace active
