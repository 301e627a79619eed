// SPDX-License-Identifier: Apache-2.0

#include "ctad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ctad {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

namespace {

std::uint64_t next_node_id() {
  static thread_local std::uint64_t counter = 0;
  return ++counter;
}

thread_local bool g_grad_enabled = true;

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<Scalar> data) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->id = next_node_id();
  return node;
}

}  // namespace

std::vector<Scalar>& detail::Node::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), Scalar(0));
  return grad;
}

Tensor::Tensor(Shape shape, Scalar fill, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  node_ = new_node(std::move(shape), std::vector<Scalar>(n, fill));
  node_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  if (n != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " holds " + std::to_string(n) +
                         " elements, got " + std::to_string(values.size()));
  }
  node_ = new_node(std::move(shape), std::move(values));
  node_->requires_grad = requires_grad;
}

int Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) throw DimensionError("axis out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

Scalar Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

Scalar Tensor::at(std::initializer_list<int> index) const {
  if (static_cast<int>(index.size()) != rank()) {
    throw DimensionError("index rank mismatch for " + shape_str(shape()));
  }
  std::size_t flat = 0;
  int axis = 0;
  for (int i : index) {
    if (i < 0 || i >= node_->shape[axis]) throw DimensionError("index out of range for " + shape_str(shape()));
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->data, false); }

Tensor Tensor::clone() const { return Tensor(node_->shape, node_->data, node_->requires_grad); }

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

Tape& Tape::current() {
  static thread_local Tape tape;
  return tape;
}

void Tape::record(const std::shared_ptr<detail::Node>& node) {
  if (consumed_) reset();
  node->generation = generation_;
  nodes_.push_back(node);
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
  ++generation_;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined()) throw TapeError("backward() on an undefined tensor");
  if (loss.numel() != 1) {
    throw TapeError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (consumed_) throw TapeError("backward() called twice on the same tape; call Tape::reset() first");
  if (!loss.requires_grad()) throw TapeError("backward() on a loss detached from every trainable input");
  const auto& root = loss.node();
  if (!root->is_leaf() && root->generation != generation_) {
    throw TapeError("backward() on a loss recorded before the last tape reset");
  }

  root->ensure_grad()[0] += Scalar(1);
  last_visits_ = 0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node& node = **it;
    if (node.grad.empty() || !node.backward) continue;
    node.backward(node);
    ++last_visits_;
  }
  // Release the graph: intermediate grads and closures are no longer needed.
  for (auto& node : nodes_) {
    node->backward = nullptr;
    node->inputs.clear();
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
  nodes_.clear();
  consumed_ = true;
}

bool Tape::is_topologically_ordered() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (const auto& in : nodes_[i]->inputs) {
      if (in->is_leaf()) continue;
      if (in->id >= nodes_[i]->id) return false;
    }
  }
  return true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------------------------------------------------------------------
// Mask
// ---------------------------------------------------------------------------

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](auto v) { return v != 0; }));
}

namespace {

void check_same_grid(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width) {
    throw DimensionError("mask grids differ: " + std::to_string(a.height) + "x" + std::to_string(a.width) +
                         " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

}  // namespace

Mask operator&(const Mask& a, const Mask& b) {
  check_same_grid(a, b);
  Mask out(a.height, a.width, false);
  for (std::size_t i = 0; i < a.size(); ++i) out.values[i] = (a.values[i] && b.values[i]) ? 1 : 0;
  return out;
}

Mask operator|(const Mask& a, const Mask& b) {
  check_same_grid(a, b);
  Mask out(a.height, a.width, false);
  for (std::size_t i = 0; i < a.size(); ++i) out.values[i] = (a.values[i] || b.values[i]) ? 1 : 0;
  return out;
}

Tensor detail::make_result(Shape shape, std::vector<Scalar> data, const std::vector<Tensor>& inputs,
                           BackwardFn backward) {
  auto node = new_node(std::move(shape), std::move(data));
  if (!g_grad_enabled) return Tensor(node);
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return Tensor(node);
  node->requires_grad = true;
  node->inputs.reserve(inputs.size());
  for (const auto& t : inputs) node->inputs.push_back(t.node());
  node->backward = std::move(backward);
  Tape::current().record(node);
  return Tensor(node);
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

namespace {

using detail::Node;

enum class Bcast { kSame, kLeftScalar, kRightScalar };

Bcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::kSame;
  if (b.numel() == 1) return Bcast::kRightScalar;
  if (a.numel() == 1) return Bcast::kLeftScalar;
  throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// f(x, y) forward, dfa/dfb partials evaluated at (x, y).
template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, F f, DA dfa, DB dfb) {
  const Bcast kind = broadcast_kind(a, b, op);
  const Shape shape = kind == Bcast::kLeftScalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(shape);
  auto av = a.data();
  auto bv = b.data();
  auto ai = [kind](std::size_t i) { return kind == Bcast::kLeftScalar ? 0 : i; };
  auto bi = [kind](std::size_t i) { return kind == Bcast::kRightScalar ? 0 : i; };
  std::vector<Scalar> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[ai(i)], bv[bi(i)]);
  return detail::make_result(shape, std::move(out), {a, b}, [=](Node& self) {
    const auto& g = self.grad;
    const auto& x = self.inputs[0]->data;
    const auto& y = self.inputs[1]->data;
    if (self.inputs[0]->requires_grad) {
      auto& ga = self.inputs[0]->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) ga[ai(i)] += g[i] * dfa(x[ai(i)], y[bi(i)]);
    }
    if (self.inputs[1]->requires_grad) {
      auto& gb = self.inputs[1]->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) gb[bi(i)] += g[i] * dfb(x[ai(i)], y[bi(i)]);
    }
  });
}

// df(x, y) is the derivative given input x and output y.
template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df) {
  const std::size_t n = a.numel();
  auto av = a.data();
  std::vector<Scalar> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i]);
  return detail::make_result(a.shape(), std::move(out), {a}, [=](Node& self) {
    auto& in = *self.inputs[0];
    auto& ga = in.ensure_grad();
    for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i] * df(in.data[i], self.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](Scalar x, Scalar y) { return x + y; }, [](Scalar, Scalar) { return Scalar(1); },
      [](Scalar, Scalar) { return Scalar(1); });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](Scalar x, Scalar y) { return x - y; }, [](Scalar, Scalar) { return Scalar(1); },
      [](Scalar, Scalar) { return Scalar(-1); });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](Scalar x, Scalar y) { return x * y; }, [](Scalar, Scalar y) { return y; },
      [](Scalar x, Scalar) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](Scalar x, Scalar y) { return x / y; }, [](Scalar, Scalar y) { return Scalar(1) / y; },
      [](Scalar x, Scalar y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& a, Scalar s) {
  return unary(a, [s](Scalar x) { return x + s; }, [](Scalar, Scalar) { return Scalar(1); });
}

Tensor mul_scalar(const Tensor& a, Scalar s) {
  return unary(a, [s](Scalar x) { return x * s; }, [s](Scalar, Scalar) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, Scalar(-1)); }

Tensor relu(const Tensor& a) {
  return unary(
      a, [](Scalar x) { return x > 0 ? x : Scalar(0); }, [](Scalar x, Scalar) { return x > 0 ? Scalar(1) : Scalar(0); });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](Scalar x) { return std::tanh(x); }, [](Scalar, Scalar y) { return Scalar(1) - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](Scalar x) {
        if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
        const Scalar e = std::exp(x);
        return e / (Scalar(1) + e);
      },
      [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

Tensor softplus(const Tensor& a) {
  return unary(
      a, [](Scalar x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](Scalar x, Scalar) {
        if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
        const Scalar e = std::exp(x);
        return e / (Scalar(1) + e);
      });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](Scalar x) { return std::exp(x); }, [](Scalar, Scalar y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, [](Scalar x) { return std::log(x); }, [](Scalar x, Scalar) { return Scalar(1) / x; });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, [](Scalar x) { return std::abs(x); },
      [](Scalar x, Scalar) { return x > 0 ? Scalar(1) : (x < 0 ? Scalar(-1) : Scalar(0)); });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      a, [](Scalar x) { return std::sqrt(x); },
      [](Scalar, Scalar y) { return y > 0 ? Scalar(0.5) / y : Scalar(0); });
}

Tensor clamp(const Tensor& a, Scalar lo, Scalar hi) {
  return unary(
      a, [lo, hi](Scalar x) { return std::clamp(x, lo, hi); },
      [lo, hi](Scalar x, Scalar) { return (x > lo && x < hi) ? Scalar(1) : Scalar(0); });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a) {
  Scalar s = 0;
  for (Scalar v : a.data()) s += v;
  return detail::make_result(Shape{1}, {s}, {a}, [](Node& self) {
    auto& ga = self.inputs[0]->ensure_grad();
    for (auto& v : ga) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) { return mul_scalar(sum(a), Scalar(1) / static_cast<Scalar>(a.numel())); }

Tensor l1_norm(const Tensor& a) { return sum(abs(a)); }

namespace {

struct Chw {
  int c, h, w;
};

Chw require_chw(const Tensor& t, const char* op) {
  if (t.rank() != 3) throw DimensionError(std::string(op) + ": expected [C,H,W], got " + shape_str(t.shape()));
  return {t.dim(0), t.dim(1), t.dim(2)};
}

void require_mask_grid(const Mask& m, int h, int w, const char* op) {
  if (m.height != h || m.width != w) {
    throw DimensionError(std::string(op) + ": mask " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                         " does not match " + std::to_string(h) + "x" + std::to_string(w));
  }
}

}  // namespace

Tensor channel_l2_norm(const Tensor& a) {
  const auto [c, h, w] = require_chw(a, "channel_l2_norm");
  const std::size_t hw = std::size_t(h) * w;
  auto av = a.data();
  std::vector<Scalar> out(hw, 0);
  for (int k = 0; k < c; ++k)
    for (std::size_t p = 0; p < hw; ++p) out[p] += av[k * hw + p] * av[k * hw + p];
  for (auto& v : out) v = std::sqrt(v);
  return detail::make_result(Shape{1, h, w}, std::move(out), {a}, [c, hw](Node& self) {
    auto& in = *self.inputs[0];
    auto& ga = in.ensure_grad();
    for (std::size_t p = 0; p < hw; ++p) {
      const Scalar norm = self.data[p];
      if (norm <= 0) continue;
      const Scalar s = self.grad[p] / norm;
      for (int k = 0; k < c; ++k) ga[k * hw + p] += s * in.data[k * hw + p];
    }
  });
}

Tensor channel_sum(const Tensor& a) {
  const auto [c, h, w] = require_chw(a, "channel_sum");
  const std::size_t hw = std::size_t(h) * w;
  auto av = a.data();
  std::vector<Scalar> out(hw, 0);
  for (int k = 0; k < c; ++k)
    for (std::size_t p = 0; p < hw; ++p) out[p] += av[k * hw + p];
  return detail::make_result(Shape{1, h, w}, std::move(out), {a}, [c, hw](Node& self) {
    auto& ga = self.inputs[0]->ensure_grad();
    for (int k = 0; k < c; ++k)
      for (std::size_t p = 0; p < hw; ++p) ga[k * hw + p] += self.grad[p];
  });
}

Tensor masked_mean(const Tensor& a, const Mask& mask) {
  const auto [c, h, w] = require_chw(a, "masked_mean");
  require_mask_grid(mask, h, w, "masked_mean");
  const std::size_t valid = mask.count();
  if (valid == 0) throw std::domain_error("masked_mean: mask has no valid pixels");
  const std::size_t hw = std::size_t(h) * w;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(valid * c);
  auto av = a.data();
  Scalar s = 0;
  for (int k = 0; k < c; ++k)
    for (std::size_t p = 0; p < hw; ++p)
      if (mask.values[p]) s += av[k * hw + p];
  return detail::make_result(Shape{1}, {s * inv}, {a}, [c, hw, inv, mask](Node& self) {
    auto& ga = self.inputs[0]->ensure_grad();
    const Scalar g = self.grad[0] * inv;
    for (int k = 0; k < c; ++k)
      for (std::size_t p = 0; p < hw; ++p)
        if (mask.values[p]) ga[k * hw + p] += g;
  });
}

Tensor apply_mask(const Tensor& a, const Mask& mask) {
  const auto [c, h, w] = require_chw(a, "apply_mask");
  require_mask_grid(mask, h, w, "apply_mask");
  const std::size_t hw = std::size_t(h) * w;
  std::vector<Scalar> out(a.values());
  for (int k = 0; k < c; ++k)
    for (std::size_t p = 0; p < hw; ++p)
      if (!mask.values[p]) out[k * hw + p] = 0;
  return detail::make_result(a.shape(), std::move(out), {a}, [c, hw, mask](Node& self) {
    auto& ga = self.inputs[0]->ensure_grad();
    for (int k = 0; k < c; ++k)
      for (std::size_t p = 0; p < hw; ++p)
        if (mask.values[p]) ga[k * hw + p] += self.grad[k * hw + p];
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  return detail::make_result(std::move(shape), a.values(), {a}, [](Node& self) {
    auto& ga = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(a.shape()));
  const int r = a.dim(0), c = a.dim(1);
  auto av = a.data();
  std::vector<Scalar> out(a.numel());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[std::size_t(j) * r + i] = av[std::size_t(i) * c + j];
  return detail::make_result(Shape{c, r}, std::move(out), {a}, [r, c](Node& self) {
    auto& ga = self.inputs[0]->ensure_grad();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) ga[std::size_t(i) * c + j] += self.grad[std::size_t(j) * r + i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts[0].shape();
  const int rank = static_cast<int>(first.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw DimensionError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == rank;
    for (int d = 0; ok && d < rank; ++d) ok = d == axis || p.dim(d) == first[d];
    if (!ok) throw DimensionError("concat: " + shape_str(p.shape()) + " incompatible with " + shape_str(first));
    out_shape[axis] += p.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= first[d];
  for (int d = axis + 1; d < rank; ++d) inner *= first[d];
  const std::size_t out_row = std::size_t(out_shape[axis]) * inner;

  std::vector<Scalar> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t row = std::size_t(p.dim(axis)) * inner;
    auto pv = p.data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + o * row, row, out.begin() + o * out_row + off);
    off += row;
  }
  return detail::make_result(out_shape, std::move(out), parts, [outer, out_row, offsets](Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      auto& in = *self.inputs[k];
      if (!in.requires_grad) continue;
      auto& g = in.ensure_grad();
      const std::size_t row = in.data.size() / outer;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < row; ++i) g[o * row + i] += self.grad[o * out_row + offsets[k] + i];
    }
  });
}

Tensor slice(const Tensor& a, int begin, int end) {
  if (a.rank() < 1 || begin < 0 || end > a.dim(0) || begin >= end) {
    throw DimensionError("slice: [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                         shape_str(a.shape()));
  }
  const std::size_t inner = a.numel() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = end - begin;
  std::vector<Scalar> out(a.values().begin() + begin * inner, a.values().begin() + end * inner);
  const std::size_t start = begin * inner;
  return detail::make_result(std::move(shape), std::move(out), {a}, [start](Node& self) {
    auto& ga = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[start + i] += self.grad[i];
  });
}

Tensor expand(const Tensor& a, const Shape& shape) {
  if (a.rank() != static_cast<int>(shape.size())) {
    throw DimensionError("expand: rank mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  for (int d = 0; d < a.rank(); ++d) {
    if (a.dim(d) != shape[d] && a.dim(d) != 1) {
      throw DimensionError("expand: cannot expand " + shape_str(a.shape()) + " to " + shape_str(shape));
    }
  }
  const int rank = a.rank();
  const std::size_t n = shape_numel(shape);
  // Source flat index for every output element.
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> in_strides(rank, 1);
  for (int d = rank - 2; d >= 0; --d) in_strides[d] = in_strides[d + 1] * a.dim(d + 1);
  std::vector<int> idx(rank, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t s = 0;
    for (int d = 0; d < rank; ++d) s += (a.dim(d) == 1 ? 0 : idx[d]) * in_strides[d];
    src[i] = s;
    for (int d = rank - 1; d >= 0; --d) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  auto av = a.data();
  std::vector<Scalar> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = av[src[i]];
  return detail::make_result(shape, std::move(out), {a}, [src = std::move(src)](Node& self) {
    auto& ga = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < src.size(); ++i) ga[src[i]] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// c[M,N] += a[M,K] * b[K,N]
void detail::gemm_nn(const Scalar* a, const Scalar* b, Scalar* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    Scalar* crow = c + std::size_t(i) * n;
    for (int p = 0; p < k; ++p) {
      const Scalar av = a[std::size_t(i) * k + p];
      const Scalar* brow = b + std::size_t(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[M,N] += a[M,K] * b[N,K]^T
void detail::gemm_nt(const Scalar* a, const Scalar* b, Scalar* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Scalar* arow = a + std::size_t(i) * k;
    Scalar* crow = c + std::size_t(i) * n;
    int j = 0;
    for (; j + 4 <= n; j += 4) {
      const Scalar* b0 = b + std::size_t(j) * k;
      const Scalar* b1 = b0 + k;
      const Scalar* b2 = b1 + k;
      const Scalar* b3 = b2 + k;
      Scalar s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      for (int p = 0; p < k; ++p) {
        const Scalar av = arow[p];
        s0 += av * b0[p];
        s1 += av * b1[p];
        s2 += av * b2[p];
        s3 += av * b3[p];
      }
      crow[j] += s0;
      crow[j + 1] += s1;
      crow[j + 2] += s2;
      crow[j + 3] += s3;
    }
    for (; j < n; ++j) {
      const Scalar* brow = b + std::size_t(j) * k;
      Scalar s = 0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

// c[K,N] += a[M,K]^T * b[M,N]
void detail::gemm_tn(const Scalar* a, const Scalar* b, Scalar* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const Scalar* brow = b + std::size_t(i) * n;
    for (int p = 0; p < k; ++p) {
      const Scalar av = a[std::size_t(i) * k + p];
      Scalar* crow = c + std::size_t(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}


Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<Scalar> out(std::size_t(m) * n, 0);
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return detail::make_result(Shape{m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) detail::gemm_nt(self.grad.data(), B.data.data(), A.ensure_grad().data(), m, n, k);
    if (B.requires_grad) detail::gemm_tn(A.data.data(), self.grad.data(), B.ensure_grad().data(), m, k, n);
  });
}

Tensor softmax(const Tensor& a, int axis) {
  const int rank = a.rank();
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw DimensionError("softmax: axis out of range for " + shape_str(a.shape()));
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= a.dim(d);
  for (int d = axis + 1; d < rank; ++d) inner *= a.dim(d);
  const int n = a.dim(axis);
  auto av = a.data();
  std::vector<Scalar> out(a.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      Scalar mx = av[base];
      for (int j = 1; j < n; ++j) mx = std::max(mx, av[base + j * inner]);
      Scalar s = 0;
      for (int j = 0; j < n; ++j) {
        const Scalar e = std::exp(av[base + j * inner] - mx);
        out[base + j * inner] = e;
        s += e;
      }
      if (!std::isfinite(s)) throw std::domain_error("softmax: non-finite input");
      for (int j = 0; j < n; ++j) out[base + j * inner] /= s;
    }
  }
  return detail::make_result(a.shape(), std::move(out), {a}, [outer, inner, n](Node& self) {
    auto& ga = self.inputs[0]->ensure_grad();
    const auto& y = self.data;
    const auto& g = self.grad;
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * n * inner + i;
        Scalar dot = 0;
        for (int j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (int j = 0; j < n; ++j) {
          const std::size_t q = base + j * inner;
          ga[q] += y[q] * (g[q] - dot);
        }
      }
    }
  });
}

}  // namespace ctad
