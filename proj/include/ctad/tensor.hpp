// SPDX-License-Identifier: Apache-2.0
//
// Dense tensors with a dynamic reverse-mode gradient tape.
//
// A Tensor is a cheap handle to a shared node. Operations on tensors that
// require gradients append their result node to the thread-local Tape;
// backward() walks the tape in reverse creation order, which is a valid
// topological order because every input exists before its output.

#ifndef CTAD_TENSOR_HPP_
#define CTAD_TENSOR_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ctad {

#ifdef CTAD_SCALAR_F32
using Scalar = float;
#else
using Scalar = double;
#endif

using Shape = std::vector<int>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised for incompatible shapes; the message names every shape involved.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for misuse of the gradient tape (double backward, detached loss).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<Scalar> data;
  std::vector<Scalar> grad;  // empty until populated
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::uint64_t generation = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs that require grad.
  std::function<void(Node&)> backward;

  std::vector<Scalar>& ensure_grad();
  bool is_leaf() const { return !backward; }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = 0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<Scalar> values, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), Scalar(0)); }
  static Tensor full(Shape shape, Scalar v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(Scalar v) { return Tensor(Shape{1}, v); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int axis) const;
  std::size_t numel() const { return node_->data.size(); }

  std::span<const Scalar> data() const { return node_->data; }
  // Writable view; only meaningful on leaves or outside a recorded graph.
  std::span<Scalar> data_mut() { return node_->data; }
  const std::vector<Scalar>& values() const { return node_->data; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const Scalar> grad() const { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  Scalar item() const;
  Scalar at(std::initializer_list<int> index) const;

  /// Same values, no history, no gradient.
  Tensor detach() const;
  /// Deep copy of the values (leaf, keeps requires_grad flag).
  Tensor clone() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Thread-local record of the operations of the current forward pass.
class Tape {
 public:
  static Tape& current();

  void record(const std::shared_ptr<detail::Node>& node);
  /// Starts a fresh graph; required before a second backward().
  void reset();
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  std::uint64_t generation() const { return generation_; }
  std::size_t last_backward_visits() const { return last_visits_; }
  /// True when every recorded node's non-leaf inputs precede it.
  bool is_topologically_ordered() const;

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  bool consumed_ = false;
  std::uint64_t generation_ = 1;
  std::size_t last_visits_ = 0;
};

inline void backward(const Tensor& loss) { Tape::current().backward(loss); }

bool grad_enabled();

/// Disables recording for its lifetime (evaluation, finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Per-pixel boolean map over an H x W grid.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  Mask() = default;
  Mask(int h, int w, bool fill) : height(h), width(w), values(std::size_t(h) * w, fill ? 1 : 0) {}

  std::size_t size() const { return values.size(); }
  bool operator[](std::size_t i) const { return values[i] != 0; }
  bool at(int y, int x) const { return values[std::size_t(y) * width + x] != 0; }
  void set(int y, int x, bool v) { values[std::size_t(y) * width + x] = v ? 1 : 0; }
  std::size_t count() const;
  bool all() const { return count() == size(); }
  bool none() const { return count() == 0; }
};

Mask operator&(const Mask& a, const Mask& b);
Mask operator|(const Mask& a, const Mask& b);

namespace detail {

using BackwardFn = std::function<void(Node&)>;

/// Builds an op result; attaches history only when grad mode is on and some
/// input requires grad.
Tensor make_result(Shape shape, std::vector<Scalar> data, const std::vector<Tensor>& inputs,
                   BackwardFn backward);

// Row-major kernels accumulating into c.
// c[M,N] += a[M,K] * b[K,N]
void gemm_nn(const Scalar* a, const Scalar* b, Scalar* c, int m, int k, int n);
// c[M,N] += a[M,K] * b[N,K]^T
void gemm_nt(const Scalar* a, const Scalar* b, Scalar* c, int m, int k, int n);
// c[K,N] += a[M,K]^T * b[M,N]
void gemm_tn(const Scalar* a, const Scalar* b, Scalar* c, int m, int k, int n);

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

// Binary ops accept equal shapes, or one operand with a single element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, Scalar s);
Tensor mul_scalar(const Tensor& a, Scalar s);
Tensor neg(const Tensor& a);

Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor sqrt(const Tensor& a);
// Gradient passes only where lo < x < hi.
Tensor clamp(const Tensor& a, Scalar lo, Scalar hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator+(const Tensor& a, Scalar s) { return add_scalar(a, s); }
inline Tensor operator*(const Tensor& a, Scalar s) { return mul_scalar(a, s); }
inline Tensor operator*(Scalar s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor l1_norm(const Tensor& a);
/// [C,H,W] -> [1,H,W], Euclidean norm over channels (zero gradient at 0).
Tensor channel_l2_norm(const Tensor& a);
/// [C,H,W] -> [1,H,W]
Tensor channel_sum(const Tensor& a);
/// Mean over the elements of a [C,H,W] tensor whose pixel is valid.
Tensor masked_mean(const Tensor& a, const Mask& mask);
/// Zeroes every channel at invalid pixels of a [C,H,W] tensor.
Tensor apply_mask(const Tensor& a, const Mask& mask);

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape);
/// Rank-2 transpose.
Tensor transpose(const Tensor& a);
Tensor concat(const std::vector<Tensor>& parts, int axis = 0);
/// Slice [begin, end) along axis 0.
Tensor slice(const Tensor& a, int begin, int end);
/// Repeats size-1 dimensions up to `shape` (same rank required).
Tensor expand(const Tensor& a, const Shape& shape);

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// Numerically stable softmax along `axis`.
Tensor softmax(const Tensor& a, int axis);

// ---------------------------------------------------------------------------
// Image ops on [C,H,W]
// ---------------------------------------------------------------------------

/// Cross-correlation. `bias` may be undefined. Kernel dims must be odd.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride, int padding);
inline int same_padding(int kernel) { return kernel / 2; }
/// Non-overlapping k x k average pooling; H and W must be multiples of k.
Tensor avg_pool2d(const Tensor& x, int k);
/// Adaptive average pooling to out_h x out_w bins (input must be >= bins).
Tensor adaptive_avg_pool2d(const Tensor& x, int out_h, int out_w);
/// [C,H,W] -> [C]
Tensor global_avg_pool(const Tensor& x);
/// Output pixel (y, x) reads source floor(y * H / out_h), floor(x * W / out_w).
Tensor resize_nearest(const Tensor& x, int out_h, int out_w);
/// Output pixel (y, x) samples source (y * H / out_h, x * W / out_w), clamped to
/// the last row/column. Matches the "pixel i at scale s sits on pixel s*i"
/// convention of stride-2 convolutions with same padding.
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
/// [C*s*s,H,W] -> [C,s*H,s*W]
Tensor pixel_shuffle(const Tensor& x, int s);
/// [C,s*H,s*W] -> [C*s*s,H,W]
Tensor pixel_unshuffle(const Tensor& x, int s);

struct Sampled {
  Tensor values;
  Mask valid;
};

/// Bilinear sampling of feat [C,H,W] at pixel coordinates coords [2,H',W']
/// (channel 0 = x to the right, channel 1 = y down). Samples outside
/// [0,W-1] x [0,H-1] are clamped to the edge, marked invalid, and pass no
/// gradient to coords. Coordinates within 1e-9 px of the border count as
/// inside.
Sampled bilinear_sample(const Tensor& feat, const Tensor& coords);

}  // namespace ctad

#endif  // CTAD_TENSOR_HPP_
