#pragma once

// Minimal reverse-mode autograd over dense row-major double tensors.
//
// Every op returns a new Tensor. When grad mode is on and at least one input
// requires a gradient, the result records its parents and a closure that
// pushes the output gradient back into them. `Tensor::backward()` runs the
// closures in reverse topological order.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace abtts {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  double* grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad.data();
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor();
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor from(const Shape& shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const;
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<double> data() { return node_->data; }
  std::span<const double> data() const { return node_->data; }
  /// Tensors are shared handles; writing through a const handle is allowed.
  std::span<double> mutable_data() const { return node_->data; }
  const std::vector<double>& values() const { return node_->data; }
  double item() const;
  double at(std::initializer_list<int> index) const;

  /// Gradient buffer; empty span until a backward pass reaches this tensor.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return std::span<double>(node_->grad_buffer(), numel()); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  /// Seeds d(this)/d(this) = 1 and propagates. The tensor must be a scalar.
  void backward() const;

  /// Same values, cut from the graph.
  Tensor detach() const;
  /// Deep copy of the values as a fresh leaf.
  Tensor clone() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Thread-local switch; when off, ops never record graph edges.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---------------------------------------------------------------------------
// Ops. Shapes are checked and violations throw ShapeError.

// Elementwise; `b` may equal `a`'s shape or a trailing suffix of it.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
/// max(x, floor); zero gradient where clamped.
Tensor clamp_min(const Tensor& x, double floor);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
/// Sum over one axis, which is removed.
Tensor sum_dim(const Tensor& x, int dim);

/// [..., K] x [K, N] -> [..., N]
Tensor matmul(const Tensor& a, const Tensor& w);
/// [B, M, K] x [B, K, N] -> [B, M, N]
Tensor bmm(const Tensor& a, const Tensor& b);
/// Swap the last two axes.
Tensor transpose_last2(const Tensor& x);

Tensor softmax_last(const Tensor& x);
Tensor log_softmax_last(const Tensor& x);
Tensor layer_norm_last(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor reshape(const Tensor& x, const Shape& shape);
Tensor permute(const Tensor& x, const std::vector<int>& order);
Tensor narrow(const Tensor& x, int dim, int start, int length);
Tensor concat(const std::vector<Tensor>& xs, int dim);
/// [B, D] -> [B, T, D]
Tensor repeat_mid(const Tensor& x, int times);

/// Rows of a tensor viewed as [N, D] (D = last axis). Index -1 yields a zero row.
Tensor gather_rows(const Tensor& x, const std::vector<int>& index);
/// [B, T, D] -> [B, N, D]; row n of batch b is the mean of its span of
/// frames. Spans are consecutive, lengths given by durations[b]. Empty spans
/// and padding give zero rows.
Tensor segment_mean(const Tensor& x, const std::vector<std::vector<int>>& durations, int n_out);

/// Sliding windows over axis 1 of [B, T, C] -> [B, T_out, K*C] (k-major),
/// zero padded.
Tensor unfold_time(const Tensor& x, int kernel, int dilation, int stride, int pad_left, int pad_right);
/// Sliding windows over [B, H, W, C] -> [B, H', W', kh*kw*C].
Tensor unfold2d(const Tensor& x, int kh, int kw, int sh, int sw, int ph, int pw);
/// Per-channel convolution over axis 1 of [B, T, C] with kernel [K, C], same padding.
Tensor depthwise_conv1d(const Tensor& x, const Tensor& w);
/// Valid correlation of a [H, W] image with a fixed kernel.
Tensor filter2d_valid(const Tensor& x, const std::vector<double>& kernel, int kh, int kw);

/// Fixed sparse linear map applied along the last axis: out[n] = sum_j w_j x[idx_j].
struct SparseMap {
  int in_len = 0;
  int out_len = 0;
  std::vector<int> row_start;  // out_len + 1 offsets into idx / weight
  std::vector<int> idx;
  std::vector<double> weight;
};
Tensor sparse_apply(const Tensor& x, const SparseMap& map);

}  // namespace abtts
