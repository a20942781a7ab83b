#pragma once

// Trainable layers built on the autograd ops. Every layer exposes its
// parameters through `collect(prefix, out)` so models can enumerate them by
// stable dotted names for checkpoints and optimisers.
//
// Sequence layers work on padded batches [B, T, D] plus per-item lengths.
// Padded positions never influence valid positions.

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "abtts/tensor.hpp"

namespace abtts::nn {

using Rng = std::mt19937_64;
using ParamList = std::vector<std::pair<std::string, Tensor>>;

Tensor uniform_param(const Shape& shape, double bound, Rng& rng);
Tensor constant_param(const Shape& shape, double value);

/// 0/1 mask [B, T, D] with ones on the first lengths[b] frames.
Tensor time_mask(const std::vector<int>& lengths, int T, int D);
Tensor apply_mask(const Tensor& x, const std::vector<int>& lengths);
/// Sinusoidal table [T, D].
Tensor positional_encoding(int T, int D);

class Linear {
 public:
  Linear() = default;
  Linear(int in, int out, Rng& rng, bool bias = true);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
  int in_features() const { return weight.dim(0); }
  int out_features() const { return weight.dim(1); }

  Tensor weight;  // [in, out]
  Tensor bias;    // [out], undefined when bias = false
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(int d);
  Tensor operator()(const Tensor& x) const { return layer_norm_last(x, gamma, beta); }
  void collect(const std::string& prefix, ParamList& out) const;

  Tensor gamma;
  Tensor beta;
};

class Embedding {
 public:
  Embedding() = default;
  Embedding(int n, int d, Rng& rng);
  /// [ids.size(), d]
  Tensor operator()(const std::vector<int>& ids) const;
  void collect(const std::string& prefix, ParamList& out) const;
  int size() const { return table.dim(0); }

  Tensor table;  // [n, d]
};

/// Convolution along time on [B, T, Cin] -> [B, T_out, Cout]. With stride 1
/// and no explicit padding the output keeps length T.
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(int in, int out, int kernel, Rng& rng, int dilation = 1, int stride = 1, int pad = -1);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;

  Tensor weight;  // [K * Cin, Cout]
  Tensor bias;
  int kernel = 1, dilation = 1, stride = 1, pad_left = 0, pad_right = 0;
};

class DepthwiseConv1d {
 public:
  DepthwiseConv1d() = default;
  DepthwiseConv1d(int channels, int kernel, Rng& rng);
  Tensor operator()(const Tensor& x) const { return add(depthwise_conv1d(x, weight), bias); }
  void collect(const std::string& prefix, ParamList& out) const;

  Tensor weight;  // [K, C]
  Tensor bias;
};

/// Channels-last 2-D convolution on [B, H, W, Cin].
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in, int out, int kh, int kw, int sh, int sw, int ph, int pw, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;

  Tensor weight;  // [kh * kw * Cin, Cout]
  Tensor bias;
  int kh = 3, kw = 3, sh = 1, sw = 1, ph = 0, pw = 0;
};

struct GruOutput {
  Tensor outputs;  // [B, T, H], zero at padded steps
  Tensor final;    // [B, H], state after each item's last valid step
};

/// Single-layer gated recurrent unit (reset / update / candidate gates).
class Gru {
 public:
  Gru() = default;
  Gru(int in, int hidden, Rng& rng);
  GruOutput operator()(const Tensor& x, const std::vector<int>& lengths, bool reverse = false) const;
  void collect(const std::string& prefix, ParamList& out) const;
  int hidden() const { return w_hh.dim(0); }

  Tensor w_ih, w_hh, b_ih, b_hh;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(int d, int heads, Rng& rng);
  /// Self-attention with padded keys excluded.
  Tensor operator()(const Tensor& x, const std::vector<int>& lengths) const;
  void collect(const std::string& prefix, ParamList& out) const;

  int heads = 1;
  Linear q, k, v, o;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(int d, int hidden, Rng& rng);
  Tensor operator()(const Tensor& x) const { return up_down(norm(x)); }
  void collect(const std::string& prefix, ParamList& out) const;

  LayerNorm norm;
  Linear up, down;

 private:
  Tensor up_down(const Tensor& x) const { return down(silu(up(x))); }
};

/// Half-step feed-forward, self-attention, convolution module, half-step
/// feed-forward, final layer norm. The convolution module uses layer norm
/// instead of batch norm so batch composition never leaks between items.
class ConformerBlock {
 public:
  ConformerBlock() = default;
  ConformerBlock(int d, int ff_hidden, int heads, int conv_kernel, Rng& rng);
  Tensor operator()(const Tensor& x, const std::vector<int>& lengths) const;
  void collect(const std::string& prefix, ParamList& out) const;

  FeedForward ff1, ff2;
  LayerNorm attn_norm;
  MultiHeadAttention attn;
  LayerNorm conv_norm;
  Linear pointwise_in;
  DepthwiseConv1d depthwise;
  LayerNorm conv_inner_norm;
  Linear pointwise_out;
  LayerNorm out_norm;
};

/// Mean cross-entropy of logits [N, C] against class indices.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& y);

/// Copies parameter values by name from `src` into `dst`. Every name in
/// `dst` must exist in `src` with identical shape.
void copy_params(const ParamList& src, const ParamList& dst);

}  // namespace abtts::nn
