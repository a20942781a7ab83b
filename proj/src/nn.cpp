#include "abtts/nn.hpp"

#include <cmath>
#include <map>

#include "abtts/error.hpp"

namespace abtts::nn {

Tensor uniform_param(const Shape& shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  Tensor t = Tensor::from(shape, std::move(v));
  t.set_requires_grad(true);
  return t;
}

Tensor constant_param(const Shape& shape, double value) {
  Tensor t = Tensor::full(shape, value);
  t.set_requires_grad(true);
  return t;
}

Tensor time_mask(const std::vector<int>& lengths, int T, int D) {
  const int B = static_cast<int>(lengths.size());
  std::vector<double> m(static_cast<std::size_t>(B) * T * D, 0.0);
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < std::min(lengths[b], T); ++t)
      std::fill_n(m.begin() + (static_cast<std::ptrdiff_t>(b) * T + t) * D, D, 1.0);
  return Tensor::from({B, T, D}, std::move(m));
}

Tensor apply_mask(const Tensor& x, const std::vector<int>& lengths) {
  return mul(x, time_mask(lengths, x.dim(1), x.dim(2)));
}

Tensor positional_encoding(int T, int D) {
  std::vector<double> pe(static_cast<std::size_t>(T) * D);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < D; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / D);
      pe[static_cast<std::size_t>(t) * D + i] = (i % 2 == 0) ? std::sin(t * rate) : std::cos(t * rate);
    }
  return Tensor::from({T, D}, std::move(pe));
}

// ---------------------------------------------------------------------------

Linear::Linear(int in, int out, Rng& rng, bool use_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = uniform_param({in, out}, bound, rng);
  if (use_bias) bias = uniform_param({out}, bound, rng);
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add(y, bias) : y;
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + ".weight", weight);
  if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
}

LayerNorm::LayerNorm(int d) : gamma(constant_param({d}, 1.0)), beta(constant_param({d}, 0.0)) {}

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

Embedding::Embedding(int n, int d, Rng& rng) : table(uniform_param({n, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng)) {}

Tensor Embedding::operator()(const std::vector<int>& ids) const {
  for (int id : ids)
    if (id < 0 || id >= size())
      throw ConfigError("embedding id " + std::to_string(id) + " outside table of " + std::to_string(size()));
  return gather_rows(table, ids);
}

void Embedding::collect(const std::string& prefix, ParamList& out) const { out.emplace_back(prefix + ".table", table); }

Conv1d::Conv1d(int in, int out, int k, Rng& rng, int dil, int str, int pad)
    : kernel(k), dilation(dil), stride(str) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * k));
  weight = uniform_param({k * in, out}, bound, rng);
  bias = uniform_param({out}, bound, rng);
  if (pad < 0) {
    const int total = dilation * (kernel - 1);
    pad_left = total / 2;
    pad_right = total - pad_left;
  } else {
    pad_left = pad_right = pad;
  }
}

Tensor Conv1d::operator()(const Tensor& x) const {
  return add(matmul(unfold_time(x, kernel, dilation, stride, pad_left, pad_right), weight), bias);
}

void Conv1d::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

DepthwiseConv1d::DepthwiseConv1d(int channels, int k, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(k));
  weight = uniform_param({k, channels}, bound, rng);
  bias = uniform_param({channels}, bound, rng);
}

void DepthwiseConv1d::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

Conv2d::Conv2d(int in, int out, int kh_, int kw_, int sh_, int sw_, int ph_, int pw_, Rng& rng)
    : kh(kh_), kw(kw_), sh(sh_), sw(sw_), ph(ph_), pw(pw_) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kh * kw));
  weight = uniform_param({kh * kw * in, out}, bound, rng);
  bias = uniform_param({out}, bound, rng);
}

Tensor Conv2d::operator()(const Tensor& x) const {
  return add(matmul(unfold2d(x, kh, kw, sh, sw, ph, pw), weight), bias);
}

void Conv2d::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

// ---------------------------------------------------------------------------

Gru::Gru(int in, int hidden, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_ih = uniform_param({in, 3 * hidden}, bound, rng);
  w_hh = uniform_param({hidden, 3 * hidden}, bound, rng);
  b_ih = uniform_param({3 * hidden}, bound, rng);
  b_hh = uniform_param({3 * hidden}, bound, rng);
}

GruOutput Gru::operator()(const Tensor& x, const std::vector<int>& lengths, bool reverse) const {
  if (x.rank() != 3 || static_cast<int>(lengths.size()) != x.dim(0))
    throw ShapeError("Gru expects [B, T, D] and B lengths, got " + shape_str(x.shape()));
  const int B = x.dim(0), T = x.dim(1), H = hidden();
  Tensor xproj = add(matmul(x, w_ih), b_ih);  // [B, T, 3H]
  Tensor h = Tensor::zeros({B, H});
  std::vector<Tensor> steps(T);
  for (int s = 0; s < T; ++s) {
    const int t = reverse ? T - 1 - s : s;
    Tensor xt = reshape(narrow(xproj, 1, t, 1), {B, 3 * H});
    Tensor ht = add(matmul(h, w_hh), b_hh);
    Tensor r = sigmoid(add(narrow(xt, 1, 0, H), narrow(ht, 1, 0, H)));
    Tensor z = sigmoid(add(narrow(xt, 1, H, H), narrow(ht, 1, H, H)));
    Tensor n = tanh(add(narrow(xt, 1, 2 * H, H), mul(r, narrow(ht, 1, 2 * H, H))));
    // h' = n + z * (h - n)
    Tensor h_new = add(n, mul(z, sub(h, n)));
    std::vector<double> m(static_cast<std::size_t>(B) * H, 0.0);
    bool all_valid = true;
    for (int b = 0; b < B; ++b) {
      const bool valid = t < lengths[b];
      all_valid = all_valid && valid;
      if (valid) std::fill_n(m.begin() + static_cast<std::ptrdiff_t>(b) * H, H, 1.0);
    }
    if (all_valid) {
      h = h_new;
      steps[t] = reshape(h_new, {B, 1, H});
    } else {
      Tensor mask = Tensor::from({B, H}, std::move(m));
      h = add(h, mul(sub(h_new, h), mask));
      steps[t] = reshape(mul(h_new, mask), {B, 1, H});
    }
  }
  return {concat(steps, 1), h};
}

void Gru::collect(const std::string& prefix, ParamList& out) const {
  out.emplace_back(prefix + ".w_ih", w_ih);
  out.emplace_back(prefix + ".w_hh", w_hh);
  out.emplace_back(prefix + ".b_ih", b_ih);
  out.emplace_back(prefix + ".b_hh", b_hh);
}

MultiHeadAttention::MultiHeadAttention(int d, int h, Rng& rng)
    : heads(h), q(d, d, rng), k(d, d, rng), v(d, d, rng), o(d, d, rng) {
  if (d % h != 0) throw ConfigError("attention dim " + std::to_string(d) + " not divisible by " + std::to_string(h) + " heads");
}

Tensor MultiHeadAttention::operator()(const Tensor& x, const std::vector<int>& lengths) const {
  const int B = x.dim(0), T = x.dim(1), D = x.dim(2), dh = D / heads;
  auto split = [&](const Tensor& t) { return reshape(permute(reshape(t, {B, T, heads, dh}), {0, 2, 1, 3}), {B * heads, T, dh}); };
  Tensor qh = split(q(x)), kh = split(k(x)), vh = split(v(x));
  Tensor scores = scale(bmm(qh, transpose_last2(kh)), 1.0 / std::sqrt(static_cast<double>(dh)));
  bool padded = false;
  for (int len : lengths) padded = padded || len < T;
  if (padded) {
    std::vector<double> bias(static_cast<std::size_t>(B) * heads * T * T, 0.0);
    for (int b = 0; b < B; ++b)
      for (int hh = 0; hh < heads; ++hh)
        for (int i = 0; i < T; ++i)
          for (int j = lengths[b]; j < T; ++j) bias[((static_cast<std::size_t>(b) * heads + hh) * T + i) * T + j] = -1e9;
    scores = add(scores, Tensor::from({B * heads, T, T}, std::move(bias)));
  }
  Tensor ctx = bmm(softmax_last(scores), vh);  // [B*H, T, dh]
  ctx = reshape(permute(reshape(ctx, {B, heads, T, dh}), {0, 2, 1, 3}), {B, T, D});
  return o(ctx);
}

void MultiHeadAttention::collect(const std::string& prefix, ParamList& out) const {
  q.collect(prefix + ".q", out);
  k.collect(prefix + ".k", out);
  v.collect(prefix + ".v", out);
  o.collect(prefix + ".o", out);
}

FeedForward::FeedForward(int d, int hidden, Rng& rng) : norm(d), up(d, hidden, rng), down(hidden, d, rng) {}

void FeedForward::collect(const std::string& prefix, ParamList& out) const {
  norm.collect(prefix + ".norm", out);
  up.collect(prefix + ".up", out);
  down.collect(prefix + ".down", out);
}

ConformerBlock::ConformerBlock(int d, int ff_hidden, int heads, int conv_kernel, Rng& rng)
    : ff1(d, ff_hidden, rng),
      ff2(d, ff_hidden, rng),
      attn_norm(d),
      attn(d, heads, rng),
      conv_norm(d),
      pointwise_in(d, 2 * d, rng),
      depthwise(d, conv_kernel, rng),
      conv_inner_norm(d),
      pointwise_out(d, d, rng),
      out_norm(d) {}

Tensor ConformerBlock::operator()(const Tensor& x, const std::vector<int>& lengths) const {
  const int D = x.dim(2);
  Tensor h = add(x, scale(ff1(x), 0.5));
  h = add(h, attn(attn_norm(h), lengths));
  Tensor c = pointwise_in(conv_norm(h));
  c = mul(narrow(c, 2, 0, D), sigmoid(narrow(c, 2, D, D)));
  c = depthwise(apply_mask(c, lengths));
  c = pointwise_out(silu(conv_inner_norm(c)));
  h = add(h, c);
  h = add(h, scale(ff2(h), 0.5));
  return apply_mask(out_norm(h), lengths);
}

void ConformerBlock::collect(const std::string& prefix, ParamList& out) const {
  ff1.collect(prefix + ".ff1", out);
  attn_norm.collect(prefix + ".attn_norm", out);
  attn.collect(prefix + ".attn", out);
  conv_norm.collect(prefix + ".conv_norm", out);
  pointwise_in.collect(prefix + ".pointwise_in", out);
  depthwise.collect(prefix + ".depthwise", out);
  conv_inner_norm.collect(prefix + ".conv_inner_norm", out);
  pointwise_out.collect(prefix + ".pointwise_out", out);
  ff2.collect(prefix + ".ff2", out);
  out_norm.collect(prefix + ".out_norm", out);
}

void copy_params(const ParamList& src, const ParamList& dst) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : src) by_name[name] = &t;
  for (const auto& [name, t] : dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("parameter '" + name + "' missing from source");
    if (it->second->shape() != t.shape())
      throw ConfigError("parameter '" + name + "' shape " + shape_str(it->second->shape()) + " vs " + shape_str(t.shape()));
    std::copy(it->second->data().begin(), it->second->data().end(), t.mutable_data().begin());
  }
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& y) {
  const int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(y.size()) != n) throw ShapeError("cross_entropy: label count does not match logits");
  std::vector<double> onehot(static_cast<std::size_t>(n) * c, 0.0);
  for (int i = 0; i < n; ++i) onehot[static_cast<std::size_t>(i) * c + y[i]] = -1.0 / n;
  return sum_all(mul(log_softmax_last(logits), Tensor::from({n, c}, std::move(onehot))));
}

}  // namespace abtts::nn
