#include "abtts/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "abtts/error.hpp"

namespace abtts {

using detail::Node;

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

Tensor make_out(Shape shape, std::vector<double> data, const std::vector<const Tensor*>& inputs,
                std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (g_grad_enabled) {
    bool any = false;
    for (const Tensor* t : inputs) any = any || t->requires_grad();
    if (any) {
      node->requires_grad = true;
      node->parents.reserve(inputs.size());
      for (const Tensor* t : inputs) node->parents.push_back(t->node_ptr());
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

// Parent gradient buffer, or nullptr when that parent does not need one.
double* pgrad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? p.grad_buffer() : nullptr;
}

const std::vector<double>& pdata(Node& self, std::size_t i) { return self.parents[i]->data; }

std::size_t broadcast_ok(const Tensor& a, const Tensor& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool ok = sb.size() <= sa.size() && b.numel() > 0;
  for (std::size_t i = 0; ok && i < sb.size(); ++i) ok = sb[sb.size() - 1 - i] == sa[sa.size() - 1 - i];
  if (!ok) throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(sb) + " onto " + shape_str(sa));
  return b.numel();
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * static_cast<std::size_t>(s[i + 1]);
  return st;
}

int norm_dim(int dim, int rank) {
  int d = dim < 0 ? dim + rank : dim;
  if (d < 0 || d >= rank) throw ShapeError("axis " + std::to_string(dim) + " out of range for rank " + std::to_string(rank));
  return d;
}

template <typename F, typename DF>
Tensor unary(const Tensor& x, F f, DF df) {
  std::vector<double> y(x.numel());
  const auto& xd = x.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xd[i]);
  return make_out(x.shape(), std::move(y), {&x}, [df](Node& self) {
    double* gx = pgrad(self, 0);
    if (!gx) return;
    const auto& xd = pdata(self, 0);
    for (std::size_t i = 0; i < xd.size(); ++i) gx[i] += self.grad[i] * df(xd[i], self.data[i]);
  });
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_str(s));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---------------------------------------------------------------------------

Tensor::Tensor() = default;

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor Tensor::full(const Shape& shape, double value) {
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->data.assign(shape_numel(shape), value);
  return Tensor(std::move(n));
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values) {
  if (values.size() != shape_numel(shape))
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = shape;
  n->data = std::move(values);
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

int Tensor::dim(int i) const { return node_->shape[norm_dim(i, rank())]; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at(std::initializer_list<int> index) const {
  if (static_cast<int>(index.size()) != rank()) throw ShapeError("at(): wrong index rank");
  auto st = strides_of(shape());
  std::size_t off = 0;
  int i = 0;
  for (int v : index) {
    if (v < 0 || v >= node_->shape[i]) throw ShapeError("at(): index out of range");
    off += st[i++] * static_cast<std::size_t>(v);
  }
  return node_->data[off];
}

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

void Tensor::backward() const {
  if (numel() != 1) throw ShapeError("backward() needs a scalar, got " + shape_str(shape()));
  if (!node_->requires_grad) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->data = node_->data;
  return Tensor(std::move(n));
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  t.set_requires_grad(requires_grad());
  return t;
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t nb = broadcast_ok(a, b, "add");
  std::vector<double> y(a.values());
  const auto& bd = b.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bd[i % nb];
  return make_out(a.shape(), std::move(y), {&a, &b}, [nb](Node& self) {
    if (double* ga = pgrad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (double* gb = pgrad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % nb] += self.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const std::size_t nb = broadcast_ok(a, b, "sub");
  std::vector<double> y(a.values());
  const auto& bd = b.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bd[i % nb];
  return make_out(a.shape(), std::move(y), {&a, &b}, [nb](Node& self) {
    if (double* ga = pgrad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    if (double* gb = pgrad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % nb] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t nb = broadcast_ok(a, b, "mul");
  std::vector<double> y(a.values());
  const auto& bd = b.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bd[i % nb];
  return make_out(a.shape(), std::move(y), {&a, &b}, [nb](Node& self) {
    const auto& ad = pdata(self, 0);
    const auto& bd = pdata(self, 1);
    if (double* ga = pgrad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * bd[i % nb];
    if (double* gb = pgrad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % nb] += self.grad[i] * ad[i];
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  const std::size_t nb = broadcast_ok(a, b, "div");
  std::vector<double> y(a.values());
  const auto& bd = b.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= bd[i % nb];
  return make_out(a.shape(), std::move(y), {&a, &b}, [nb](Node& self) {
    const auto& bd = pdata(self, 1);
    if (double* ga = pgrad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] / bd[i % nb];
    if (double* gb = pgrad(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % nb] -= self.grad[i] * self.data[i] / bd[i % nb];
  });
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor silu(const Tensor& x) {
  return unary(
      x, [](double v) { return v / (1.0 + std::exp(-v)); },
      [](double v, double) {
        const double s = 1.0 / (1.0 + std::exp(-v));
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(
      x, [slope](double v) { return v > 0 ? v : slope * v; }, [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, [](double v) { return std::fabs(v); }, [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(const Tensor& x) {
  return unary(
      x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor clamp_min(const Tensor& x, double floor) {
  return unary(
      x, [floor](double v) { return v < floor ? floor : v; }, [floor](double v, double) { return v < floor ? 0.0 : 1.0; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_out({1}, {s}, {&x}, [](Node& self) {
    if (double* gx = pgrad(self, 0)) {
      const double g = self.grad[0];
      for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) gx[i] += g;
    }
  });
}

Tensor mean_all(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean_all of empty tensor");
  return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_dim(const Tensor& x, int dim) {
  const int d = norm_dim(dim, x.rank());
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < d; ++i) outer *= x.shape()[i];
  for (int i = d + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  const std::size_t n = x.shape()[d];
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + d);
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> y(outer * inner, 0.0);
  const auto& xd = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) y[o * inner + i] += xd[(o * n + k) * inner + i];
  return make_out(out_shape, std::move(y), {&x}, [outer, inner, n](Node& self) {
    double* gx = pgrad(self, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t i = 0; i < inner; ++i) gx[(o * n + k) * inner + i] += self.grad[o * inner + i];
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& w) {
  if (w.rank() != 2 || a.rank() < 1 || a.shape().back() != w.dim(0))
    throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(w.shape()));
  const int K = w.dim(0), N = w.dim(1);
  const int M = static_cast<int>(a.numel() / static_cast<std::size_t>(K));
  std::vector<double> y(static_cast<std::size_t>(M) * N);
  MapMat(y.data(), M, N).noalias() = MapConstMat(a.values().data(), M, K) * MapConstMat(w.values().data(), K, N);
  Shape out = a.shape();
  out.back() = N;
  return make_out(out, std::move(y), {&a, &w}, [M, K, N](Node& self) {
    MapConstMat gy(self.grad.data(), M, N);
    if (double* ga = pgrad(self, 0)) MapMat(ga, M, K).noalias() += gy * MapConstMat(pdata(self, 1).data(), K, N).transpose();
    if (double* gw = pgrad(self, 1)) MapMat(gw, K, N).noalias() += MapConstMat(pdata(self, 0).data(), M, K).transpose() * gy;
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw ShapeError("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int B = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
  std::vector<double> y(static_cast<std::size_t>(B) * M * N);
  for (int i = 0; i < B; ++i)
    MapMat(y.data() + static_cast<std::size_t>(i) * M * N, M, N).noalias() =
        MapConstMat(a.values().data() + static_cast<std::size_t>(i) * M * K, M, K) *
        MapConstMat(b.values().data() + static_cast<std::size_t>(i) * K * N, K, N);
  return make_out({B, M, N}, std::move(y), {&a, &b}, [B, M, K, N](Node& self) {
    double* ga = pgrad(self, 0);
    double* gb = pgrad(self, 1);
    const auto& ad = pdata(self, 0);
    const auto& bd = pdata(self, 1);
    for (int i = 0; i < B; ++i) {
      MapConstMat gy(self.grad.data() + static_cast<std::size_t>(i) * M * N, M, N);
      if (ga)
        MapMat(ga + static_cast<std::size_t>(i) * M * K, M, K).noalias() +=
            gy * MapConstMat(bd.data() + static_cast<std::size_t>(i) * K * N, K, N).transpose();
      if (gb)
        MapMat(gb + static_cast<std::size_t>(i) * K * N, K, N).noalias() +=
            MapConstMat(ad.data() + static_cast<std::size_t>(i) * M * K, M, K).transpose() * gy;
    }
  });
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last2 on rank < 2");
  std::vector<int> order(x.rank());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[x.rank() - 1], order[x.rank() - 2]);
  return permute(x, order);
}

// ---------------------------------------------------------------------------
// Normalisation

Tensor softmax_last(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<double> y(x.numel());
  const auto& xd = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * n;
    double* out = y.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += (out[i] = std::exp(in[i] - mx));
    for (std::size_t i = 0; i < n; ++i) out[i] /= s;
  }
  return make_out(x.shape(), std::move(y), {&x}, [n, rows](Node& self) {
    double* gx = pgrad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yv = self.data.data() + r * n;
      const double* gy = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += yv[i] * gy[i];
      for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += yv[i] * (gy[i] - dot);
    }
  });
}

Tensor log_softmax_last(const Tensor& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<double> y(x.numel());
  const auto& xd = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(in[i] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t i = 0; i < n; ++i) y[r * n + i] = in[i] - lse;
  }
  return make_out(x.shape(), std::move(y), {&x}, [n, rows](Node& self) {
    double* gx = pgrad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* yv = self.data.data() + r * n;
      const double* gy = self.grad.data() + r * n;
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += gy[i];
      for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += gy[i] - std::exp(yv[i]) * s;
    }
  });
}

Tensor layer_norm_last(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t n = x.shape().back();
  if (gamma.numel() != n || beta.numel() != n) throw ShapeError("layer_norm: gain/bias size mismatch");
  const std::size_t rows = x.numel() / n;
  std::vector<double> y(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto& xd = x.values();
  const auto& g = gamma.values();
  const auto& b = beta.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * n;
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += in[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (in[i] - mean) * (in[i] - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t i = 0; i < n; ++i) {
      const double h = (in[i] - mean) * is;
      (*xhat)[r * n + i] = h;
      y[r * n + i] = h * g[i] + b[i];
    }
  }
  return make_out(x.shape(), std::move(y), {&x, &gamma, &beta}, [n, rows, xhat, inv_std](Node& self) {
    double* gx = pgrad(self, 0);
    double* gg = pgrad(self, 1);
    double* gb = pgrad(self, 2);
    const auto& g = pdata(self, 1);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* gy = self.grad.data() + r * n;
      const double* h = xhat->data() + r * n;
      if (gg)
        for (std::size_t i = 0; i < n; ++i) gg[i] += gy[i] * h[i];
      if (gb)
        for (std::size_t i = 0; i < n; ++i) gb[i] += gy[i];
      if (gx) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double d = gy[i] * g[i];
          m1 += d;
          m2 += d * h[i];
        }
        m1 /= static_cast<double>(n);
        m2 /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += (*inv_std)[r] * (gy[i] * g[i] - m1 - h[i] * m2);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Layout

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape));
  return make_out(shape, x.values(), {&x}, [](Node& self) {
    if (double* gx = pgrad(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<int>& order) {
  const int r = x.rank();
  if (static_cast<int>(order.size()) != r) throw ShapeError("permute: order rank mismatch");
  Shape out(r);
  for (int i = 0; i < r; ++i) out[i] = x.shape()[order[i]];
  const auto in_st = strides_of(x.shape());
  // Source offset for each destination element, walked with an odometer.
  auto src = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<int> idx(r, 0);
  for (std::size_t k = 0; k < x.numel(); ++k) {
    std::size_t off = 0;
    for (int i = 0; i < r; ++i) off += in_st[order[i]] * static_cast<std::size_t>(idx[i]);
    (*src)[k] = off;
    for (int i = r - 1; i >= 0; --i) {
      if (++idx[i] < out[i]) break;
      idx[i] = 0;
    }
  }
  std::vector<double> y(x.numel());
  const auto& xd = x.values();
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = xd[(*src)[k]];
  return make_out(out, std::move(y), {&x}, [src](Node& self) {
    if (double* gx = pgrad(self, 0))
      for (std::size_t k = 0; k < self.grad.size(); ++k) gx[(*src)[k]] += self.grad[k];
  });
}

Tensor narrow(const Tensor& x, int dim, int start, int length) {
  const int d = norm_dim(dim, x.rank());
  if (start < 0 || length < 0 || start + length > x.shape()[d])
    throw ShapeError("narrow: [" + std::to_string(start) + ", +" + std::to_string(length) + ") outside axis of size " +
                     std::to_string(x.shape()[d]));
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < d; ++i) outer *= x.shape()[i];
  for (int i = d + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  const std::size_t n = x.shape()[d];
  Shape out = x.shape();
  out[d] = length;
  std::vector<double> y(outer * length * inner);
  const auto& xd = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>((o * n + start) * inner), length * inner,
                y.begin() + static_cast<std::ptrdiff_t>(o * length * inner));
  return make_out(out, std::move(y), {&x}, [outer, inner, n, start, length](Node& self) {
    double* gx = pgrad(self, 0);
    if (!gx) return;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < static_cast<std::size_t>(length) * inner; ++i)
        gx[(o * n + start) * inner + i] += self.grad[o * length * inner + i];
  });
}

Tensor concat(const std::vector<Tensor>& xs, int dim) {
  if (xs.empty()) throw ShapeError("concat of nothing");
  const int d = norm_dim(dim, xs[0].rank());
  Shape out = xs[0].shape();
  out[d] = 0;
  for (const auto& t : xs) {
    if (t.rank() != xs[0].rank()) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < t.rank(); ++i)
      if (i != d && t.shape()[i] != xs[0].shape()[i])
        throw ShapeError("concat: " + shape_str(t.shape()) + " vs " + shape_str(xs[0].shape()));
    out[d] += t.shape()[d];
  }
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < d; ++i) outer *= out[i];
  for (int i = d + 1; i < static_cast<int>(out.size()); ++i) inner *= out[i];
  const std::size_t total = out[d];
  std::vector<double> y(shape_numel(out));
  std::vector<std::size_t> offsets;
  std::size_t acc = 0;
  for (const auto& t : xs) {
    offsets.push_back(acc);
    const std::size_t n = t.shape()[d];
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(t.values().begin() + static_cast<std::ptrdiff_t>(o * n * inner), n * inner,
                  y.begin() + static_cast<std::ptrdiff_t>((o * total + acc) * inner));
    acc += n;
  }
  std::vector<const Tensor*> ins;
  for (const auto& t : xs) ins.push_back(&t);
  return make_out(out, std::move(y), ins, [outer, inner, total, offsets](Node& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      double* g = pgrad(self, p);
      if (!g) continue;
      const std::size_t n = self.parents[p]->data.size() / (outer * inner);
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < n * inner; ++i) g[o * n * inner + i] += self.grad[(o * total + offsets[p]) * inner + i];
    }
  });
}

Tensor repeat_mid(const Tensor& x, int times) {
  if (x.rank() != 2) throw ShapeError("repeat_mid expects [B, D]");
  const int B = x.dim(0), D = x.dim(1);
  std::vector<double> y(static_cast<std::size_t>(B) * times * D);
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < times; ++t)
      std::copy_n(x.values().begin() + b * D, D, y.begin() + (static_cast<std::ptrdiff_t>(b) * times + t) * D);
  return make_out({B, times, D}, std::move(y), {&x}, [B, D, times](Node& self) {
    double* gx = pgrad(self, 0);
    if (!gx) return;
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < times; ++t)
        for (int i = 0; i < D; ++i) gx[b * D + i] += self.grad[(static_cast<std::size_t>(b) * times + t) * D + i];
  });
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& index) {
  const std::size_t D = x.shape().back();
  const int N = static_cast<int>(x.numel() / D);
  std::vector<double> y(index.size() * D, 0.0);
  for (std::size_t r = 0; r < index.size(); ++r) {
    const int src = index[r];
    if (src < -1 || src >= N) throw ShapeError("gather_rows: index " + std::to_string(src) + " out of range");
    if (src >= 0) std::copy_n(x.values().begin() + static_cast<std::ptrdiff_t>(src * D), D, y.begin() + static_cast<std::ptrdiff_t>(r * D));
  }
  return make_out({static_cast<int>(index.size()), static_cast<int>(D)}, std::move(y), {&x}, [index, D](Node& self) {
    double* gx = pgrad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < index.size(); ++r)
      if (index[r] >= 0)
        for (std::size_t i = 0; i < D; ++i) gx[index[r] * D + i] += self.grad[r * D + i];
  });
}

Tensor segment_mean(const Tensor& x, const std::vector<std::vector<int>>& durations, int n_out) {
  if (x.rank() != 3 || static_cast<int>(durations.size()) != x.dim(0)) throw ShapeError("segment_mean expects [B, T, D] and B duration lists");
  const int B = x.dim(0), T = x.dim(1), D = x.dim(2);
  std::vector<double> y(static_cast<std::size_t>(B) * n_out * D, 0.0);
  for (int b = 0; b < B; ++b) {
    if (static_cast<int>(durations[b].size()) > n_out) throw ShapeError("segment_mean: more segments than output rows");
    int t0 = 0;
    for (std::size_t n = 0; n < durations[b].size(); ++n) {
      const int len = durations[b][n];
      if (len < 0 || t0 + len > T) throw ShapeError("segment_mean: durations exceed frame count");
      for (int t = t0; t < t0 + len; ++t)
        for (int i = 0; i < D; ++i) y[(static_cast<std::size_t>(b) * n_out + n) * D + i] += x.values()[(static_cast<std::size_t>(b) * T + t) * D + i] / len;
      t0 += len;
    }
  }
  return make_out({B, n_out, D}, std::move(y), {&x}, [durations, B, T, D, n_out](Node& self) {
    double* gx = pgrad(self, 0);
    if (!gx) return;
    for (int b = 0; b < B; ++b) {
      int t0 = 0;
      for (std::size_t n = 0; n < durations[b].size(); ++n) {
        const int len = durations[b][n];
        for (int t = t0; t < t0 + len; ++t)
          for (int i = 0; i < D; ++i)
            gx[(static_cast<std::size_t>(b) * T + t) * D + i] += self.grad[(static_cast<std::size_t>(b) * n_out + n) * D + i] / len;
        t0 += len;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution helpers

Tensor unfold_time(const Tensor& x, int kernel, int dilation, int stride, int pad_left, int pad_right) {
  if (x.rank() != 3) throw ShapeError("unfold_time expects [B, T, C], got " + shape_str(x.shape()));
  const int B = x.dim(0), T = x.dim(1), C = x.dim(2);
  const int span = dilation * (kernel - 1) + 1;
  const int padded = T + pad_left + pad_right;
  if (padded < span) throw ShapeError("unfold_time: input of length " + std::to_string(T) + " shorter than the kernel span");
  const int To = (padded - span) / stride + 1;
  const std::size_t KC = static_cast<std::size_t>(kernel) * C;
  std::vector<double> y(static_cast<std::size_t>(B) * To * KC, 0.0);
  const auto& xd = x.values();
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < To; ++o)
      for (int k = 0; k < kernel; ++k) {
        const int t = o * stride - pad_left + k * dilation;
        if (t < 0 || t >= T) continue;
        std::copy_n(xd.begin() + (static_cast<std::ptrdiff_t>(b) * T + t) * C, C,
                    y.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(b) * To + o) * KC + static_cast<std::size_t>(k) * C));
      }
  return make_out({B, To, static_cast<int>(KC)}, std::move(y), {&x},
                  [B, T, C, To, KC, kernel, stride, dilation, pad_left](Node& self) {
                    double* gx = pgrad(self, 0);
                    if (!gx) return;
                    for (int b = 0; b < B; ++b)
                      for (int o = 0; o < To; ++o)
                        for (int k = 0; k < kernel; ++k) {
                          const int t = o * stride - pad_left + k * dilation;
                          if (t < 0 || t >= T) continue;
                          const double* g = self.grad.data() + (static_cast<std::size_t>(b) * To + o) * KC + static_cast<std::size_t>(k) * C;
                          double* dst = gx + (static_cast<std::size_t>(b) * T + t) * C;
                          for (int c = 0; c < C; ++c) dst[c] += g[c];
                        }
                  });
}

Tensor unfold2d(const Tensor& x, int kh, int kw, int sh, int sw, int ph, int pw) {
  if (x.rank() != 4) throw ShapeError("unfold2d expects [B, H, W, C]");
  const int B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const int Ho = (H + 2 * ph - kh) / sh + 1;
  const int Wo = (W + 2 * pw - kw) / sw + 1;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("unfold2d: input smaller than kernel");
  const std::size_t KC = static_cast<std::size_t>(kh) * kw * C;
  auto src = std::make_shared<std::vector<long>>(static_cast<std::size_t>(B) * Ho * Wo * kh * kw, -1L);
  std::size_t s = 0;
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < Ho; ++i)
      for (int j = 0; j < Wo; ++j)
        for (int a = 0; a < kh; ++a)
          for (int c = 0; c < kw; ++c, ++s) {
            const int r = i * sh - ph + a, q = j * sw - pw + c;
            if (r >= 0 && r < H && q >= 0 && q < W) (*src)[s] = ((static_cast<long>(b) * H + r) * W + q) * C;
          }
  std::vector<double> y(static_cast<std::size_t>(B) * Ho * Wo * KC, 0.0);
  for (std::size_t p = 0; p < src->size(); ++p)
    if ((*src)[p] >= 0) std::copy_n(x.values().begin() + (*src)[p], C, y.begin() + static_cast<std::ptrdiff_t>(p * C));
  return make_out({B, Ho, Wo, static_cast<int>(KC)}, std::move(y), {&x}, [src, C](Node& self) {
    double* gx = pgrad(self, 0);
    if (!gx) return;
    for (std::size_t p = 0; p < src->size(); ++p)
      if ((*src)[p] >= 0)
        for (int c = 0; c < C; ++c) gx[(*src)[p] + c] += self.grad[p * C + c];
  });
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& w) {
  if (x.rank() != 3 || w.rank() != 2 || w.dim(1) != x.dim(2) || w.dim(0) % 2 == 0)
    throw ShapeError("depthwise_conv1d: " + shape_str(x.shape()) + " with kernel " + shape_str(w.shape()));
  const int B = x.dim(0), T = x.dim(1), C = x.dim(2), K = w.dim(0), pad = K / 2;
  std::vector<double> y(x.numel(), 0.0);
  const auto& xd = x.values();
  const auto& wd = w.values();
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t)
      for (int k = 0; k < K; ++k) {
        const int s = t + k - pad;
        if (s < 0 || s >= T) continue;
        const double* in = xd.data() + (static_cast<std::size_t>(b) * T + s) * C;
        double* out = y.data() + (static_cast<std::size_t>(b) * T + t) * C;
        for (int c = 0; c < C; ++c) out[c] += wd[k * C + c] * in[c];
      }
  return make_out(x.shape(), std::move(y), {&x, &w}, [B, T, C, K, pad](Node& self) {
    double* gx = pgrad(self, 0);
    double* gw = pgrad(self, 1);
    const auto& xd = pdata(self, 0);
    const auto& wd = pdata(self, 1);
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < T; ++t)
        for (int k = 0; k < K; ++k) {
          const int s = t + k - pad;
          if (s < 0 || s >= T) continue;
          const double* g = self.grad.data() + (static_cast<std::size_t>(b) * T + t) * C;
          const std::size_t in = (static_cast<std::size_t>(b) * T + s) * C;
          for (int c = 0; c < C; ++c) {
            if (gx) gx[in + c] += wd[k * C + c] * g[c];
            if (gw) gw[k * C + c] += xd[in + c] * g[c];
          }
        }
  });
}

Tensor filter2d_valid(const Tensor& x, const std::vector<double>& kernel, int kh, int kw) {
  if (x.rank() != 2 || static_cast<int>(kernel.size()) != kh * kw) throw ShapeError("filter2d_valid expects [H, W] and kh*kw taps");
  const int H = x.dim(0), W = x.dim(1);
  const int Ho = H - kh + 1, Wo = W - kw + 1;
  if (Ho <= 0 || Wo <= 0) throw ShapeError("filter2d_valid: image smaller than kernel");
  std::vector<double> y(static_cast<std::size_t>(Ho) * Wo, 0.0);
  const auto& xd = x.values();
  for (int i = 0; i < Ho; ++i)
    for (int a = 0; a < kh; ++a)
      for (int c = 0; c < kw; ++c) {
        const double k = kernel[a * kw + c];
        const double* in = xd.data() + static_cast<std::size_t>(i + a) * W + c;
        double* out = y.data() + static_cast<std::size_t>(i) * Wo;
        for (int j = 0; j < Wo; ++j) out[j] += k * in[j];
      }
  return make_out({Ho, Wo}, std::move(y), {&x}, [kernel, kh, kw, W, Ho, Wo](Node& self) {
    double* gx = pgrad(self, 0);
    if (!gx) return;
    for (int i = 0; i < Ho; ++i)
      for (int a = 0; a < kh; ++a)
        for (int c = 0; c < kw; ++c) {
          const double k = kernel[a * kw + c];
          double* dst = gx + static_cast<std::size_t>(i + a) * W + c;
          const double* g = self.grad.data() + static_cast<std::size_t>(i) * Wo;
          for (int j = 0; j < Wo; ++j) dst[j] += k * g[j];
        }
  });
}

Tensor sparse_apply(const Tensor& x, const SparseMap& map) {
  if (x.shape().back() != map.in_len)
    throw ShapeError("sparse_apply: last axis " + std::to_string(x.shape().back()) + " vs map input " + std::to_string(map.in_len));
  const std::size_t rows = x.numel() / static_cast<std::size_t>(map.in_len);
  Shape out = x.shape();
  out.back() = map.out_len;
  std::vector<double> y(rows * map.out_len, 0.0);
  const auto& xd = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xd.data() + r * map.in_len;
    for (int n = 0; n < map.out_len; ++n) {
      double s = 0.0;
      for (int j = map.row_start[n]; j < map.row_start[n + 1]; ++j) s += map.weight[j] * in[map.idx[j]];
      y[r * map.out_len + n] = s;
    }
  }
  auto m = std::make_shared<SparseMap>(map);
  return make_out(out, std::move(y), {&x}, [m, rows](Node& self) {
    double* gx = pgrad(self, 0);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r)
      for (int n = 0; n < m->out_len; ++n) {
        const double g = self.grad[r * m->out_len + n];
        for (int j = m->row_start[n]; j < m->row_start[n + 1]; ++j) gx[r * m->in_len + m->idx[j]] += m->weight[j] * g;
      }
  });
}

}  // namespace abtts
