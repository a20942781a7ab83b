#pragma once

// Central finite-difference oracle for autograd checks. Test-only: it
// perturbs parameter storage directly and never looks at backward closures.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "abtts/tensor.hpp"

namespace abtts::testing {

struct GradCheckResult {
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

inline double relative_error(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-10});
  return std::fabs(a - b) / denom;
}

/// Directional derivative along a random direction over all `params`.
inline GradCheckResult directional_gradcheck(const std::vector<Tensor>& params, const std::function<Tensor()>& loss,
                                             std::mt19937_64& rng, double h = 1e-6) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> dir;
  for (const auto& p : params) {
    std::vector<double> d(p.numel());
    for (double& v : d) v = normal(rng);
    dir.push_back(std::move(d));
  }
  for (auto p : params) p.zero_grad();
  Tensor l = loss();
  l.backward();
  GradCheckResult r;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = params[i].grad();
    if (g.empty()) continue;
    for (std::size_t j = 0; j < g.size(); ++j) r.analytic += g[j] * dir[i][j];
  }
  auto shift = [&](double s) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto d = params[i].mutable_data();
      for (std::size_t j = 0; j < d.size(); ++j) d[j] += s * dir[i][j];
    }
  };
  double up, down;
  {
    NoGradGuard ng;
    shift(h);
    up = loss().item();
    shift(-2.0 * h);
    down = loss().item();
    shift(h);
  }
  r.numeric = (up - down) / (2.0 * h);
  r.rel_error = relative_error(r.analytic, r.numeric);
  return r;
}

/// Single-coordinate check on params[t].data()[j].
inline GradCheckResult coordinate_gradcheck(const Tensor& param, std::size_t j, const std::function<Tensor()>& loss,
                                            double h = 1e-6) {
  Tensor p = param;
  p.zero_grad();
  loss().backward();
  GradCheckResult r;
  r.analytic = p.grad().empty() ? 0.0 : p.grad()[j];
  NoGradGuard ng;
  auto d = p.mutable_data();
  const double orig = d[j];
  d[j] = orig + h;
  const double up = loss().item();
  d[j] = orig - h;
  const double down = loss().item();
  d[j] = orig;
  r.numeric = (up - down) / (2.0 * h);
  r.rel_error = relative_error(r.analytic, r.numeric);
  return r;
}

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double scale = 1.0, bool grad = true) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = normal(rng);
  Tensor t = Tensor::from(shape, std::move(v));
  t.set_requires_grad(grad);
  return t;
}

}  // namespace abtts::testing
