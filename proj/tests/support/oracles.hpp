#pragma once

// Reference computations used by the unit tests. None of these call into the
// quantities they check: gradients come from a five-point stencil on the loss
// alone, expectations from explicit sums over samples, minimizers from a
// golden-section search written out here.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "kdvr/dataset.hpp"
#include "kdvr/matrix.hpp"
#include "kdvr/objective.hpp"
#include "kdvr/rng.hpp"
#include "kdvr/vector.hpp"

namespace oracle {

using kdvr::ParamVector;

/// Fourth-order central difference, step h * (1 + |x_i|).
inline ParamVector stencil_grad(const std::function<double(const ParamVector&)>& f,
                                const ParamVector& x, double h = 1e-3) {
  ParamVector g(x.size());
  ParamVector y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = h * (1.0 + std::abs(x[i]));
    const double xi = x[i];
    y[i] = xi + 2 * s;
    const double f2 = f(y);
    y[i] = xi + s;
    const double f1 = f(y);
    y[i] = xi - s;
    const double fm1 = f(y);
    y[i] = xi - 2 * s;
    const double fm2 = f(y);
    y[i] = xi;
    g[i] = (-f2 + 8 * f1 - 8 * fm1 + fm2) / (12 * s);
  }
  return g;
}

inline double sq_dist(const ParamVector& a, const ParamVector& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

inline double sq_norm(const ParamVector& a) { return sq_dist(a, ParamVector(a.size())); }

inline double inner(const ParamVector& a, const ParamVector& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// ||a - b|| / (1 + ||b||)
inline double rel_err(const ParamVector& a, const ParamVector& b) {
  return std::sqrt(sq_dist(a, b)) / (1.0 + std::sqrt(sq_norm(b)));
}

/// Mean of f(n) over n = 0..N-1, as vectors.
inline ParamVector enum_mean(std::size_t N, const std::function<ParamVector(std::size_t)>& f) {
  ParamVector acc;
  for (std::size_t n = 0; n < N; ++n) {
    const ParamVector v = f(n);
    if (acc.empty()) acc = ParamVector(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
  }
  for (auto& v : acc) v /= static_cast<double>(N);
  return acc;
}

inline double enum_mean_scalar(std::size_t N, const std::function<double(std::size_t)>& f) {
  double acc = 0;
  for (std::size_t n = 0; n < N; ++n) acc += f(n);
  return acc / static_cast<double>(N);
}

/// Golden-section minimizer of a unimodal function on [lo, hi]. The function
/// returns long double so flat minima still resolve below 1e-8.
inline double golden_min(const std::function<long double(double)>& f, double lo, double hi,
                         double tol = 1e-12) {
  const double r = (std::sqrt(5.0) - 1) / 2;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  long double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = f(d);
    }
  }
  return (a + b) / 2;
}

inline ParamVector gaussian(std::size_t d, kdvr::Rng& rng, double scale = 1.0) {
  ParamVector v(d);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

inline kdvr::Dataset make_data(std::size_t rows, std::size_t cols, std::vector<double> features,
                               std::vector<double> targets,
                               kdvr::TargetKind kind = kdvr::TargetKind::real,
                               std::size_t classes = 0) {
  return kdvr::Dataset{kdvr::Matrix(rows, cols, std::move(features)), std::move(targets), kind,
                       classes};
}

/// Random dataset for objective kind `kind` (classes used for softmax/MLP).
inline kdvr::Dataset random_data(kdvr::ObjectiveKind kind, std::size_t N, std::size_t d,
                                 std::size_t classes, kdvr::Rng& rng) {
  std::vector<double> feats(N * d), targets(N);
  for (auto& f : feats) f = rng.normal();
  switch (kind) {
    case kdvr::ObjectiveKind::linear_regression:
      for (auto& t : targets) t = rng.normal();
      return make_data(N, d, feats, targets);
    case kdvr::ObjectiveKind::binary_logistic:
      for (auto& t : targets) t = rng.uniform01() < 0.5 ? 0.0 : 1.0;
      return make_data(N, d, feats, targets, kdvr::TargetKind::probability);
    default:
      for (auto& t : targets) t = static_cast<double>(rng.uniform_index(classes));
      return make_data(N, d, feats, targets, kdvr::TargetKind::class_index, classes);
  }
}

inline kdvr::Objective random_objective(kdvr::ObjectiveKind kind, std::size_t N, std::size_t d,
                                        std::size_t classes, kdvr::Rng& rng,
                                        std::size_t hidden = 4) {
  kdvr::Dataset data = random_data(kind, N, d, classes, rng);
  switch (kind) {
    case kdvr::ObjectiveKind::linear_regression: return kdvr::Objective::linear_regression(data);
    case kdvr::ObjectiveKind::binary_logistic: return kdvr::Objective::binary_logistic(data);
    case kdvr::ObjectiveKind::softmax_linear: return kdvr::Objective::softmax_linear(data);
    case kdvr::ObjectiveKind::mlp_relu: return kdvr::Objective::mlp_relu(data, hidden);
  }
  return kdvr::Objective::linear_regression(data);
}

/// Composite distillation loss written from its definition: the student's
/// loss against the soft label (1 - lambda) b + lambda phi_theta(a), which
/// for these losses equals the mixture of the two losses.
inline double composite_loss(const kdvr::Objective& obj, const ParamVector& x,
                             const ParamVector& theta, double lambda, std::size_t n) {
  const std::vector<double> t = obj.predict(theta, n);
  const std::vector<double> b = obj.target(n);
  return (1 - lambda) * obj.loss_against(x, n, b) + lambda * obj.loss_against(x, n, t);
}

}  // namespace oracle
