#include "kdvr/oracle.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

#include "kdvr/errors.hpp"

namespace kdvr {

namespace {

Eigen::MatrixXd input_matrix(const Objective& obj) {
  const std::size_t N = obj.num_samples();
  const std::size_t p = obj.input(0).size();
  Eigen::MatrixXd A(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(p));
  for (std::size_t n = 0; n < N; ++n) {
    const auto row = obj.input(n);
    for (std::size_t i = 0; i < p; ++i) {
      A(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(i)) = row[i];
    }
  }
  return A;
}

double sigma_sq_at(const Objective& obj, const ParamVector& x) {
  double s = 0.0;
  for (std::size_t n = 0; n < obj.num_samples(); ++n) s += norm_sq(obj.grad(x, n));
  return s / static_cast<double>(obj.num_samples());
}

double max_row_norm_sq(const Objective& obj) {
  double m = 0.0;
  for (std::size_t n = 0; n < obj.num_samples(); ++n) m = std::max(m, norm_sq(obj.input(n)));
  return m;
}

}  // namespace

ExactConstants solve_linear_regression(const Objective& obj) {
  if (obj.kind() != ObjectiveKind::linear_regression) {
    throw InvalidKind("solve_linear_regression: objective is " + to_string(obj.kind()));
  }
  const Eigen::MatrixXd A = input_matrix(obj);
  const double inv_n = 1.0 / static_cast<double>(obj.num_samples());
  Eigen::VectorXd b(A.rows());
  for (Eigen::Index n = 0; n < A.rows(); ++n) b(n) = obj.dataset().targets[static_cast<std::size_t>(n)];

  const Eigen::MatrixXd gram = inv_n * (A.transpose() * A);
  const Eigen::VectorXd rhs = inv_n * (A.transpose() * b);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const Eigen::VectorXd& ev = eig.eigenvalues();
  const double top = ev.maxCoeff();
  const double cutoff = 1e-12 * std::max(top, 0.0);

  ExactConstants out;
  Eigen::VectorXd x;
  if (ev.minCoeff() > cutoff) {
    const Eigen::LLT<Eigen::MatrixXd> llt(gram);
    x = llt.solve(rhs);
    x += llt.solve(rhs - gram * x);  // one refinement step
    out.mu = 2.0 * ev.minCoeff();
  } else {
    const Eigen::MatrixXd& V = eig.eigenvectors();
    Eigen::VectorXd coeff = V.transpose() * rhs;
    for (Eigen::Index i = 0; i < coeff.size(); ++i) coeff(i) = ev(i) > cutoff ? coeff(i) / ev(i) : 0.0;
    x = V * coeff;
    out.rank_deficient = true;
    out.mu = 0.0;
  }
  out.L_full = 2.0 * top;
  out.x_star = ParamVector(std::vector<double>(x.data(), x.data() + x.size()));
  out.f_star = obj.full_loss(out.x_star);
  out.L_expected = 2.0 * max_row_norm_sq(obj);
  out.sigma_star_sq = sigma_sq_at(obj, out.x_star);
  return out;
}

ExactConstants reference_solution(const Objective& obj, std::size_t max_iters, double tol,
                                  std::size_t samples, Rng& rng) {
  double curvature = 0.0;
  switch (obj.kind()) {
    case ObjectiveKind::linear_regression: return solve_linear_regression(obj);
    case ObjectiveKind::binary_logistic: curvature = 0.25; break;
    case ObjectiveKind::softmax_linear: curvature = 0.5; break;
    case ObjectiveKind::mlp_relu: throw InvalidKind("reference_solution: no smoothness bound for mlp_relu");
  }
  const Eigen::MatrixXd A = input_matrix(obj);
  const Eigen::MatrixXd gram = (A.transpose() * A) / static_cast<double>(obj.num_samples());
  const double L = curvature * Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(gram).eigenvalues().maxCoeff();
  const double step = 1.0 / L;

  // Nesterov acceleration with function-value restart.
  ParamVector x(obj.dim()), y(obj.dim()), x_prev(obj.dim());
  double t = 1.0;
  double f_prev = obj.full_loss(x);
  bool restarted = false;
  for (std::size_t it = 0; it < max_iters; ++it) {
    const ParamVector g = obj.full_grad(y);
    if (norm(g) <= tol && it > 0) {
      x = y;
      break;
    }
    x_prev = x;
    x = axpy(-step, g, y);
    const double f = obj.full_loss(x);
    // A plain step right after a restart is always kept, otherwise rounding
    // noise near the minimum can pin the iterate in place.
    if (f > f_prev && !restarted) {
      t = 1.0;
      y = x_prev;
      x = x_prev;
      restarted = true;
      continue;
    }
    restarted = false;
    f_prev = f;
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = axpy((t - 1.0) / t_next, x - x_prev, x);
    t = t_next;
  }

  ExactConstants out;
  out.proxy = true;
  out.L_expected_empirical = true;
  out.x_star = x;
  out.f_star = obj.full_loss(x);
  out.L_full = L;
  out.mu = 0.0;
  out.sigma_star_sq = sigma_sq_at(obj, x);
  out.L_expected = 0.0;
  out.L_expected = expected_smoothness_check(obj, out, samples, rng).max_ratio;
  return out;
}

SmoothnessReport expected_smoothness_check(const Objective& obj, const ExactConstants& constants,
                                           std::size_t samples, Rng& rng) {
  const std::size_t N = obj.num_samples();
  const std::size_t d = obj.dim();
  std::vector<ParamVector> g_star;
  g_star.reserve(N);
  for (std::size_t n = 0; n < N; ++n) g_star.push_back(obj.grad(constants.x_star, n));

  SmoothnessReport report;
  for (std::size_t s = 0; s < samples; ++s) {
    ParamVector x = constants.x_star;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < d; ++i) x[i] += scale * rng.normal();
    double lhs = 0.0;
    for (std::size_t n = 0; n < N; ++n) lhs += dist_sq(obj.grad(x, n), g_star[n]);
    lhs /= static_cast<double>(N);
    const double gap = obj.full_loss(x) - constants.f_star;
    ++report.samples;
    if (lhs == 0.0) continue;
    const double ratio = gap > 0.0 ? lhs / (2.0 * gap) : std::numeric_limits<double>::infinity();
    report.max_ratio = std::max(report.max_ratio, ratio);
    if (!constants.L_expected_empirical && ratio > constants.L_expected * (1.0 + 1e-9)) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "expected smoothness violated at sample " << s << ": ratio " << ratio
          << " > declared " << constants.L_expected << "; witness x =";
      for (double v : x) msg << ' ' << v;
      throw ConstantsInvalid(msg.str());
    }
  }
  return report;
}

double golden_section_lambda(const Objective& obj, const ParamVector& x_star,
                             const ParamVector& teacher, double gamma, double c,
                             std::pair<double, double> interval) {
  const std::size_t N = obj.num_samples();
  std::vector<ParamVector> g_star, g_teacher;
  for (std::size_t n = 0; n < N; ++n) {
    g_star.push_back(obj.grad(x_star, n));
    g_teacher.push_back(obj.grad(teacher, n));
  }
  const ParamVector full_teacher = obj.full_grad(teacher);

  // Direct evaluation of N(lambda) in extended precision so the comparison
  // resolves the minimizer well below 1e-8.
  auto neighborhood = [&](double lambda) {
    const long double l = lambda;
    long double noise = 0.0L;
    for (std::size_t n = 0; n < N; ++n) {
      long double sq = 0.0L;
      for (std::size_t i = 0; i < g_star[n].size(); ++i) {
        const long double diff = static_cast<long double>(g_star[n][i]) -
                                 l * static_cast<long double>(g_teacher[n][i]);
        sq += diff * diff;
      }
      noise += sq;
    }
    noise /= static_cast<long double>(N);
    long double mean_sq = 0.0L;
    for (double v : full_teacher) mean_sq += static_cast<long double>(v) * v;
    return l * l * mean_sq + static_cast<long double>(c) * gamma * noise;
  };

  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = interval.first;
  double b = interval.second;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  long double f1 = neighborhood(x1);
  long double f2 = neighborhood(x2);
  while (b - a > 1e-11) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = neighborhood(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = neighborhood(x2);
    }
  }
  return 0.5 * (a + b);
}

ParamVector make_teacher(const Objective& obj, const ExactConstants& constants, double quality,
                         const ParamVector& direction) {
  if (!(quality >= 0.0)) throw InvalidArgument("make_teacher: quality must be >= 0");
  if (direction.size() != constants.x_star.size()) {
    throw InvalidArgument("make_teacher: direction has wrong dimension");
  }
  if (quality == 0.0) return constants.x_star;
  auto gap = [&](double alpha) {
    return obj.full_loss(axpy(alpha, direction, constants.x_star)) - constants.f_star;
  };
  double lo = 0.0;
  double hi = 1.0;
  for (int i = 0; gap(hi) < quality; ++i) {
    if (i > 200) throw InvalidArgument("make_teacher: objective flat along direction");
    lo = hi;
    hi *= 2.0;
  }
  for (int i = 0; i < 200 && hi - lo > 1e-15 * hi; ++i) {
    const double mid = 0.5 * (lo + hi);
    (gap(mid) < quality ? lo : hi) = mid;
  }
  const double alpha = std::abs(gap(lo) - quality) <= std::abs(gap(hi) - quality) ? lo : hi;
  return axpy(alpha, direction, constants.x_star);
}

ParamVector random_direction(std::size_t dim, Rng& rng) {
  ParamVector v(dim);
  double n2 = 0.0;
  while (n2 == 0.0) {
    for (double& x : v) x = rng.normal();
    n2 = norm_sq(v);
  }
  scale_inplace(1.0 / std::sqrt(n2), v);
  return v;
}

}  // namespace kdvr
