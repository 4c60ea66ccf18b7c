#pragma once

#include <cstddef>
#include <utility>

#include "kdvr/objective.hpp"
#include "kdvr/rng.hpp"
#include "kdvr/vector.hpp"

namespace kdvr {

/// Ground truth for a solvable problem: minimizer, optimal value and the
/// constants of the convergence analysis.
///
///   mu, L_full     extreme eigenvalues of the Hessian of f
///   L_expected     expected-smoothness constant for single-sample batches:
///                  E||grad f_xi(x) - grad f_xi(x*)||^2 <= 2 L_expected (f(x) - f*)
///   sigma_star_sq  E||grad f_xi(x*)||^2
struct ExactConstants {
  ParamVector x_star;
  double f_star = 0.0;
  double mu = 0.0;
  double L_full = 0.0;
  double L_expected = 0.0;
  double sigma_star_sq = 0.0;
  /// Gram matrix singular: x_star is the minimum-norm solution and mu = 0.
  bool rank_deficient = false;
  /// L_expected is a sampled lower estimate rather than a certified bound.
  bool L_expected_empirical = false;
  /// x_star is an approximate reference solution, not an exact minimizer.
  bool proxy = false;
};

/// Normal-equation solve for squared loss. The Gram matrix (1/N) A^T A is
/// factored by a symmetric eigendecomposition; eigenvalues below 1e-12 times
/// the largest are treated as zero (minimum-norm solution, flag set).
/// L_expected = 2 max_n ||a_n||^2.
ExactConstants solve_linear_regression(const Objective& obj);

/// Reference solution for the classification kinds by full-batch gradient
/// descent with step 1/L_bound (L_bound from the input second-moment matrix),
/// stopped when ||grad f|| <= tol or after max_iters. Returned constants are
/// flagged `proxy`; L_expected is estimated from `samples` draws.
ExactConstants reference_solution(const Objective& obj, std::size_t max_iters, double tol,
                                  std::size_t samples, Rng& rng);

struct SmoothnessReport {
  std::size_t samples = 0;
  /// max over sampled x of E||grad f_xi(x) - grad f_xi(x*)||^2 / (2 (f(x) - f*)),
  /// an empirical lower bound on the expected-smoothness constant.
  double max_ratio = 0.0;
};

/// Checks the expected-smoothness inequality with the declared constant at
/// `samples` random points x* + v, v ~ N(0, I). Throws ConstantsInvalid
/// naming the first witness that violates it.
SmoothnessReport expected_smoothness_check(const Objective& obj, const ExactConstants& constants,
                                           std::size_t samples, Rng& rng);

/// Golden-section minimization of N(lambda) on [lo, hi], with the gradient
/// moments enumerated directly (independent of the closed-form lambda*).
double golden_section_lambda(const Objective& obj, const ParamVector& x_star,
                             const ParamVector& teacher, double gamma, double c,
                             std::pair<double, double> interval);

/// theta = x* + alpha * direction with alpha >= 0 found by bisection so that
/// f(theta) - f* = quality (to 1e-10).
ParamVector make_teacher(const Objective& obj, const ExactConstants& constants, double quality,
                         const ParamVector& direction);

/// Uniformly random unit direction in R^dim.
ParamVector random_direction(std::size_t dim, Rng& rng);

}  // namespace kdvr
