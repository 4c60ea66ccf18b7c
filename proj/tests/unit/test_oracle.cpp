#include <cmath>

#include "doctest.h"
#include "kdvr/distillation.hpp"
#include "kdvr/errors.hpp"
#include "kdvr/oracle.hpp"
#include "oracles.hpp"

using namespace kdvr;

TEST_CASE("single quadratic") {
  const Objective f = Objective::linear_regression(oracle::make_data(1, 1, {1.0}, {5.0}), false);
  const ExactConstants k = solve_linear_regression(f);
  CHECK(k.x_star[0] == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(std::abs(k.f_star) <= 1e-20);
  CHECK(k.mu == doctest::Approx(2.0));
  CHECK(k.L_full == doctest::Approx(2.0));
  CHECK(k.L_expected == doctest::Approx(2.0));
  CHECK(k.sigma_star_sq <= 1e-20);
  CHECK_FALSE(k.rank_deficient);

  // One sample: the smoothness ratio is 2 a^2 = 2 at every x.
  Rng rng(61);
  const SmoothnessReport r = expected_smoothness_check(f, k, 20, rng);
  CHECK(r.max_ratio == doctest::Approx(2.0).epsilon(1e-9));

  const ParamVector th = make_teacher(f, k, 1.0, ParamVector{1.0});
  CHECK(std::abs(std::abs(th[0] - 5.0) - 1.0) <= 1e-9);
  CHECK(make_teacher(f, k, 0.0, ParamVector{1.0}) == k.x_star);
  CHECK_THROWS_AS(make_teacher(f, k, -1.0, ParamVector{1.0}), InvalidArgument);
}

TEST_CASE("two opposing samples") {
  const Objective f = Objective::linear_regression(oracle::make_data(2, 1, {1.0, 1.0}, {1.0, -1.0}), false);
  const ExactConstants k = solve_linear_regression(f);
  CHECK(std::abs(k.x_star[0]) <= 1e-15);
  CHECK(k.f_star == doctest::Approx(1.0));
  const double by_enum = oracle::enum_mean_scalar(2, [&](std::size_t n) { return oracle::sq_norm(f.grad(k.x_star, n)); });
  CHECK(by_enum == doctest::Approx(4.0));
  CHECK(k.sigma_star_sq == doctest::Approx(by_enum).epsilon(1e-14));
}

TEST_CASE("random quadratic certificates") {
  Rng rng(62);
  const Objective obj = oracle::random_objective(ObjectiveKind::linear_regression, 50, 9, 0, rng);
  REQUIRE(obj.dim() == 10);
  const ExactConstants k = solve_linear_regression(obj);

  CHECK(std::sqrt(oracle::sq_norm(obj.full_grad(k.x_star))) <= 1e-10);
  CHECK(obj.full_loss(k.x_star) == doctest::Approx(k.f_star).epsilon(1e-14));
  CHECK(k.mu <= k.L_full);
  CHECK(k.L_full <= k.L_expected);
  const double sigma = oracle::enum_mean_scalar(50, [&](std::size_t n) { return oracle::sq_norm(obj.grad(k.x_star, n)); });
  CHECK(k.sigma_star_sq == doctest::Approx(sigma).epsilon(1e-12));

  // The Hessian acts as H v = grad f(x + v) - grad f(x) on a quadratic.
  const ParamVector g0 = obj.full_grad(ParamVector(10));
  for (int t = 0; t < 100; ++t) {
    const ParamVector v = oracle::gaussian(10, rng);
    const double q = oracle::inner(v, obj.full_grad(v) - g0);
    const double vv = oracle::sq_norm(v);
    CHECK(q >= k.mu * vv * (1 - 1e-10));
    CHECK(q <= k.L_full * vv * (1 + 1e-10));
  }

  for (int t = 0; t < 1000; ++t) {
    const ParamVector x = k.x_star + oracle::gaussian(10, rng, 2.0);
    const double fx = obj.full_loss(x);
    const ParamVector g = obj.full_grad(x);
    const double slack = 1e-9 * (1 + std::abs(fx));
    // strong convexity: f* >= f(x) + <g, x* - x> + mu/2 ||x* - x||^2
    CHECK(k.f_star + slack >= fx + oracle::inner(g, k.x_star - x) + k.mu / 2 * oracle::sq_dist(k.x_star, x));
    // PL: ||g||^2 >= 2 mu (f(x) - f*)
    CHECK(oracle::sq_norm(g) + slack >= 2 * k.mu * (fx - k.f_star));
  }

  const SmoothnessReport r = expected_smoothness_check(obj, k, 1000, rng);
  CHECK(r.samples == 1000);
  CHECK(r.max_ratio <= k.L_expected);

  ExactConstants wrong = k;
  wrong.L_expected = 0.1 * k.L_full;
  CHECK_THROWS_AS(expected_smoothness_check(obj, wrong, 10, rng), ConstantsInvalid);
}

TEST_CASE("rank deficiency gives the minimum-norm solution") {
  // Second column duplicates the first, no bias.
  const Objective obj = Objective::linear_regression(
      oracle::make_data(4, 2, {1, 1, 2, 2, -1, -1, 0.5, 0.5}, {1.0, 2.5, -0.5, 0.0}), false);
  const ExactConstants k = solve_linear_regression(obj);
  CHECK(k.rank_deficient);
  CHECK(k.mu == 0.0);
  CHECK(std::sqrt(oracle::sq_norm(obj.full_grad(k.x_star))) <= 1e-10);
  CHECK(std::abs(k.x_star[0] - k.x_star[1]) <= 1e-12);  // no component along the null vector [1, -1]
}

TEST_CASE("numeric optimal weight") {
  Rng rng(63);
  const Objective obj = oracle::random_objective(ObjectiveKind::linear_regression, 15, 3, 0, rng);
  const ExactConstants k = solve_linear_regression(obj);
  CHECK(std::abs(golden_section_lambda(obj, k.x_star, k.x_star, 0.01, 0.3, {-2.0, 2.0}) - 1.0) <= 1e-8);
  for (int t = 0; t < 10; ++t) {
    const ParamVector th = k.x_star + oracle::gaussian(obj.dim(), rng, 0.3);
    const KDConfig cfg{0.0, 0.02, th, 0.5};
    const double analytic = optimal_lambda(cfg, teacher_stats(obj, k.x_star, th)).value;
    if (std::abs(analytic) < 2.0) {
      CHECK(std::abs(golden_section_lambda(obj, k.x_star, th, 0.02, 0.5, {-2.0, 2.0}) - analytic) <= 1e-8);
    }
  }
}

TEST_CASE("teachers with prescribed quality") {
  Rng rng(64);
  const Objective obj = oracle::random_objective(ObjectiveKind::linear_regression, 40, 9, 0, rng);
  const ExactConstants k = solve_linear_regression(obj);
  for (double q : {1e-4, 0.01, 0.5, 3.0}) {
    const ParamVector th = make_teacher(obj, k, q, random_direction(obj.dim(), rng));
    CHECK(std::abs(obj.full_loss(th) - k.f_star - q) <= 1e-10);
  }
  const ParamVector u = random_direction(7, rng);
  CHECK(oracle::sq_norm(u) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("reference solutions for classification") {
  Rng rng(65);
  const Objective obj = oracle::random_objective(ObjectiveKind::binary_logistic, 40, 3, 2, rng);
  const ExactConstants k = reference_solution(obj, 20000, 1e-9, 16, rng);
  CHECK(k.proxy);
  CHECK(k.L_expected_empirical);
  CHECK(std::sqrt(oracle::sq_norm(obj.full_grad(k.x_star))) <= 1e-9);
  CHECK(k.L_expected > 0.0);

  CHECK_THROWS_AS(solve_linear_regression(obj), InvalidKind);
  const Objective mlp = oracle::random_objective(ObjectiveKind::mlp_relu, 5, 2, 2, rng);
  CHECK_THROWS_AS(reference_solution(mlp, 10, 1e-6, 2, rng), InvalidKind);
}
