#include <cmath>

#include "doctest.h"
#include "kdvr/errors.hpp"
#include "kdvr/experiments.hpp"
#include "kdvr/optimizers.hpp"
#include "kdvr/oracle.hpp"
#include "oracles.hpp"

using namespace kdvr;

namespace {

TrainerState fresh(const ParamVector& x, std::uint64_t seed = 1) {
  return TrainerState{x, 0, Rng(seed), std::nullopt, 0};
}

// f(x) = (x - 5)^2 on a single sample without bias.
Objective one_d() { return Objective::linear_regression(oracle::make_data(1, 1, {1.0}, {5.0}), false); }

double tail_error(const std::vector<double>& errs) {
  const std::size_t from = errs.size() * 4 / 5;
  double s = 0.0;
  for (std::size_t i = from; i < errs.size(); ++i) s += errs[i];
  return s / static_cast<double>(errs.size() - from);
}

}  // namespace

TEST_CASE("sgd step arithmetic") {
  const Objective f = one_d();
  TrainerState s = fresh(ParamVector{0.0});
  sgd_step(f, s, 0.0, Minibatch::single(0));
  CHECK(s.x[0] == 0.0);
  CHECK(s.step == 1);
  sgd_step(f, s, 0.25, Minibatch::single(0));
  CHECK(s.x[0] == 2.5);
}

TEST_CASE("non-finite updates raise Diverged with the last finite state") {
  const Objective f = one_d();
  TrainerState s = fresh(ParamVector{1e300});
  try {
    sgd_step(f, s, 1e300, Minibatch::single(0));
    FAIL("expected divergence");
  } catch (const Diverged& e) {
    CHECK(e.last_finite().x[0] == 1e300);
  }
}

TEST_CASE("full-batch gradient descent reaches the minimizer") {
  Rng rng(31);
  const Objective obj = oracle::random_objective(ObjectiveKind::linear_regression, 50, 5, 0, rng);
  const ExactConstants k = solve_linear_regression(obj);
  TrainerState s = fresh(ParamVector(obj.dim()));
  for (int t = 0; t < 200; ++t) sgd_step(obj, s, 1.0 / k.L_full, Minibatch::all(50));
  CHECK(std::sqrt(oracle::sq_dist(s.x, k.x_star)) <= 1e-6);
}

TEST_CASE("distillation steps reduce to sgd") {
  Rng rng(32);
  const Objective obj = oracle::random_objective(ObjectiveKind::binary_logistic, 10, 3, 2, rng);
  const ParamVector x = oracle::gaussian(obj.dim(), rng), th = oracle::gaussian(obj.dim(), rng);
  const Minibatch batch = sample_minibatch(10, 3, rng);
  const KDConfig zero{0.0, 0.1, th, 1.0};

  TrainerState a = fresh(x), b = fresh(x), c = fresh(x), d = fresh(x);
  sgd_step(obj, a, 0.1, batch);
  kd_step(obj, b, zero, batch);
  c.cached_full_teacher_grad = obj.full_grad(th);
  unbiased_kd_step(obj, c, zero, batch);
  compressed_kd_step(obj, d, zero, Compressor::identity(), batch);
  CHECK(a.x == b.x);
  CHECK(a.x == c.x);
  CHECK(a.x == d.x);

  TrainerState e = fresh(x), f = fresh(x);
  const KDConfig half{0.5, 0.1, th, 1.0};
  kd_step(obj, e, half, batch);
  compressed_kd_step(obj, f, half, Compressor::identity(), batch);
  CHECK(e.x == f.x);
}

TEST_CASE("self-teacher cancellations") {
  Rng rng(33);
  const Objective obj = oracle::random_objective(ObjectiveKind::softmax_linear, 10, 3, 3, rng);
  const ParamVector x = oracle::gaussian(obj.dim(), rng);
  const Minibatch batch = sample_minibatch(10, 4, rng);
  const KDConfig self{1.0, 0.2, x, 1.0};

  TrainerState s = fresh(x);
  kd_step(obj, s, self, batch);
  CHECK(s.x == x);

  TrainerState u = fresh(x);
  u.cached_full_teacher_grad = obj.full_grad(x);
  unbiased_kd_step(obj, u, self, batch);
  CHECK(oracle::rel_err(u.x, x - 0.2 * obj.full_grad(x)) <= 1e-14);

  TrainerState missing = fresh(x);
  CHECK_THROWS_AS(unbiased_kd_step(obj, missing, self, batch), PreconditionError);
}

TEST_CASE("unbiased direction averages to the full gradient") {
  Rng rng(34);
  for (std::size_t N : {5u, 17u, 64u}) {
    const Objective obj = oracle::random_objective(ObjectiveKind::binary_logistic, N, 3, 2, rng);
    const ParamVector x = oracle::gaussian(obj.dim(), rng), th = oracle::gaussian(obj.dim(), rng);
    const KDConfig cfg{0.7, 0.1, th, 1.0};
    const ParamVector full_th = obj.full_grad(th);
    const ParamVector mean = oracle::enum_mean(N, [&](std::size_t n) {
      ParamVector out;
      unbiased_kd_direction(obj, x, cfg, full_th, Minibatch::single(n), out);
      return out;
    });
    CHECK(std::sqrt(oracle::sq_dist(mean, obj.full_grad(x))) <= 1e-12);
  }
}

TEST_CASE("run bookkeeping") {
  const Objective obj = benchmark_quadratic();
  RunSchedule s;
  s.gamma = 0.001;
  s.batch_size = 10;

  SUBCASE("zero steps") {
    const ParamVector init = ParamVector(obj.dim(), 0.5);
    const RunResult r = run(obj, s, init, TeacherSource::none(), 1);
    CHECK(r.trace.empty());
    CHECK(r.final_x == init);
  }
  SUBCASE("epochs and a partial final epoch") {
    s.total_steps = 45;  // 20 steps per epoch
    const RunResult r = run(obj, s, ParamVector(obj.dim()), TeacherSource::none(), 1);
    REQUIRE(r.trace.size() == 3);
    CHECK(r.trace[2].epoch == 2);
    CHECK(r.steps_completed == 45);
  }
  SUBCASE("sgd and kd at lambda 0 give identical traces") {
    s.total_steps = 200;
    const RunResult a = run(obj, s, ParamVector(obj.dim()), TeacherSource::none(), 7);
    RunSchedule k = s;
    k.mode = Mode::kd;
    const RunResult b = run(obj, k, ParamVector(obj.dim()), TeacherSource::fixed(ParamVector(obj.dim(), 1.0)), 7);
    CHECK(a.final_x == b.final_x);
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
      CHECK(a.trace[i].running_loss == b.trace[i].running_loss);
      CHECK(a.trace[i].full_loss == b.trace[i].full_loss);
    }
  }
  SUBCASE("replay reproduces every iterate") {
    s.total_steps = 300;
    s.mode = Mode::compressed_kd;
    s.lambda = 0.4;
    s.compressor = Compressor::rand_k(15);
    std::vector<ParamVector> first, second;
    RunOptions o1, o2;
    o1.on_step = [&](const TrainerState& st) { first.push_back(st.x); };
    o2.on_step = [&](const TrainerState& st) { second.push_back(st.x); };
    const auto teacher = TeacherSource::fixed(ParamVector(obj.dim(), 0.1));
    run(obj, s, ParamVector(obj.dim()), teacher, 3, o1);
    run(obj, s, ParamVector(obj.dim()), teacher, 3, o2);
    CHECK(first == second);
  }
  SUBCASE("divergence is reported, not thrown") {
    s.total_steps = 2000;
    s.gamma = 1.0;
    const RunResult r = run(obj, s, ParamVector(obj.dim()), TeacherSource::none(), 1);
    CHECK(r.diverged);
    CHECK(r.steps_completed < 2000);
    CHECK_FALSE(r.divergence_reason.empty());
  }
  SUBCASE("invalid schedules") {
    s.total_steps = 10;
    RunSchedule bad = s;
    bad.compressor = Compressor::rand_k(3);
    CHECK_THROWS_AS(run(obj, bad, ParamVector(obj.dim()), TeacherSource::none(), 1), InvalidArgument);
    bad = s;
    bad.mode = Mode::kd;
    CHECK_THROWS_AS(run(obj, bad, ParamVector(obj.dim()), TeacherSource::none(), 1), InvalidArgument);
    bad.lambda_policy = LambdaPolicy::optimal_per_phase;
    CHECK_THROWS_AS(run(obj, bad, ParamVector(obj.dim()), TeacherSource::fixed(ParamVector(obj.dim())), 1),
                    InvalidArgument);
  }
}

TEST_CASE("optimal-per-phase weights are the clamped optimum of each teacher") {
  const Objective obj = benchmark_quadratic();
  const ExactConstants k = solve_linear_regression(obj);
  RunSchedule s;
  s.mode = Mode::kd;
  s.gamma = 1.0 / (8.0 * k.L_expected);
  s.c = k.mu / 4.0;
  s.total_steps = 600;
  s.phase_length = 200;
  s.lambda_policy = LambdaPolicy::optimal_per_phase;
  RunOptions opts;
  opts.reference_optimum = k.x_star;
  std::vector<ParamVector> teachers{ParamVector(obj.dim())};
  opts.on_step = [&](const TrainerState& st) {
    if (st.step % 200 == 0 && st.step < 600) teachers.push_back(st.x);
  };
  const RunResult r = run(obj, s, ParamVector(obj.dim()), TeacherSource::self_refresh(), 5, opts);
  REQUIRE(r.phase_lambdas.size() == 3);
  for (std::size_t m = 0; m < 3; ++m) {
    const KDConfig cfg{0.0, s.gamma, teachers[m], s.c};
    const OptimalLambda opt = optimal_lambda(cfg, teacher_stats(obj, k.x_star, teachers[m]));
    CHECK(r.phase_lambdas_unclamped[m] == opt.value);
    CHECK(r.phase_lambdas[m] == opt.clamped());
  }
}

TEST_CASE("optimum teacher removes the noise floor") {
  const Objective obj = benchmark_quadratic();
  const ExactConstants k = solve_linear_regression(obj);
  RunSchedule s;
  s.gamma = 1.0 / (8.0 * k.L_expected);
  s.total_steps = 20000;
  double sgd = 0.0, star = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (int arm = 0; arm < 2; ++arm) {
      RunSchedule r = s;
      if (arm == 1) {
        r.mode = Mode::kd;
        r.lambda = 1.0;
      }
      std::vector<double> errs;
      RunOptions o;
      o.on_step = [&](const TrainerState& st) { errs.push_back(oracle::sq_dist(st.x, k.x_star)); };
      run(obj, r, ParamVector(obj.dim()),
          arm == 1 ? TeacherSource::fixed(k.x_star) : TeacherSource::none(), seed, o);
      (arm == 0 ? sgd : star) += tail_error(errs) / 5.0;
    }
  }
  CHECK(star < 1e-2 * sgd);
}

TEST_CASE("distillation keeps the contraction speed of sgd") {
  // Fit log(f - f*) over the early segment, where both runs are far above
  // their noise floors, and compare slopes.
  const Objective obj = benchmark_quadratic();
  const ExactConstants k = solve_linear_regression(obj);
  Rng trng(41);
  const ParamVector theta = make_teacher(obj, k, 0.01, random_direction(obj.dim(), trng));
  RunSchedule s;
  s.gamma = 1.0 / (8.0 * k.L_expected);
  s.total_steps = 3000;
  s.c = k.mu / 4.0;
  const KDConfig cfg{0.0, s.gamma, theta, s.c};
  const double lam = optimal_lambda(cfg, teacher_stats(obj, k.x_star, theta)).clamped();

  std::vector<double> gap_sgd(s.total_steps, 0.0), gap_kd(s.total_steps, 0.0);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (int arm = 0; arm < 2; ++arm) {
      RunSchedule r = s;
      if (arm == 1) {
        r.mode = Mode::kd;
        r.lambda = lam;
      }
      auto& gaps = arm == 0 ? gap_sgd : gap_kd;
      RunOptions o;
      o.on_step = [&](const TrainerState& st) { gaps[st.step - 1] += (obj.full_loss(st.x) - k.f_star) / 5.0; };
      run(obj, r, ParamVector(obj.dim()), arm == 1 ? TeacherSource::fixed(theta) : TeacherSource::none(), seed, o);
    }
  }
  const double start = obj.full_loss(ParamVector(obj.dim())) - k.f_star;
  const double floor = tail_error(gap_sgd);
  std::size_t T = 0;
  while (T + 1 < gap_sgd.size() && gap_sgd[T] > 20.0 * floor) ++T;
  REQUIRE(T > 10);
  auto slope = [&](const std::vector<double>& g) {
    // least squares of log g(t) against t on [0, T)
    double st = 0, sy = 0, stt = 0, sty = 0;
    for (std::size_t t = 0; t < T; ++t) {
      const double y = std::log(g[t] / start);
      st += t;
      sy += y;
      stt += double(t) * t;
      sty += t * y;
    }
    return (T * sty - st * sy) / (T * stt - st * st);
  };
  const double a = slope(gap_sgd), b = slope(gap_kd);
  CAPTURE(a);
  CAPTURE(b);
  CHECK(std::abs(b - a) <= 0.15 * std::abs(a));
}

TEST_CASE("self-refreshing bias-corrected distillation contracts every phase") {
  const Objective obj = benchmark_quadratic();
  const ExactConstants k = solve_linear_regression(obj);
  RunSchedule s;
  s.mode = Mode::unbiased_kd;
  s.lambda = 1.0;
  s.gamma = k.mu / (3.0 * k.L_full * k.L_expected);
  s.phase_length = static_cast<std::size_t>(std::ceil(1.0 / (s.gamma * k.mu)));
  constexpr std::size_t phases = 4;
  s.total_steps = phases * s.phase_length;
  std::vector<double> gap(phases + 1, 0.0);
  const double start = obj.full_loss(ParamVector(obj.dim())) - k.f_star;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    RunOptions o;
    o.on_step = [&](const TrainerState& st) {
      if (st.step % s.phase_length == 0) gap[st.step / s.phase_length] += (obj.full_loss(st.x) - k.f_star) / 10.0;
    };
    const RunResult r = run(obj, s, ParamVector(obj.dim()), TeacherSource::self_refresh(), seed, o);
    CHECK(r.full_teacher_gradients == phases);
  }
  for (std::size_t m = 1; m <= phases; ++m) CHECK(gap[m] <= std::pow(0.75, double(m)) * start);
}

TEST_CASE("weight decay adds a shrinkage term to each step") {
  Rng rng(91);
  const Objective obj = oracle::random_objective(ObjectiveKind::mlp_relu, 6, 3, 2, rng, 4);
  const ParamVector x0 = obj.initial_point(rng);
  RunSchedule s;
  s.gamma = 0.05;
  s.batch_size = 6;
  s.sampling = Sampling::epoch_shuffle;
  s.total_steps = 1;
  s.weight_decay = 0.3;
  const RunResult r = run(obj, s, x0, TeacherSource::none(), 1);
  const ParamVector g = obj.full_grad(x0);
  ParamVector expect = x0;
  for (std::size_t i = 0; i < x0.size(); ++i) expect[i] -= 0.05 * (g[i] + 0.3 * x0[i]);
  CHECK(oracle::rel_err(r.final_x, expect) <= 1e-14);

  s.weight_decay = -0.1;
  CHECK_THROWS_AS(s.validate(), InvalidArgument);
}
