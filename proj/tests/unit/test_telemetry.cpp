#include <cmath>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "kdvr/data_io.hpp"
#include "kdvr/distillation.hpp"
#include "kdvr/errors.hpp"
#include "kdvr/optimizers.hpp"
#include "kdvr/oracle.hpp"
#include "kdvr/telemetry.hpp"
#include "oracles.hpp"

using namespace kdvr;

TEST_CASE("trace text format") {
  CHECK(format_trace({}) == std::string(kTraceHeader) + "\n");
  CHECK(parse_trace(format_trace({})).empty());

  EpochStats a;
  a.epoch = 3;
  a.run_id = "lambda-0.5_seed-2";
  a.seed = 2;
  a.mode = "kd";
  a.lambda = 0.5;
  a.gamma = 0.1 / 3.0;
  a.loss_running = std::nextafter(1.0, 2.0);
  a.loss_full = 1e-300;
  a.grad_variance = 2.0 / 7.0;
  a.test_acc = 0.75;
  const std::vector<EpochStats> one{a};
  const std::string text = format_trace(one);
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
  CHECK(parse_trace(text) == one);

  EpochStats b = a;
  b.epoch = 4;
  b.grad_variance.reset();
  b.cosine = -0.125;
  b.l2 = 3.0;
  b.snr = 1.0 / 9.0;
  const std::vector<EpochStats> two{a, b};
  const auto dir = std::filesystem::temp_directory_path() / "kdvr_trace_test";
  std::filesystem::create_directories(dir);
  write_trace(two, dir / "t.csv");
  CHECK(read_trace(dir / "t.csv") == two);
  std::filesystem::remove_all(dir);

  CHECK_THROWS_AS(parse_trace("nonsense\n"), FormatError);
  CHECK_THROWS_AS(parse_trace(std::string(kTraceHeader) + "\n1,x,2\n"), FormatError);
  CHECK_THROWS_AS(write_trace(two, "/nonexistent/dir/t.csv"), IoError);
  CHECK_THROWS_AS(read_trace("/nonexistent/dir/t.csv"), IoError);
}

TEST_CASE("variance probe reference values") {
  Rng rng(71);
  const Objective obj = oracle::random_objective(ObjectiveKind::linear_regression, 30, 4, 0, rng);
  const ExactConstants k = solve_linear_regression(obj);

  const DirectionFn full = [&](const Minibatch&, ParamVector& out) { out = obj.full_grad(k.x_star); };
  CHECK(grad_variance_probe(obj, full, VarianceProbe::exact()).around_mean <= 1e-30);

  const DirectionFn sgd = [&](const Minibatch& b, ParamVector& out) { out = obj.minibatch_grad(k.x_star, b); };
  const ParamVector zero(obj.dim());
  const VarianceEstimate e = grad_variance_probe(obj, sgd, VarianceProbe::exact(), nullptr, &zero);
  CHECK(std::abs(e.around_mean - k.sigma_star_sq) <= 1e-12 * (1 + k.sigma_star_sq));
  REQUIRE(e.around_center.has_value());
  CHECK(std::abs(*e.around_center - k.sigma_star_sq) <= 1e-12 * (1 + k.sigma_star_sq));

  const DirectionFn kd = [&](const Minibatch& b, ParamVector& out) {
    distillation_direction(obj, k.x_star, k.x_star, 1.0, b, out);
  };
  CHECK(grad_variance_probe(obj, kd, VarianceProbe::exact()).around_mean <= 1e-24);

  // Monte-Carlo with batch b estimates sigma*^2 / b.
  const VarianceEstimate mc = grad_variance_probe(obj, sgd, VarianceProbe::monte_carlo(40000, 4), &rng);
  CHECK(mc.around_mean == doctest::Approx(k.sigma_star_sq / 4).epsilon(0.05));
  CHECK_THROWS_AS(grad_variance_probe(obj, sgd, VarianceProbe::monte_carlo(1), &rng), InvalidArgument);
  CHECK_THROWS_AS(grad_variance_probe(obj, sgd, VarianceProbe::monte_carlo(10)), InvalidArgument);
}

TEST_CASE("gap statistics on an mlp") {
  Rng rng(72);
  const Objective mlp = oracle::random_objective(ObjectiveKind::mlp_relu, 20, 3, 3, rng, 5);
  const ParamVector x = mlp.initial_point(rng);
  const ParamVector th = mlp.initial_point(rng);
  const Minibatch batch{{0, 3, 7, 11}};

  const GapStats none = approx_gap_stats(mlp, x, th, 0.0, batch);
  REQUIRE(none.cosine.has_value());
  CHECK(*none.cosine == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(none.l2 == 0.0);
  CHECK(*none.snr == 0.0);

  const GapStats self = approx_gap_stats(mlp, x, x, 0.7, batch);
  CHECK(self.l2 <= 1e-14);
  if (self.cosine) CHECK(*self.cosine == doctest::Approx(1.0).epsilon(1e-9));

  // The two gradients differ by lambda times a fixed vector.
  const double lo = approx_gap_stats(mlp, x, th, 0.1, batch).l2;
  const double hi = approx_gap_stats(mlp, x, th, 0.9, batch).l2;
  REQUIRE(lo > 0.0);
  CHECK(hi / lo == doctest::Approx(9.0).epsilon(1e-9));

  const Objective lin = oracle::random_objective(ObjectiveKind::linear_regression, 5, 2, 0, rng);
  CHECK_THROWS_AS(approx_gap_stats(lin, ParamVector(3), ParamVector(3), 0.5, batch), InvalidKind);
}

TEST_CASE("a good teacher lowers the traced variance every epoch") {
  const SynthData s = synth({SynthKind::linear_gaussian, 80, 5, 1.0, 73});
  const Objective obj = Objective::linear_regression(s.data);
  const ExactConstants k = solve_linear_regression(obj);
  Rng rng(74);
  const ParamVector th = make_teacher(obj, k, 1e-3, random_direction(obj.dim(), rng));

  RunSchedule sched;
  sched.gamma = 0.1 / k.L_expected;
  sched.batch_size = 4;
  sched.total_steps = 20 * 20;
  sched.variance_probe = VarianceProbe::exact();
  const ParamVector init(obj.dim());
  const RunResult plain = run(obj, sched, init, TeacherSource::none(), 5);
  sched.mode = Mode::kd;
  sched.lambda = 0.9;
  const RunResult kd = run(obj, sched, init, TeacherSource::fixed(th), 5);

  REQUIRE(plain.trace.size() == 20);
  REQUIRE(kd.trace.size() == 20);
  for (std::size_t e = 0; e < 20; ++e) {
    CAPTURE(e);
    CHECK(*kd.trace[e].grad_variance_vs_full <= *plain.trace[e].grad_variance_vs_full);
  }
  CHECK(kd.trace.back().full_loss <= plain.trace.back().full_loss);
}

TEST_CASE("traced variance of a biased direction matches batch enumeration") {
  // Every ordered pair of samples is a size-2 batch drawn with replacement.
  Rng rng(75);
  const Objective obj = oracle::random_objective(ObjectiveKind::binary_logistic, 9, 3, 2, rng);
  const ParamVector x0 = oracle::gaussian(obj.dim(), rng);
  const ParamVector th = oracle::gaussian(obj.dim(), rng);
  const double lambda = 0.6;
  const ParamVector g = obj.full_grad(x0);
  double centered = 0.0, spread = 0.0;
  const ParamVector mean = oracle::enum_mean(9, [&](std::size_t n) {
    ParamVector out;
    distillation_direction(obj, x0, th, lambda, Minibatch::single(n), out);
    return out;
  });
  for (std::size_t i = 0; i < 9; ++i) {
    for (std::size_t j = 0; j < 9; ++j) {
      ParamVector out;
      distillation_direction(obj, x0, th, lambda, Minibatch{{i, j}}, out);
      centered += oracle::sq_dist(out, g) / 81.0;
      spread += oracle::sq_dist(out, mean) / 81.0;
    }
  }

  RunSchedule s;
  s.mode = Mode::kd;
  s.lambda = lambda;
  s.gamma = 0.01;
  s.batch_size = 2;
  s.total_steps = 1;
  s.steps_per_epoch = 1;
  s.variance_probe = VarianceProbe::exact();
  const RunResult r = run(obj, s, x0, TeacherSource::fixed(th), 1);
  REQUIRE(r.trace.size() == 1);
  CHECK(*r.trace[0].grad_variance_vs_full == doctest::Approx(centered).epsilon(1e-12));
  CHECK(*r.trace[0].grad_variance == doctest::Approx(spread).epsilon(1e-12));
  CHECK(centered > spread);
}
