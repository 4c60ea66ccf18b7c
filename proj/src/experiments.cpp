#include "kdvr/experiments.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "kdvr/compression.hpp"
#include "kdvr/data_io.hpp"
#include "kdvr/errors.hpp"
#include "kdvr/optimizers.hpp"
#include "kdvr/oracle.hpp"
#include "kdvr/sampling.hpp"
#include "kdvr/telemetry.hpp"

namespace kdvr {

namespace {

const std::vector<double> kDefaultGrid{0.0, 0.01, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 0.9, 1.0};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double variance(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

std::string trace_text(const RunResult& r, const std::string& run_id, std::uint64_t seed, Mode mode,
                       double lambda, double gamma) {
  return format_trace(to_epoch_stats(r, run_id, seed, mode, lambda, gamma));
}

double min_running_loss(const RunResult& r) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& t : r.trace) m = std::min(m, t.running_loss);
  return m;
}

Dataset random_regression_data(Rng& rng, std::size_t n, std::size_t d) {
  Dataset data;
  data.features = Matrix(n, d);
  for (double& v : data.features.data()) v = rng.normal();
  data.targets.resize(n);
  for (double& b : data.targets) b = rng.normal();
  data.target_kind = TargetKind::real;
  return data;
}

Dataset random_binary_data(Rng& rng, std::size_t n, std::size_t d) {
  Dataset data = random_regression_data(rng, n, d);
  for (double& b : data.targets) b = rng.uniform01() < 0.5 ? 0.0 : 1.0;
  data.target_kind = TargetKind::probability;
  return data;
}

Dataset random_class_data(Rng& rng, std::size_t n, std::size_t d, std::size_t k) {
  Dataset data = random_regression_data(rng, n, d);
  for (double& b : data.targets) b = static_cast<double>(rng.uniform_index(k));
  data.target_kind = TargetKind::class_index;
  data.num_classes = k;
  return data;
}

ParamVector random_point(std::size_t dim, Rng& rng, double scale = 1.0) {
  ParamVector x(dim);
  for (double& v : x) v = scale * rng.normal();
  return x;
}

double fd_error(const ParamVector& g, const ParamVector& fd) {
  return norm(g - fd) / (1.0 + norm(fd));
}

}  // namespace

bool Report::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

void Report::add(std::string property, std::string tolerance, double observed, bool ok) {
  checks.push_back({std::move(property), std::move(tolerance), observed, ok});
}

ParamVector finite_difference_grad(const std::function<double(const ParamVector&)>& f,
                                   const ParamVector& x) {
  ParamVector g(x.size());
  ParamVector probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double h = 1e-6 * (1.0 + std::abs(x[i]));
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

Objective benchmark_quadratic(std::uint64_t data_seed) {
  SynthSpec spec;
  spec.kind = SynthKind::linear_gaussian;
  spec.n = 200;
  spec.d = 19;
  spec.noise = 1.0;
  spec.seed = data_seed;
  return Objective::linear_regression(synth(spec).data);
}

WelchResult welch_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2) throw InvalidArgument("welch_test: need two samples per group");
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double va = variance(a) / na, vb = variance(b) / nb;
  WelchResult r;
  const double se = std::sqrt(va + vb);
  if (se == 0.0) {
    r.t = mean(a) == mean(b) ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(),
                                                   mean(a) - mean(b));
    r.dof = na + nb - 2.0;
    r.p_value = mean(a) == mean(b) ? 1.0 : 0.0;
    return r;
  }
  r.t = (mean(a) - mean(b)) / se;
  r.dof = (va + vb) * (va + vb) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  const boost::math::students_t dist(r.dof);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
  return r;
}

// ---------------------------------------------------------------------------

Report distillation_gradient_exactness(std::uint64_t seed, const FaultInjection& faults) {
  Report rep{"1", "distillation gradient equals the gradient of the composite loss", {}, {}, {}};
  Rng rng(seed, 101);
  const std::vector<Objective> objectives{
      Objective::linear_regression(random_regression_data(rng, 30, 6)),
      Objective::binary_logistic(random_binary_data(rng, 30, 6)),
      Objective::softmax_linear(random_class_data(rng, 30, 6, 4)),
  };
  for (const Objective& obj : objectives) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const ParamVector x = random_point(obj.dim(), rng);
      KDConfig cfg;
      cfg.teacher = random_point(obj.dim(), rng);
      cfg.lambda = rng.uniform01();
      cfg.gamma = 1.0;
      const std::size_t n = rng.uniform_index(obj.num_samples());
      ParamVector g = distillation_grad(obj, x, cfg, n);
      if (faults.flip_distillation_sign) {
        g = axpy(2.0 * cfg.lambda, obj.grad(cfg.teacher, n), g);
      }
      const ParamVector fd = finite_difference_grad(
          [&](const ParamVector& p) {
            return distillation_loss(obj, p, cfg.teacher, cfg.lambda, n);
          },
          x);
      worst = std::max(worst, fd_error(g, fd));
    }
    rep.add(to_string(obj.kind()) + ": max ||g - fd|| / (1 + ||fd||) over 100 draws", "<= 1e-5",
            worst, worst <= 1e-5);
  }
  return rep;
}

Report lemma_identities(std::uint64_t seed) {
  Report rep{"2", "optimal weight and neighborhood identities", {}, {}, {}};
  Rng rng(seed, 202);
  double worst_lambda = 0.0, worst_ratio = 0.0, worst_grid = 0.0, worst_star = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t n = 8 + rng.uniform_index(25);
    const std::size_t d = 2 + rng.uniform_index(5);
    const Objective obj = Objective::linear_regression(random_regression_data(rng, n, d));
    const ExactConstants k = solve_linear_regression(obj);
    const ParamVector theta = axpy(std::exp(rng.normal()), random_point(obj.dim(), rng), k.x_star);
    KDConfig cfg;
    cfg.teacher = theta;
    cfg.gamma = 0.05 * (0.1 + rng.uniform01());
    cfg.c = 0.1 + 4.0 * rng.uniform01();
    const TeacherStats stats = teacher_stats(obj, k.x_star, theta);
    const double analytic = optimal_lambda(cfg, stats).value;
    const double numeric = golden_section_lambda(obj, k.x_star, theta, cfg.gamma, cfg.c, {-2.0, 2.0});
    worst_lambda = std::max(worst_lambda, std::abs(analytic - numeric));
    const double direct = neighborhood_N(analytic, cfg, stats) / neighborhood_N(0.0, cfg, stats);
    worst_ratio = std::max(worst_ratio, std::abs(reduction_ratio(cfg, stats) - direct));
    const double best = neighborhood_N(analytic, cfg, stats);
    for (int i = 0; i < 1000; ++i) {
      const double lam = -2.0 + 4.0 * i / 999.0;
      worst_grid = std::max(worst_grid, best - neighborhood_N(lam, cfg, stats));
    }
    cfg.teacher = k.x_star;
    const TeacherStats at_opt = teacher_stats(obj, k.x_star, k.x_star);
    worst_star = std::max({worst_star, std::abs(optimal_lambda(cfg, at_opt).value - 1.0),
                           std::abs(reduction_ratio(cfg, at_opt))});
  }
  rep.add("|lambda*_closed - lambda*_golden| over 50 instances", "<= 1e-8", worst_lambda,
          worst_lambda <= 1e-8);
  rep.add("|closed-form ratio - N(lambda*)/N(0)|", "<= 1e-10", worst_ratio, worst_ratio <= 1e-10);
  rep.add("max N(lambda*) - N(lambda) on a 1000-point grid over [-2,2]", "<= 0", worst_grid,
          worst_grid <= 0.0);
  rep.add("teacher = x* on random instances: max(|lambda*-1|, |ratio|)", "<= 1e-12", worst_star,
          worst_star <= 1e-12);

  // Two samples (x-1)^2 and (x+1)^2: the minimizer 0 and the gradient
  // cancellation are exact in floating point.
  Dataset two;
  two.features = Matrix(2, 1, {1.0, 1.0});
  two.targets = {1.0, -1.0};
  const Objective pair = Objective::linear_regression(two, false);
  const ExactConstants kp = solve_linear_regression(pair);
  KDConfig cfg;
  cfg.teacher = kp.x_star;
  cfg.gamma = 0.1;
  cfg.c = 1.0;
  const TeacherStats st = teacher_stats(pair, kp.x_star, kp.x_star);
  const double lam = optimal_lambda(cfg, st).value;
  const double ratio = reduction_ratio(cfg, st);
  rep.add("exact instance, teacher = x*: lambda*", "== 1 exactly", lam, lam == 1.0);
  rep.add("exact instance, teacher = x*: ratio", "== 0 exactly", ratio, ratio == 0.0);
  return rep;
}

Report partial_variance_reduction(std::uint64_t seed) {
  Report rep{"3", "distillation shrinks the SGD neighborhood", {}, {}, {}};
  const Objective obj = benchmark_quadratic();
  const ExactConstants k = solve_linear_regression(obj);
  const double gamma = 1.0 / (8.0 * k.L_expected);
  Rng trng(seed, 303);
  const ParamVector theta = make_teacher(obj, k, 0.01, random_direction(obj.dim(), trng));
  KDConfig cfg;
  cfg.gamma = gamma;
  cfg.c = k.mu / 4.0;
  cfg.teacher = theta;
  const TeacherStats stats = teacher_stats(obj, k.x_star, theta);
  const OptimalLambda opt = optimal_lambda(cfg, stats);
  rep.notes.push_back("sigma*^2 = " + fmt(k.sigma_star_sq) + ", gamma = 1/(8 L_exp) = " +
                      fmt(gamma) + ", lambda* = " + fmt(opt.value) + " (used " +
                      fmt(opt.clamped()) + "), predicted ratio N(lambda*)/N(0) = " +
                      fmt(reduction_ratio(cfg, stats)));

  constexpr std::size_t steps = 50000;
  constexpr int seeds = 10;
  struct Arm {
    const char* name;
    Mode mode;
    double lambda;
    TeacherSource teacher;
  };
  const std::vector<Arm> arms{{"sgd", Mode::sgd, 0.0, TeacherSource::none()},
                              {"kd_opt", Mode::kd, opt.clamped(), TeacherSource::fixed(theta)},
                              {"kd_star", Mode::kd, 1.0, TeacherSource::fixed(k.x_star)}};
  std::vector<std::vector<double>> terminal(arms.size());
  for (std::size_t a = 0; a < arms.size(); ++a) {
    for (int s = 0; s < seeds; ++s) {
      RunSchedule sch;
      sch.total_steps = steps;
      sch.gamma = gamma;
      sch.mode = arms[a].mode;
      sch.lambda = arms[a].lambda;
      double acc = 0.0;
      std::size_t count = 0;
      RunOptions options;
      options.on_step = [&](const TrainerState& st) {
        if (st.step > steps - steps / 5) {
          acc += dist_sq(st.x, k.x_star);
          ++count;
        }
      };
      const std::uint64_t run_seed = seed * 1000 + static_cast<std::uint64_t>(s);
      const RunResult r = run(obj, sch, ParamVector(obj.dim()), arms[a].teacher, run_seed, options);
      rep.traces.push_back(trace_text(r, arms[a].name, run_seed, sch.mode, sch.lambda, gamma));
      terminal[a].push_back(r.diverged ? std::numeric_limits<double>::infinity()
                                       : acc / static_cast<double>(count));
    }
  }
  const WelchResult w = welch_test(terminal[0], terminal[1]);
  rep.notes.push_back("terminal E||x-x*||^2: sgd " + fmt(mean(terminal[0])) + ", kd(lambda*) " +
                      fmt(mean(terminal[1])) + ", kd(x*, 1) " + fmt(mean(terminal[2])));
  rep.add("kd(lambda*) mean terminal error / sgd's", "< 1", mean(terminal[1]) / mean(terminal[0]),
          mean(terminal[1]) < mean(terminal[0]));
  rep.add("Welch two-sided p-value, kd(lambda*) vs sgd (10 seeds)", "< 0.05", w.p_value,
          w.p_value < 0.05 && w.t > 0.0);
  const double star_ratio = mean(terminal[2]) / mean(terminal[0]);
  rep.add("kd(theta = x*, lambda = 1) terminal error / sgd plateau", "<= 1e-2", star_ratio,
          star_ratio <= 1e-2);
  return rep;
}

Report phase_halving(std::uint64_t seed) {
  Report rep{"4", "bias-corrected distillation halves the gap per phase", {}, {}, {}};
  const Objective obj = benchmark_quadratic();
  const ExactConstants k = solve_linear_regression(obj);
  const double gamma = k.mu / (12.0 * k.L_full * k.L_expected);
  const auto tau = static_cast<std::size_t>(std::ceil(1.0 / (gamma * k.mu)));
  constexpr std::size_t phases = 5;
  constexpr int seeds = 10;
  rep.notes.push_back("gamma = mu/(12 L L_exp) = " + fmt(gamma) + ", tau = " + std::to_string(tau));
  std::vector<double> phase_mean(phases, 0.0);
  std::size_t wrong_refresh = 0;
  const ParamVector x0(obj.dim());
  for (int s = 0; s < seeds; ++s) {
    RunSchedule sch;
    sch.total_steps = phases * tau;
    sch.phase_length = tau;
    sch.gamma = gamma;
    sch.mode = Mode::unbiased_kd;
    sch.lambda = 1.0;
    std::vector<double> gaps{obj.full_loss(x0) - k.f_star};
    RunOptions options;
    options.on_step = [&](const TrainerState& st) {
      if (st.step % tau == 0) gaps.push_back(obj.full_loss(st.x) - k.f_star);
    };
    const std::uint64_t run_seed = seed * 1000 + static_cast<std::uint64_t>(s);
    const RunResult r = run(obj, sch, x0, TeacherSource::self_refresh(), run_seed, options);
    rep.traces.push_back(trace_text(r, "unbiased_kd", run_seed, sch.mode, 1.0, gamma));
    if (r.full_teacher_gradients != phases) ++wrong_refresh;
    for (std::size_t m = 0; m < phases; ++m) {
      const double ratio = r.diverged || gaps.size() <= m + 1 ? std::numeric_limits<double>::infinity()
                                                               : gaps[m + 1] / gaps[m];
      phase_mean[m] += ratio / seeds;
    }
  }
  std::string per_phase;
  for (double v : phase_mean) per_phase += fmt(v) + " ";
  rep.notes.push_back("mean ratio per phase: " + per_phase);
  const double worst = *std::max_element(phase_mean.begin(), phase_mean.end());
  rep.add("max over first 5 phases of the seed-mean gap ratio", "<= 0.75", worst, worst <= 0.75);
  rep.add("runs with a full-gradient count other than one per phase", "== 0",
          static_cast<double>(wrong_refresh), wrong_refresh == 0);
  return rep;
}

Report compression_suite(std::uint64_t seed, const FaultInjection& faults) {
  Report rep{"5", "compressed iterates", {}, {}, {}};
  Rng rng(seed, 505);

  double mean_err = 0.0, var_err = 0.0;
  for (std::size_t d = 4; d <= 8; ++d) {
    for (std::size_t kk = 1; kk <= d; ++kk) {
      const Compressor c = Compressor::rand_k(kk);
      for (int p = 0; p < 3; ++p) {
        const ParamVector x = random_point(d, rng);
        const CompressionStats st = verify_compressor_exhaustive(c, std::span(&x, 1));
        mean_err = std::max(mean_err, st.max_abs_mean_error);
        var_err = std::max(var_err, std::abs(st.variance_ratio - c.omega(d)));
      }
    }
  }
  rep.add("rand_k exhaustive, d = 4..8, all k: max |E C(x) - x|", "<= 1e-12", mean_err,
          mean_err <= 1e-12);
  rep.add("rand_k exhaustive: max |E||C(x)-x||^2/||x||^2 - (d/k - 1)|", "<= 1e-12", var_err,
          var_err <= 1e-12);

  // Monte-Carlo unbiasedness of the production operator (or the fault).
  {
    const Compressor c = Compressor::rand_k(5);
    CompressFn fn = [&](const ParamVector& x, Rng& r) { return c.compress(x, r); };
    if (faults.rand_k_bad_scale) {
      fn = [&](const ParamVector& x, Rng& r) {
        const auto support = c.sample_support(x.size(), r);
        ParamVector y(x.size());
        const double scale = static_cast<double>(x.size()) / static_cast<double>(c.k() + 1);
        for (std::size_t i : support) y[i] = scale * x[i];
        return y;
      };
    }
    std::vector<ParamVector> points;
    for (int p = 0; p < 4; ++p) points.push_back(random_point(12, rng));
    const CompressionStats st =
        verify_compressor(fn, c.describe(), c.omega(12), false, points, 20000, rng);
    rep.add("rand_k(5), d = 12, Monte-Carlo mean error z-score", "<= 4", st.max_mean_error_z,
            st.mean_test_passed);
  }

  // Plateau scaling: noiseless targets b = A w, compression only.
  SynthSpec spec;
  spec.kind = SynthKind::linear_gaussian;
  spec.n = 500;
  spec.d = 20;
  spec.seed = 11;
  const Dataset base = synth(spec).data;
  Rng drng(seed, 506);
  const ParamVector w_dir = random_direction(spec.d, drng);
  constexpr std::size_t steps = 4000;
  constexpr int seeds = 10;
  auto plateau = [&](const Objective& obj, const ExactConstants& k, const Compressor& c,
                     double lambda, const ParamVector& teacher, double gamma, std::size_t batch,
                     const std::string& tag) {
    double total = 0.0;
    for (int s = 0; s < seeds; ++s) {
      RunSchedule sch;
      sch.total_steps = steps;
      sch.gamma = gamma;
      sch.batch_size = batch;
      sch.mode = Mode::compressed_kd;
      sch.lambda = lambda;
      sch.compressor = c;
      double acc = 0.0;
      std::size_t count = 0;
      RunOptions options;
      options.on_step = [&](const TrainerState& st) {
        if (st.step > steps - steps / 5) {
          acc += dist_sq(st.x, k.x_star);
          ++count;
        }
      };
      const std::uint64_t run_seed = seed * 1000 + static_cast<std::uint64_t>(s);
      const RunResult r =
          run(obj, sch, ParamVector(obj.dim()), TeacherSource::fixed(teacher), run_seed, options);
      rep.traces.push_back(trace_text(r, tag, run_seed, sch.mode, lambda, gamma));
      total += r.diverged ? std::numeric_limits<double>::infinity()
                          : acc / static_cast<double>(count);
    }
    return total / seeds;
  };

  std::vector<double> plateaus;
  for (double scale : {0.0, 1.0, 4.0}) {
    Dataset data = base;
    for (std::size_t i = 0; i < data.size(); ++i) {
      data.targets[i] = scale * dot(data.features.row(i), w_dir.span());
    }
    const Objective obj = Objective::linear_regression(data, false);
    const ExactConstants k = solve_linear_regression(obj);
    const Compressor c = Compressor::rand_k(obj.dim() / 2);
    plateaus.push_back(plateau(obj, k, c, 0.0, ParamVector(obj.dim()), 1.0 / k.L_full, 50,
                               "plateau_" + fmt(scale)));
  }
  rep.notes.push_back("rand_k(d/2) plateaus for ||x*|| = 0, 1, 4: " + fmt(plateaus[0]) + ", " +
                      fmt(plateaus[1]) + ", " + fmt(plateaus[2]));
  rep.add("plateau at ||x*|| = 0", "<= 1e-8", plateaus[0], plateaus[0] <= 1e-8);
  const double scaling = plateaus[2] / plateaus[1];
  rep.add("plateau ratio ||x*|| = 4 vs 1", "in [8, 32]", scaling, scaling >= 8.0 && scaling <= 32.0);

  // Ordering with stochastic noise: compressed kd(lambda*) vs compressed sgd.
  spec.noise = 1.0;
  const Objective noisy = Objective::linear_regression(synth(spec).data, false);
  const ExactConstants k = solve_linear_regression(noisy);
  const double gamma = 0.5 / k.L_full;
  const ParamVector theta = make_teacher(noisy, k, 0.01, random_direction(noisy.dim(), drng));
  KDConfig cfg;
  cfg.gamma = gamma;
  cfg.c = 2.0 * k.mu;
  cfg.teacher = theta;
  const OptimalLambda opt = optimal_lambda(cfg, teacher_stats(noisy, k.x_star, theta));
  const Compressor c = Compressor::rand_k(18);
  const double omega = c.omega(noisy.dim());
  rep.notes.push_back("ordering run: rand_k(18) omega = " + fmt(omega) + " vs mu/(16 L_exp) = " +
                      fmt(k.mu / (16.0 * k.L_expected)) + " (theory bound " +
                      (omega <= k.mu / (16.0 * k.L_expected) ? "satisfied" : "not satisfied") +
                      "), lambda* = " + fmt(opt.value));
  const double sgd_plateau = plateau(noisy, k, c, 0.0, theta, gamma, 10, "compressed_sgd");
  const double kd_plateau = plateau(noisy, k, c, opt.clamped(), theta, gamma, 10, "compressed_kd");
  rep.notes.push_back("compressed plateaus: sgd " + fmt(sgd_plateau) + ", kd(lambda*) " +
                      fmt(kd_plateau));
  rep.add("compressed kd(lambda*) plateau / compressed sgd plateau", "<= 1",
          kd_plateau / sgd_plateau, kd_plateau <= sgd_plateau);
  return rep;
}

Report linear_probe_sweep(std::uint64_t seed, const LinearProbeOptions& options) {
  Report rep{"6", "distillation-weight sweep on a linear classifier", {}, {}, {}};
  Dataset train, test;
  const bool mnist = options.mnist_dir.has_value();
  if (mnist) {
    const auto& dir = *options.mnist_dir;
    train = load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
    test = load_idx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
    rep.notes.push_back("MNIST from " + dir.string() + ": N = " + std::to_string(train.size()));
  } else {
    SynthSpec spec;
    spec.kind = SynthKind::logistic_noisy;
    spec.n = 2500;
    spec.d = 50;
    spec.noise = 0.5;
    spec.seed = 21;
    spec.classes = 10;
    spec.weight_scale = 0.3;
    std::tie(train, test) = split(synth(spec).data, 0.2, 22);
    rep.notes.push_back("MNIST not found; synthetic 10-class stand-in, N = " +
                        std::to_string(train.size()) + ", d = 50 (accuracy anchor skipped)");
  }
  const Objective obj = Objective::softmax_linear(train);
  const Objective held_out = with_dataset(obj, test);

  RunSchedule sch;
  sch.gamma = 0.05;
  sch.batch_size = 10;
  sch.sampling = Sampling::epoch_shuffle;
  sch.total_steps = options.epochs * BatchSampler(obj.num_samples(), 10, sch.sampling).steps_per_epoch();

  const std::uint64_t teacher_seed = seed * 1000 + 999;
  const RunResult teacher =
      run(obj, sch, ParamVector(obj.dim()), TeacherSource::none(), teacher_seed);
  rep.traces.push_back(trace_text(teacher, "teacher", teacher_seed, Mode::sgd, 0.0, sch.gamma));
  const double train_acc = obj.accuracy(teacher.final_x);
  const double test_acc = held_out.accuracy(teacher.final_x);
  rep.notes.push_back("SGD teacher: train acc " + fmt(train_acc) + ", test acc " + fmt(test_acc));
  if (mnist) {
    rep.add("teacher train accuracy", "0.92 +- 0.01", train_acc, std::abs(train_acc - 0.92) <= 0.01);
  }

  auto sweep = [&](const ParamVector& theta, const std::string& tag) {
    std::vector<double> mins;
    for (double lam : kDefaultGrid) {
      RunSchedule s = sch;
      s.mode = lam == 0.0 ? Mode::sgd : Mode::kd;
      s.lambda = lam;
      const TeacherSource src = lam == 0.0 ? TeacherSource::none() : TeacherSource::fixed(theta);
      const std::uint64_t run_seed = seed * 1000;
      const RunResult r = run(obj, s, ParamVector(obj.dim()), src, run_seed);
      rep.traces.push_back(trace_text(r, tag + "_" + fmt(lam), run_seed, s.mode, lam, s.gamma));
      mins.push_back(r.diverged ? std::numeric_limits<double>::infinity() : min_running_loss(r));
    }
    return mins;
  };

  const std::vector<double> sgd_teacher = sweep(teacher.final_x, "sgd_teacher");
  const double best_kd = *std::min_element(sgd_teacher.begin() + 1, sgd_teacher.end());
  std::string row;
  for (double v : sgd_teacher) row += fmt(v) + " ";
  rep.notes.push_back("min train loss per lambda, SGD teacher: " + row);
  rep.add("best min train loss over lambda > 0 minus lambda = 0's (SGD teacher)", "< 0",
          best_kd - sgd_teacher[0], best_kd < sgd_teacher[0]);

  Rng ref_rng(seed, 606);
  const ExactConstants ref = reference_solution(obj, options.reference_iters, 1e-8, 8, ref_rng);
  rep.notes.push_back("reference teacher: train loss " + fmt(obj.full_loss(ref.x_star)) +
                      ", train acc " + fmt(obj.accuracy(ref.x_star)));
  const std::vector<double> oracle_teacher = sweep(ref.x_star, "reference_teacher");
  row.clear();
  for (double v : oracle_teacher) row += fmt(v) + " ";
  rep.notes.push_back("min train loss per lambda, reference teacher: " + row);
  // argmin with ties toward the smaller weight
  std::size_t best = 0;
  for (std::size_t i = 1; i < oracle_teacher.size(); ++i) {
    if (oracle_teacher[i] < oracle_teacher[best]) best = i;
  }
  rep.add("best grid lambda with the reference teacher", ">= 0.8", kDefaultGrid[best],
          kDefaultGrid[best] >= 0.8);
  return rep;
}

Report variance_tracking(std::uint64_t seed) {
  Report rep{"7", "per-epoch gradient variance of the distillation updates", {}, {}, {}};
  const Objective obj = benchmark_quadratic();
  const ExactConstants k = solve_linear_regression(obj);
  constexpr double gamma = 0.005;
  constexpr std::size_t batch = 10, epochs = 100;
  constexpr int seeds = 5;
  const std::size_t per_epoch = obj.num_samples() / batch;
  Rng trng(seed, 707);
  const ParamVector theta = make_teacher(obj, k, 0.01, random_direction(obj.dim(), trng));
  KDConfig cfg;
  cfg.gamma = gamma;
  cfg.c = k.mu / 4.0;
  cfg.teacher = theta;
  const double lam = optimal_lambda(cfg, teacher_stats(obj, k.x_star, theta)).clamped();

  struct Arm {
    const char* name;
    Mode mode;
    double lambda;
    std::size_t phase;
    TeacherSource teacher;
  };
  const std::vector<Arm> arms{{"sgd", Mode::sgd, 0.0, 0, TeacherSource::none()},
                              {"kd", Mode::kd, lam, 0, TeacherSource::fixed(theta)},
                              {"unbiased_kd", Mode::unbiased_kd, 1.0, per_epoch,
                               TeacherSource::self_refresh()}};
  std::vector<std::vector<double>> var(arms.size(), std::vector<double>(epochs, 0.0));
  std::vector<double> final_loss(arms.size(), 0.0);
  for (std::size_t a = 0; a < arms.size(); ++a) {
    for (int s = 0; s < seeds; ++s) {
      RunSchedule sch;
      sch.total_steps = epochs * per_epoch;
      sch.gamma = gamma;
      sch.batch_size = batch;
      sch.mode = arms[a].mode;
      sch.lambda = arms[a].lambda;
      sch.phase_length = arms[a].phase;
      sch.variance_probe = VarianceProbe::exact();
      const std::uint64_t run_seed = seed * 1000 + static_cast<std::uint64_t>(s);
      const RunResult r = run(obj, sch, ParamVector(obj.dim()), arms[a].teacher, run_seed);
      rep.traces.push_back(trace_text(r, arms[a].name, run_seed, sch.mode, sch.lambda, gamma));
      if (r.diverged) {
        final_loss[a] = std::numeric_limits<double>::infinity();
        continue;
      }
      for (std::size_t e = 0; e < epochs; ++e) var[a][e] += *r.trace[e].grad_variance_vs_full / seeds;
      final_loss[a] += r.trace.back().full_loss / seeds;
    }
  }
  for (std::size_t a = 1; a < arms.size(); ++a) {
    std::size_t below = 0;
    for (std::size_t e = 0; e < epochs; ++e) below += var[a][e] <= var[0][e];
    const double frac = static_cast<double>(below) / epochs;
    rep.add(std::string("fraction of epochs with ") + arms[a].name + " variance <= sgd's",
            ">= 0.9", frac, frac >= 0.9);
  }
  rep.notes.push_back("kd lambda = clamp(lambda*) = " + fmt(lam) + "; final f - f*: sgd " +
                      fmt(final_loss[0] - k.f_star) + ", kd " + fmt(final_loss[1] - k.f_star) +
                      ", unbiased_kd " + fmt(final_loss[2] - k.f_star));
  rep.add("unbiased_kd final train loss - kd's", "<= 0", final_loss[2] - final_loss[1],
          final_loss[2] <= final_loss[1]);
  return rep;
}

Report mlp_gradient_gap(std::uint64_t seed) {
  Report rep{"8", "closed-form distillation gradient on a small MLP", {}, {}, {}};
  SynthSpec spec;
  spec.kind = SynthKind::logistic_noisy;
  spec.n = 500;
  spec.d = 20;
  spec.noise = 0.5;
  spec.seed = 31;
  spec.classes = 3;
  spec.weight_scale = 0.5;
  const Objective obj = Objective::mlp_relu(synth(spec).data, 16);
  constexpr std::size_t epochs = 30;
  constexpr int seeds = 5;
  RunSchedule sch;
  sch.gamma = 0.05;
  sch.batch_size = 10;
  sch.sampling = Sampling::epoch_shuffle;
  sch.total_steps = epochs * (obj.num_samples() / sch.batch_size);
  Rng init_rng(seed, 808);
  const std::uint64_t teacher_seed = seed * 1000 + 999;
  const RunResult teacher =
      run(obj, sch, obj.initial_point(init_rng), TeacherSource::none(), teacher_seed);
  rep.traces.push_back(trace_text(teacher, "teacher", teacher_seed, Mode::sgd, 0.0, sch.gamma));
  rep.notes.push_back("teacher train accuracy " + fmt(obj.accuracy(teacher.final_x)));

  const std::vector<double> lambdas{0.1, 0.5, 0.9};
  std::vector<double> cosines(lambdas.size(), 0.0);
  std::size_t ordered_seeds = 0;
  for (int s = 0; s < seeds; ++s) {
    std::vector<double> per_seed;
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
      RunSchedule kd = sch;
      kd.mode = Mode::kd;
      kd.lambda = lambdas[i];
      kd.track_gap = true;
      const std::uint64_t run_seed = seed * 1000 + static_cast<std::uint64_t>(s);
      Rng student_init(run_seed, 809);
      const RunResult r = run(obj, kd, obj.initial_point(student_init),
                              TeacherSource::fixed(teacher.final_x), run_seed);
      rep.traces.push_back(trace_text(r, "kd_" + fmt(lambdas[i]), run_seed, kd.mode, kd.lambda,
                                      kd.gamma));
      const double c = r.diverged || !r.trace.back().cosine ? std::numeric_limits<double>::quiet_NaN()
                                                            : *r.trace.back().cosine;
      per_seed.push_back(c);
      cosines[i] += c / seeds;
    }
    if (per_seed[0] > per_seed[1] && per_seed[1] > per_seed[2]) ++ordered_seeds;
  }
  rep.notes.push_back("final-epoch cosine (seed mean) for lambda 0.1, 0.5, 0.9: " + fmt(cosines[0]) +
                      ", " + fmt(cosines[1]) + ", " + fmt(cosines[2]) + "; strictly ordered in " +
                      std::to_string(ordered_seeds) + "/5 seeds");
  rep.add("cosine(0.1) - cosine(0.5)", "> 0", cosines[0] - cosines[1], cosines[0] > cosines[1]);
  rep.add("cosine(0.5) - cosine(0.9)", "> 0", cosines[1] - cosines[2], cosines[1] > cosines[2]);

  // Linearity of the gap and finite differences at fixed states.
  Rng rng(seed, 810);
  double worst_lin = 0.0, worst_fd = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const ParamVector x = obj.initial_point(rng);
    const ParamVector theta = obj.initial_point(rng);
    const std::size_t n = rng.uniform_index(obj.num_samples());
    const Minibatch batch = sample_minibatch(obj.num_samples(), 10, rng);
    const double unit = approx_gap_stats(obj, x, theta, 1.0, batch).l2;
    for (double lam : {0.1, 0.5, 0.9}) {
      const double l2 = approx_gap_stats(obj, x, theta, lam, batch).l2;
      worst_lin = std::max(worst_lin, std::abs(l2 - lam * unit) / (1.0 + unit));
    }
    KDConfig cfg;
    cfg.teacher = theta;
    cfg.lambda = rng.uniform01();
    cfg.gamma = 1.0;
    const ParamVector g = true_kd_grad(obj, x, cfg, n);
    const ParamVector fd = finite_difference_grad(
        [&](const ParamVector& p) { return distillation_loss(obj, p, theta, cfg.lambda, n); }, x);
    worst_fd = std::max(worst_fd, fd_error(g, fd));
  }
  rep.add("|l2(lambda) - lambda l2(1)| / (1 + l2(1)) at fixed states", "<= 1e-10", worst_lin,
          worst_lin <= 1e-10);
  rep.add("true kd gradient vs finite differences, max rel. error", "<= 1e-5", worst_fd,
          worst_fd <= 1e-5);
  return rep;
}

Report pruning(std::uint64_t seed) {
  Report rep{"9", "distillation with a fixed pruning mask", {}, {}, {}};
  SynthSpec spec;
  spec.kind = SynthKind::logistic_noisy;
  spec.n = 2000;
  spec.d = 50;
  spec.noise = 0.5;
  spec.seed = 21;
  spec.classes = 10;
  spec.weight_scale = 0.3;
  const Objective obj = Objective::softmax_linear(synth(spec).data);
  Rng ref_rng(seed, 909);
  const ExactConstants ref = reference_solution(obj, 20000, 1e-8, 8, ref_rng);
  constexpr double lambda = 0.5;
  constexpr std::size_t epochs = 20;
  constexpr int seeds = 5;
  const std::vector<double> sparsities{0.25, 0.5, 0.75};
  RunSchedule sch;
  sch.gamma = 0.05;
  sch.batch_size = 10;
  sch.sampling = Sampling::epoch_shuffle;
  sch.mode = Mode::compressed_kd;
  sch.total_steps = epochs * (obj.num_samples() / sch.batch_size);

  std::size_t positive_seeds = 0, monotone_seeds = 0;
  std::vector<double> mean_gain(sparsities.size(), 0.0);
  for (int s = 0; s < seeds; ++s) {
    const std::uint64_t run_seed = seed * 1000 + static_cast<std::uint64_t>(s);
    std::vector<double> gains;
    for (double sparsity : sparsities) {
      Rng mask_rng(run_seed, 910);
      sch.compressor = Compressor::random_fixed_mask(obj.dim(), sparsity, mask_rng);
      double loss[2];
      for (int arm = 0; arm < 2; ++arm) {
        sch.lambda = arm == 0 ? 0.0 : lambda;
        const RunResult r =
            run(obj, sch, ParamVector(obj.dim()), TeacherSource::fixed(ref.x_star), run_seed);
        rep.traces.push_back(trace_text(r, "mask_" + fmt(sparsity), run_seed, sch.mode, sch.lambda,
                                        sch.gamma));
        loss[arm] = r.diverged ? std::numeric_limits<double>::infinity() : min_running_loss(r);
      }
      gains.push_back(loss[0] - loss[1]);
    }
    for (std::size_t i = 0; i < gains.size(); ++i) mean_gain[i] += gains[i] / seeds;
    if (std::all_of(gains.begin(), gains.end(), [](double g) { return g > 0.0; })) ++positive_seeds;
    if (gains[0] >= gains[1] && gains[1] >= gains[2]) ++monotone_seeds;
  }
  rep.notes.push_back("lambda = 0.5, reference teacher; mean min-loss gain at 25/50/75%: " +
                      fmt(mean_gain[0]) + ", " + fmt(mean_gain[1]) + ", " + fmt(mean_gain[2]));
  rep.add("seeds with a positive gain at every sparsity", ">= 3 of 5",
          static_cast<double>(positive_seeds), positive_seeds >= 3);
  rep.add("seeds with gain nonincreasing in sparsity", ">= 3 of 5",
          static_cast<double>(monotone_seeds), monotone_seeds >= 3);
  return rep;
}

Report replay_determinism(std::uint64_t seed) {
  Report rep{"10", "replay determinism", {}, {}, {}};
  using Fn = Report (*)(std::uint64_t);
  const std::vector<std::pair<const char*, Fn>> experiments{
      {"phase halving", &phase_halving},
      {"variance tracking", &variance_tracking},
      {"mlp gradient gap", &mlp_gradient_gap},
  };
  for (const auto& [name, fn] : experiments) {
    const Report first = fn(seed);
    const Report second = fn(seed);
    std::size_t mismatched = first.traces.size() == second.traces.size() ? 0 : 1;
    for (std::size_t i = 0; i < std::min(first.traces.size(), second.traces.size()); ++i) {
      if (first.traces[i] != second.traces[i]) ++mismatched;
    }
    rep.add(std::string(name) + ": trace CSVs differing on replay (of " +
                std::to_string(first.traces.size()) + ")",
            "== 0", static_cast<double>(mismatched), mismatched == 0 && !first.traces.empty());
  }
  return rep;
}

Report gradient_checks(std::uint64_t seed) {
  Report rep{"grad", "per-sample gradients vs finite differences", {}, {}, {}};
  Rng rng(seed, 1101);
  const std::vector<Objective> objectives{
      Objective::linear_regression(random_regression_data(rng, 20, 5)),
      Objective::binary_logistic(random_binary_data(rng, 20, 5)),
      Objective::softmax_linear(random_class_data(rng, 20, 5, 3)),
      Objective::mlp_relu(random_class_data(rng, 20, 3, 2), 4),
  };
  for (const Objective& obj : objectives) {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const ParamVector x = random_point(obj.dim(), rng);
      const std::size_t n = rng.uniform_index(obj.num_samples());
      const ParamVector fd =
          finite_difference_grad([&](const ParamVector& p) { return obj.loss(p, n); }, x);
      worst = std::max(worst, fd_error(obj.grad(x, n), fd));
    }
    rep.add(to_string(obj.kind()) + ": max ||grad - fd|| / (1 + ||fd||)", "<= 1e-5", worst,
            worst <= 1e-5);
  }
  return rep;
}

Report unbiasedness(std::uint64_t seed) {
  Report rep{"unbiased", "unbiased update directions and sampling", {}, {}, {}};
  Rng rng(seed, 1201);
  const std::vector<Objective> objectives{
      Objective::linear_regression(random_regression_data(rng, 40, 5)),
      Objective::softmax_linear(random_class_data(rng, 48, 4, 3)),
  };
  for (const Objective& obj : objectives) {
    double worst = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      const ParamVector x = random_point(obj.dim(), rng);
      KDConfig cfg;
      cfg.teacher = random_point(obj.dim(), rng);
      cfg.lambda = rng.uniform01();
      cfg.gamma = 1.0;
      const ParamVector teacher_full = obj.full_grad(cfg.teacher);
      ParamVector avg(obj.dim()), dir;
      for (std::size_t n = 0; n < obj.num_samples(); ++n) {
        unbiased_kd_direction(obj, x, cfg, teacher_full, Minibatch::single(n), dir);
        axpy_inplace(1.0 / static_cast<double>(obj.num_samples()), dir, avg);
      }
      const ParamVector full = obj.full_grad(x);
      worst = std::max(worst, norm(avg - full) / (1.0 + norm(full)));
    }
    rep.add(to_string(obj.kind()) + ": ||mean direction - grad f|| / (1 + ||grad f||)", "<= 1e-12",
            worst, worst <= 1e-12);
  }

  constexpr std::size_t N = 100, draws = 100000;
  std::vector<double> counts(N, 0.0);
  Rng srng(seed, 1202);
  for (std::size_t i = 0; i < draws / 10; ++i) {
    for (std::size_t n : sample_minibatch(N, 10, srng).indices) counts[n] += 1.0;
  }
  double chi2 = 0.0;
  const double expected = static_cast<double>(draws) / N;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(N - 1);
  const double p = boost::math::cdf(boost::math::complement(dist, chi2));
  rep.add("sample_minibatch chi-square p-value over 1e5 draws", ">= 0.001", p, p >= 0.001);
  return rep;
}

Report oracle_certificates(std::uint64_t seed) {
  Report rep{"oracle", "exact constants of solved quadratics", {}, {}, {}};
  Rng rng(seed, 1301);
  const Objective obj = Objective::linear_regression(random_regression_data(rng, 50, 10));
  const ExactConstants k = solve_linear_regression(obj);
  const double gnorm = norm(obj.full_grad(k.x_star));
  rep.add("||grad f(x*)||", "<= 1e-10", gnorm, gnorm <= 1e-10);
  rep.add("mu <= L <= L_exp", "holds", k.L_expected - k.mu,
          k.mu <= k.L_full && k.L_full <= k.L_expected);
  double worst_sc = 0.0, worst_pl = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const ParamVector x = axpy(1.0, random_point(obj.dim(), rng), k.x_star);
    const ParamVector g = obj.full_grad(x);
    const double fx = obj.full_loss(x);
    const double sc = fx + dot(g, k.x_star - x) + 0.5 * k.mu * dist_sq(k.x_star, x) - k.f_star;
    worst_sc = std::max(worst_sc, sc / (1.0 + std::abs(fx)));
    const double pl = 2.0 * k.mu * (fx - k.f_star) - norm_sq(g);
    worst_pl = std::max(worst_pl, pl / (1.0 + norm_sq(g)));
  }
  rep.add("strong convexity violation at 1000 points (relative)", "<= 1e-10", worst_sc,
          worst_sc <= 1e-10);
  rep.add("PL violation at 1000 points (relative)", "<= 1e-10", worst_pl, worst_pl <= 1e-10);
  double ratio = 0.0;
  bool valid = true;
  try {
    ratio = expected_smoothness_check(obj, k, 1000, rng).max_ratio;
  } catch (const ConstantsInvalid&) {
    valid = false;
  }
  rep.add("expected smoothness: max observed ratio / declared L_exp", "<= 1",
          ratio / k.L_expected, valid && ratio <= k.L_expected);
  return rep;
}

std::vector<Report> verify_suite(std::uint64_t seed, const FaultInjection& faults) {
  std::vector<Report> out;
  out.push_back(gradient_checks(seed));
  out.push_back(distillation_gradient_exactness(seed, faults));
  out.push_back(lemma_identities(seed));
  out.push_back(unbiasedness(seed));
  out.push_back(oracle_certificates(seed));
  out.push_back(compression_suite(seed, faults));
  out.push_back(partial_variance_reduction(seed));
  out.push_back(phase_halving(seed));
  return out;
}

}  // namespace kdvr
