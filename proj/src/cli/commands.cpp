#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

#include "kdvr/cli.hpp"
#include "kdvr/errors.hpp"
#include "kdvr/oracle.hpp"

namespace kdvr::cli {

namespace {

namespace fs = std::filesystem;

std::string real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string opt_real(const std::optional<double>& v) { return v ? real(*v) : std::string(); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string format_params(const ParamVector& x) {
  std::string s;
  for (double v : x) s += real(v) + "\n";
  return s;
}

ParamVector read_params(const fs::path& path, std::size_t dim) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open teacher parameters " + path.string());
  std::vector<double> values;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    char* end = nullptr;
    const double v = std::strtod(line.c_str(), &end);
    if (end == line.c_str() || *end != '\0' || !std::isfinite(v)) {
      throw FormatError("teacher parameters: bad value on line " + std::to_string(row), row, 1);
    }
    values.push_back(v);
  }
  if (values.size() != dim) {
    throw ConfigError("teacher.path", "expected " + std::to_string(dim) + " parameters, found " +
                                          std::to_string(values.size()));
  }
  return ParamVector(std::move(values));
}

Objective make_objective(const ObjectiveSpec& spec, Dataset data) {
  switch (spec.kind) {
    case ObjectiveKind::linear_regression: return Objective::linear_regression(std::move(data), spec.bias);
    case ObjectiveKind::binary_logistic: return Objective::binary_logistic(std::move(data), spec.bias);
    case ObjectiveKind::softmax_linear: return Objective::softmax_linear(std::move(data), spec.bias);
    case ObjectiveKind::mlp_relu: return Objective::mlp_relu(std::move(data), spec.hidden);
  }
  throw ConfigError("objective.kind", "unknown");
}

// Everything a command needs once the config is resolved against the data.
struct Context {
  ExperimentConfig config;
  fs::path out_dir;
  std::optional<Objective> train;
  std::optional<Objective> test;
  std::optional<ExactConstants> constants;

  const Objective& obj() const { return *train; }

  /// Exact constants for squared loss, a reference solution otherwise.
  const ExactConstants& need_constants(const std::string& field) {
    if (constants) return *constants;
    if (obj().kind() == ObjectiveKind::linear_regression) {
      constants = solve_linear_regression(obj());
    } else if (obj().kind() == ObjectiveKind::mlp_relu) {
      throw ConfigError(field, "needs oracle constants, which mlp_relu does not have");
    } else {
      Rng rng(config.teacher.seed, 0x0c0de);
      constants = reference_solution(obj(), config.teacher.reference_iters, 1e-10, 64, rng);
    }
    return *constants;
  }

  double need_mu(const std::string& field) {
    const double mu = need_constants(field).mu;
    if (!(mu > 0.0)) throw ConfigError(field, "needs mu > 0, but the problem has mu = 0");
    return mu;
  }
};

Context make_context(const CommandOptions& options) {
  if (!options.config) throw ConfigError("--config", "a config file is required");
  Context ctx;
  ctx.config = load_config(*options.config);
  if (options.seeds) {
    if (options.seeds->empty()) throw ConfigError("--seeds", "must be nonempty");
    ctx.config.seeds = *options.seeds;
  }
  ctx.out_dir = options.out ? *options.out : ctx.config.output_dir;

  LoadedData loaded = load_dataset(ctx.config.dataset);
  if (ctx.config.test_fraction > 0.0) {
    auto [tr, te] = split(loaded.data, ctx.config.test_fraction, ctx.config.split_seed);
    ctx.train = make_objective(ctx.config.objective, std::move(tr));
    ctx.test = with_dataset(*ctx.train, std::move(te));
  } else {
    ctx.train = make_objective(ctx.config.objective, std::move(loaded.data));
  }
  return ctx;
}

double resolve_gamma(Context& ctx) {
  const GammaSpec& g = ctx.config.schedule.gamma;
  if (g.inverse_of.empty()) return g.value;
  const ExactConstants& k = ctx.need_constants("schedule.gamma");
  const double denom = g.inverse_of == "L" ? k.L_full : k.L_expected;
  if (!(denom > 0.0)) throw ConfigError("schedule.gamma", g.inverse_of + " is zero");
  return g.scale / denom;
}

double resolve_c(Context& ctx) {
  const CSpec& c = ctx.config.schedule.c;
  if (c.rule.empty()) return c.value;
  if (c.rule == "L") return ctx.need_constants("schedule.c").L_full;
  const double mu = ctx.need_mu("schedule.c");
  return c.rule == "mu/4" ? mu / 4.0 : 2.0 * mu;
}

Compressor make_compressor(const CompressorSpec& spec, std::size_t dim) {
  if (spec.kind == "identity") return Compressor::identity();
  if (spec.kind == "rand_k") {
    if (spec.k == 0 || spec.k > dim) {
      throw ConfigError("schedule.compressor.k", "must lie in [1, " + std::to_string(dim) + "]");
    }
    return Compressor::rand_k(spec.k);
  }
  if (spec.kind == "fixed_mask") {
    if (!(spec.sparsity >= 0.0 && spec.sparsity < 1.0)) {
      throw ConfigError("schedule.compressor.sparsity", "must lie in [0, 1)");
    }
    Rng rng(spec.mask_seed, 0x3a5c);
    return Compressor::random_fixed_mask(dim, spec.sparsity, rng);
  }
  if (spec.levels == 0) throw ConfigError("schedule.compressor.levels", "must be positive");
  return Compressor::stochastic_quantize(spec.levels);
}

RunSchedule make_schedule(Context& ctx) {
  const ScheduleSpec& s = ctx.config.schedule;
  const std::size_t n = ctx.obj().num_samples();
  if (s.batch_size > n) throw ConfigError("schedule.batch_size", "exceeds the dataset size");
  RunSchedule r;
  r.batch_size = s.batch_size;
  r.gamma = resolve_gamma(ctx);
  r.mode = s.mode;
  r.lambda_policy = s.lambda_policy;
  r.c = resolve_c(ctx);
  r.sampling = s.sampling;
  r.steps_per_epoch = (n + s.batch_size - 1) / s.batch_size;
  r.total_steps = s.epochs > 0 ? s.epochs * r.steps_per_epoch : s.total_steps;
  if (!s.phase_rule.empty()) {
    r.phase_length =
        static_cast<std::size_t>(std::ceil(1.0 / (r.gamma * ctx.need_mu("schedule.phase_rule"))));
  } else {
    r.phase_length = s.phase_length;
  }
  r.compressor = make_compressor(s.compressor, ctx.obj().dim());
  if (s.variance_probe == "exact") {
    r.variance_probe = VarianceProbe::exact();
  } else if (s.variance_probe == "monte_carlo") {
    if (s.probe_trials < 2) throw ConfigError("schedule.probe_trials", "must be at least 2");
    r.variance_probe = VarianceProbe::monte_carlo(s.probe_trials, s.batch_size);
  }
  r.track_gap = s.track_gap;
  r.cache_teacher = s.cache_teacher;
  r.weight_decay = s.weight_decay;
  if (s.track_gap && ctx.obj().kind() != ObjectiveKind::mlp_relu) {
    throw ConfigError("schedule.track_gap", "only defined for mlp_relu");
  }
  if (s.mode == Mode::sgd) {
    for (double lam : ctx.config.lambda_grid) {
      if (lam != 0.0) throw ConfigError("lambda_grid", "mode sgd takes lambda 0 only");
    }
  }
  try {
    r.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError("schedule", e.what());
  }
  return r;
}

ParamVector initial_point(const Objective& obj, std::uint64_t seed) {
  Rng rng(seed, 0x1717);
  return obj.initial_point(rng);
}

struct Teacher {
  TeacherSource source;
  std::string description;
};

Teacher resolve_teacher(Context& ctx, const RunSchedule& schedule, std::ostream& log) {
  const TeacherSpec& t = ctx.config.teacher;
  const Objective& obj = ctx.obj();
  if (t.source == "none") {
    if (schedule.mode != Mode::sgd) {
      throw ConfigError("teacher.source", "mode " + to_string(schedule.mode) + " needs a teacher");
    }
    return {TeacherSource::none(), "none"};
  }
  if (t.source == "self_refresh") {
    if (schedule.phase_length == 0) {
      throw ConfigError("teacher.source", "self_refresh needs phase_length or phase_rule");
    }
    return {TeacherSource::self_refresh(), "self_refresh"};
  }
  if (t.source == "path") return {TeacherSource::fixed(read_params(t.path, obj.dim())), "path"};
  if (t.source == "oracle") {
    if (obj.kind() != ObjectiveKind::linear_regression) {
      throw ConfigError("teacher.source", "oracle teachers need linear_regression");
    }
    const ExactConstants& k = ctx.need_constants("teacher.source");
    Rng rng(t.seed, 0x7eac);
    return {TeacherSource::fixed(make_teacher(obj, k, t.quality, random_direction(obj.dim(), rng))),
            "oracle q=" + short_real(t.quality)};
  }
  if (t.source == "reference") {
    const ExactConstants& k = ctx.need_constants("teacher.source");
    return {TeacherSource::fixed(k.x_star), k.proxy ? "reference (proxy)" : "reference (exact)"};
  }
  // sgd: the run's own schedule at lambda = 0.
  RunSchedule plain = schedule;
  plain.mode = Mode::sgd;
  plain.lambda = 0.0;
  plain.lambda_policy = LambdaPolicy::fixed;
  plain.compressor = Compressor::identity();
  plain.variance_probe.reset();
  plain.track_gap = false;
  plain.phase_length = 0;
  const RunResult r = run(obj, plain, initial_point(obj, t.seed), TeacherSource::none(), t.seed);
  if (r.diverged) throw ConfigError("teacher.source", "SGD teacher diverged: " + r.divergence_reason);
  std::ostringstream d;
  d << "sgd seed=" << t.seed << " loss=" << short_real(obj.full_loss(r.final_x));
  if (obj.is_classification()) d << " train_acc=" << short_real(obj.accuracy(r.final_x));
  if (ctx.test && obj.is_classification()) d << " test_acc=" << short_real(ctx.test->accuracy(r.final_x));
  log << "teacher: " << d.str() << "\n";
  return {TeacherSource::fixed(r.final_x), d.str()};
}

void log_step_bounds(Context& ctx, const RunSchedule& r, std::ostream& log) {
  if (ctx.obj().kind() == ObjectiveKind::mlp_relu) return;
  const ExactConstants* k = nullptr;
  try {
    k = &ctx.need_constants("schedule");
  } catch (const std::exception& e) {
    log << "step-size bounds: not checked (" << e.what() << ")\n";
    return;
  }
  auto report = [&](const std::string& name, double bound) {
    log << "step-size bound gamma <= " << name << " = " << short_real(bound) << ": "
        << (r.gamma <= bound ? "satisfied" : "violated") << "\n";
  };
  log << "constants: mu=" << short_real(k->mu) << " L=" << short_real(k->L_full)
      << " L_expected=" << short_real(k->L_expected) << (k->proxy ? " (reference proxy)" : "")
      << "\n";
  report("1/(8 L_expected)", 1.0 / (8.0 * k->L_expected));
  if (r.mode == Mode::unbiased_kd && k->mu > 0.0) {
    report("mu/(12 L L_expected)", k->mu / (12.0 * k->L_full * k->L_expected));
  }
  if (r.mode == Mode::compressed_kd && k->mu > 0.0) {
    const double omega = r.compressor.omega(ctx.obj().dim());
    log << "compression bound omega <= mu/(16 L_expected) = "
        << short_real(k->mu / (16.0 * k->L_expected)) << ": "
        << (omega <= k->mu / (16.0 * k->L_expected) ? "satisfied" : "violated")
        << " (omega=" << short_real(omega) << ")\n";
  }
}

/// Runs `count` jobs on up to `threads` workers. Each job writes only its own
/// slot, so the results do not depend on the thread count. The first
/// exception in job order is rethrown after all workers finish.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& job) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(threads, count));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::string run_name(double lambda, std::uint64_t seed) {
  return "lambda-" + short_real(lambda) + "_seed-" + std::to_string(seed);
}

struct Job {
  double lambda;
  std::uint64_t seed;
};

std::vector<Job> grid_jobs(const ExperimentConfig& c) {
  std::vector<Job> jobs;
  for (double lam : c.lambda_grid) {
    for (auto seed : c.seeds) jobs.push_back({lam, seed});
  }
  return jobs;
}

SummaryRow summarize(double lambda, const std::vector<const RunResult*>& runs) {
  SummaryRow row;
  row.lambda = lambda;
  row.runs = runs.size();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  row.min_loss = row.last10_mean = row.last10_std = nan;
  double min_sum = 0.0, acc_sum = 0.0;
  std::size_t used = 0, acc_count = 0;
  std::vector<double> tail;
  for (const RunResult* r : runs) {
    if (r->diverged || r->trace.empty()) {
      ++row.diverged;
      continue;
    }
    double m = r->trace.front().running_loss;
    for (const auto& rec : r->trace) m = std::min(m, rec.running_loss);
    min_sum += m;
    ++used;
    const std::size_t from = r->trace.size() > 10 ? r->trace.size() - 10 : 0;
    for (std::size_t e = from; e < r->trace.size(); ++e) tail.push_back(r->trace[e].running_loss);
    if (r->trace.back().test_accuracy) {
      acc_sum += *r->trace.back().test_accuracy;
      ++acc_count;
    }
  }
  if (used > 0) {
    row.min_loss = min_sum / static_cast<double>(used);
    double mean = 0.0;
    for (double v : tail) mean += v;
    mean /= static_cast<double>(tail.size());
    double var = 0.0;
    for (double v : tail) var += (v - mean) * (v - mean);
    row.last10_mean = mean;
    row.last10_std = std::sqrt(var / static_cast<double>(tail.size()));
  }
  if (acc_count > 0) row.final_test_acc = acc_sum / static_cast<double>(acc_count);
  return row;
}

struct SweepOutcome {
  std::vector<SummaryRow> rows;
};

SweepOutcome run_grid(Context& ctx, std::size_t threads, std::ostream& log) {
  const RunSchedule base = make_schedule(ctx);
  log_step_bounds(ctx, base, log);
  const Teacher teacher = resolve_teacher(ctx, base, log);
  std::optional<ParamVector> reference;
  if (base.lambda_policy == LambdaPolicy::optimal_per_phase) {
    reference = ctx.need_constants("schedule.lambda_policy").x_star;
  }

  const Objective& obj = ctx.obj();
  const std::vector<Job> jobs = grid_jobs(ctx.config);
  std::vector<RunResult> results(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t i) {
    RunSchedule s = base;
    s.lambda = jobs[i].lambda;
    RunOptions opts;
    opts.test = ctx.test ? &*ctx.test : nullptr;
    opts.reference_optimum = reference;
    results[i] = run(obj, s, initial_point(obj, jobs[i].seed), teacher.source, jobs[i].seed, opts);
  });

  make_dir(ctx.out_dir);
  write_text(ctx.out_dir / "config.json", serialize_config(ctx.config));
  if (teacher.source.kind == TeacherKind::fixed) {
    write_text(ctx.out_dir / "teacher.txt", format_params(teacher.source.params));
  }
  SweepOutcome out;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const RunResult& r = results[i];
    const std::string name = run_name(jobs[i].lambda, jobs[i].seed);
    write_trace(to_epoch_stats(r, name, jobs[i].seed, base.mode, jobs[i].lambda, base.gamma),
                ctx.out_dir / ("trace_" + name + ".csv"));
    write_text(ctx.out_dir / ("params_" + name + ".txt"), format_params(r.final_x));
    if (r.diverged) {
      log << "run " << name << " diverged after " << r.steps_completed
          << " steps: " << r.divergence_reason << "\n";
    }
  }
  for (std::size_t g = 0; g < ctx.config.lambda_grid.size(); ++g) {
    std::vector<const RunResult*> runs;
    for (std::size_t s = 0; s < ctx.config.seeds.size(); ++s) {
      runs.push_back(&results[g * ctx.config.seeds.size() + s]);
    }
    out.rows.push_back(summarize(ctx.config.lambda_grid[g], runs));
  }
  write_text(ctx.out_dir / "summary.csv", format_summary(out.rows));
  for (const auto& row : out.rows) {
    log << "lambda " << short_real(row.lambda) << ": min_loss " << short_real(row.min_loss)
        << ", last10 " << short_real(row.last10_mean) << " +- " << short_real(row.last10_std);
    if (row.final_test_acc) log << ", test_acc " << short_real(*row.final_test_acc);
    if (row.diverged > 0) log << ", diverged " << row.diverged << "/" << row.runs;
    log << "\n";
  }
  log << "wrote " << jobs.size() << " runs to " << ctx.out_dir.string() << "\n";
  return out;
}

std::string verify_csv(const std::vector<Report>& reports) {
  std::string s = "suite,property,tolerance,observed,passed\n";
  auto quote = [](const std::string& v) {
    std::string q = "\"";
    for (char ch : v) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + "\"";
  };
  for (const auto& r : reports) {
    for (const auto& c : r.checks) {
      s += r.id + "," + quote(c.property) + "," + quote(c.tolerance) + "," + real(c.observed) +
           "," + (c.passed ? "1" : "0") + "\n";
    }
  }
  return s;
}

std::string constants_csv(const ExactConstants& k) {
  std::string s = "constant,value\n";
  s += "f_star," + real(k.f_star) + "\n";
  s += "mu," + real(k.mu) + "\n";
  s += "L," + real(k.L_full) + "\n";
  s += "L_expected," + real(k.L_expected) + "\n";
  s += "sigma_star_sq," + real(k.sigma_star_sq) + "\n";
  s += "x_star_norm_sq," + real(dot(k.x_star, k.x_star)) + "\n";
  s += std::string("rank_deficient,") + (k.rank_deficient ? "1" : "0") + "\n";
  return s;
}

}  // namespace

std::string format_summary(const std::vector<SummaryRow>& rows) {
  auto field = [](double v) { return std::isfinite(v) ? real(v) : std::string(); };
  std::string s = "lambda,runs,diverged,min_loss,last10_mean,last10_std,test_acc\n";
  for (const auto& r : rows) {
    s += real(r.lambda) + "," + std::to_string(r.runs) + "," + std::to_string(r.diverged) + "," +
         field(r.min_loss) + "," + field(r.last10_mean) + "," + field(r.last10_std) + "," +
         opt_real(r.final_test_acc) + "\n";
  }
  return s;
}

std::optional<double> best_lambda(const std::vector<SummaryRow>& rows) {
  const SummaryRow* best = nullptr;
  for (const auto& r : rows) {
    if (r.runs == r.diverged || !std::isfinite(r.min_loss)) continue;
    if (!best || r.min_loss < best->min_loss ||
        (r.min_loss == best->min_loss && r.lambda < best->lambda)) {
      best = &r;
    }
  }
  if (!best) return std::nullopt;
  return best->lambda;
}

int cmd_train(const CommandOptions& options, std::ostream& log) {
  Context ctx = make_context(options);
  run_grid(ctx, options.threads, log);
  return kOk;
}

int cmd_sweep_lambda(const CommandOptions& options, std::ostream& log) {
  Context ctx = make_context(options);
  const SweepOutcome out = run_grid(ctx, options.threads, log);
  const auto best = best_lambda(out.rows);
  if (!best) {
    write_text(ctx.out_dir / "best_lambda.txt", "best_lambda,\nreason,every run diverged\n");
    log << "best lambda: none (every run diverged)\n";
    return kOk;
  }
  write_text(ctx.out_dir / "best_lambda.txt", "best_lambda," + real(*best) + "\n");
  log << "best lambda: " << short_real(*best) << "\n";
  return kOk;
}

int cmd_diagnose(const CommandOptions& options, std::ostream& log) {
  Context ctx = make_context(options);
  RunSchedule base = make_schedule(ctx);
  const Teacher teacher = resolve_teacher(ctx, base, log);
  if (teacher.source.kind != TeacherKind::fixed) {
    throw ConfigError("teacher.source", "diagnose needs a fixed teacher (sgd, oracle, reference, path)");
  }
  const Objective& obj = ctx.obj();
  const ParamVector& theta = teacher.source.params;
  make_dir(ctx.out_dir);

  std::string header =
      "teacher,proxy,f_gap,G,M,X,sigma_star_sq,beta,rho,lambda_star,lambda_star_clamped,"
      "outside_unit,ratio,reason\n";
  std::vector<std::string> cells(13);
  std::vector<std::string> reasons;
  cells[0] = teacher.description;
  if (obj.kind() == ObjectiveKind::mlp_relu) {
    reasons.push_back("no minimizer available for mlp_relu");
  } else {
    const ExactConstants& k = ctx.need_constants("teacher");
    const TeacherStats st = teacher_stats(obj, k.x_star, theta);
    const KDConfig cfg{0.0, base.gamma, theta, base.c};
    cells[1] = k.proxy ? "1" : "0";
    cells[2] = real(obj.full_loss(theta) - k.f_star);
    cells[3] = real(st.full_grad_norm_sq);
    cells[4] = real(st.second_moment);
    cells[5] = real(st.cross_moment);
    cells[6] = real(st.sigma_star_sq);
    auto attempt = [&](std::size_t col, const char* what, const std::function<double()>& f) {
      try {
        cells[col] = real(f());
      } catch (const UndefinedRatio& e) {
        reasons.push_back(std::string(what) + ": " + e.what());
      }
    };
    attempt(7, "beta", [&] { return beta_snr(st); });
    attempt(8, "rho", [&] { return rho_correlation(st); });
    try {
      const OptimalLambda lam = optimal_lambda(cfg, st);
      cells[9] = real(lam.value);
      cells[10] = real(lam.clamped());
      cells[11] = lam.outside_unit ? "1" : "0";
    } catch (const UndefinedRatio& e) {
      reasons.push_back(std::string("lambda_star: ") + e.what());
    }
    attempt(12, "ratio", [&] { return reduction_ratio(cfg, st); });
    log << "beta " << (cells[7].empty() ? "-" : cells[7]) << ", rho "
        << (cells[8].empty() ? "-" : cells[8]) << ", lambda* " << (cells[9].empty() ? "-" : cells[9])
        << ", ratio " << (cells[12].empty() ? "-" : cells[12]) << "\n";
  }
  std::string reason;
  for (std::size_t i = 0; i < reasons.size(); ++i) reason += (i ? "; " : "") + reasons[i];
  std::string row;
  for (const auto& c : cells) {
    const bool quote = c.find(',') != std::string::npos;
    row += (quote ? "\"" + c + "\"" : c) + ",";
  }
  row += "\"" + reason + "\"\n";
  write_text(ctx.out_dir / "diagnostics.csv", header + row);

  if (obj.kind() == ObjectiveKind::mlp_relu) {
    base.mode = Mode::kd;
    base.track_gap = true;
    const std::vector<Job> jobs = grid_jobs(ctx.config);
    std::vector<RunResult> results(jobs.size());
    parallel_for(jobs.size(), options.threads, [&](std::size_t i) {
      RunSchedule s = base;
      s.lambda = jobs[i].lambda;
      results[i] = run(obj, s, initial_point(obj, jobs[i].seed), teacher.source, jobs[i].seed);
    });
    std::string gap = "lambda,seed,epoch,cosine,l2,snr\n";
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      for (const auto& rec : results[i].trace) {
        gap += real(jobs[i].lambda) + "," + std::to_string(jobs[i].seed) + "," +
               std::to_string(rec.epoch) + "," + opt_real(rec.cosine) + "," + opt_real(rec.l2) +
               "," + opt_real(rec.snr) + "\n";
      }
      if (!results[i].trace.empty()) {
        const auto& last = results[i].trace.back();
        log << "lambda " << short_real(jobs[i].lambda) << " seed " << jobs[i].seed
            << ": final cosine " << (last.cosine ? short_real(*last.cosine) : "-") << ", l2 "
            << (last.l2 ? short_real(*last.l2) : "-") << "\n";
      }
      if (results[i].diverged) log << "run " << run_name(jobs[i].lambda, jobs[i].seed) << " diverged\n";
    }
    write_text(ctx.out_dir / "gap.csv", gap);
  }
  log << "wrote diagnostics to " << ctx.out_dir.string() << "\n";
  return kOk;
}

int cmd_verify(const CommandOptions& options, std::ostream& log) {
  const std::uint64_t seed = options.seeds && !options.seeds->empty() ? options.seeds->front() : 1;
  const ExactConstants k = solve_linear_regression(benchmark_quadratic());
  log << "constants of the benchmark quadratic (N=200, d=20)\n";
  log << "  f*          " << real(k.f_star) << "\n";
  log << "  mu          " << real(k.mu) << "\n";
  log << "  L           " << real(k.L_full) << "\n";
  log << "  L_expected  " << real(k.L_expected) << "\n";
  log << "  sigma*^2    " << real(k.sigma_star_sq) << "\n";

  const std::vector<Report> reports = verify_suite(seed, options.faults);
  bool ok = true;
  for (const auto& r : reports) {
    ok = ok && r.passed();
    log << (r.passed() ? "PASS " : "FAIL ") << r.id << ": " << r.title << "\n";
    for (const auto& c : r.checks) {
      log << "  [" << (c.passed ? "ok" : "FAILED") << "] " << c.property << " | " << c.tolerance
          << " | observed " << short_real(c.observed) << "\n";
    }
  }
  if (options.out) {
    make_dir(*options.out);
    write_text(*options.out / "verify.csv", verify_csv(reports));
    write_text(*options.out / "constants.csv", constants_csv(k));
  }
  log << (ok ? "all properties passed\n" : "some properties FAILED\n");
  return ok ? kOk : kPropertyFailure;
}

int cmd_ingest(const CommandOptions& options, std::ostream& log) {
  if (!options.config) throw ConfigError("--config", "a config file is required");
  const ExperimentConfig config = load_config(*options.config);
  const fs::path out = options.out ? *options.out : config.output_dir;
  const LoadedData loaded = load_dataset(config.dataset);
  make_dir(out);
  write_csv(loaded.data, out / "dataset.csv");
  if (loaded.planted) write_text(out / "planted.txt", format_params(*loaded.planted));
  const CsvOptions o = csv_options_for(loaded.data);
  log << "wrote " << loaded.data.size() << " samples x " << loaded.data.feature_dim()
      << " features to " << (out / "dataset.csv").string() << " (target " << [&] {
           switch (o.target_kind) {
             case TargetKind::real: return std::string("real");
             case TargetKind::probability: return std::string("probability");
             case TargetKind::class_index: return "class_index, " + std::to_string(o.num_classes) + " classes";
           }
           return std::string();
         }() << ")\n";
  return kOk;
}

int run_command(const std::string& name, const CommandOptions& options, std::ostream& log,
                std::ostream& err) {
  static const std::map<std::string, int (*)(const CommandOptions&, std::ostream&)> commands{
      {"train", cmd_train},       {"sweep-lambda", cmd_sweep_lambda}, {"diagnose", cmd_diagnose},
      {"verify", cmd_verify},     {"ingest", cmd_ingest}};
  const auto it = commands.find(name);
  if (it == commands.end()) {
    err << "error: unknown command '" << name << "'\n";
    return kConfigError;
  }
  try {
    return it->second(options, log);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const EmptyDataset& e) {
    err << "data error: " << e.what() << "\n";
    return kIoError;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kIoError;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const fs::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const InvalidArgument& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const InvalidKind& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kPropertyFailure;
  }
}

}  // namespace kdvr::cli
