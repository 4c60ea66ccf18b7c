#include "kdvr/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "kdvr/errors.hpp"

namespace kdvr {

namespace {

constexpr double kDivergenceLoss = 1e12;

void require_finite_update(const ParamVector& next, TrainerState& state, const char* op) {
  if (!next.is_finite()) {
    throw Diverged(std::string(op) + ": non-finite iterate at step " + std::to_string(state.step),
                   state);
  }
}

// x <- x - gamma * dir, committed only if finite.
void apply_direction(TrainerState& state, double gamma, const ParamVector& dir, const char* op) {
  ParamVector next = state.x;
  axpy_inplace(-gamma, dir, next);
  require_finite_update(next, state, op);
  state.x = std::move(next);
  ++state.step;
}

}  // namespace

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::sgd: return "sgd";
    case Mode::kd: return "kd";
    case Mode::unbiased_kd: return "unbiased_kd";
    case Mode::compressed_kd: return "compressed_kd";
  }
  return "unknown";
}

Mode mode_from_string(const std::string& name) {
  if (name == "sgd") return Mode::sgd;
  if (name == "kd") return Mode::kd;
  if (name == "unbiased_kd") return Mode::unbiased_kd;
  if (name == "compressed_kd") return Mode::compressed_kd;
  throw InvalidArgument("unknown mode '" + name + "'");
}

void sgd_direction(const Objective& obj, const ParamVector& x, const Minibatch& batch,
                   ParamVector& out) {
  out = obj.minibatch_grad(x, batch);
}

void kd_direction(const Objective& obj, const ParamVector& x, const KDConfig& cfg,
                  const Minibatch& batch, ParamVector& out) {
  distillation_direction(obj, x, cfg.teacher, cfg.lambda, batch, out);
}

void unbiased_kd_direction(const Objective& obj, const ParamVector& x, const KDConfig& cfg,
                           const ParamVector& full_teacher_grad, const Minibatch& batch,
                           ParamVector& out) {
  kd_direction(obj, x, cfg, batch, out);
  if (full_teacher_grad.size() != out.size()) {
    throw InvalidArgument("unbiased_kd: cached teacher gradient has wrong dimension");
  }
  if (cfg.lambda != 0.0) axpy_inplace(cfg.lambda, full_teacher_grad, out);
}

void sgd_step(const Objective& obj, TrainerState& state, double gamma, const Minibatch& batch) {
  ParamVector dir;
  sgd_direction(obj, state.x, batch, dir);
  apply_direction(state, gamma, dir, "sgd_step");
}

void kd_step(const Objective& obj, TrainerState& state, const KDConfig& cfg,
             const Minibatch& batch) {
  cfg.validate(obj.dim());
  ParamVector dir;
  kd_direction(obj, state.x, cfg, batch, dir);
  apply_direction(state, cfg.gamma, dir, "kd_step");
}

void unbiased_kd_step(const Objective& obj, TrainerState& state, const KDConfig& cfg,
                      const Minibatch& batch) {
  cfg.validate(obj.dim());
  if (!state.cached_full_teacher_grad) {
    throw PreconditionError("unbiased_kd_step: full teacher gradient not cached");
  }
  ParamVector dir;
  unbiased_kd_direction(obj, state.x, cfg, *state.cached_full_teacher_grad, batch, dir);
  apply_direction(state, cfg.gamma, dir, "unbiased_kd_step");
}

void compressed_kd_step(const Objective& obj, TrainerState& state, const KDConfig& cfg,
                        const Compressor& compressor, const Minibatch& batch) {
  cfg.validate(obj.dim());
  ParamVector dir;
  kd_direction(obj, state.x, cfg, batch, dir);
  ParamVector next = state.x;
  axpy_inplace(-cfg.gamma, dir, next);
  compressor.compress_inplace(next, state.rng);
  require_finite_update(next, state, "compressed_kd_step");
  state.x = std::move(next);
  ++state.step;
}

void RunSchedule::validate() const {
  if (batch_size == 0) throw InvalidArgument("batch_size must be positive");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw InvalidArgument("gamma must be positive");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw InvalidArgument("lambda outside [0,1]");
  if (!(c > 0.0)) throw InvalidArgument("c must be positive");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) {
    throw InvalidArgument("weight_decay must be finite and nonnegative");
  }
  if (mode != Mode::compressed_kd && compressor.kind() != Compressor::Kind::identity) {
    throw InvalidArgument("compressor set but mode is not compressed_kd");
  }
}

namespace {

// Per-epoch accumulators.
struct EpochAccumulator {
  double loss_sum = 0.0;
  double var_sum = 0.0;
  double var_full_sum = 0.0;
  double cos_sum = 0.0;
  double l2_sum = 0.0;
  double snr_sum = 0.0;
  std::size_t steps = 0;
  std::size_t var_count = 0;
  std::size_t cos_count = 0;
  std::size_t l2_count = 0;
  std::size_t snr_count = 0;
};

std::optional<double> mean_of(double sum, std::size_t count) {
  if (count == 0) return std::nullopt;
  return sum / static_cast<double>(count);
}

}  // namespace

RunResult run(const Objective& obj, const RunSchedule& schedule, const ParamVector& init,
              const TeacherSource& teacher, std::uint64_t seed, const RunOptions& options) {
  schedule.validate();
  obj.check_params(init);
  if (!init.is_finite()) throw InvalidArgument("run: non-finite initial point");
  if (schedule.batch_size > obj.num_samples()) {
    throw InvalidArgument("batch_size exceeds dataset size");
  }
  const bool distills = schedule.mode != Mode::sgd;
  if (distills && teacher.kind == TeacherKind::none) {
    throw InvalidArgument("run: mode " + to_string(schedule.mode) + " needs a teacher");
  }
  if (teacher.kind == TeacherKind::fixed) obj.check_params(teacher.params);
  if (schedule.lambda_policy == LambdaPolicy::optimal_per_phase && !options.reference_optimum) {
    throw InvalidArgument("run: optimal_per_phase needs a reference optimum");
  }
  if (schedule.track_gap && obj.kind() != ObjectiveKind::mlp_relu) {
    throw InvalidKind("run: track_gap is defined for mlp_relu only");
  }

  RunResult result;
  result.final_x = init;
  if (schedule.total_steps == 0) return result;

  TrainerState state{init, 0, Rng(seed, 0), std::nullopt, 0};
  // Telemetry draws from its own stream so probes never move the trajectory.
  Rng probe_rng(seed, 1);
  BatchSampler sampler(obj.num_samples(), schedule.batch_size, schedule.sampling);
  const std::size_t per_epoch =
      schedule.steps_per_epoch ? schedule.steps_per_epoch : sampler.steps_per_epoch();

  KDConfig cfg;
  cfg.gamma = schedule.gamma;
  cfg.c = schedule.c;
  cfg.lambda = distills ? schedule.lambda : 0.0;
  std::unique_ptr<TeacherResiduals> residuals;

  auto start_phase = [&]() {
    if (!distills) return;
    cfg.teacher = teacher.kind == TeacherKind::fixed ? teacher.params : state.x;
    if (schedule.lambda_policy == LambdaPolicy::optimal_per_phase) {
      const TeacherStats stats = teacher_stats(obj, *options.reference_optimum, cfg.teacher);
      const OptimalLambda opt = optimal_lambda(cfg, stats);
      cfg.lambda = opt.clamped();
      result.phase_lambdas_unclamped.push_back(opt.value);
    }
    result.phase_lambdas.push_back(cfg.lambda);
    if (schedule.mode == Mode::unbiased_kd) {
      state.cached_full_teacher_grad = obj.full_grad(cfg.teacher);
      ++result.full_teacher_gradients;
    }
    if (schedule.cache_teacher) residuals = std::make_unique<TeacherResiduals>(obj, cfg.teacher);
  };

  auto direction = [&](const ParamVector& x, const Minibatch& batch, ParamVector& out) {
    if (!distills) {
      sgd_direction(obj, x, batch, out);
      return;
    }
    if (residuals) {
      distillation_direction(obj, x, *residuals, cfg.lambda, batch, out);
    } else {
      kd_direction(obj, x, cfg, batch, out);
    }
    if (schedule.mode == Mode::unbiased_kd && cfg.lambda != 0.0) {
      axpy_inplace(cfg.lambda, *state.cached_full_teacher_grad, out);
    }
  };

  EpochAccumulator acc;
  std::size_t epoch = 0;
  auto close_epoch = [&]() {
    TraceRecord rec;
    rec.epoch = epoch;
    rec.running_loss = acc.loss_sum / static_cast<double>(acc.steps);
    rec.full_loss = obj.full_loss(state.x);
    rec.full_grad_norm = norm(obj.full_grad(state.x));
    rec.lambda = cfg.lambda;
    rec.grad_variance = mean_of(acc.var_sum, acc.var_count);
    rec.grad_variance_vs_full = mean_of(acc.var_full_sum, acc.var_count);
    rec.cosine = mean_of(acc.cos_sum, acc.cos_count);
    rec.l2 = mean_of(acc.l2_sum, acc.l2_count);
    rec.snr = mean_of(acc.snr_sum, acc.snr_count);
    if (options.test) rec.test_accuracy = options.test->accuracy(state.x);
    result.trace.push_back(rec);
    acc = EpochAccumulator{};
    ++epoch;
    if (!std::isfinite(rec.full_loss) || rec.full_loss > kDivergenceLoss) {
      throw Diverged("full loss " + std::to_string(rec.full_loss) + " after epoch " +
                         std::to_string(rec.epoch),
                     state);
    }
  };

  const double b = static_cast<double>(schedule.batch_size);
  ParamVector dir;
  try {
    for (std::size_t t = 0; t < schedule.total_steps; ++t) {
      const bool phase_start =
          t == 0 || (schedule.phase_length != 0 && t % schedule.phase_length == 0);
      if (phase_start) {
        if (t != 0) ++state.phase;
        start_phase();
      }
      const Minibatch batch = sampler.next(state.rng);
      const double batch_loss = obj.minibatch_loss(state.x, batch);
      if (!std::isfinite(batch_loss) || batch_loss > kDivergenceLoss) {
        throw Diverged("mini-batch loss " + std::to_string(batch_loss) + " at step " +
                           std::to_string(t),
                       state);
      }
      acc.loss_sum += batch_loss;

      if (schedule.variance_probe) {
        const ParamVector x_now = state.x;
        const ParamVector center = obj.full_grad(x_now);
        const DirectionFn fn = [&](const Minibatch& mb, ParamVector& out) {
          direction(x_now, mb, out);
        };
        const VarianceEstimate v =
            grad_variance_probe(obj, fn, *schedule.variance_probe, &probe_rng, &center);
        // The exact probe enumerates single samples. Only the spread shrinks
        // with the batch; the squared bias ||E g - grad f||^2 does not.
        if (schedule.variance_probe->kind == VarianceProbe::Kind::exact_enumeration) {
          const double bias_sq = std::max(0.0, *v.around_center - v.around_mean);
          acc.var_sum += v.around_mean / b;
          acc.var_full_sum += bias_sq + v.around_mean / b;
        } else {
          acc.var_sum += v.around_mean;
          acc.var_full_sum += *v.around_center;
        }
        ++acc.var_count;
      }
      if (schedule.track_gap && distills) {
        const GapStats gap = approx_gap_stats(obj, state.x, cfg.teacher, cfg.lambda, batch);
        acc.l2_sum += gap.l2;
        ++acc.l2_count;
        if (gap.cosine) {
          acc.cos_sum += *gap.cosine;
          ++acc.cos_count;
        }
        if (gap.snr) {
          acc.snr_sum += *gap.snr;
          ++acc.snr_count;
        }
      }

      direction(state.x, batch, dir);
      if (schedule.weight_decay > 0.0) axpy_inplace(schedule.weight_decay, state.x, dir);
      if (schedule.mode == Mode::compressed_kd) {
        ParamVector next = state.x;
        axpy_inplace(-schedule.gamma, dir, next);
        schedule.compressor.compress_inplace(next, state.rng);
        require_finite_update(next, state, "run");
        state.x = std::move(next);
        ++state.step;
      } else {
        apply_direction(state, schedule.gamma, dir, "run");
      }
      ++acc.steps;
      ++result.steps_completed;
      if (options.on_step) options.on_step(state);
      if (acc.steps == per_epoch) close_epoch();
    }
    if (acc.steps > 0) close_epoch();
  } catch (const Diverged& e) {
    result.diverged = true;
    result.divergence_reason = e.what();
    result.final_x = e.last_finite().x;
    return result;
  }
  result.final_x = state.x;
  return result;
}

std::vector<EpochStats> to_epoch_stats(const RunResult& result, const std::string& run_id,
                                       std::uint64_t seed, Mode mode, double lambda,
                                       double gamma) {
  std::vector<EpochStats> rows;
  rows.reserve(result.trace.size());
  for (const TraceRecord& r : result.trace) {
    EpochStats s;
    s.epoch = r.epoch;
    s.run_id = run_id;
    s.seed = seed;
    s.mode = to_string(mode);
    s.lambda = mode == Mode::sgd ? lambda : r.lambda;
    s.gamma = gamma;
    s.loss_running = r.running_loss;
    s.loss_full = r.full_loss;
    s.grad_variance = r.grad_variance_vs_full;
    s.cosine = r.cosine;
    s.l2 = r.l2;
    s.snr = r.snr;
    s.test_acc = r.test_accuracy;
    rows.push_back(std::move(s));
  }
  return rows;
}

}  // namespace kdvr
