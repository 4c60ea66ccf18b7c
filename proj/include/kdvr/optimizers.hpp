#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "kdvr/compression.hpp"
#include "kdvr/distillation.hpp"
#include "kdvr/objective.hpp"
#include "kdvr/rng.hpp"
#include "kdvr/sampling.hpp"
#include "kdvr/telemetry.hpp"
#include "kdvr/vector.hpp"

namespace kdvr {

enum class Mode { sgd, kd, unbiased_kd, compressed_kd };

std::string to_string(Mode mode);
Mode mode_from_string(const std::string& name);

/// Iterate of one trajectory. `rng` drives batch sampling and compression.
struct TrainerState {
  ParamVector x;
  std::uint64_t step = 0;
  Rng rng;
  /// grad f(theta) for the bias-corrected update.
  std::optional<ParamVector> cached_full_teacher_grad;
  std::size_t phase = 0;
};

/// A step produced a non-finite iterate (or the loss left [0, 1e12]).
class Diverged : public std::runtime_error {
 public:
  Diverged(const std::string& what, TrainerState last_finite)
      : std::runtime_error(what), last_finite_(std::move(last_finite)) {}
  const TrainerState& last_finite() const noexcept { return last_finite_; }

 private:
  TrainerState last_finite_;
};

// Update directions g(x; batch). `out` is overwritten.
void sgd_direction(const Objective& obj, const ParamVector& x, const Minibatch& batch,
                   ParamVector& out);
/// grad f_xi(x) - lambda grad f_xi(theta) on the linear kinds; the backprop
/// distillation gradient on the MLP.
void kd_direction(const Objective& obj, const ParamVector& x, const KDConfig& cfg,
                  const Minibatch& batch, ParamVector& out);
/// kd direction + lambda grad f(theta).
void unbiased_kd_direction(const Objective& obj, const ParamVector& x, const KDConfig& cfg,
                           const ParamVector& full_teacher_grad, const Minibatch& batch,
                           ParamVector& out);

// Single steps, in place. Both gradient evaluations of a distillation step
// use the same batch.
void sgd_step(const Objective& obj, TrainerState& state, double gamma, const Minibatch& batch);
void kd_step(const Objective& obj, TrainerState& state, const KDConfig& cfg,
             const Minibatch& batch);
/// Requires state.cached_full_teacher_grad (PreconditionError otherwise).
void unbiased_kd_step(const Objective& obj, TrainerState& state, const KDConfig& cfg,
                      const Minibatch& batch);
/// x <- C(x - gamma * kd direction); compression draws from state.rng.
void compressed_kd_step(const Objective& obj, TrainerState& state, const KDConfig& cfg,
                        const Compressor& compressor, const Minibatch& batch);

enum class LambdaPolicy {
  fixed,
  /// clamp(lambda*) recomputed at every phase start from the current
  /// teacher and a reference optimum.
  optimal_per_phase,
};

enum class TeacherKind { none, fixed, self_refresh };

struct TeacherSource {
  TeacherKind kind = TeacherKind::none;
  ParamVector params;

  static TeacherSource none() { return {}; }
  static TeacherSource fixed(ParamVector theta) { return {TeacherKind::fixed, std::move(theta)}; }
  /// theta^m = x^{m tau} at the start of every phase.
  static TeacherSource self_refresh() { return {TeacherKind::self_refresh, {}}; }
};

struct RunSchedule {
  std::size_t total_steps = 0;
  /// tau; 0 means a single phase (the teacher is never refreshed).
  std::size_t phase_length = 0;
  std::size_t batch_size = 1;
  double gamma = 0.0;
  Mode mode = Mode::sgd;
  double lambda = 0.0;
  LambdaPolicy lambda_policy = LambdaPolicy::fixed;
  /// Constant c of N(lambda) used by optimal_per_phase.
  double c = 1.0;
  Sampling sampling = Sampling::with_replacement;
  /// 0 means ceil(N / batch_size).
  std::size_t steps_per_epoch = 0;
  Compressor compressor = Compressor::identity();
  /// Per-iteration variance of the update direction, averaged per epoch.
  std::optional<VarianceProbe> variance_probe;
  /// MLP only: per-iteration true-vs-closed-form gradient agreement.
  bool track_gap = false;
  /// Cache teacher logit residuals per sample instead of recomputing them.
  bool cache_teacher = false;
  /// Adds weight_decay * x to every update direction. Off by default.
  double weight_decay = 0.0;

  void validate() const;
};

/// Per-epoch summary of a trajectory.
struct TraceRecord {
  std::size_t epoch = 0;
  double running_loss = 0.0;  // mean mini-batch loss (true labels) over the epoch
  double full_loss = 0.0;     // f at the end of the epoch
  double full_grad_norm = 0.0;
  double lambda = 0.0;        // weight in effect at the end of the epoch
  /// Mean over the epoch's iterations of E||g - E g||^2 for the method's
  /// minibatch direction (exact probe: single-sample variance / batch size).
  std::optional<double> grad_variance;
  /// Same, centered at grad f(x^t) instead of the direction's own mean.
  /// This is the value written to the trace CSV.
  std::optional<double> grad_variance_vs_full;
  std::optional<double> cosine;
  std::optional<double> l2;
  std::optional<double> snr;
  std::optional<double> test_accuracy;
};

struct RunOptions {
  /// Held-out objective for per-epoch test accuracy.
  const Objective* test = nullptr;
  /// Needed by LambdaPolicy::optimal_per_phase.
  std::optional<ParamVector> reference_optimum;
  /// Called after every completed step.
  std::function<void(const TrainerState&)> on_step;
};

struct RunResult {
  std::vector<TraceRecord> trace;
  ParamVector final_x;
  std::size_t steps_completed = 0;
  bool diverged = false;
  std::string divergence_reason;
  /// Weight used in each phase, and lambda* before clamping when computed.
  std::vector<double> phase_lambdas;
  std::vector<double> phase_lambdas_unclamped;
  std::size_t full_teacher_gradients = 0;
};

/// Distillation via SGD: outer loop over phases of length tau (teacher and
/// weight chosen at the start of each), inner loop over steps. One record per
/// epoch; a final partial epoch gets its own record. Divergence stops the run
/// and is reported in the result together with the partial trace.
RunResult run(const Objective& obj, const RunSchedule& schedule, const ParamVector& init,
              const TeacherSource& teacher, std::uint64_t seed, const RunOptions& options = {});

/// Rows for write_trace.
std::vector<EpochStats> to_epoch_stats(const RunResult& result, const std::string& run_id,
                                       std::uint64_t seed, Mode mode, double lambda, double gamma);

}  // namespace kdvr
