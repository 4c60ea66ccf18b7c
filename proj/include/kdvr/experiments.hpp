#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kdvr/distillation.hpp"
#include "kdvr/objective.hpp"
#include "kdvr/vector.hpp"

namespace kdvr {

/// One measured property: what was checked, its tolerance, the observed value.
struct Check {
  std::string property;
  std::string tolerance;
  double observed = 0.0;
  bool passed = false;
};

/// Outcome of one experiment. `traces` holds the trace CSV text of every run
/// made, in run order, for byte-level replay comparisons.
struct Report {
  std::string id;
  std::string title;
  std::vector<Check> checks;
  std::vector<std::string> notes;
  std::vector<std::string> traces;

  bool passed() const;
  void add(std::string property, std::string tolerance, double observed, bool passed);
};

/// Deliberate breakage used to show that the suite detects it.
struct FaultInjection {
  /// distillation gradient computed as grad f_n(x) + lambda grad f_n(theta)
  bool flip_distillation_sign = false;
  /// rand_k scales kept entries by d / (k + 1) instead of d / k
  bool rand_k_bad_scale = false;
};

/// Central differences with step 1e-6 (1 + |x_i|).
ParamVector finite_difference_grad(const std::function<double(const ParamVector&)>& f,
                                   const ParamVector& x);

/// Seeded solvable quadratic used by the convergence experiments:
/// N = 200 Gaussian samples, 19 features plus bias (d = 20), unit label noise.
Objective benchmark_quadratic(std::uint64_t data_seed = 7);

/// Welch's two-sample t-test (two-sided p-value).
struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
};
WelchResult welch_test(const std::vector<double>& a, const std::vector<double>& b);

// The experiments. Each returns a report whose checks carry the acceptance
// tolerances.

Report distillation_gradient_exactness(std::uint64_t seed, const FaultInjection& faults = {});
Report lemma_identities(std::uint64_t seed);
Report partial_variance_reduction(std::uint64_t seed);
Report phase_halving(std::uint64_t seed);
Report compression_suite(std::uint64_t seed, const FaultInjection& faults = {});

struct LinearProbeOptions {
  /// Directory holding the four MNIST IDX files; the synthetic stand-in is
  /// used when absent.
  std::optional<std::filesystem::path> mnist_dir;
  std::size_t epochs = 100;
  /// Iteration budget of the full-batch reference solver.
  std::size_t reference_iters = 20000;
};
Report linear_probe_sweep(std::uint64_t seed, const LinearProbeOptions& options = {});

Report variance_tracking(std::uint64_t seed);
Report mlp_gradient_gap(std::uint64_t seed);
Report pruning(std::uint64_t seed);

/// Reruns the trajectory-producing experiments with the same seed and
/// compares their trace CSVs byte for byte.
Report replay_determinism(std::uint64_t seed);

// Additional library properties run by `verify`.
Report gradient_checks(std::uint64_t seed);
Report unbiasedness(std::uint64_t seed);
Report oracle_certificates(std::uint64_t seed);

/// The property suite of `verify`, in order.
std::vector<Report> verify_suite(std::uint64_t seed, const FaultInjection& faults = {});

}  // namespace kdvr
