#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "kdvr/data_io.hpp"
#include "kdvr/experiments.hpp"
#include "kdvr/objective.hpp"
#include "kdvr/optimizers.hpp"

namespace kdvr::cli {

/// Exit statuses of the command-line tool.
enum ExitCode : int { kOk = 0, kPropertyFailure = 1, kConfigError = 2, kIoError = 3 };

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::linear_regression;
  bool bias = true;
  std::size_t hidden = 100;

  friend bool operator==(const ObjectiveSpec&, const ObjectiveSpec&) = default;
};

/// Either a literal step size or `scale / constant` with the constant taken
/// from the oracle ("L", "L_expected").
struct GammaSpec {
  double value = 0.0;
  double scale = 0.0;
  std::string inverse_of;

  friend bool operator==(const GammaSpec&, const GammaSpec&) = default;
};

/// Constant c of N(lambda): a literal, or one of "mu/4", "L", "2mu".
struct CSpec {
  double value = 1.0;
  std::string rule;

  friend bool operator==(const CSpec&, const CSpec&) = default;
};

struct CompressorSpec {
  std::string kind = "identity";  // identity | rand_k | fixed_mask | quantize
  std::size_t k = 0;
  double sparsity = 0.0;
  unsigned levels = 0;
  std::uint64_t mask_seed = 0;

  friend bool operator==(const CompressorSpec&, const CompressorSpec&) = default;
};

struct ScheduleSpec {
  Mode mode = Mode::sgd;
  /// Exactly one of epochs / total_steps is nonzero.
  std::size_t epochs = 0;
  std::size_t total_steps = 0;
  std::size_t batch_size = 1;
  GammaSpec gamma;
  /// 0 = single phase; with `phase_rule` "1/(gamma mu)" it is computed.
  std::size_t phase_length = 0;
  std::string phase_rule;
  Sampling sampling = Sampling::with_replacement;
  LambdaPolicy lambda_policy = LambdaPolicy::fixed;
  CSpec c;
  CompressorSpec compressor;
  std::string variance_probe = "none";  // none | exact | monte_carlo
  std::size_t probe_trials = 0;
  bool track_gap = false;
  bool cache_teacher = false;
  double weight_decay = 0.0;

  friend bool operator==(const ScheduleSpec&, const ScheduleSpec&) = default;
};

/// Where the teacher comes from.
///   none          plain SGD only
///   sgd           trained with the run's own schedule at lambda = 0
///   oracle        x* + alpha u with f(theta) - f* = quality (linear regression)
///   reference     exact x* or a converged full-batch reference solution
///   self_refresh  theta^m = x^{m tau}
///   path          parameter file, one real per line
struct TeacherSpec {
  std::string source = "none";
  double quality = 0.0;
  std::uint64_t seed = 0;
  std::size_t reference_iters = 20000;
  std::filesystem::path path;

  friend bool operator==(const TeacherSpec&, const TeacherSpec&) = default;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  /// Held-out fraction for test accuracy; 0 disables the split.
  double test_fraction = 0.0;
  std::uint64_t split_seed = 0;
  ObjectiveSpec objective;
  ScheduleSpec schedule;
  std::vector<double> lambda_grid{0.0, 0.01, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 0.9, 1.0};
  TeacherSpec teacher;
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path output_dir = "out";

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// JSON config. Throws ConfigError naming the offending field.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Every field written explicitly; parse(serialize(c)) == c.
std::string serialize_config(const ExperimentConfig& config);

struct CommandOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::filesystem::path> out;
  std::optional<std::vector<std::uint64_t>> seeds;
  std::size_t threads = 1;
  FaultInjection faults;
};

/// "1,2,3" -> {1, 2, 3}; ConfigError on malformed input.
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

/// Summary statistics of one lambda over all seeds. Losses are the running
/// mean mini-batch losses of each epoch.
struct SummaryRow {
  double lambda = 0.0;
  std::size_t runs = 0;
  std::size_t diverged = 0;
  double min_loss = 0.0;     // seed mean of each run's minimum epoch loss
  double last10_mean = 0.0;  // mean over seeds and the last 10 epochs
  double last10_std = 0.0;   // population standard deviation of the same values
  std::optional<double> final_test_acc;
};

std::string format_summary(const std::vector<SummaryRow>& rows);
/// argmin of min_loss, ties toward the smaller lambda; diverged-only rows skipped.
std::optional<double> best_lambda(const std::vector<SummaryRow>& rows);

// Subcommands. Each returns an ExitCode and writes progress to `log`.
int cmd_train(const CommandOptions& options, std::ostream& log);
int cmd_sweep_lambda(const CommandOptions& options, std::ostream& log);
int cmd_diagnose(const CommandOptions& options, std::ostream& log);
int cmd_verify(const CommandOptions& options, std::ostream& log);
int cmd_ingest(const CommandOptions& options, std::ostream& log);

/// Dispatches by name and maps exceptions to exit codes.
int run_command(const std::string& name, const CommandOptions& options, std::ostream& log,
                std::ostream& err);

}  // namespace kdvr::cli
