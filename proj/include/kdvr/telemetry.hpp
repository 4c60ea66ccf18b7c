#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kdvr/objective.hpp"
#include "kdvr/rng.hpp"
#include "kdvr/sampling.hpp"
#include "kdvr/vector.hpp"

namespace kdvr {

/// One row of a trace CSV.
struct EpochStats {
  std::size_t epoch = 0;
  std::string run_id;
  std::uint64_t seed = 0;
  std::string mode;
  double lambda = 0.0;
  double gamma = 0.0;
  double loss_running = 0.0;
  double loss_full = 0.0;
  std::optional<double> grad_variance;
  std::optional<double> cosine;
  std::optional<double> l2;
  std::optional<double> snr;
  std::optional<double> test_acc;

  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

inline constexpr const char* kTraceHeader =
    "epoch,run_id,seed,mode,lambda,gamma,loss_running,loss_full,grad_variance,cosine,l2,snr,test_acc";

/// Header line plus one line per record; reals with 17 significant digits,
/// absent optionals as empty fields.
std::string format_trace(std::span<const EpochStats> records);
/// Throws IoError when the file cannot be written.
void write_trace(std::span<const EpochStats> records, const std::filesystem::path& path);
/// Inverse of write_trace (FormatError on malformed input).
std::vector<EpochStats> read_trace(const std::filesystem::path& path);
std::vector<EpochStats> parse_trace(const std::string& text);

/// Writes the stochastic update direction of a method at a fixed iterate for
/// the given batch.
using DirectionFn = std::function<void(const Minibatch&, ParamVector&)>;

struct VarianceProbe {
  enum class Kind { exact_enumeration, monte_carlo };
  Kind kind = Kind::exact_enumeration;
  std::size_t trials = 0;      // monte_carlo only
  std::size_t batch_size = 1;  // monte_carlo only

  static VarianceProbe exact() { return {}; }
  static VarianceProbe monte_carlo(std::size_t trials, std::size_t batch_size = 1) {
    return {Kind::monte_carlo, trials, batch_size};
  }
};

struct VarianceEstimate {
  /// E||g - E g||^2 (exact) or the unbiased sample variance (Monte-Carlo).
  double around_mean = 0.0;
  /// E||g - center||^2, when a center (typically grad f(x)) is supplied.
  std::optional<double> around_center;
};

/// Variance of a method's direction. Exact mode enumerates the N single-
/// sample batches; Monte-Carlo draws `trials` batches with replacement from
/// `rng` (trials >= 2).
VarianceEstimate grad_variance_probe(const Objective& obj, const DirectionFn& direction,
                                     const VarianceProbe& probe, Rng* rng = nullptr,
                                     const ParamVector* center = nullptr);

/// Agreement between the backprop distillation gradient and the closed-form
/// identity on a batch of an MLP: cosine, l2 = ||true - approx|| and
/// snr = l2 / ||true||. Cosine and snr are absent when ||true|| = 0.
struct GapStats {
  std::optional<double> cosine;
  double l2 = 0.0;
  std::optional<double> snr;
};

GapStats approx_gap_stats(const Objective& mlp, const ParamVector& x, const ParamVector& teacher,
                          double lambda, const Minibatch& batch);

}  // namespace kdvr
