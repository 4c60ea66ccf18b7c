#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "kdvr/rng.hpp"
#include "kdvr/vector.hpp"

namespace kdvr {

/// Randomized compression operator C applied to model iterates.
///
/// The unbiased kinds satisfy E[C(x)] = x and E||C(x) - x||^2 <= omega ||x||^2:
///   identity              omega = 0
///   rand_k(k)             keeps a uniform k-subset scaled by d/k; omega = d/k - 1
///   stochastic_quantize   per-entry randomized rounding onto
///                         sign(x_i) * ||x||_inf * {0, 1/L, ..., 1}; with
///                         p_i(1-p_i) <= min(1/4, L|x_i|/||x||_inf) this gives
///                         omega = min(d / (4 L^2), sqrt(d) / L)
/// fixed_mask keeps a mask chosen once and never rescales; it is biased and
/// reported as such.
class Compressor {
 public:
  enum class Kind { identity, rand_k, fixed_mask, stochastic_quantize };

  static Compressor identity();
  static Compressor rand_k(std::size_t k);
  static Compressor fixed_mask(std::vector<std::uint8_t> keep);
  /// Mask over `dim` coordinates zeroing round(sparsity * dim) of them.
  static Compressor random_fixed_mask(std::size_t dim, double sparsity, Rng& rng);
  static Compressor stochastic_quantize(unsigned levels);

  Kind kind() const noexcept { return kind_; }
  bool biased() const noexcept { return kind_ == Kind::fixed_mask; }
  std::size_t k() const noexcept { return k_; }
  unsigned levels() const noexcept { return levels_; }
  const std::vector<std::uint8_t>& mask() const noexcept { return mask_; }

  /// Declared variance parameter for inputs of length `dim`.
  double omega(std::size_t dim) const;

  ParamVector compress(const ParamVector& x, Rng& rng) const;
  void compress_inplace(ParamVector& x, Rng& rng) const;

  /// rand_k only: the uniformly drawn support of one application.
  std::vector<std::size_t> sample_support(std::size_t dim, Rng& rng) const;
  /// rand_k only: output for a given support (kept entries scaled by d/k).
  ParamVector apply_support(const ParamVector& x, std::span<const std::size_t> support) const;

  std::string describe() const;

 private:
  Kind kind_ = Kind::identity;
  std::size_t k_ = 0;
  unsigned levels_ = 0;
  std::vector<std::uint8_t> mask_;
};

std::string to_string(Compressor::Kind kind);

/// Empirical check of the unbiasedness/variance contract.
struct CompressionStats {
  std::string name;
  double declared_omega = 0.0;
  bool declared_biased = false;
  /// Per-coordinate mean of C(x) - x, for the first test point.
  std::vector<double> mean_error;
  /// Largest |mean error| / standard error over all points and coordinates
  /// (0 when every draw is exact).
  double max_mean_error_z = 0.0;
  /// Largest absolute mean error over all points and coordinates.
  double max_abs_mean_error = 0.0;
  /// max over points of E||C(x) - x||^2 / ||x||^2.
  double variance_ratio = 0.0;
  bool mean_test_passed = false;
  bool variance_test_passed = false;
  bool exhaustive = false;
};

/// Compression map under test; the member `Compressor` or a fault fixture.
using CompressFn = std::function<ParamVector(const ParamVector&, Rng&)>;

/// Monte-Carlo verification: mean test at 4 standard errors per coordinate,
/// variance test at declared omega times (1 + 4 / sqrt(trials)).
CompressionStats verify_compressor(const Compressor& c, std::span<const ParamVector> points,
                                   std::size_t trials, Rng& rng);
CompressionStats verify_compressor(const CompressFn& fn, const std::string& name,
                                   double declared_omega, bool declared_biased,
                                   std::span<const ParamVector> points, std::size_t trials,
                                   Rng& rng);

/// rand_k only: exact expectations over all C(d, k) supports (d <= 20).
CompressionStats verify_compressor_exhaustive(const Compressor& c,
                                              std::span<const ParamVector> points);

}  // namespace kdvr
