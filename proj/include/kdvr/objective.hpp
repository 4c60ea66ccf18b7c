#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kdvr/dataset.hpp"
#include "kdvr/rng.hpp"
#include "kdvr/sampling.hpp"
#include "kdvr/vector.hpp"

namespace kdvr {

enum class ObjectiveKind { linear_regression, binary_logistic, softmax_linear, mlp_relu };

std::string to_string(ObjectiveKind kind);
ObjectiveKind objective_kind_from_string(const std::string& name);

/// Finite-sum loss f(x) = (1/N) sum_n l(phi_x(a_n), b_n) with per-sample
/// oracles.
///
/// Linear kinds operate on lifted inputs [a 1] when `bias` is set. Parameter
/// layouts:
///   linear_regression, binary_logistic: x in R^{p'}, p' = p (+1 with bias)
///   softmax_linear: K columns of length p', column k at [k*p', (k+1)*p')
///   mlp_relu: [W1 (H x p, row-major) | b1 (H) | W2 (K x H, row-major) | b2 (K)]
///
/// Losses: squared error for regression; cross-entropy otherwise (against
/// one-hot b_n for class targets, against b_n in [0,1] for binary).
///
/// Every kind factors as f_n(x) = phi_n(psi_n(x)) where psi_n gives the
/// pre-link outputs ("logits"). `forward`, `output_residual` and `pullback`
/// expose that factorization: pullback multiplies by the transposed
/// Jacobian of psi_n at x. For the linear kinds the Jacobian does not depend
/// on x.
class Objective {
 public:
  static Objective linear_regression(Dataset data, bool bias = true);
  static Objective binary_logistic(Dataset data, bool bias = true);
  static Objective softmax_linear(Dataset data, bool bias = true);
  static Objective mlp_relu(Dataset data, std::size_t hidden = 100);

  ObjectiveKind kind() const noexcept { return kind_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t num_samples() const noexcept { return data_.size(); }
  std::size_t output_dim() const noexcept { return outputs_; }
  std::size_t hidden_width() const noexcept { return hidden_; }
  bool has_bias() const noexcept { return bias_; }
  const Dataset& dataset() const noexcept { return data_; }
  bool is_classification() const noexcept { return kind_ != ObjectiveKind::linear_regression; }

  /// Input row as seen by the model (lifted for linear kinds with bias).
  std::span<const double> input(std::size_t n) const;

  // Per-sample oracles.
  double loss(const ParamVector& x, std::size_t n) const;
  ParamVector grad(const ParamVector& x, std::size_t n) const;
  /// Model output: real value, probability, or point of the K-simplex.
  std::vector<double> predict(const ParamVector& x, std::size_t n) const;
  /// b_n in output space (one-hot for class targets).
  std::vector<double> target(std::size_t n) const;
  /// l(phi_x(a_n), t) for an arbitrary target t in output space.
  double loss_against(const ParamVector& x, std::size_t n, std::span<const double> t) const;

  // Logit-level view.
  void forward(std::span<const double> x, std::size_t n, std::span<double> logits) const;
  /// Output of the link (identity, sigmoid, softmax) applied to logits.
  void link(std::span<const double> logits, std::span<double> out) const;
  /// d l(link(z), t) / dz for target t in output space.
  void residual_against(std::span<const double> logits, std::span<const double> t,
                        std::span<double> r) const;
  /// d l(link(z), b_n) / dz.
  void output_residual(std::span<const double> logits, std::size_t n, std::span<double> r) const;
  /// out += scale * J psi_n(x)^T r
  void pullback(std::span<const double> x, std::size_t n, std::span<const double> r, double scale,
                std::span<double> out) const;

  /// out += scale * grad f_n(x)
  void accumulate_grad(const ParamVector& x, std::size_t n, double scale, ParamVector& out) const;

  // Aggregates (means over samples, accumulated in index order).
  ParamVector minibatch_grad(const ParamVector& x, const Minibatch& batch) const;
  double minibatch_loss(const ParamVector& x, const Minibatch& batch) const;
  ParamVector full_grad(const ParamVector& x) const;
  double full_loss(const ParamVector& x) const;
  /// Fraction of samples whose predicted class matches; classification only.
  double accuracy(const ParamVector& x) const;

  /// Zero vector for the linear kinds; He-style random weights for the MLP.
  ParamVector initial_point(Rng& rng) const;

  void check_params(const ParamVector& x) const;
  void check_index(std::size_t n) const;

 private:
  Objective(ObjectiveKind kind, Dataset data, bool bias, std::size_t hidden);

  void mlp_hidden(std::span<const double> x, std::size_t n, std::span<double> pre) const;

  ObjectiveKind kind_;
  Dataset data_;
  bool bias_;
  std::size_t hidden_ = 0;
  std::size_t in_ = 0;       // model input width
  std::size_t outputs_ = 1;  // logits per sample
  std::size_t dim_ = 0;
  Matrix inputs_;  // lifted copy of the features
};

/// Same data, same kind, different samples (e.g. a held-out split). Used to
/// report test accuracy with the training model's parameters.
Objective with_dataset(const Objective& like, Dataset data);

}  // namespace kdvr
