#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kdvr/objective.hpp"
#include "kdvr/sampling.hpp"
#include "kdvr/vector.hpp"

namespace kdvr {

/// Self-distillation setting: weight lambda, step size gamma, teacher
/// parameters (same space as the student), and the constant c that scales
/// the noise term of the neighborhood N(lambda).
///
/// Typical c: mu/4 (strongly quasi-convex analysis), L (PL analysis),
/// 2 mu (compressed iterates).
struct KDConfig {
  double lambda = 0.0;
  double gamma = 0.0;
  ParamVector teacher;
  double c = 1.0;

  /// Throws InvalidArgument unless 0 <= lambda <= 1, gamma > 0, c > 0 and
  /// the teacher has `dim` entries.
  void validate(std::size_t dim) const;
};

/// s = (1 - lambda) b + lambda t
std::vector<double> soft_label(std::span<const double> b, std::span<const double> teacher_out,
                               double lambda);

/// The composite per-sample distillation loss
///   (1 - lambda) l(phi_x(a_n), b_n) + lambda l(phi_x(a_n), phi_theta(a_n)).
double distillation_loss(const Objective& obj, const ParamVector& x, const ParamVector& teacher,
                         double lambda, std::size_t n);

/// grad f_n(x) - lambda grad f_n(theta). Exact gradient of
/// `distillation_loss` for the linear kinds; InvalidKind for the MLP.
ParamVector distillation_grad(const Objective& obj, const ParamVector& x, const KDConfig& cfg,
                              std::size_t n);

/// Gradient of `distillation_loss` for the MLP by backprop through the
/// student's logits: J psi_n(x) (softmax(psi_n(x)) - s_n).
ParamVector true_kd_grad(const Objective& obj, const ParamVector& x, const KDConfig& cfg,
                         std::size_t n);
/// grad f_n(x) - lambda grad f_n(theta) on the MLP (the closed-form identity
/// applied outside its exact range).
ParamVector approx_kd_grad(const Objective& obj, const ParamVector& x, const KDConfig& cfg,
                           std::size_t n);

/// Batch means of the gradients above. `out` is overwritten.
/// `distillation_direction` uses the closed form on the linear kinds and the
/// backprop form on the MLP, i.e. the gradient of the distillation loss.
void distillation_direction(const Objective& obj, const ParamVector& x, const ParamVector& teacher,
                            double lambda, const Minibatch& batch, ParamVector& out);
/// Teacher logit residuals d l(link(psi_n(theta)), b_n) / dz for every
/// sample, so repeated distillation steps against a fixed teacher skip the
/// teacher forward pass.
class TeacherResiduals {
 public:
  TeacherResiduals(const Objective& obj, const ParamVector& teacher);
  std::span<const double> at(std::size_t n) const {
    return {values_.data() + n * width_, width_};
  }

 private:
  std::size_t width_;
  std::vector<double> values_;
};

/// Same as `distillation_direction` with cached teacher residuals; results
/// are bitwise identical.
void distillation_direction(const Objective& obj, const ParamVector& x,
                            const TeacherResiduals& teacher, double lambda, const Minibatch& batch,
                            ParamVector& out);

void approx_kd_direction(const Objective& obj, const ParamVector& x, const ParamVector& teacher,
                         double lambda, const Minibatch& batch, ParamVector& out);

/// Moments of stochastic gradients at the teacher and at the optimum, with
/// the expectation taken exactly over single-sample batches (xi uniform on
/// the N samples).
struct TeacherStats {
  double full_grad_norm_sq = 0.0;  // G = ||grad f(theta)||^2
  double second_moment = 0.0;      // M = E ||grad f_xi(theta)||^2
  double cross_moment = 0.0;       // X = E <grad f_xi(x*), grad f_xi(theta)>
  double sigma_star_sq = 0.0;      // E ||grad f_xi(x*)||^2

  /// Throws InvalidArgument when M >= G >= 0, sigma*^2 >= 0 or
  /// Cauchy-Schwarz fail (with relative slack 1e-9).
  void check() const;
};

TeacherStats teacher_stats(const Objective& obj, const ParamVector& x_star,
                           const ParamVector& teacher);
/// Stats from explicit per-sample gradient lists (same length, uniform
/// weights).
TeacherStats teacher_stats_from_samples(std::span<const ParamVector> grads_at_optimum,
                                        std::span<const ParamVector> grads_at_teacher);

/// beta(theta) = ||grad f(theta)||^2 / E||grad f_xi(theta)||^2.
double beta_snr(const Objective& obj, const ParamVector& teacher);
double beta_snr(const TeacherStats& stats);

/// rho(x*, theta) = X / (sqrt(sigma*^2) sqrt(M - G)), using grad f(x*) = 0.
double rho_correlation(const Objective& obj, const ParamVector& x_star, const ParamVector& teacher);
double rho_correlation(const TeacherStats& stats);

/// N(lambda) = lambda^2 G + c gamma (sigma*^2 - 2 lambda X + lambda^2 M).
double neighborhood_N(double lambda, const KDConfig& cfg, const TeacherStats& stats);

struct OptimalLambda {
  double value = 0.0;          // unconstrained minimizer of N
  bool outside_unit = false;   // clamping applies if used as a weight
  double clamped() const;
};

/// lambda* = X / (M + G / (c gamma)).
OptimalLambda optimal_lambda(const KDConfig& cfg, const TeacherStats& stats);

/// N(lambda*) / N(0) = 1 - rho^2 (1 - beta) / (1 + beta / (c gamma)).
double reduction_ratio(const KDConfig& cfg, const TeacherStats& stats);

}  // namespace kdvr
