#include "kdvr/distillation.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kdvr/errors.hpp"

namespace kdvr {

namespace {

void require_unit_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw InvalidArgument("distillation weight " + std::to_string(lambda) + " outside [0,1]");
  }
}

void require_same_space(const Objective& obj, const ParamVector& x, const ParamVector& teacher) {
  obj.check_params(x);
  if (teacher.size() != x.size()) {
    throw InvalidArgument("teacher dimension " + std::to_string(teacher.size()) +
                          " != student dimension " + std::to_string(x.size()));
  }
}

void require_mlp(const Objective& obj, const char* op) {
  if (obj.kind() != ObjectiveKind::mlp_relu) {
    throw InvalidKind(std::string(op) + " is defined for mlp_relu only");
  }
}

}  // namespace

void KDConfig::validate(std::size_t dim) const {
  require_unit_lambda(lambda);
  if (!(gamma > 0.0)) throw InvalidArgument("step size must be positive");
  if (!(c > 0.0)) throw InvalidArgument("neighborhood constant c must be positive");
  if (teacher.size() != dim) {
    throw InvalidArgument("teacher dimension " + std::to_string(teacher.size()) + " != " +
                          std::to_string(dim));
  }
}

std::vector<double> soft_label(std::span<const double> b, std::span<const double> teacher_out,
                               double lambda) {
  require_unit_lambda(lambda);
  if (b.size() != teacher_out.size()) throw InvalidArgument("soft_label: shape mismatch");
  std::vector<double> s(b.size());
  for (std::size_t k = 0; k < b.size(); ++k) s[k] = (1.0 - lambda) * b[k] + lambda * teacher_out[k];
  return s;
}

double distillation_loss(const Objective& obj, const ParamVector& x, const ParamVector& teacher,
                         double lambda, std::size_t n) {
  require_same_space(obj, x, teacher);
  const auto teacher_out = obj.predict(teacher, n);
  return (1.0 - lambda) * obj.loss(x, n) + lambda * obj.loss_against(x, n, teacher_out);
}

ParamVector distillation_grad(const Objective& obj, const ParamVector& x, const KDConfig& cfg,
                              std::size_t n) {
  if (obj.kind() == ObjectiveKind::mlp_relu) {
    throw InvalidKind("distillation_grad: closed form not exact for mlp_relu; use true_kd_grad");
  }
  require_same_space(obj, x, cfg.teacher);
  return axpy(-cfg.lambda, obj.grad(cfg.teacher, n), obj.grad(x, n));
}

ParamVector true_kd_grad(const Objective& obj, const ParamVector& x, const KDConfig& cfg,
                         std::size_t n) {
  require_mlp(obj, "true_kd_grad");
  require_same_space(obj, x, cfg.teacher);
  obj.check_index(n);
  ParamVector g(obj.dim());
  distillation_direction(obj, x, cfg.teacher, cfg.lambda, Minibatch::single(n), g);
  return g;
}

ParamVector approx_kd_grad(const Objective& obj, const ParamVector& x, const KDConfig& cfg,
                           std::size_t n) {
  require_mlp(obj, "approx_kd_grad");
  require_same_space(obj, x, cfg.teacher);
  return axpy(-cfg.lambda, obj.grad(cfg.teacher, n), obj.grad(x, n));
}

void distillation_direction(const Objective& obj, const ParamVector& x, const ParamVector& teacher,
                            double lambda, const Minibatch& batch, ParamVector& out) {
  require_same_space(obj, x, teacher);
  if (batch.indices.empty()) throw InvalidArgument("distillation_direction: empty batch");
  out = ParamVector(obj.dim());
  const std::size_t K = obj.output_dim();
  std::vector<double> zx(K), zt(K), rx(K), rt(K);
  const double w = batch.weight();
  // s_n = (1-l) b_n + l link(psi_n(theta)) gives the logit residual
  // r_x - l r_theta; pulling it back through the student's Jacobian is the
  // exact gradient of the distillation loss for every kind.
  for (std::size_t n : batch.indices) {
    obj.check_index(n);
    obj.forward(x.span(), n, zx);
    obj.output_residual(zx, n, rx);
    if (lambda != 0.0) {
      obj.forward(teacher.span(), n, zt);
      obj.output_residual(zt, n, rt);
      for (std::size_t k = 0; k < K; ++k) rx[k] -= lambda * rt[k];
    }
    obj.pullback(x.span(), n, rx, w, out.span());
  }
}

TeacherResiduals::TeacherResiduals(const Objective& obj, const ParamVector& teacher)
    : width_(obj.output_dim()), values_(obj.num_samples() * obj.output_dim()) {
  obj.check_params(teacher);
  std::vector<double> z(width_);
  for (std::size_t n = 0; n < obj.num_samples(); ++n) {
    obj.forward(teacher.span(), n, z);
    obj.output_residual(z, n, std::span<double>(values_.data() + n * width_, width_));
  }
}

void distillation_direction(const Objective& obj, const ParamVector& x,
                            const TeacherResiduals& teacher, double lambda, const Minibatch& batch,
                            ParamVector& out) {
  obj.check_params(x);
  if (batch.indices.empty()) throw InvalidArgument("distillation_direction: empty batch");
  out = ParamVector(obj.dim());
  const std::size_t K = obj.output_dim();
  std::vector<double> zx(K), rx(K);
  const double w = batch.weight();
  for (std::size_t n : batch.indices) {
    obj.check_index(n);
    obj.forward(x.span(), n, zx);
    obj.output_residual(zx, n, rx);
    if (lambda != 0.0) {
      const auto rt = teacher.at(n);
      for (std::size_t k = 0; k < K; ++k) rx[k] -= lambda * rt[k];
    }
    obj.pullback(x.span(), n, rx, w, out.span());
  }
}

void approx_kd_direction(const Objective& obj, const ParamVector& x, const ParamVector& teacher,
                         double lambda, const Minibatch& batch, ParamVector& out) {
  require_same_space(obj, x, teacher);
  if (batch.indices.empty()) throw InvalidArgument("approx_kd_direction: empty batch");
  out = ParamVector(obj.dim());
  const std::size_t K = obj.output_dim();
  std::vector<double> z(K), r(K);
  const double w = batch.weight();
  for (std::size_t n : batch.indices) {
    obj.check_index(n);
    obj.forward(x.span(), n, z);
    obj.output_residual(z, n, r);
    obj.pullback(x.span(), n, r, w, out.span());
    if (lambda != 0.0) {
      obj.forward(teacher.span(), n, z);
      obj.output_residual(z, n, r);
      obj.pullback(teacher.span(), n, r, -lambda * w, out.span());
    }
  }
}

void TeacherStats::check() const {
  constexpr double slack = 1e-9;
  if (full_grad_norm_sq < 0.0 || sigma_star_sq < 0.0) {
    throw InvalidArgument("teacher stats: negative squared norm");
  }
  if (second_moment < full_grad_norm_sq * (1.0 - slack)) {
    throw InvalidArgument("teacher stats: second moment below squared mean");
  }
  if (cross_moment * cross_moment > second_moment * sigma_star_sq * (1.0 + slack)) {
    throw InvalidArgument("teacher stats: cross moment violates Cauchy-Schwarz");
  }
}

TeacherStats teacher_stats(const Objective& obj, const ParamVector& x_star,
                           const ParamVector& teacher) {
  require_same_space(obj, x_star, teacher);
  const std::size_t N = obj.num_samples();
  TeacherStats s;
  ParamVector mean_teacher(obj.dim());
  for (std::size_t n = 0; n < N; ++n) {
    const ParamVector g_star = obj.grad(x_star, n);
    const ParamVector g_teacher = obj.grad(teacher, n);
    s.sigma_star_sq += norm_sq(g_star);
    s.second_moment += norm_sq(g_teacher);
    s.cross_moment += dot(g_star, g_teacher);
    axpy_inplace(1.0, g_teacher, mean_teacher);
  }
  const double inv = 1.0 / static_cast<double>(N);
  scale_inplace(inv, mean_teacher);
  s.sigma_star_sq *= inv;
  s.second_moment *= inv;
  s.cross_moment *= inv;
  s.full_grad_norm_sq = norm_sq(mean_teacher);
  return s;
}

TeacherStats teacher_stats_from_samples(std::span<const ParamVector> grads_at_optimum,
                                        std::span<const ParamVector> grads_at_teacher) {
  if (grads_at_optimum.size() != grads_at_teacher.size() || grads_at_optimum.empty()) {
    throw InvalidArgument("teacher_stats_from_samples: need equal, nonempty sample lists");
  }
  const std::size_t N = grads_at_optimum.size();
  TeacherStats s;
  ParamVector mean_teacher(grads_at_teacher[0].size());
  for (std::size_t n = 0; n < N; ++n) {
    s.sigma_star_sq += norm_sq(grads_at_optimum[n]);
    s.second_moment += norm_sq(grads_at_teacher[n]);
    s.cross_moment += dot(grads_at_optimum[n], grads_at_teacher[n]);
    axpy_inplace(1.0, grads_at_teacher[n], mean_teacher);
  }
  const double inv = 1.0 / static_cast<double>(N);
  scale_inplace(inv, mean_teacher);
  s.sigma_star_sq *= inv;
  s.second_moment *= inv;
  s.cross_moment *= inv;
  s.full_grad_norm_sq = norm_sq(mean_teacher);
  return s;
}

double beta_snr(const TeacherStats& stats) {
  if (!(stats.second_moment > 0.0)) throw UndefinedRatio("beta: zero second moment at teacher");
  return stats.full_grad_norm_sq / stats.second_moment;
}

double beta_snr(const Objective& obj, const ParamVector& teacher) {
  return beta_snr(teacher_stats(obj, teacher, teacher));
}

double rho_correlation(const TeacherStats& stats) {
  const double var_teacher = stats.second_moment - stats.full_grad_norm_sq;
  if (!(stats.sigma_star_sq > 0.0)) throw UndefinedRatio("rho: zero gradient variance at optimum");
  if (!(var_teacher > 1e-14 * stats.second_moment)) {
    throw UndefinedRatio("rho: zero gradient variance at teacher");
  }
  // sqrt(a*b) rather than sqrt(a)*sqrt(b): exact 1 when theta == x*.
  return stats.cross_moment / std::sqrt(stats.sigma_star_sq * var_teacher);
}

double rho_correlation(const Objective& obj, const ParamVector& x_star, const ParamVector& teacher) {
  return rho_correlation(teacher_stats(obj, x_star, teacher));
}

double neighborhood_N(double lambda, const KDConfig& cfg, const TeacherStats& stats) {
  const double noise = stats.sigma_star_sq - 2.0 * lambda * stats.cross_moment +
                       lambda * lambda * stats.second_moment;
  return lambda * lambda * stats.full_grad_norm_sq + cfg.c * cfg.gamma * noise;
}

double OptimalLambda::clamped() const { return std::clamp(value, 0.0, 1.0); }

OptimalLambda optimal_lambda(const KDConfig& cfg, const TeacherStats& stats) {
  const double denom = stats.second_moment + stats.full_grad_norm_sq / (cfg.c * cfg.gamma);
  if (!(denom > 0.0)) throw UndefinedRatio("optimal lambda: zero denominator");
  OptimalLambda out;
  out.value = stats.cross_moment / denom;
  out.outside_unit = out.value < 0.0 || out.value > 1.0;
  return out;
}

double reduction_ratio(const KDConfig& cfg, const TeacherStats& stats) {
  if (!(stats.sigma_star_sq > 0.0)) {
    throw UndefinedRatio("reduction ratio: sigma*^2 = 0, plain SGD is already noise-free");
  }
  const double beta = beta_snr(stats);
  const double rho = rho_correlation(stats);
  return 1.0 - rho * rho * (1.0 - beta) / (1.0 + beta / (cfg.c * cfg.gamma));
}

}  // namespace kdvr
