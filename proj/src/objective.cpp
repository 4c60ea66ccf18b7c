#include "kdvr/objective.hpp"

#include <algorithm>
#include <cmath>

#include "kdvr/errors.hpp"

namespace kdvr {

namespace {

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double log_sum_exp(std::span<const double> z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

void softmax(std::span<const double> z, std::span<double> out) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    out[k] = std::exp(z[k] - m);
    s += out[k];
  }
  for (std::size_t k = 0; k < z.size(); ++k) out[k] /= s;
}

void require_kind_target(const Dataset& data, TargetKind expected, const char* what) {
  if (data.target_kind != expected) throw InvalidArgument(std::string(what) + ": wrong target kind");
}

}  // namespace

std::string to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::linear_regression: return "linear_regression";
    case ObjectiveKind::binary_logistic: return "binary_logistic";
    case ObjectiveKind::softmax_linear: return "softmax_linear";
    case ObjectiveKind::mlp_relu: return "mlp_relu";
  }
  return "unknown";
}

ObjectiveKind objective_kind_from_string(const std::string& name) {
  if (name == "linear_regression") return ObjectiveKind::linear_regression;
  if (name == "binary_logistic") return ObjectiveKind::binary_logistic;
  if (name == "softmax_linear") return ObjectiveKind::softmax_linear;
  if (name == "mlp_relu") return ObjectiveKind::mlp_relu;
  throw InvalidArgument("unknown objective kind '" + name + "'");
}

Objective::Objective(ObjectiveKind kind, Dataset data, bool bias, std::size_t hidden)
    : kind_(kind), data_(std::move(data)), bias_(bias), hidden_(hidden) {
  data_.validate();
  const std::size_t p = data_.feature_dim();
  const std::size_t N = data_.size();
  if (kind_ == ObjectiveKind::mlp_relu) {
    bias_ = false;
    in_ = p;
    inputs_ = data_.features;
  } else {
    in_ = p + (bias_ ? 1 : 0);
    if (in_ == 0) throw InvalidArgument("objective: zero-dimensional input");
    inputs_ = Matrix(N, in_);
    for (std::size_t n = 0; n < N; ++n) {
      auto src = data_.features.row(n);
      auto dst = inputs_.row(n);
      std::copy(src.begin(), src.end(), dst.begin());
      if (bias_) dst[p] = 1.0;
    }
  }
  switch (kind_) {
    case ObjectiveKind::linear_regression:
      require_kind_target(data_, TargetKind::real, "linear_regression");
      outputs_ = 1;
      dim_ = in_;
      break;
    case ObjectiveKind::binary_logistic:
      require_kind_target(data_, TargetKind::probability, "binary_logistic");
      outputs_ = 1;
      dim_ = in_;
      break;
    case ObjectiveKind::softmax_linear:
      require_kind_target(data_, TargetKind::class_index, "softmax_linear");
      outputs_ = data_.num_classes;
      dim_ = in_ * outputs_;
      break;
    case ObjectiveKind::mlp_relu:
      require_kind_target(data_, TargetKind::class_index, "mlp_relu");
      if (hidden_ == 0 || p == 0) throw InvalidArgument("mlp_relu: zero-width layer");
      outputs_ = data_.num_classes;
      dim_ = hidden_ * p + hidden_ + outputs_ * hidden_ + outputs_;
      break;
  }
}

Objective Objective::linear_regression(Dataset data, bool bias) {
  return Objective(ObjectiveKind::linear_regression, std::move(data), bias, 0);
}
Objective Objective::binary_logistic(Dataset data, bool bias) {
  return Objective(ObjectiveKind::binary_logistic, std::move(data), bias, 0);
}
Objective Objective::softmax_linear(Dataset data, bool bias) {
  return Objective(ObjectiveKind::softmax_linear, std::move(data), bias, 0);
}
Objective Objective::mlp_relu(Dataset data, std::size_t hidden) {
  return Objective(ObjectiveKind::mlp_relu, std::move(data), false, hidden);
}

Objective with_dataset(const Objective& like, Dataset data) {
  switch (like.kind()) {
    case ObjectiveKind::linear_regression: return Objective::linear_regression(std::move(data), like.has_bias());
    case ObjectiveKind::binary_logistic: return Objective::binary_logistic(std::move(data), like.has_bias());
    case ObjectiveKind::softmax_linear: return Objective::softmax_linear(std::move(data), like.has_bias());
    case ObjectiveKind::mlp_relu: return Objective::mlp_relu(std::move(data), like.hidden_width());
  }
  throw InvalidKind("with_dataset: unknown kind");
}

void Objective::check_params(const ParamVector& x) const {
  if (x.size() != dim_) {
    throw InvalidArgument("parameter length " + std::to_string(x.size()) + " != objective dim " +
                          std::to_string(dim_));
  }
}

void Objective::check_index(std::size_t n) const {
  if (n >= data_.size()) {
    throw InvalidArgument("sample index " + std::to_string(n) + " out of range (N=" +
                          std::to_string(data_.size()) + ")");
  }
}

std::span<const double> Objective::input(std::size_t n) const { return inputs_.row(n); }

void Objective::mlp_hidden(std::span<const double> x, std::size_t n, std::span<double> pre) const {
  const auto a = inputs_.row(n);
  const double* w1 = x.data();
  const double* b1 = w1 + hidden_ * in_;
  for (std::size_t j = 0; j < hidden_; ++j) {
    double s = b1[j];
    const double* wj = w1 + j * in_;
    for (std::size_t i = 0; i < in_; ++i) s += wj[i] * a[i];
    pre[j] = s;
  }
}

void Objective::forward(std::span<const double> x, std::size_t n, std::span<double> logits) const {
  const auto a = inputs_.row(n);
  switch (kind_) {
    case ObjectiveKind::linear_regression:
    case ObjectiveKind::binary_logistic:
      logits[0] = dot(x, a);
      return;
    case ObjectiveKind::softmax_linear:
      for (std::size_t k = 0; k < outputs_; ++k) logits[k] = dot(x.subspan(k * in_, in_), a);
      return;
    case ObjectiveKind::mlp_relu: {
      std::vector<double> h(hidden_);
      mlp_hidden(x, n, h);
      for (double& v : h) v = std::max(v, 0.0);
      const double* w2 = x.data() + hidden_ * in_ + hidden_;
      const double* b2 = w2 + outputs_ * hidden_;
      for (std::size_t k = 0; k < outputs_; ++k) {
        double s = b2[k];
        const double* wk = w2 + k * hidden_;
        for (std::size_t j = 0; j < hidden_; ++j) s += wk[j] * h[j];
        logits[k] = s;
      }
      return;
    }
  }
}

void Objective::link(std::span<const double> logits, std::span<double> out) const {
  switch (kind_) {
    case ObjectiveKind::linear_regression: out[0] = logits[0]; return;
    case ObjectiveKind::binary_logistic: out[0] = sigmoid(logits[0]); return;
    case ObjectiveKind::softmax_linear:
    case ObjectiveKind::mlp_relu: softmax(logits, out); return;
  }
}

void Objective::residual_against(std::span<const double> logits, std::span<const double> t,
                                 std::span<double> r) const {
  switch (kind_) {
    case ObjectiveKind::linear_regression: r[0] = 2.0 * (logits[0] - t[0]); return;
    case ObjectiveKind::binary_logistic: r[0] = sigmoid(logits[0]) - t[0]; return;
    case ObjectiveKind::softmax_linear:
    case ObjectiveKind::mlp_relu: {
      // d/dz [ (sum t) lse(z) - t.z ] = (sum t) softmax(z) - t
      double mass = 0.0;
      for (double v : t) mass += v;
      softmax(logits, r);
      for (std::size_t k = 0; k < outputs_; ++k) r[k] = mass * r[k] - t[k];
      return;
    }
  }
}

void Objective::output_residual(std::span<const double> logits, std::size_t n,
                                std::span<double> r) const {
  const double b = data_.targets[n];
  switch (kind_) {
    case ObjectiveKind::linear_regression: r[0] = 2.0 * (logits[0] - b); return;
    case ObjectiveKind::binary_logistic: r[0] = sigmoid(logits[0]) - b; return;
    case ObjectiveKind::softmax_linear:
    case ObjectiveKind::mlp_relu:
      softmax(logits, r);
      r[static_cast<std::size_t>(b)] -= 1.0;
      return;
  }
}

void Objective::pullback(std::span<const double> x, std::size_t n, std::span<const double> r,
                         double scale, std::span<double> out) const {
  const auto a = inputs_.row(n);
  switch (kind_) {
    case ObjectiveKind::linear_regression:
    case ObjectiveKind::binary_logistic: {
      const double c = scale * r[0];
      for (std::size_t i = 0; i < in_; ++i) out[i] += c * a[i];
      return;
    }
    case ObjectiveKind::softmax_linear:
      for (std::size_t k = 0; k < outputs_; ++k) {
        const double c = scale * r[k];
        double* col = out.data() + k * in_;
        for (std::size_t i = 0; i < in_; ++i) col[i] += c * a[i];
      }
      return;
    case ObjectiveKind::mlp_relu: {
      std::vector<double> pre(hidden_);
      mlp_hidden(x, n, pre);
      const std::size_t w2_off = hidden_ * in_ + hidden_;
      const std::size_t b2_off = w2_off + outputs_ * hidden_;
      const double* w2 = x.data() + w2_off;
      std::vector<double> dh(hidden_, 0.0);
      for (std::size_t k = 0; k < outputs_; ++k) {
        const double c = scale * r[k];
        out[b2_off + k] += c;
        double* gk = out.data() + w2_off + k * hidden_;
        const double* wk = w2 + k * hidden_;
        for (std::size_t j = 0; j < hidden_; ++j) {
          // ReLU derivative at 0 is taken as 0.
          const double hj = pre[j] > 0.0 ? pre[j] : 0.0;
          gk[j] += c * hj;
          dh[j] += r[k] * wk[j];
        }
      }
      const std::size_t b1_off = hidden_ * in_;
      for (std::size_t j = 0; j < hidden_; ++j) {
        if (pre[j] <= 0.0) continue;
        const double c = scale * dh[j];
        out[b1_off + j] += c;
        double* gj = out.data() + j * in_;
        for (std::size_t i = 0; i < in_; ++i) gj[i] += c * a[i];
      }
      return;
    }
  }
}

double Objective::loss_against(const ParamVector& x, std::size_t n, std::span<const double> t) const {
  check_params(x);
  check_index(n);
  if (t.size() != outputs_) throw InvalidArgument("loss_against: target has wrong length");
  std::vector<double> z(outputs_);
  forward(x.span(), n, z);
  switch (kind_) {
    case ObjectiveKind::linear_regression: {
      const double d = z[0] - t[0];
      return d * d;
    }
    case ObjectiveKind::binary_logistic:
      return t[0] * softplus(-z[0]) + (1.0 - t[0]) * softplus(z[0]);
    case ObjectiveKind::softmax_linear:
    case ObjectiveKind::mlp_relu: {
      const double lse = log_sum_exp(z);
      double s = 0.0;
      for (std::size_t k = 0; k < outputs_; ++k) s += t[k] * (lse - z[k]);
      return s;
    }
  }
  return 0.0;
}

std::vector<double> Objective::target(std::size_t n) const {
  check_index(n);
  const double b = data_.targets[n];
  if (kind_ == ObjectiveKind::softmax_linear || kind_ == ObjectiveKind::mlp_relu) {
    std::vector<double> t(outputs_, 0.0);
    t[static_cast<std::size_t>(b)] = 1.0;
    return t;
  }
  return {b};
}

double Objective::loss(const ParamVector& x, std::size_t n) const {
  check_params(x);
  check_index(n);
  std::vector<double> z(outputs_);
  forward(x.span(), n, z);
  const double b = data_.targets[n];
  switch (kind_) {
    case ObjectiveKind::linear_regression: {
      const double d = z[0] - b;
      return d * d;
    }
    case ObjectiveKind::binary_logistic:
      return b * softplus(-z[0]) + (1.0 - b) * softplus(z[0]);
    case ObjectiveKind::softmax_linear:
    case ObjectiveKind::mlp_relu:
      return log_sum_exp(z) - z[static_cast<std::size_t>(b)];
  }
  return 0.0;
}

void Objective::accumulate_grad(const ParamVector& x, std::size_t n, double scale,
                                ParamVector& out) const {
  std::vector<double> z(outputs_), r(outputs_);
  forward(x.span(), n, z);
  output_residual(z, n, r);
  pullback(x.span(), n, r, scale, out.span());
}

ParamVector Objective::grad(const ParamVector& x, std::size_t n) const {
  check_params(x);
  check_index(n);
  ParamVector g(dim_);
  accumulate_grad(x, n, 1.0, g);
  return g;
}

std::vector<double> Objective::predict(const ParamVector& x, std::size_t n) const {
  check_params(x);
  check_index(n);
  std::vector<double> z(outputs_), out(outputs_);
  forward(x.span(), n, z);
  link(z, out);
  return out;
}

ParamVector Objective::minibatch_grad(const ParamVector& x, const Minibatch& batch) const {
  check_params(x);
  if (batch.indices.empty()) throw InvalidArgument("minibatch_grad: empty batch");
  for (std::size_t n : batch.indices) check_index(n);
  ParamVector g(dim_);
  const double w = batch.weight();
  std::vector<double> z(outputs_), r(outputs_);
  for (std::size_t n : batch.indices) {
    forward(x.span(), n, z);
    output_residual(z, n, r);
    pullback(x.span(), n, r, w, g.span());
  }
  return g;
}

double Objective::minibatch_loss(const ParamVector& x, const Minibatch& batch) const {
  if (batch.indices.empty()) throw InvalidArgument("minibatch_loss: empty batch");
  double s = 0.0;
  for (std::size_t n : batch.indices) s += loss(x, n);
  return s / static_cast<double>(batch.size());
}

ParamVector Objective::full_grad(const ParamVector& x) const {
  return minibatch_grad(x, Minibatch::all(num_samples()));
}

double Objective::full_loss(const ParamVector& x) const {
  check_params(x);
  double s = 0.0;
  for (std::size_t n = 0; n < num_samples(); ++n) s += loss(x, n);
  return s / static_cast<double>(num_samples());
}

double Objective::accuracy(const ParamVector& x) const {
  if (!is_classification()) throw InvalidKind("accuracy: regression objective");
  check_params(x);
  std::vector<double> z(outputs_);
  std::size_t hits = 0;
  for (std::size_t n = 0; n < num_samples(); ++n) {
    forward(x.span(), n, z);
    const double b = data_.targets[n];
    if (kind_ == ObjectiveKind::binary_logistic) {
      hits += ((z[0] >= 0.0) == (b >= 0.5)) ? 1 : 0;
    } else {
      const auto best = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
      hits += best == static_cast<std::size_t>(b) ? 1 : 0;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(num_samples());
}

ParamVector Objective::initial_point(Rng& rng) const {
  ParamVector x(dim_);
  if (kind_ != ObjectiveKind::mlp_relu) return x;
  const double s1 = std::sqrt(2.0 / static_cast<double>(in_));
  const double s2 = std::sqrt(1.0 / static_cast<double>(hidden_));
  for (std::size_t i = 0; i < hidden_ * in_; ++i) x[i] = s1 * rng.normal();
  const std::size_t w2_off = hidden_ * in_ + hidden_;
  for (std::size_t i = 0; i < outputs_ * hidden_; ++i) x[w2_off + i] = s2 * rng.normal();
  return x;
}

}  // namespace kdvr
