#include "kdvr/vector.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kdvr/errors.hpp"

namespace kdvr {

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw InvalidArgument(std::string(op) + ": length mismatch (" + std::to_string(a) +
                          " vs " + std::to_string(b) + ")");
  }
}

}  // namespace

ParamVector ParamVector::checked(std::vector<double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw InvalidArgument("ParamVector: non-finite entry at index " + std::to_string(i));
    }
  }
  return ParamVector(std::move(values));
}

void ParamVector::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool ParamVector::is_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_same_size(a.size(), b.size(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double dot(const ParamVector& a, const ParamVector& b) { return dot(a.span(), b.span()); }

ParamVector axpy(double alpha, const ParamVector& a, const ParamVector& b) {
  require_same_size(a.size(), b.size(), "axpy");
  ParamVector out(b);
  axpy_inplace(alpha, a.span(), out.span());
  return out;
}

void axpy_inplace(double alpha, std::span<const double> x, std::span<double> y) {
  require_same_size(x.size(), y.size(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void axpy_inplace(double alpha, const ParamVector& x, ParamVector& y) {
  axpy_inplace(alpha, x.span(), y.span());
}

double norm_sq(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += v * v;
  return s;
}

double norm_sq(const ParamVector& a) { return norm_sq(a.span()); }

double norm(const ParamVector& a) { return std::sqrt(norm_sq(a)); }

double dist_sq(const ParamVector& a, const ParamVector& b) {
  require_same_size(a.size(), b.size(), "dist_sq");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

ParamVector operator+(const ParamVector& a, const ParamVector& b) { return axpy(1.0, a, b); }

ParamVector operator-(const ParamVector& a, const ParamVector& b) {
  require_same_size(a.size(), b.size(), "subtract");
  ParamVector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

ParamVector operator*(double s, const ParamVector& a) {
  ParamVector out(a);
  scale_inplace(s, out);
  return out;
}

void scale_inplace(double s, ParamVector& a) {
  for (double& v : a) v *= s;
}

double cosine(const ParamVector& a, const ParamVector& b) {
  const double na = norm_sq(a);
  const double nb = norm_sq(b);
  if (na == 0.0 || nb == 0.0) throw UndefinedRatio("cosine: zero-length vector");
  return std::clamp(dot(a, b) / std::sqrt(na * nb), -1.0, 1.0);
}

}  // namespace kdvr
