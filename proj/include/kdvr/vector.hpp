#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace kdvr {

/// Flat parameter vector of a model (student iterate, teacher, minimizer).
///
/// Length is fixed at construction. Finiteness is checked at the boundaries
/// that accept external values (`checked`) and by the optimizers after each
/// update, not on every element write.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t dim, double fill = 0.0) : values_(dim, fill) {}
  ParamVector(std::initializer_list<double> values) : values_(values) {}
  explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}

  /// Throws InvalidArgument if any entry is NaN or infinite.
  static ParamVector checked(std::vector<double> values);

  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }
  std::span<double> span() noexcept { return values_; }
  std::span<const double> span() const noexcept { return values_; }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  const std::vector<double>& values() const noexcept { return values_; }

  void fill(double v);
  bool is_finite() const noexcept;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> values_;
};

// All reductions accumulate sequentially from index 0 upward, so results are
// reproducible bit-for-bit for identical inputs.

double dot(std::span<const double> a, std::span<const double> b);
double dot(const ParamVector& a, const ParamVector& b);

/// alpha * a + b
ParamVector axpy(double alpha, const ParamVector& a, const ParamVector& b);
/// y += alpha * x
void axpy_inplace(double alpha, std::span<const double> x, std::span<double> y);
void axpy_inplace(double alpha, const ParamVector& x, ParamVector& y);

double norm_sq(std::span<const double> a);
double norm_sq(const ParamVector& a);
double norm(const ParamVector& a);

/// ||a - b||^2
double dist_sq(const ParamVector& a, const ParamVector& b);

ParamVector operator+(const ParamVector& a, const ParamVector& b);
ParamVector operator-(const ParamVector& a, const ParamVector& b);
ParamVector operator*(double s, const ParamVector& a);

void scale_inplace(double s, ParamVector& a);

/// Cosine similarity; throws UndefinedRatio when either vector is zero.
double cosine(const ParamVector& a, const ParamVector& b);

}  // namespace kdvr
