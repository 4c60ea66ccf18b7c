#include "kdvr/compression.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "kdvr/errors.hpp"

namespace kdvr {

Compressor Compressor::identity() { return Compressor{}; }

Compressor Compressor::rand_k(std::size_t k) {
  if (k == 0) throw InvalidArgument("rand_k: k must be at least 1");
  Compressor c;
  c.kind_ = Kind::rand_k;
  c.k_ = k;
  return c;
}

Compressor Compressor::fixed_mask(std::vector<std::uint8_t> keep) {
  Compressor c;
  c.kind_ = Kind::fixed_mask;
  c.mask_ = std::move(keep);
  return c;
}

Compressor Compressor::random_fixed_mask(std::size_t dim, double sparsity, Rng& rng) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) throw InvalidArgument("mask sparsity outside [0,1)");
  const auto zeroed = static_cast<std::size_t>(std::llround(sparsity * static_cast<double>(dim)));
  std::vector<std::size_t> order(dim);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = dim; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  std::vector<std::uint8_t> keep(dim, 1);
  for (std::size_t i = 0; i < zeroed; ++i) keep[order[i]] = 0;
  return fixed_mask(std::move(keep));
}

Compressor Compressor::stochastic_quantize(unsigned levels) {
  if (levels == 0) throw InvalidArgument("stochastic_quantize: need at least one level");
  Compressor c;
  c.kind_ = Kind::stochastic_quantize;
  c.levels_ = levels;
  return c;
}

std::string to_string(Compressor::Kind kind) {
  switch (kind) {
    case Compressor::Kind::identity: return "identity";
    case Compressor::Kind::rand_k: return "rand_k";
    case Compressor::Kind::fixed_mask: return "fixed_mask";
    case Compressor::Kind::stochastic_quantize: return "stochastic_quantize";
  }
  return "unknown";
}

std::string Compressor::describe() const {
  switch (kind_) {
    case Kind::rand_k: return "rand_k(" + std::to_string(k_) + ")";
    case Kind::stochastic_quantize: return "stochastic_quantize(" + std::to_string(levels_) + ")";
    case Kind::fixed_mask: {
      const auto kept = std::count(mask_.begin(), mask_.end(), std::uint8_t{1});
      return "fixed_mask(" + std::to_string(kept) + "/" + std::to_string(mask_.size()) + ")";
    }
    case Kind::identity: break;
  }
  return "identity";
}

double Compressor::omega(std::size_t dim) const {
  const double d = static_cast<double>(dim);
  switch (kind_) {
    case Kind::identity: return 0.0;
    case Kind::rand_k: return d / static_cast<double>(k_) - 1.0;
    case Kind::stochastic_quantize: {
      const double L = levels_;
      return std::min(d / (4.0 * L * L), std::sqrt(d) / L);
    }
    case Kind::fixed_mask:
      // No finite omega makes a biased map satisfy the unbiased contract.
      return std::numeric_limits<double>::infinity();
  }
  return 0.0;
}

std::vector<std::size_t> Compressor::sample_support(std::size_t dim, Rng& rng) const {
  if (kind_ != Kind::rand_k) throw InvalidKind("sample_support: rand_k only");
  if (k_ > dim) {
    throw InvalidArgument("rand_k: k=" + std::to_string(k_) + " exceeds dimension " +
                          std::to_string(dim));
  }
  // Partial Fisher-Yates: the first k slots form a uniform k-subset.
  std::vector<std::size_t> idx(dim);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k_; ++i) {
    const std::size_t j = i + rng.uniform_index(dim - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k_);
  return idx;
}

ParamVector Compressor::apply_support(const ParamVector& x,
                                      std::span<const std::size_t> support) const {
  if (kind_ != Kind::rand_k) throw InvalidKind("apply_support: rand_k only");
  const double scale = static_cast<double>(x.size()) / static_cast<double>(k_);
  ParamVector out(x.size());
  for (std::size_t i : support) out[i] = scale * x[i];
  return out;
}

void Compressor::compress_inplace(ParamVector& x, Rng& rng) const {
  switch (kind_) {
    case Kind::identity:
      return;
    case Kind::rand_k:
      x = apply_support(x, sample_support(x.size(), rng));
      return;
    case Kind::fixed_mask:
      if (mask_.size() != x.size()) throw InvalidArgument("fixed_mask: mask length mismatch");
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (mask_[i] == 0) x[i] = 0.0;
      }
      return;
    case Kind::stochastic_quantize: {
      double s = 0.0;
      for (double v : x) s = std::max(s, std::abs(v));
      if (s == 0.0) return;
      const double L = levels_;
      for (double& v : x) {
        const double u = L * std::abs(v) / s;
        double level = std::floor(u);
        if (rng.uniform01() < u - level) level += 1.0;
        v = std::copysign(s * level / L, v);
      }
      return;
    }
  }
}

ParamVector Compressor::compress(const ParamVector& x, Rng& rng) const {
  ParamVector out(x);
  compress_inplace(out, rng);
  return out;
}

CompressionStats verify_compressor(const Compressor& c, std::span<const ParamVector> points,
                                   std::size_t trials, Rng& rng) {
  const std::size_t d = points.empty() ? 0 : points.front().size();
  CompressFn fn = [&c](const ParamVector& x, Rng& r) { return c.compress(x, r); };
  return verify_compressor(fn, c.describe(), c.omega(d), c.biased(), points, trials, rng);
}

CompressionStats verify_compressor(const CompressFn& fn, const std::string& name,
                                   double declared_omega, bool declared_biased,
                                   std::span<const ParamVector> points, std::size_t trials,
                                   Rng& rng) {
  if (trials == 0) throw InvalidArgument("verify_compressor: trials must be >= 1");
  CompressionStats st;
  st.name = name;
  st.declared_omega = declared_omega;
  st.declared_biased = declared_biased;
  const double t = static_cast<double>(trials);
  for (std::size_t p = 0; p < points.size(); ++p) {
    const ParamVector& x = points[p];
    const std::size_t d = x.size();
    std::vector<double> sum(d, 0.0), sum_sq(d, 0.0);
    double err_sq_total = 0.0;
    for (std::size_t s = 0; s < trials; ++s) {
      const ParamVector y = fn(x, rng);
      for (std::size_t i = 0; i < d; ++i) {
        const double e = y[i] - x[i];
        sum[i] += e;
        sum_sq[i] += e * e;
        err_sq_total += e * e;
      }
    }
    for (std::size_t i = 0; i < d; ++i) {
      const double mean = sum[i] / t;
      const double var = trials > 1 ? std::max(0.0, (sum_sq[i] - t * mean * mean) / (t - 1.0)) : 0.0;
      const double se = std::sqrt(var / t);
      const double z = se > 0.0 ? std::abs(mean) / se
                                : (std::abs(mean) > 1e-15 * (1.0 + std::abs(x[i]))
                                       ? std::numeric_limits<double>::infinity()
                                       : 0.0);
      st.max_mean_error_z = std::max(st.max_mean_error_z, z);
      st.max_abs_mean_error = std::max(st.max_abs_mean_error, std::abs(mean));
    }
    if (p == 0) {
      st.mean_error.resize(d);
      for (std::size_t i = 0; i < d; ++i) st.mean_error[i] = sum[i] / t;
    }
    const double nx = norm_sq(x);
    if (nx > 0.0) st.variance_ratio = std::max(st.variance_ratio, err_sq_total / t / nx);
  }
  st.mean_test_passed = st.max_mean_error_z <= 4.0;
  st.variance_test_passed = st.variance_ratio <= declared_omega * (1.0 + 4.0 / std::sqrt(t)) + 1e-15;
  return st;
}

CompressionStats verify_compressor_exhaustive(const Compressor& c,
                                              std::span<const ParamVector> points) {
  if (c.kind() != Compressor::Kind::rand_k) throw InvalidKind("exhaustive verification: rand_k only");
  CompressionStats st;
  st.name = c.describe();
  st.exhaustive = true;
  for (std::size_t p = 0; p < points.size(); ++p) {
    const ParamVector& x = points[p];
    const std::size_t d = x.size();
    if (d > 20) throw InvalidArgument("exhaustive verification limited to d <= 20");
    if (c.k() > d) throw InvalidArgument("rand_k: k exceeds dimension");
    st.declared_omega = c.omega(d);
    std::vector<std::uint8_t> pick(d, 0);
    std::fill(pick.begin(), pick.begin() + static_cast<std::ptrdiff_t>(c.k()), 1);
    std::vector<double> mean(d, 0.0);
    double err_sq = 0.0;
    std::size_t count = 0;
    std::vector<std::size_t> support;
    do {
      support.clear();
      for (std::size_t i = 0; i < d; ++i) {
        if (pick[i]) support.push_back(i);
      }
      const ParamVector y = c.apply_support(x, support);
      for (std::size_t i = 0; i < d; ++i) {
        mean[i] += y[i] - x[i];
        err_sq += (y[i] - x[i]) * (y[i] - x[i]);
      }
      ++count;
    } while (std::prev_permutation(pick.begin(), pick.end()));
    const double cnt = static_cast<double>(count);
    for (double& m : mean) {
      m /= cnt;
      st.max_abs_mean_error = std::max(st.max_abs_mean_error, std::abs(m));
    }
    if (p == 0) st.mean_error = mean;
    const double nx = norm_sq(x);
    if (nx > 0.0) st.variance_ratio = std::max(st.variance_ratio, err_sq / cnt / nx);
  }
  st.mean_test_passed = st.max_abs_mean_error <= 1e-12;
  st.variance_test_passed = st.variance_ratio <= st.declared_omega + 1e-12;
  return st;
}

}  // namespace kdvr
