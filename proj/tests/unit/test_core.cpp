#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <boost/math/distributions/chi_squared.hpp>

#include "doctest.h"
#include "kdvr/dataset.hpp"
#include "kdvr/errors.hpp"
#include "kdvr/rng.hpp"
#include "kdvr/sampling.hpp"
#include "kdvr/vector.hpp"

using namespace kdvr;

TEST_CASE("vector arithmetic basics") {
  const ParamVector v{1.5, -2.0, 3.25};
  CHECK(dot(ParamVector(3), v) == 0.0);
  CHECK(axpy(1.0, v, ParamVector(3)) == v);
  CHECK(norm_sq(ParamVector{3.0, 4.0}) == 25.0);
  CHECK(norm(ParamVector{3.0, 4.0}) == 5.0);
  CHECK(dist_sq(v, v) == 0.0);
  CHECK((v - v) == ParamVector(3));
  CHECK((2.0 * v) == (v + v));
}

TEST_CASE("length mismatches are rejected") {
  CHECK_THROWS_AS(dot(ParamVector(2), ParamVector(3)), InvalidArgument);
  CHECK_THROWS_AS(axpy(1.0, ParamVector(2), ParamVector(3)), InvalidArgument);
  CHECK_THROWS_AS(ParamVector(2) + ParamVector(1), InvalidArgument);
}

TEST_CASE("checked construction refuses non-finite values") {
  CHECK_THROWS_AS(ParamVector::checked({1.0, std::nan("")}), InvalidArgument);
  CHECK_THROWS_AS(ParamVector::checked({std::numeric_limits<double>::infinity()}), InvalidArgument);
  CHECK(ParamVector::checked({1.0, 2.0}) == ParamVector{1.0, 2.0});
}

TEST_CASE("cosine of a zero vector is undefined") {
  CHECK_THROWS_AS(cosine(ParamVector(2), ParamVector{1.0, 0.0}), UndefinedRatio);
  CHECK(cosine(ParamVector{1.0, 1.0}, ParamVector{2.0, 2.0}) == doctest::Approx(1.0));
  CHECK(cosine(ParamVector{1.0, 0.0}, ParamVector{-3.0, 0.0}) == doctest::Approx(-1.0));
}

TEST_CASE("rng streams are reproducible and separable") {
  Rng a(42, 3), b(42, 3), c(42, 4), d(43, 3);
  bool differs_stream = false, differs_seed = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs_stream |= x != c.next_u64();
    differs_seed |= x != d.next_u64();
  }
  CHECK(differs_stream);
  CHECK(differs_seed);

  Rng parent(7);
  const Rng child1 = parent.substream(5);
  const auto before = Rng(7).next_u64();
  Rng child2 = parent.substream(5);
  Rng copy = child1;
  CHECK(copy.next_u64() == child2.next_u64());
  CHECK(parent.next_u64() == before);  // substream does not advance its parent
  CHECK(Rng(7).substream(6).next_u64() != Rng(7).substream(5).next_u64());
}

TEST_CASE("uniform draws stay in range") {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform01();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(rng.uniform_index(7) < 7);
  }
  CHECK_THROWS_AS(rng.uniform_index(0), InvalidArgument);
}

TEST_CASE("minibatch edge cases") {
  Rng rng(99);
  CHECK(sample_minibatch(1, 1, rng).indices == std::vector<std::size_t>{0});

  const Minibatch b = sample_minibatch(10, 10, rng);
  CHECK(b.size() == 10);
  CHECK(b.weight() == 0.1);
  for (auto i : b.indices) CHECK(i < 10);

  CHECK_THROWS_AS(sample_minibatch(10, 0, rng), InvalidArgument);
  CHECK_THROWS_AS(sample_minibatch(10, 11, rng), InvalidArgument);

  const Minibatch all = Minibatch::all(5);
  CHECK(all.indices == std::vector<std::size_t>{0, 1, 2, 3, 4});
}

TEST_CASE("with-replacement sampling produces duplicates") {
  // P(no duplicate in 10 draws from 10) = 10!/10^10 ~ 3.6e-4 per batch.
  Rng rng(5);
  bool seen_duplicate = false;
  for (int t = 0; t < 20 && !seen_duplicate; ++t) {
    const Minibatch b = sample_minibatch(10, 10, rng);
    seen_duplicate = std::set<std::size_t>(b.indices.begin(), b.indices.end()).size() < 10;
  }
  CHECK(seen_duplicate);
}

TEST_CASE("sampling marginals are uniform") {
  constexpr std::size_t N = 100, draws = 100000;
  std::vector<double> counts(N, 0.0);
  Rng rng(2024);
  for (std::size_t t = 0; t < draws; ++t) {
    for (auto i : sample_minibatch(N, 10, rng).indices) counts[i] += 1.0;
  }
  const double total = static_cast<double>(draws * 10);
  double chi2 = 0.0;
  for (double c : counts) {
    CHECK(c / total == doctest::Approx(0.01).epsilon(0.3));  // 0.01 +- 3e-3
    const double e = total / N;
    chi2 += (c - e) * (c - e) / e;
  }
  const boost::math::chi_squared dist(N - 1);
  const double p = boost::math::cdf(boost::math::complement(dist, chi2));
  CHECK(p > 0.001);
}

TEST_CASE("epoch shuffling visits every sample once per epoch") {
  BatchSampler sampler(23, 5, Sampling::epoch_shuffle);
  CHECK(sampler.steps_per_epoch() == 5);
  Rng rng(8);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::vector<std::size_t> seen;
    for (std::size_t s = 0; s < sampler.steps_per_epoch(); ++s) {
      const Minibatch b = sampler.next(rng);
      CHECK(b.size() == (s + 1 < sampler.steps_per_epoch() ? 5u : 3u));
      seen.insert(seen.end(), b.indices.begin(), b.indices.end());
    }
    std::sort(seen.begin(), seen.end());
    for (std::size_t i = 0; i < 23; ++i) CHECK(seen[i] == i);
  }
}

TEST_CASE("dataset validation") {
  Dataset empty;
  CHECK_THROWS_AS(empty.validate(), EmptyDataset);

  Dataset ok{Matrix(2, 1, {1.0, 2.0}), {0.0, 1.0}, TargetKind::class_index, 2};
  CHECK_NOTHROW(ok.validate());

  Dataset bad_class = ok;
  bad_class.targets[1] = 2.0;
  CHECK_THROWS_AS(bad_class.validate(), InvalidArgument);

  Dataset bad_prob{Matrix(1, 1, {1.0}), {1.5}, TargetKind::probability, 0};
  CHECK_THROWS_AS(bad_prob.validate(), InvalidArgument);

  Dataset nan_feature{Matrix(1, 1, {std::nan("")}), {0.0}, TargetKind::real, 0};
  CHECK_THROWS_AS(nan_feature.validate(), InvalidArgument);

  CHECK_THROWS_AS(Matrix(2, 2, {1.0, 2.0, 3.0}), InvalidArgument);
}
