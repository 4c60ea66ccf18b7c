#pragma once

#include <cstddef>
#include <vector>

#include "kdvr/rng.hpp"

namespace kdvr {

/// Indices of one stochastic batch; every index carries weight 1/|batch|.
struct Minibatch {
  std::vector<std::size_t> indices;

  std::size_t size() const noexcept { return indices.size(); }
  double weight() const noexcept { return 1.0 / static_cast<double>(indices.size()); }

  static Minibatch single(std::size_t n) { return Minibatch{{n}}; }
  static Minibatch all(std::size_t dataset_size);
};

/// i.i.d. uniform draws with replacement; each index has marginal
/// probability 1/dataset_size, so the batch gradient is unbiased.
Minibatch sample_minibatch(std::size_t dataset_size, std::size_t batch_size, Rng& rng);

enum class Sampling { with_replacement, epoch_shuffle };

/// Produces the batch sequence of a trajectory. With `epoch_shuffle` each
/// epoch is a fresh permutation cut into consecutive batches; the last batch
/// of an epoch may be short.
class BatchSampler {
 public:
  BatchSampler(std::size_t dataset_size, std::size_t batch_size, Sampling policy);

  Minibatch next(Rng& rng);

  std::size_t steps_per_epoch() const noexcept;

 private:
  std::size_t dataset_size_;
  std::size_t batch_size_;
  Sampling policy_;
  std::vector<std::size_t> permutation_;
  std::size_t cursor_ = 0;
};

}  // namespace kdvr
