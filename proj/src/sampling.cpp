#include "kdvr/sampling.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "kdvr/errors.hpp"

namespace kdvr {

namespace {

void validate_batch(std::size_t dataset_size, std::size_t batch_size) {
  if (batch_size == 0 || batch_size > dataset_size) {
    throw InvalidArgument("batch size " + std::to_string(batch_size) +
                          " outside [1, " + std::to_string(dataset_size) + "]");
  }
}

}  // namespace

Minibatch Minibatch::all(std::size_t dataset_size) {
  Minibatch b;
  b.indices.resize(dataset_size);
  std::iota(b.indices.begin(), b.indices.end(), std::size_t{0});
  return b;
}

Minibatch sample_minibatch(std::size_t dataset_size, std::size_t batch_size, Rng& rng) {
  validate_batch(dataset_size, batch_size);
  Minibatch b;
  b.indices.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) b.indices.push_back(rng.uniform_index(dataset_size));
  return b;
}

BatchSampler::BatchSampler(std::size_t dataset_size, std::size_t batch_size, Sampling policy)
    : dataset_size_(dataset_size), batch_size_(batch_size), policy_(policy) {
  validate_batch(dataset_size, batch_size);
}

std::size_t BatchSampler::steps_per_epoch() const noexcept {
  return (dataset_size_ + batch_size_ - 1) / batch_size_;
}

Minibatch BatchSampler::next(Rng& rng) {
  if (policy_ == Sampling::with_replacement) return sample_minibatch(dataset_size_, batch_size_, rng);

  if (cursor_ == 0 || cursor_ >= dataset_size_) {
    permutation_.resize(dataset_size_);
    std::iota(permutation_.begin(), permutation_.end(), std::size_t{0});
    // Fisher-Yates driven by uniform_index so the order only depends on Rng.
    for (std::size_t i = dataset_size_; i > 1; --i) {
      std::swap(permutation_[i - 1], permutation_[rng.uniform_index(i)]);
    }
    cursor_ = 0;
  }
  const std::size_t end = std::min(cursor_ + batch_size_, dataset_size_);
  Minibatch b;
  b.indices.assign(permutation_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                   permutation_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return b;
}

}  // namespace kdvr
