#pragma once

#include <cstddef>
#include <vector>

#include "kdvr/matrix.hpp"

namespace kdvr {

enum class TargetKind {
  real,         // regression response
  probability,  // binary label or soft probability in [0, 1]
  class_index,  // integer class in [0, num_classes)
};

/// Inputs a_n (rows of `features`, no bias column) and targets b_n.
struct Dataset {
  Matrix features;
  std::vector<double> targets;
  TargetKind target_kind = TargetKind::real;
  std::size_t num_classes = 0;  // only for class_index

  std::size_t size() const noexcept { return features.rows(); }
  std::size_t feature_dim() const noexcept { return features.cols(); }

  /// Throws EmptyDataset / InvalidArgument when the invariants fail:
  /// N >= 1, finite entries, targets consistent with target_kind.
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

}  // namespace kdvr
