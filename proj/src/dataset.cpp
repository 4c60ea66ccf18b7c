#include "kdvr/dataset.hpp"

#include <cmath>
#include <string>

#include "kdvr/errors.hpp"

namespace kdvr {

void Dataset::validate() const {
  if (features.rows() == 0) throw EmptyDataset("dataset has no samples");
  if (targets.size() != features.rows()) {
    throw InvalidArgument("dataset: " + std::to_string(targets.size()) + " targets for " +
                          std::to_string(features.rows()) + " samples");
  }
  for (std::size_t i = 0; i < features.data().size(); ++i) {
    if (!std::isfinite(features.data()[i])) {
      throw InvalidArgument("dataset: non-finite feature in row " +
                            std::to_string(i / std::max<std::size_t>(features.cols(), 1)));
    }
  }
  for (std::size_t n = 0; n < targets.size(); ++n) {
    const double b = targets[n];
    if (!std::isfinite(b)) throw InvalidArgument("dataset: non-finite target " + std::to_string(n));
    switch (target_kind) {
      case TargetKind::real:
        break;
      case TargetKind::probability:
        if (b < 0.0 || b > 1.0) {
          throw InvalidArgument("dataset: probability target outside [0,1] at " + std::to_string(n));
        }
        break;
      case TargetKind::class_index:
        if (b < 0.0 || b != std::floor(b) || b >= static_cast<double>(num_classes)) {
          throw InvalidArgument("dataset: class index out of range at " + std::to_string(n));
        }
        break;
    }
  }
  if (target_kind == TargetKind::class_index && num_classes < 2) {
    throw InvalidArgument("dataset: class_index targets need at least 2 classes");
  }
}

}  // namespace kdvr
