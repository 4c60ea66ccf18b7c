#include "kdvr/matrix.hpp"

#include <string>

#include "kdvr/errors.hpp"

namespace kdvr {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw InvalidArgument("Matrix: " + std::to_string(data_.size()) + " values for " +
                          std::to_string(rows) + "x" + std::to_string(cols));
  }
}

}  // namespace kdvr
