#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fgcam/error.hpp"

namespace fgcam {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1},
                         std::multiplies<Index>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major tensor. Rank-3 tensors follow the CHW convention (the batch
/// axis of NCHW is implicit and always 1).
template <typename Scalar>
class BasicTensor {
 public:
  using value_type = Scalar;
  using RowMajorMatrix =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(static_cast<std::size_t>(shape_size(shape_)), fill);
  }

  BasicTensor(Shape shape, std::vector<Scalar> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (static_cast<Index>(data_.size()) != shape_size(shape_)) {
      fail(ErrorCode::kShapeMismatch,
           "tensor data length " + std::to_string(data_.size()) +
               " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return static_cast<Index>(data_.size()); }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::vector<Scalar>& values() { return data_; }
  const std::vector<Scalar>& values() const { return data_; }

  Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  Scalar operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }

  Scalar& at(Index c, Index y, Index x) {
    return data_[static_cast<std::size_t>((c * shape_[1] + y) * shape_[2] + x)];
  }
  Scalar at(Index c, Index y, Index x) const {
    return data_[static_cast<std::size_t>((c * shape_[1] + y) * shape_[2] + x)];
  }

  /// Flat view as an Eigen column vector.
  Eigen::Map<Vector> vec() { return Eigen::Map<Vector>(data_.data(), size()); }
  Eigen::Map<const Vector> vec() const {
    return Eigen::Map<const Vector>(data_.data(), size());
  }

  /// Row-major matrix view; rows * cols must equal size().
  Eigen::Map<RowMajorMatrix> matrix(Index rows, Index cols) {
    check_matrix(rows, cols);
    return Eigen::Map<RowMajorMatrix>(data_.data(), rows, cols);
  }
  Eigen::Map<const RowMajorMatrix> matrix(Index rows, Index cols) const {
    check_matrix(rows, cols);
    return Eigen::Map<const RowMajorMatrix>(data_.data(), rows, cols);
  }

  BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), data_);
  }

  template <typename Other>
  BasicTensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return BasicTensor<Other>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void check_shape(const Shape& shape) {
    for (Index d : shape) {
      if (d < 1) {
        fail(ErrorCode::kShapeMismatch,
             "tensor dimensions must be >= 1, got " + shape_string(shape));
      }
    }
  }

  void check_matrix(Index rows, Index cols) const {
    if (rows * cols != size()) {
      fail(ErrorCode::kShapeMismatch,
           "cannot view " + shape_string(shape_) + " as " +
               std::to_string(rows) + "x" + std::to_string(cols));
    }
  }

  Shape shape_;
  std::vector<Scalar> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

}  // namespace fgcam
