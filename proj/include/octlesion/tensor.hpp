#pragma once

#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace oct::nn {

using Array = Eigen::ArrayXd;
using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixRM>;
using ConstMatMap = Eigen::Map<const MatrixRM>;

// Dense n-d value grid, row-major (last extent fastest), double precision.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<Eigen::Index> shape) : shape_(std::move(shape)) {
    data_ = Array::Zero(count(shape_));
  }

  static Tensor zeros(std::vector<Eigen::Index> shape) { return Tensor(std::move(shape)); }

  static Tensor from(std::vector<Eigen::Index> shape, Array values) {
    if (values.size() != count(shape)) throw std::invalid_argument("tensor data length does not match shape");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(values);
    return t;
  }

  const std::vector<Eigen::Index>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  Eigen::Index dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  Eigen::Index numel() const { return data_.size(); }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](Eigen::Index i) { return data_[i]; }
  double operator[](Eigen::Index i) const { return data_[i]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  void set_zero() { data_.setZero(); }

  // 2D matrix view over the flat buffer (rows*cols must equal numel()).
  MatMap mat(Eigen::Index rows, Eigen::Index cols) {
    if (rows * cols != numel()) throw std::invalid_argument("matrix view does not cover tensor");
    return MatMap(data_.data(), rows, cols);
  }
  ConstMatMap mat(Eigen::Index rows, Eigen::Index cols) const {
    if (rows * cols != numel()) throw std::invalid_argument("matrix view does not cover tensor");
    return ConstMatMap(data_.data(), rows, cols);
  }

  bool all_finite() const { return data_.isFinite().all(); }

  std::string shape_string() const {
    std::string s = "(";
    for (std::size_t i = 0; i < shape_.size(); ++i) s += (i ? "," : "") + std::to_string(shape_[i]);
    return s + ")";
  }

  static Eigen::Index count(const std::vector<Eigen::Index>& shape) {
    Eigen::Index n = 1;
    for (auto d : shape) {
      if (d <= 0) throw std::invalid_argument("tensor extents must be positive");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<Eigen::Index> shape_;
  Array data_;
};

}  // namespace oct::nn
