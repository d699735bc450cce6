#pragma once
// Dense double-precision tensor with row-major storage. Rank <= 3 in
// practice; higher-rank batches are carried as matrices whose row blocks
// encode the extra axes (e.g. image batches live as {B*H*W, C} rows).

#include <Eigen/Dense>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace eegpack::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<long> shape) : shape_(std::move(shape)) {
    data_ = Eigen::ArrayXd::Zero(count(shape_));
  }

  Tensor(std::vector<long> shape, Eigen::ArrayXd data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) throw std::invalid_argument("tensor shape/data mismatch");
  }

  static Tensor zeros(std::vector<long> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<long> shape, double v) {
    Tensor t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }

  static Tensor scalar(double v) { return full({1}, v); }

  static Tensor from_matrix(const Eigen::MatrixXd& m) {
    Tensor t({m.rows(), m.cols()});
    t.mat() = m;
    return t;
  }

  static Tensor from_vector(const Eigen::VectorXd& v) {
    Tensor t({v.size()});
    t.data_ = v.array();
    return t;
  }

  const std::vector<long>& shape() const { return shape_; }
  long size() const { return data_.size(); }
  int rank() const { return static_cast<int>(shape_.size()); }
  long dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  bool defined() const { return !shape_.empty(); }

  // Leading dims collapse into rows; the last dim is the column count.
  long rows() const { return rank() <= 1 ? 1 : size() / shape_.back(); }
  long cols() const { return rank() == 0 ? 0 : shape_.back(); }

  double item() const {
    if (size() != 1) throw std::logic_error("item() on non-scalar tensor");
    return data_[0];
  }

  Eigen::ArrayXd& raw() { return data_; }
  const Eigen::ArrayXd& raw() const { return data_; }

  Eigen::Map<RowMat> mat() { return {data_.data(), rows(), cols()}; }
  Eigen::Map<const RowMat> mat() const { return {data_.data(), rows(), cols()}; }

  Eigen::MatrixXd to_matrix() const { return mat(); }

  Tensor reshaped(std::vector<long> shape) const {
    if (count(shape) != size()) throw std::invalid_argument("reshape element count mismatch");
    return Tensor(std::move(shape), data_);
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  static long count(const std::vector<long>& shape) {
    long n = shape.empty() ? 0 : 1;
    for (long d : shape) {
      if (d < 0) throw std::invalid_argument("negative tensor dim");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<long> shape_;
  Eigen::ArrayXd data_;
};

}  // namespace eegpack::nn
