#ifndef SON_TENSOR_HPP
#define SON_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "son/errors.hpp"

namespace son {

/// Dense row-major tensor of doubles. Rank 0 (scalar-as-empty) is not used;
/// vectors are rank 1, images/matrices rank 2.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape, double fill = 0.0) : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (int d : shape_) {
      if (d < 0) throw ShapeError("Tensor: negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    data_.assign(n, fill);
  }

  static Tensor vec(std::initializer_list<double> vals) {
    Tensor t(std::vector<int>{static_cast<int>(vals.size())});
    std::size_t i = 0;
    for (double v : vals) t.data_[i++] = v;
    return t;
  }

  static Tensor from(std::vector<double> vals) {
    Tensor t;
    t.shape_ = {static_cast<int>(vals.size())};
    t.data_ = std::move(vals);
    return t;
  }

  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  int size() const { return static_cast<int>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double& operator[](int i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](int i) const { return data_[static_cast<std::size_t>(i)]; }

  /// 2-D accessors; caller guarantees rank 2.
  double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  /// Reinterpret as a flat vector; data is untouched.
  Tensor flattened() const {
    Tensor t = *this;
    t.shape_ = {size()};
    return t;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  Tensor& operator+=(const Tensor& o) {
    if (!same_shape(o)) throw ShapeError("Tensor +=: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Tensor& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  /// Accumulate s * o into this.
  void axpy(double s, const Tensor& o) {
    if (!same_shape(o)) throw ShapeError("Tensor axpy: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += s * o.data_[i];
  }

  double squared_norm() const {
    double s = 0;
    for (double v : data_) s += v * v;
    return s;
  }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

inline double dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ShapeError("dot: size mismatch");
  double s = 0;
  for (int i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace son

#endif  // SON_TENSOR_HPP
